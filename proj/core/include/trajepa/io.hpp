#pragma once

// Little-endian binary encoding helpers shared by the embedding-table,
// distance-matrix and checkpoint file formats.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "trajepa/error.hpp"

namespace trajepa {

void write_file(const std::string& path, const std::string& bytes);
std::string read_file(const std::string& path);

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void i32(int32_t v) { raw(&v, 4); }
  void i64(int64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    buf_.append(s);
  }
  void f64s(const std::vector<double>& v) {
    u64(v.size());
    raw(v.data(), v.size() * 8);
  }

  const std::string& bytes() const { return buf_; }
  void save(const std::string& path) const;

 private:
  void raw(const void* p, size_t n) {
    size_t off = buf_.size();
    buf_.resize(off + n);
    std::memcpy(buf_.data() + off, p, n);
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string bytes) : buf_(std::move(bytes)) {}
  static ByteReader load(const std::string& path);

  uint8_t u8() { return static_cast<uint8_t>(buf_[take(1)]); }
  uint32_t u32() { uint32_t v; std::memcpy(&v, buf_.data() + take(4), 4); return v; }
  uint64_t u64() { uint64_t v; std::memcpy(&v, buf_.data() + take(8), 8); return v; }
  int32_t i32() { int32_t v; std::memcpy(&v, buf_.data() + take(4), 4); return v; }
  int64_t i64() { int64_t v; std::memcpy(&v, buf_.data() + take(8), 8); return v; }
  double f64() { double v; std::memcpy(&v, buf_.data() + take(8), 8); return v; }
  std::string str() {
    uint32_t n = u32();
    size_t off = take(n);
    return buf_.substr(off, n);
  }
  std::vector<double> f64s() {
    uint64_t n = u64();
    std::vector<double> v(n);
    std::memcpy(v.data(), buf_.data() + take(n * 8), n * 8);
    return v;
  }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  size_t take(size_t n) {
    if (pos_ + n > buf_.size()) throw_data("binary read past end of file");
    size_t off = pos_;
    pos_ += n;
    return off;
  }
  std::string buf_;
  size_t pos_ = 0;
};

}  // namespace trajepa
