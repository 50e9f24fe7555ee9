#include "trajepa/io.hpp"

#include <fstream>

namespace trajepa {

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw_data("cannot open for writing: " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw_data("short write: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open for reading: " + path);
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

void ByteWriter::save(const std::string& path) const { write_file(path, buf_); }

ByteReader ByteReader::load(const std::string& path) {
  return ByteReader(read_file(path));
}

}  // namespace trajepa
