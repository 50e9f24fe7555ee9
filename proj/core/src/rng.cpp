#include "trajepa/rng.hpp"

#include <algorithm>

#include "trajepa/error.hpp"

namespace trajepa {

std::vector<int64_t> Rng::sample_without_replacement(int64_t n, int64_t k) {
  if (k > n) throw_config("sample_without_replacement: k > n");
  // partial Fisher-Yates over an index pool
  std::vector<int64_t> pool(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) pool[static_cast<size_t>(i)] = i;
  for (int64_t i = 0; i < k; ++i) {
    int64_t j = i + static_cast<int64_t>(uniform_int(static_cast<uint64_t>(n - i)));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

uint64_t derive_seed(std::initializer_list<uint64_t> parts) {
  // FNV-1a over the 8-byte little-endian encoding of each part, then one
  // splitmix finalizer round.
  uint64_t h = 1469598103934665603ULL;
  for (uint64_t p : parts) {
    for (int i = 0; i < 8; ++i) {
      h ^= (p >> (8 * i)) & 0xffULL;
      h *= 1099511628211ULL;
    }
  }
  uint64_t z = h + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace trajepa
