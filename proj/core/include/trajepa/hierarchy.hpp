#pragma once

#include <array>
#include <string>

#include "trajepa/data.hpp"
#include "trajepa/rng.hpp"
#include "trajepa/tensor.hpp"

namespace trajepa {

enum class ConvActivation { Gelu, None };

// The three conv stages (d->d, d->2d, 2d->4d, kernel 3) shared by the
// target and context branches.
struct ConvStageParams {
  Tensor w1, b1;  // [3 x d x d], [d]
  Tensor w2, b2;  // [3 x d x 2d], [2d]
  Tensor w3, b3;  // [3 x 2d x 4d], [4d]

  static ConvStageParams init(int64_t d, Rng& rng);
  void collect(const std::string& prefix, std::vector<Parameter>& out);
  int64_t dim() const { return w1.dim(1); }
};

// Per-item multi-level representation. Level l halves the previous length
// (floor) and doubles the channel width; pad masks pool as "any real source
// keeps the position real".
struct AbstractionStack {
  std::array<Tensor, 3> levels;               // [n_l x d*2^l]
  std::array<std::vector<uint8_t>, 3> masks;  // 1 = real token
  std::array<int64_t, 3> real_len{0, 0, 0};

  int64_t len(int l) const { return levels[static_cast<size_t>(l)].dim(0); }
  int64_t width(int l) const { return levels[static_cast<size_t>(l)].dim(1); }
};

AbstractionStack build_abstractions_item(const Tensor& embedded,
                                         const std::vector<uint8_t>& pad_mask,
                                         const ConvStageParams& params,
                                         ConvActivation act);

std::vector<AbstractionStack> build_abstractions(const Batch& batch,
                                                 const ConvStageParams& params,
                                                 ConvActivation act);

}  // namespace trajepa
