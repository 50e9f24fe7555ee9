#include "trajepa/hierarchy.hpp"

#include <cmath>

namespace trajepa {

namespace {

Tensor glorot_conv(int64_t k, int64_t cin, int64_t cout, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(k * cin + k * cout));
  std::vector<double> data(static_cast<size_t>(k * cin * cout));
  for (auto& v : data) v = rng.uniform(-limit, limit);
  return Tensor::from({k, cin, cout}, std::move(data), /*requires_grad=*/true);
}

std::vector<uint8_t> pool_mask(const std::vector<uint8_t>& m) {
  std::vector<uint8_t> out(m.size() / 2);
  for (size_t j = 0; j < out.size(); ++j)
    out[j] = (m[2 * j] || m[2 * j + 1]) ? 1 : 0;
  return out;
}

int64_t count_real(const std::vector<uint8_t>& m) {
  int64_t c = 0;
  for (uint8_t v : m) c += v ? 1 : 0;
  return c;
}

}  // namespace

ConvStageParams ConvStageParams::init(int64_t d, Rng& rng) {
  ConvStageParams p;
  p.w1 = glorot_conv(3, d, d, rng);
  p.b1 = Tensor::zeros({d}, true);
  p.w2 = glorot_conv(3, d, 2 * d, rng);
  p.b2 = Tensor::zeros({2 * d}, true);
  p.w3 = glorot_conv(3, 2 * d, 4 * d, rng);
  p.b3 = Tensor::zeros({4 * d}, true);
  return p;
}

void ConvStageParams::collect(const std::string& prefix,
                              std::vector<Parameter>& out) {
  out.push_back({prefix + ".stage1.w", w1});
  out.push_back({prefix + ".stage1.b", b1});
  out.push_back({prefix + ".stage2.w", w2});
  out.push_back({prefix + ".stage2.b", b2});
  out.push_back({prefix + ".stage3.w", w3});
  out.push_back({prefix + ".stage3.b", b3});
}

AbstractionStack build_abstractions_item(const Tensor& embedded,
                                         const std::vector<uint8_t>& pad_mask,
                                         const ConvStageParams& params,
                                         ConvActivation act) {
  int64_t n = embedded.dim(0);
  if (n < 4)
    throw_shape("build_abstractions: sequence length " + std::to_string(n) +
                " < 4, level 3 would be empty");
  if (embedded.dim(1) != params.dim())
    throw_shape("build_abstractions: embedding width " +
                std::to_string(embedded.dim(1)) + " != conv width " +
                std::to_string(params.dim()));
  if (static_cast<int64_t>(pad_mask.size()) != n)
    throw_shape("build_abstractions: pad mask length mismatch");

  auto maybe_act = [&](Tensor x) {
    return act == ConvActivation::Gelu ? gelu(x) : x;
  };

  AbstractionStack s;
  s.levels[0] = conv1d(embedded, params.w1, params.b1);
  s.masks[0] = pad_mask;
  s.levels[1] = maxpool1d(maybe_act(conv1d(s.levels[0], params.w2, params.b2)));
  s.masks[1] = pool_mask(s.masks[0]);
  s.levels[2] = maxpool1d(maybe_act(conv1d(s.levels[1], params.w3, params.b3)));
  s.masks[2] = pool_mask(s.masks[1]);
  for (int l = 0; l < 3; ++l) {
    if (static_cast<int64_t>(s.masks[static_cast<size_t>(l)].size()) !=
        s.levels[static_cast<size_t>(l)].dim(0))
      throw_shape("build_abstractions: level mask length mismatch");
    s.real_len[static_cast<size_t>(l)] = count_real(s.masks[static_cast<size_t>(l)]);
  }
  return s;
}

std::vector<AbstractionStack> build_abstractions(const Batch& batch,
                                                 const ConvStageParams& params,
                                                 ConvActivation act) {
  std::vector<AbstractionStack> out;
  out.reserve(static_cast<size_t>(batch.batch_size));
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    if (batch.lengths[static_cast<size_t>(b)] < 4)
      throw_shape("build_abstractions: batch item " + std::to_string(b) +
                  " has length < 4");
    out.push_back(
        build_abstractions_item(batch.item(b), batch.item_mask(b), params, act));
  }
  return out;
}

}  // namespace trajepa
