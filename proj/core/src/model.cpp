#include "trajepa/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace trajepa {

namespace {

Tensor glorot_linear(int64_t in, int64_t out, Rng& rng) {
  double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::vector<double> data(static_cast<size_t>(in * out));
  for (auto& v : data) v = rng.uniform(-limit, limit);
  return Tensor::from({in, out}, std::move(data), true);
}

Tensor normal_init(std::vector<int64_t> shape, double std, Rng& rng) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  std::vector<double> data(static_cast<size_t>(n));
  for (auto& v : data) v = rng.normal(0.0, std);
  return Tensor::from(std::move(shape), std::move(data), true);
}

EncoderBlock make_block(int64_t w, int64_t ff, Rng& rng) {
  EncoderBlock b;
  b.ln1_g = Tensor::full({w}, 1.0, true);
  b.ln1_b = Tensor::zeros({w}, true);
  b.wq = glorot_linear(w, w, rng);
  b.bq = Tensor::zeros({w}, true);
  b.wk = glorot_linear(w, w, rng);
  b.bk = Tensor::zeros({w}, true);
  b.wv = glorot_linear(w, w, rng);
  b.bv = Tensor::zeros({w}, true);
  b.wo = glorot_linear(w, w, rng);
  b.bo = Tensor::zeros({w}, true);
  b.ln2_g = Tensor::full({w}, 1.0, true);
  b.ln2_b = Tensor::zeros({w}, true);
  b.ffn_w1 = glorot_linear(w, ff, rng);
  b.ffn_b1 = Tensor::zeros({ff}, true);
  b.ffn_w2 = glorot_linear(ff, w, rng);
  b.ffn_b2 = Tensor::zeros({w}, true);
  return b;
}

EncoderStack make_stack(int64_t positions, int64_t w, int64_t ff,
                        int64_t layers, Rng& rng) {
  EncoderStack s;
  s.pos = normal_init({positions, w}, 0.02, rng);
  for (int64_t i = 0; i < layers; ++i) s.blocks.push_back(make_block(w, ff, rng));
  return s;
}

template <typename Fn>
void foreach_block_tensor(EncoderBlock& b, const std::string& prefix, Fn fn) {
  fn(prefix + ".ln1.g", b.ln1_g);
  fn(prefix + ".ln1.b", b.ln1_b);
  fn(prefix + ".attn.wq", b.wq);
  fn(prefix + ".attn.bq", b.bq);
  fn(prefix + ".attn.wk", b.wk);
  fn(prefix + ".attn.bk", b.bk);
  fn(prefix + ".attn.wv", b.wv);
  fn(prefix + ".attn.bv", b.bv);
  fn(prefix + ".attn.wo", b.wo);
  fn(prefix + ".attn.bo", b.bo);
  fn(prefix + ".ln2.g", b.ln2_g);
  fn(prefix + ".ln2.b", b.ln2_b);
  fn(prefix + ".ffn.w1", b.ffn_w1);
  fn(prefix + ".ffn.b1", b.ffn_b1);
  fn(prefix + ".ffn.w2", b.ffn_w2);
  fn(prefix + ".ffn.b2", b.ffn_b2);
}

template <typename Fn>
void foreach_stack_tensor(EncoderStack& s, const std::string& prefix, Fn fn) {
  fn(prefix + ".pos", s.pos);
  for (size_t i = 0; i < s.blocks.size(); ++i)
    foreach_block_tensor(s.blocks[i], prefix + ".block" + std::to_string(i), fn);
}

EncoderStack clone_frozen(EncoderStack& src) {
  EncoderStack out;
  out.pos = src.pos.detached();
  for (auto& b : src.blocks) {
    EncoderBlock c;
    c.ln1_g = b.ln1_g.detached();
    c.ln1_b = b.ln1_b.detached();
    c.wq = b.wq.detached();
    c.bq = b.bq.detached();
    c.wk = b.wk.detached();
    c.bk = b.bk.detached();
    c.wv = b.wv.detached();
    c.bv = b.bv.detached();
    c.wo = b.wo.detached();
    c.bo = b.bo.detached();
    c.ln2_g = b.ln2_g.detached();
    c.ln2_b = b.ln2_b.detached();
    c.ffn_w1 = b.ffn_w1.detached();
    c.ffn_b1 = b.ffn_b1.detached();
    c.ffn_w2 = b.ffn_w2.detached();
    c.ffn_b2 = b.ffn_b2.detached();
    out.blocks.push_back(std::move(c));
  }
  return out;
}

std::vector<int64_t> iota_indices(int64_t n) {
  std::vector<int64_t> v(static_cast<size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

Tensor resize_rows(const Tensor& x, int64_t target) {
  int64_t n = x.dim(0);
  if (n == target) return x;
  if (n > target) {
    return gather_rows(x, iota_indices(target));
  }
  return concat_rows(x, Tensor::zeros({target - n, x.dim(1)}));
}

Tensor fuse_maps(const Tensor& a, const Tensor& injected, const Tensor& sigma,
                 const std::vector<uint8_t>& col_mask, bool renorm) {
  if (injected.shape() != a.shape())
    throw_shape("fuse_maps: injected map shape does not match attention map");
  Tensor masked = mul_colmask(injected, col_mask);
  Tensor numer = add(a, scale_by(masked, sigma));
  if (!renorm) return numer;
  // analytic denominator: softmax rows already sum to one, so the fused row
  // mass is 1 + sigma * rowsum(injected)
  Tensor den = max_scalar(add_scalar(scale_by(row_sums(masked), sigma), 1.0), 1e-6);
  return div_rows(numer, den);
}

struct BlockOut {
  Tensor x;
  Tensor mean_attn;
};

BlockOut run_block(const EncoderBlock& blk, Tensor x,
                   const std::vector<uint8_t>& col_mask, const Tensor* injected,
                   const Tensor* sigma, const ModelConfig& cfg) {
  int64_t w = x.dim(1);
  int64_t heads = cfg.heads;
  int64_t dk = w / heads;
  double scale = 1.0 / std::sqrt(static_cast<double>(dk));

  Tensor h = layer_norm(x, blk.ln1_g, blk.ln1_b);
  Tensor q = add_rowvec(matmul(h, blk.wq), blk.bq);
  Tensor k = add_rowvec(matmul(h, blk.wk), blk.bk);
  Tensor v = add_rowvec(matmul(h, blk.wv), blk.bv);

  std::vector<Tensor> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));
  Tensor attn_sum;
  for (int64_t i = 0; i < heads; ++i) {
    Tensor qi = slice_cols(q, i * dk, (i + 1) * dk);
    Tensor ki = slice_cols(k, i * dk, (i + 1) * dk);
    Tensor vi = slice_cols(v, i * dk, (i + 1) * dk);
    Tensor scores = mul_scalar(matmul(qi, transpose(ki)), scale);
    Tensor attn = masked_softmax_rows(scores, col_mask);
    if (injected != nullptr)
      attn = fuse_maps(attn, *injected, *sigma, col_mask, cfg.fusion_renorm);
    head_outs.push_back(matmul(attn, vi));
    attn_sum = i == 0 ? attn : add(attn_sum, attn);
  }
  Tensor attn_out = add_rowvec(matmul(concat_cols(head_outs), blk.wo), blk.bo);
  x = add(x, attn_out);
  Tensor h2 = layer_norm(x, blk.ln2_g, blk.ln2_b);
  Tensor ffn = add_rowvec(
      matmul(gelu(add_rowvec(matmul(h2, blk.ffn_w1), blk.ffn_b1)), blk.ffn_w2),
      blk.ffn_b2);
  x = add(x, ffn);
  Tensor mean_attn = clamp01(mul_scalar(attn_sum, 1.0 / static_cast<double>(heads)));
  return {x, mean_attn};
}

// Nearest-neighbor 2x upsample + project + concat-project: the embed-concat
// interaction variant.
Tensor embed_concat_combine(const Tensor& lower_input, const Tensor& upper_seq,
                            const LevelModel& upper) {
  int64_t u = upper_seq.dim(0);
  std::vector<int64_t> dup(static_cast<size_t>(2 * u));
  for (int64_t i = 0; i < u; ++i) {
    dup[static_cast<size_t>(2 * i)] = i;
    dup[static_cast<size_t>(2 * i + 1)] = i;
  }
  Tensor up2 = gather_rows(upper_seq, dup);
  Tensor resized = resize_rows(up2, lower_input.dim(0));
  Tensor proj = add_rowvec(matmul(resized, upper.up_w), upper.up_b);
  return add_rowvec(matmul(concat_cols({lower_input, proj}), upper.cat_w),
                    upper.cat_b);
}

}  // namespace

void ModelConfig::validate() const {
  if (dim <= 0) throw_config("model: dim must be > 0");
  if (heads <= 0 || dim % heads != 0)
    throw_config("model: dim must be divisible by heads at every level");
  if (ff_hidden <= 0) throw_config("model: ff_hidden must be > 0");
  if (encoder_layers < 1 || encoder_layers > 3)
    throw_config("model: encoder_layers must be in 1..3");
  if (levels != 1 && levels != 3)
    throw_config("model: levels must be 1 or 3");
  if (max_len < 4) throw_config("model: max_len must be >= 4");
  if (num_masks < 1) throw_config("model: num_masks must be >= 1");
  if (mask_ratios.empty()) throw_config("model: mask_ratios must be non-empty");
  for (double r : mask_ratios)
    if (r <= 0.0 || r >= 1.0)
      throw_config("model: mask ratios must lie in (0, 1)");
  if (p_successive < 0.0 || p_successive > 1.0)
    throw_config("model: p_successive must lie in [0, 1]");
  if (context_min <= 0.0 || context_max > 1.0 || context_min > context_max)
    throw_config("model: context ratio range must lie within (0, 1]");
  if (sigma_init < 0.0) throw_config("model: sigma_init must be >= 0");
}

int64_t ModelConfig::level_positions(int l) const {
  int64_t n = max_len >> l;
  return std::max<int64_t>(n, 1);
}

std::vector<std::vector<int64_t>> sample_target_masks(
    int64_t n, const ModelConfig& cfg, uint64_t seed,
    std::vector<double>* ratios_out, std::vector<uint8_t>* successive_out) {
  if (n < 2) throw_shape("sample_target_masks: sequence length must be >= 2");
  Rng rng(seed);
  std::vector<std::vector<int64_t>> masks;
  masks.reserve(static_cast<size_t>(cfg.num_masks));
  for (int64_t i = 0; i < cfg.num_masks; ++i) {
    double r = cfg.mask_ratios[rng.uniform_int(cfg.mask_ratios.size())];
    int64_t len = std::max<int64_t>(
        1, std::llround(r * static_cast<double>(n)));
    if (len >= n)
      throw_config("sample_target_masks: mask of " + std::to_string(len) +
                   " covers the whole sequence of " + std::to_string(n));
    bool successive = rng.bernoulli(cfg.p_successive);
    std::vector<int64_t> idx;
    if (successive) {
      int64_t start =
          static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n - len + 1)));
      idx.resize(static_cast<size_t>(len));
      std::iota(idx.begin(), idx.end(), start);
    } else {
      idx = rng.sample_without_replacement(n, len);
    }
    if (ratios_out) ratios_out->push_back(r);
    if (successive_out) successive_out->push_back(successive ? 1 : 0);
    masks.push_back(std::move(idx));
  }
  return masks;
}

std::vector<int64_t> sample_context(
    int64_t n, const ModelConfig& cfg,
    const std::vector<std::vector<int64_t>>& target_masks, uint64_t seed) {
  if (n < 1) throw_shape("sample_context: empty sequence");
  Rng rng(seed);
  double p_gamma = rng.uniform(cfg.context_min, cfg.context_max);
  int64_t count = std::llround(p_gamma * static_cast<double>(n));
  count = std::clamp<int64_t>(count, 1, n);
  std::vector<int64_t> sampled = rng.sample_without_replacement(n, count);

  std::vector<uint8_t> is_target(static_cast<size_t>(n), 0);
  for (const auto& mask : target_masks)
    for (int64_t i : mask) {
      if (i < 0 || i >= n) throw_shape("sample_context: target index out of range");
      is_target[static_cast<size_t>(i)] = 1;
    }

  std::vector<int64_t> context;
  for (int64_t i : sampled)
    if (!is_target[static_cast<size_t>(i)]) context.push_back(i);
  if (context.empty()) {
    for (int64_t i = 0; i < n; ++i)
      if (!is_target[static_cast<size_t>(i)]) {
        context.push_back(i);
        break;
      }
    if (context.empty())
      throw_state("sample_context: every position is covered by a target");
  }
  return context;
}

MaskPlan sample_mask_plan(int64_t n, const ModelConfig& cfg, uint64_t seed) {
  for (uint64_t attempt = 0;; ++attempt) {
    uint64_t s = derive_seed({seed, attempt, 0x504c414eULL});
    try {
      MaskPlan plan;
      plan.target_masks = sample_target_masks(n, cfg, derive_seed({s, 1}),
                                              &plan.ratios_drawn,
                                              &plan.successive_flags);
      plan.context_indices =
          sample_context(n, cfg, plan.target_masks, derive_seed({s, 2}));
      return plan;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::State || attempt >= 100) throw;
    }
  }
}

ModelState ModelState::init(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  ModelState st;
  st.cfg = cfg;
  Rng rng(derive_seed({seed, 0x4d4f44454cULL}));  // model init stream

  st.conv = ConvStageParams::init(cfg.dim, rng);
  st.conv.collect("conv", st.trainable);

  for (int l = 0; l < 3; ++l) {
    LevelModel& lm = st.levels[static_cast<size_t>(l)];
    int64_t w = cfg.level_width(l);
    int64_t positions = cfg.level_positions(l);
    std::string prefix = "level" + std::to_string(l + 1);

    lm.width = w;
    lm.ctx = make_stack(positions, w, cfg.ff_hidden, cfg.encoder_layers, rng);
    lm.pred = make_stack(positions, w, cfg.ff_hidden, 1, rng);
    lm.mask_token = normal_init({w}, 0.02, rng);
    lm.deconv_w = Tensor::from({2}, {1.0, 1.0}, true);  // replication start
    lm.deconv_b = Tensor::zeros({1}, true);
    lm.sigma = Tensor::scalar(cfg.sigma_init, true);
    lm.expander_w = glorot_linear(w, 2 * w, rng);
    lm.expander_b = Tensor::zeros({2 * w}, true);
    if (l > 0) {
      lm.up_w = glorot_linear(w, w / 2, rng);
      lm.up_b = Tensor::zeros({w / 2}, true);
      lm.cat_w = glorot_linear(w, w / 2, rng);
      lm.cat_b = Tensor::zeros({w / 2}, true);
    }
    lm.tar = clone_frozen(lm.ctx);

    foreach_stack_tensor(lm.ctx, prefix + ".ctx", [&](const std::string& n, Tensor& t) {
      st.trainable.push_back({n, t});
    });
    foreach_stack_tensor(lm.pred, prefix + ".pred", [&](const std::string& n, Tensor& t) {
      st.trainable.push_back({n, t});
    });
    st.trainable.push_back({prefix + ".mask_token", lm.mask_token});
    st.trainable.push_back({prefix + ".deconv.w", lm.deconv_w});
    st.trainable.push_back({prefix + ".deconv.b", lm.deconv_b});
    st.trainable.push_back({prefix + ".sigma", lm.sigma});
    st.trainable.push_back({prefix + ".expander.w", lm.expander_w});
    st.trainable.push_back({prefix + ".expander.b", lm.expander_b});
    if (l > 0) {
      st.trainable.push_back({prefix + ".up.w", lm.up_w});
      st.trainable.push_back({prefix + ".up.b", lm.up_b});
      st.trainable.push_back({prefix + ".cat.w", lm.cat_w});
      st.trainable.push_back({prefix + ".cat.b", lm.cat_b});
    }

    // EMA registry pairs target tensors with their context twins
    std::vector<Tensor> ctx_list, tar_list;
    foreach_stack_tensor(lm.ctx, "", [&](const std::string&, Tensor& t) {
      ctx_list.push_back(t);
    });
    foreach_stack_tensor(lm.tar, "", [&](const std::string&, Tensor& t) {
      tar_list.push_back(t);
    });
    for (size_t i = 0; i < ctx_list.size(); ++i) {
      if (tar_list[i].shape() != ctx_list[i].shape())
        throw_state("ModelState: mismatched EMA registries");
      st.ema_pairs.emplace_back(tar_list[i], ctx_list[i]);
    }
    foreach_stack_tensor(lm.tar, prefix + ".tar", [&](const std::string& n, Tensor& t) {
      st.target_params.push_back({n, t});
    });
  }
  return st;
}

void ema_update(ModelState& model, double tau) {
  if (tau < 0.0 || tau > 1.0) throw_config("ema_update: tau must lie in [0, 1]");
  for (auto& [tar, ctx] : model.ema_pairs) {
    auto& td = tar.data();
    const auto& cd = ctx.data();
    if (td.size() != cd.size()) throw_state("ema_update: mismatched registries");
    for (size_t i = 0; i < td.size(); ++i)
      td[i] = tau * td[i] + (1.0 - tau) * cd[i];
  }
}

EncodeResult run_encoder(const EncoderStack& enc, const Tensor& input,
                         const std::vector<int64_t>& positions,
                         const std::vector<uint8_t>& col_mask,
                         const Tensor* injected, const Tensor* sigma,
                         const ModelConfig& cfg) {
  if (static_cast<int64_t>(positions.size()) != input.dim(0))
    throw_shape("run_encoder: positions length != sequence length");
  for (int64_t p : positions)
    if (p < 0 || p >= enc.pos.dim(0))
      throw_config("run_encoder: position " + std::to_string(p) +
                   " exceeds the positional table; raise max_len");
  if (injected != nullptr &&
      (injected->dim(0) != input.dim(0) || injected->dim(1) != input.dim(0)))
    throw_shape("run_encoder: injected map must be [n x n]");

  Tensor x = add(input, gather_rows(enc.pos, positions));
  Tensor attn;
  for (const EncoderBlock& blk : enc.blocks) {
    BlockOut out = run_block(blk, x, col_mask, injected, sigma, cfg);
    x = out.x;
    attn = out.mean_attn;
  }
  return {x, attn};
}

Tensor propagate_attention(const Tensor& attn, const LevelModel& lm,
                           const ModelConfig& cfg) {
  Tensor up = deconv2x_square(attn, lm.deconv_w, lm.deconv_b);
  switch (cfg.deconv_squash) {
    case DeconvSquash::Clamp:
      return clamp01(up);
    case DeconvSquash::Sigmoid:
      return sigmoid(up);
    case DeconvSquash::None:
      return up;
  }
  return up;
}

Tensor resize_map(const Tensor& map, int64_t target) {
  if (map.dim(0) != map.dim(1))
    throw_shape("resize_map: map must be square");
  if (map.dim(0) == target) return map;
  Tensor rows = resize_rows(map, target);
  return transpose(resize_rows(transpose(rows), target));
}

Tensor predict(const Tensor& s_ctx, const std::vector<int64_t>& mask_indices,
               const LevelModel& lm, const ModelConfig& cfg) {
  if (mask_indices.empty()) throw_state("predict: empty target mask");
  for (int64_t p : mask_indices)
    if (p < 0 || p >= lm.pred.pos.dim(0))
      throw_config("predict: mask position exceeds positional table");

  Tensor queries = add_rowvec(gather_rows(lm.pred.pos, mask_indices), lm.mask_token);
  Tensor x = concat_rows(s_ctx, queries);
  std::vector<uint8_t> all_real(static_cast<size_t>(x.dim(0)), 1);
  for (const EncoderBlock& blk : lm.pred.blocks)
    x = run_block(blk, x, all_real, nullptr, nullptr, cfg).x;

  std::vector<int64_t> query_rows(mask_indices.size());
  std::iota(query_rows.begin(), query_rows.end(), s_ctx.dim(0));
  return gather_rows(x, query_rows);
}

ItemForward forward_hierarchy(const AbstractionStack& stack,
                              const std::array<MaskPlan, 3>& plans,
                              const ModelState& model) {
  const ModelConfig& cfg = model.cfg;
  ItemForward out;
  int top = cfg.levels == 1 ? 0 : 2;

  Tensor carry_tar_map, carry_ctx_map;  // raw upsampled maps from the level above
  Tensor carry_tar_seq, carry_ctx_seq;  // upper sequences (embed-concat variant)
  bool have_upper = false;

  for (int l = top; l >= 0; --l) {
    const LevelModel& lm = model.levels[static_cast<size_t>(l)];
    const MaskPlan& plan = plans[static_cast<size_t>(l)];
    LevelForward& lf = out.level[static_cast<size_t>(l)];
    lf.active = true;
    int64_t n_l = stack.len(l);
    int64_t real_l = stack.real_len[static_cast<size_t>(l)];

    // information-leakage guard: context and targets must stay disjoint and
    // inside the real (non-pad) prefix
    std::vector<uint8_t> in_target(static_cast<size_t>(n_l), 0);
    for (const auto& mask : plan.target_masks) {
      if (mask.empty()) throw_state("forward_hierarchy: empty target mask");
      for (int64_t i : mask) {
        if (i < 0 || i >= real_l)
          throw_state("forward_hierarchy: target mask selects a pad position");
        in_target[static_cast<size_t>(i)] = 1;
      }
    }
    for (int64_t i : plan.context_indices) {
      if (i < 0 || i >= real_l)
        throw_state("forward_hierarchy: context selects a pad position");
      if (in_target[static_cast<size_t>(i)])
        throw_state("forward_hierarchy: context overlaps a target mask");
    }

    const Tensor* upper_sigma =
        have_upper ? &model.levels[static_cast<size_t>(l + 1)].sigma : nullptr;
    const LevelModel* upper_lm =
        have_upper ? &model.levels[static_cast<size_t>(l + 1)] : nullptr;

    // ---------------- target branch (no gradient) ----------------
    {
      NoGradGuard ng;
      Tensor input = stack.levels[static_cast<size_t>(l)];
      Tensor injected;
      const Tensor* inj = nullptr;
      if (have_upper && cfg.interaction == Interaction::Attention) {
        injected = resize_map(carry_tar_map, n_l);
        inj = &injected;
      }
      if (have_upper && cfg.interaction == Interaction::EmbedConcat)
        input = embed_concat_combine(input, carry_tar_seq, *upper_lm);
      EncodeResult enc =
          run_encoder(lm.tar, input, iota_indices(n_l),
                      stack.masks[static_cast<size_t>(l)], inj, upper_sigma, cfg);
      lf.target_seq = enc.seq;
      lf.target_attn = enc.attn;
      if (l > 0) {
        if (cfg.interaction == Interaction::Attention)
          carry_tar_map = propagate_attention(enc.attn, lm, cfg);
        carry_tar_seq = enc.seq;
      }
    }

    // ---------------- context branch ----------------
    Tensor ctx_input =
        gather_rows(stack.levels[static_cast<size_t>(l)], plan.context_indices);
    Tensor injected_ctx;
    const Tensor* inj_ctx = nullptr;
    if (have_upper && cfg.interaction == Interaction::Attention) {
      injected_ctx = resize_map(carry_ctx_map,
                                static_cast<int64_t>(plan.context_indices.size()));
      inj_ctx = &injected_ctx;
    }
    if (have_upper && cfg.interaction == Interaction::EmbedConcat)
      ctx_input = embed_concat_combine(ctx_input, carry_ctx_seq, *upper_lm);
    std::vector<uint8_t> ctx_mask(plan.context_indices.size(), 1);
    EncodeResult enc = run_encoder(lm.ctx, ctx_input, plan.context_indices,
                                   ctx_mask, inj_ctx, upper_sigma, cfg);
    lf.ctx_seq = enc.seq;
    lf.ctx_attn = enc.attn;
    if (l > 0) {
      if (cfg.interaction == Interaction::Attention)
        carry_ctx_map = propagate_attention(enc.attn, lm, cfg);
      carry_ctx_seq = enc.seq;
    }

    for (const auto& mask : plan.target_masks) {
      lf.predictions.push_back(predict(enc.seq, mask, lm, cfg));
      lf.targets.push_back(gather_rows(lf.target_seq, mask));
    }

    have_upper = true;
  }
  return out;
}

std::vector<double> infer_embedded(const Tensor& embedded,
                                   const ModelState& model) {
  NoGradGuard ng;
  const ModelConfig& cfg = model.cfg;
  int64_t n = embedded.dim(0);
  if (n < 4) throw_shape("infer: trajectory must have at least 4 points");

  std::vector<uint8_t> all_real(static_cast<size_t>(n), 1);
  AbstractionStack stack = build_abstractions_item(embedded, all_real, model.conv,
                                                   cfg.conv_activation);
  int top = cfg.levels == 1 ? 0 : 2;
  Tensor carry_map, carry_seq;
  bool have_upper = false;
  Tensor level1_out;
  for (int l = top; l >= 0; --l) {
    const LevelModel& lm = model.levels[static_cast<size_t>(l)];
    int64_t n_l = stack.len(l);
    Tensor input = stack.levels[static_cast<size_t>(l)];
    Tensor injected;
    const Tensor* inj = nullptr;
    const Tensor* upper_sigma =
        have_upper ? &model.levels[static_cast<size_t>(l + 1)].sigma : nullptr;
    if (have_upper && cfg.interaction == Interaction::Attention) {
      injected = resize_map(carry_map, n_l);
      inj = &injected;
    }
    if (have_upper && cfg.interaction == Interaction::EmbedConcat)
      input = embed_concat_combine(input, carry_seq,
                                   model.levels[static_cast<size_t>(l + 1)]);
    std::vector<uint8_t> mask(static_cast<size_t>(n_l), 1);
    EncodeResult enc =
        run_encoder(lm.ctx, input, iota_indices(n_l), mask, inj, upper_sigma, cfg);
    if (l > 0) {
      if (cfg.interaction == Interaction::Attention)
        carry_map = propagate_attention(enc.attn, lm, cfg);
      carry_seq = enc.seq;
      have_upper = true;
    } else {
      level1_out = enc.seq;
    }
  }

  int64_t rows = level1_out.dim(0), d = level1_out.dim(1);
  std::vector<double> pooled(static_cast<size_t>(d), 0.0);
  switch (cfg.pool) {
    case PoolKind::Mean:
      for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < d; ++j)
          pooled[static_cast<size_t>(j)] += level1_out.at(i, j);
      for (auto& v : pooled) v /= static_cast<double>(rows);
      break;
    case PoolKind::First:
      for (int64_t j = 0; j < d; ++j) pooled[static_cast<size_t>(j)] = level1_out.at(0, j);
      break;
    case PoolKind::Max:
      for (int64_t j = 0; j < d; ++j) {
        double m = level1_out.at(0, j);
        for (int64_t i = 1; i < rows; ++i) m = std::max(m, level1_out.at(i, j));
        pooled[static_cast<size_t>(j)] = m;
      }
      break;
  }
  return pooled;
}

std::vector<double> infer(const Trajectory& traj, const ModelState& model,
                          const EmbeddingTable& table, const HexGridSpec& spec) {
  if (table.empty()) throw_state("infer: embedding table is empty (untrained state)");
  int64_t n = traj.size();
  std::vector<double> data(static_cast<size_t>(n * table.dim()));
  for (int64_t i = 0; i < n; ++i) {
    auto vec = table.lookup(traj.points[static_cast<size_t>(i)], spec);
    std::copy(vec.begin(), vec.end(), data.begin() + i * table.dim());
  }
  return infer_embedded(Tensor::from({n, table.dim()}, std::move(data)), model);
}

}  // namespace trajepa
