#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "trajepa/data.hpp"
#include "trajepa/hierarchy.hpp"
#include "trajepa/rng.hpp"
#include "trajepa/tensor.hpp"

namespace trajepa {

enum class Interaction { Attention, EmbedConcat, None };
enum class DeconvSquash { Clamp, Sigmoid, None };
enum class PoolKind { Mean, First, Max };

struct ModelConfig {
  int64_t dim = 256;  // level-1 channel width d
  int64_t heads = 8;
  int64_t ff_hidden = 1024;
  int64_t encoder_layers = 1;
  int64_t levels = 3;  // 1 (single-level ablation) or 3
  Interaction interaction = Interaction::Attention;
  bool fusion_renorm = true;
  DeconvSquash deconv_squash = DeconvSquash::Clamp;
  ConvActivation conv_activation = ConvActivation::Gelu;
  double sigma_init = 0.5;
  int64_t max_len = 200;

  int64_t num_masks = 4;  // M
  std::vector<double> mask_ratios{0.10, 0.15, 0.20, 0.25, 0.30};
  double p_successive = 0.5;
  double context_min = 0.85;
  double context_max = 1.0;
  PoolKind pool = PoolKind::Mean;

  void validate() const;
  int64_t level_width(int l) const { return dim << l; }  // l is 0-based
  int64_t level_positions(int l) const;
};

// ---- masked-target / context sampling ----

struct MaskPlan {
  std::vector<std::vector<int64_t>> target_masks;  // M sorted index sets
  std::vector<int64_t> context_indices;            // sorted, disjoint from targets
  std::vector<double> ratios_drawn;
  std::vector<uint8_t> successive_flags;
};

std::vector<std::vector<int64_t>> sample_target_masks(
    int64_t n, const ModelConfig& cfg, uint64_t seed,
    std::vector<double>* ratios_out = nullptr,
    std::vector<uint8_t>* successive_out = nullptr);

std::vector<int64_t> sample_context(
    int64_t n, const ModelConfig& cfg,
    const std::vector<std::vector<int64_t>>& target_masks, uint64_t seed);

// Retries with derived seeds when every position lands in a target
// (degenerate-context); mask-too-large config errors still propagate.
MaskPlan sample_mask_plan(int64_t n, const ModelConfig& cfg, uint64_t seed);

// ---- parameters ----

struct EncoderBlock {
  Tensor ln1_g, ln1_b;
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

struct EncoderStack {
  Tensor pos;  // learnable positional table [positions x width]
  std::vector<EncoderBlock> blocks;
};

struct LevelModel {
  int64_t width = 0;
  EncoderStack ctx;   // gradient-trained
  EncoderStack tar;   // EMA shadow of ctx, never optimized
  EncoderStack pred;  // predictor (single block) with its own positional table
  Tensor mask_token;  // [width]
  Tensor deconv_w, deconv_b;  // attention upsampling taps, [2] and [1]
  Tensor sigma;               // scale on the map this level casts downward
  Tensor expander_w, expander_b;  // regularization expander, width -> 2*width
  // embed-concat interaction projections (levels 2 and 3 only)
  Tensor up_w, up_b;    // [width x width/2], [width/2]
  Tensor cat_w, cat_b;  // [width x width/2], [width/2]
};

struct ModelState {
  ModelConfig cfg;
  ConvStageParams conv;
  std::array<LevelModel, 3> levels;
  std::vector<Parameter> trainable;                 // optimizer registry
  std::vector<std::pair<Tensor, Tensor>> ema_pairs;  // (target, context)
  std::vector<Parameter> target_params;              // audit + checkpoint

  static ModelState init(const ModelConfig& cfg, uint64_t seed);
};

// theta_bar <- tau * theta_bar + (1 - tau) * theta over all EMA pairs
void ema_update(ModelState& model, double tau);

// ---- forward ----

struct EncodeResult {
  Tensor seq;   // [n x width]
  Tensor attn;  // [n x n] head-averaged post-fusion map, entries in [0, 1]
};

// `positions` are absolute level positions indexing the positional table.
// `injected`, when present, must be [n x n]; `sigma` scales it (Eq.-style
// additive fusion, renormalized when cfg.fusion_renorm is set).
EncodeResult run_encoder(const EncoderStack& enc, const Tensor& input,
                         const std::vector<int64_t>& positions,
                         const std::vector<uint8_t>& col_mask,
                         const Tensor* injected, const Tensor* sigma,
                         const ModelConfig& cfg);

// kernel-2 stride-2 transposed conv along both axes + squash; [m x m] -> [2m x 2m]
Tensor propagate_attention(const Tensor& attn, const LevelModel& lm,
                           const ModelConfig& cfg);

// truncate or zero-pad a square map to [target x target]
Tensor resize_map(const Tensor& map, int64_t target);

// predictor: query tokens PE(j) + mask token, keys/values are the context
// rows concatenated with the queries; output read at the query rows.
Tensor predict(const Tensor& s_ctx, const std::vector<int64_t>& mask_indices,
               const LevelModel& lm, const ModelConfig& cfg);

struct LevelForward {
  bool active = false;
  Tensor target_seq;  // full-length target representation (no grad)
  Tensor ctx_seq;     // [|C| x width]
  Tensor target_attn;
  Tensor ctx_attn;
  std::vector<Tensor> predictions;  // per mask, [|M_i| x width]
  std::vector<Tensor> targets;      // per mask, rows of target_seq
};

struct ItemForward {
  std::array<LevelForward, 3> level;
};

// Top-down (level 3 -> 1) target and context encoding with branch-local
// attention propagation, then per-mask prediction.
ItemForward forward_hierarchy(const AbstractionStack& stack,
                              const std::array<MaskPlan, 3>& plans,
                              const ModelState& model);

// Full-trajectory inference: abstraction stack + context encoders with
// propagation, pooled over level-1 positions. Returns a d-vector.
std::vector<double> infer(const Trajectory& traj, const ModelState& model,
                          const EmbeddingTable& table, const HexGridSpec& spec);
std::vector<double> infer_embedded(const Tensor& embedded,
                                   const ModelState& model);

}  // namespace trajepa
