#pragma once

#include <functional>
#include <string>
#include <vector>

#include "trajepa/data.hpp"
#include "trajepa/measures.hpp"
#include "trajepa/train.hpp"

namespace trajepa {

using Embedder = std::function<std::vector<double>(const Trajectory&)>;

struct SelfSimConfig {
  int64_t query_count = 200;
  int64_t db_size = 2000;
  std::vector<double> db_fractions{0.2, 0.4, 0.6, 0.8, 1.0};
  std::vector<double> rho_s_grid{0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<double> rho_d_grid{0.1, 0.2, 0.3, 0.4, 0.5};
  bool cosine = false;       // false = Euclidean
  double distort_std_m = 7.5;
  uint64_t seed = 42;
};

struct RankCell {
  std::string variant;  // db_size | downsample | distort
  double grid_value = 0.0;
  double mean_rank = 0.0;
  int64_t count = 0;
};

struct RankReport {
  std::vector<RankCell> cells;
};

// Appendix-style protocol: odd half queries, even halves seeded into the
// database, remaining database filled from the pool; 1-based rank of each
// query's twin, averaged.
RankReport self_similarity(const Embedder& embed, const Dataset& test_pool,
                           const SelfSimConfig& cfg, const HexGridSpec& spec);

void save_rank_report_csv(const RankReport& rep, const std::string& path);
void save_rank_report_summary(const RankReport& rep, const std::string& path);

// ---- ranking metrics ----
double hr_at_k(const std::vector<int64_t>& pred_ranking,
               const std::vector<int64_t>& true_ranking, int64_t k);
double r5_at_20(const std::vector<int64_t>& pred_ranking,
                const std::vector<int64_t>& true_ranking);

// ---- frozen-encoder fine-tuning ----
struct FinetuneConfig {
  MeasureConfig measure;
  double train_frac = 0.7;
  double val_frac = 0.1;  // remainder is the test split
  int64_t epochs = 60;
  int64_t steps_per_epoch = 50;
  int64_t pair_batch = 256;
  double lr = 1e-3;
  uint64_t seed = 42;
};

struct FinetuneMetrics {
  double hr5 = 0.0;
  double hr20 = 0.0;
  double r5_20 = 0.0;
  double val_mse = 0.0;
  int64_t test_count = 0;
};

struct PairDecoder {
  Tensor w1, b1, w2, b2;  // 2d -> d -> 1
  // feature standardization fitted on training pairs
  std::vector<double> feat_mean, feat_std;
  std::vector<Parameter> params();
  // symmetric pair features |ea - eb| concat (ea .* eb)
  std::vector<double> features(const std::vector<double>& ea,
                               const std::vector<double>& eb) const;
  double score(const std::vector<double>& ea, const std::vector<double>& eb) const;
};

struct FinetuneResult {
  FinetuneMetrics metrics;
  PairDecoder decoder;
};

// Embeddings are fixed inputs (the encoder stays frozen by construction);
// ground truth is the pairwise measure matrix over the pool.
FinetuneResult finetune_decoder(const std::vector<std::vector<double>>& embeddings,
                                const PairwiseResult& ground_truth,
                                const FinetuneConfig& cfg);

}  // namespace trajepa
