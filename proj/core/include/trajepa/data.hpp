#pragma once

#include <optional>
#include <string>
#include <vector>

#include "trajepa/hexgrid.hpp"
#include "trajepa/region_embed.hpp"
#include "trajepa/tensor.hpp"

namespace trajepa {

struct Trajectory {
  std::string id;
  std::vector<GpsPoint> points;
  std::vector<double> timestamps;  // optional; empty or same length as points

  int64_t size() const { return static_cast<int64_t>(points.size()); }
};

using Dataset = std::vector<Trajectory>;

struct LoadOptions {
  int64_t min_len = 20;
  int64_t max_len = 200;
};

struct LoadReport {
  int64_t rows_read = 0;
  int64_t points_dropped_oob = 0;
  int64_t trajs_filtered_len = 0;
};

// CSV schema: header row, columns traj_id, seq, lon, lat and optionally t.
// Rows are grouped by traj_id and ordered by seq.
Dataset load_csv(const std::string& path, const HexGridSpec& spec,
                 const LoadOptions& opts, LoadReport* report = nullptr);

struct SynthConfig {
  int64_t n_traj = 2000;
  int64_t min_len = 20;
  int64_t max_len = 200;
  double step_min_m = 20.0;
  double step_max_m = 120.0;
  double turn_std_deg = 15.0;   // per-step heading jitter
  double turn_prob = 0.05;      // chance of a fresh random heading
};

// Correlated random walks inside the region box; deterministic per seed.
Dataset synth_generate(const SynthConfig& cfg, const HexGridSpec& spec,
                       uint64_t seed);
void save_csv(const Dataset& ds, const std::string& path);

// Interior points dropped independently with probability rate; endpoints
// always survive.
Trajectory downsample(const Trajectory& t, double rate, uint64_t seed);

// Each point shifted with probability rate by a 2-D Gaussian of std
// `std_m` in projected meters.
Trajectory distort(const Trajectory& t, double rate, double std_m,
                   const HexGridSpec& spec, uint64_t seed);

// 1-based odd indices {p1, p3, ...} and even indices {p2, p4, ...}.
std::pair<Trajectory, Trajectory> odd_even_split(const Trajectory& q);

struct Batch {
  Tensor embeddings;                 // [B*n_max x d] row blocks per item
  std::vector<uint8_t> pad_mask;     // B*n_max, 1 = real token
  std::vector<int64_t> lengths;      // per item
  int64_t batch_size = 0;
  int64_t n_max = 0;
  int64_t dim = 0;

  // the item's [n_max x d] block (constant w.r.t. the graph)
  Tensor item(int64_t b) const;
  std::vector<uint8_t> item_mask(int64_t b) const;
};

Batch embed_batch(const std::vector<const Trajectory*>& trajs,
                  const EmbeddingTable& table, const HexGridSpec& spec);
Batch embed_batch(const Dataset& trajs, const EmbeddingTable& table,
                  const HexGridSpec& spec);

}  // namespace trajepa
