#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "trajepa/hexgrid.hpp"

namespace trajepa {

// Pretrained cell vectors; entry order is the sorted (q, r) node order of
// the graph they were trained on. The PAD vector (all zeros) backs batch
// padding and is never trained.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(int32_t dim, std::vector<HexCellId> cells,
                 std::vector<double> vectors);

  int32_t dim() const { return dim_; }
  int64_t size() const { return static_cast<int64_t>(cells_.size()); }
  bool empty() const { return cells_.empty(); }
  const std::vector<HexCellId>& cells() const { return cells_; }
  bool has(HexCellId c) const { return index_.count(c) > 0; }
  const double* vector_of(HexCellId c) const;       // nullptr when absent
  const double* vector_at(int64_t index) const {
    return vectors_.data() + index * dim_;
  }
  const std::vector<double>& pad() const { return pad_; }

  // h_{delta(p)}; points in cells never seen in training fall back to the
  // trained cell with the nearest center (memoized).
  std::vector<double> lookup(GpsPoint p, const HexGridSpec& spec) const;
  HexCellId nearest_trained_cell(HexCellId c, const HexGridSpec& spec) const;

  void save(const std::string& path) const;
  static EmbeddingTable load(const std::string& path);
  std::string to_bytes() const;
  static EmbeddingTable from_bytes(const std::string& bytes);

 private:
  int32_t dim_ = 0;
  std::vector<HexCellId> cells_;
  std::vector<double> vectors_;  // row-major, one row per cell
  std::vector<double> pad_;
  std::unordered_map<HexCellId, int32_t, HexCellIdHash> index_;
  mutable std::unordered_map<HexCellId, HexCellId, HexCellIdHash> nearest_cache_;
};

struct WalkConfig {
  int32_t walks_per_node = 10;
  int32_t walk_len = 40;
  double return_p = 1.0;  // node2vec p
  double inout_q = 1.0;   // node2vec q
  int32_t window = 5;
  int32_t negatives = 5;
  int32_t epochs = 5;
  double lr = 0.025;

  void validate() const;
};

// Second-order biased walks; node/walk indexing gives every walk its own
// stream so generation order never changes results.
std::vector<std::vector<int32_t>> random_walks(const RegionGraph& g,
                                               const WalkConfig& cfg,
                                               uint64_t seed);

struct SkipgramStats {
  std::vector<double> epoch_loss;  // mean negative-sampling loss per epoch
};

EmbeddingTable train_skipgram(const std::vector<std::vector<int32_t>>& walks,
                              const RegionGraph& g, int32_t dim,
                              const WalkConfig& cfg, uint64_t seed,
                              SkipgramStats* stats = nullptr);

}  // namespace trajepa
