#include "trajepa/region_embed.hpp"

#include <algorithm>
#include <cmath>

#include "trajepa/io.hpp"
#include "trajepa/rng.hpp"

namespace trajepa {

namespace {

constexpr char kTableMagic[4] = {'T', 'J', 'E', 'T'};
constexpr uint32_t kTableVersion = 1;

double sigmoid_clamped(double x) {
  if (x > 30.0) x = 30.0;
  if (x < -30.0) x = -30.0;
  return 1.0 / (1.0 + std::exp(-x));
}

}  // namespace

EmbeddingTable::EmbeddingTable(int32_t dim, std::vector<HexCellId> cells,
                               std::vector<double> vectors)
    : dim_(dim), cells_(std::move(cells)), vectors_(std::move(vectors)) {
  if (dim_ <= 0) throw_config("EmbeddingTable: dim must be > 0");
  if (vectors_.size() != cells_.size() * static_cast<size_t>(dim_))
    throw_shape("EmbeddingTable: vector payload does not match cell count");
  pad_.assign(static_cast<size_t>(dim_), 0.0);
  index_.reserve(cells_.size());
  for (size_t i = 0; i < cells_.size(); ++i)
    index_[cells_[i]] = static_cast<int32_t>(i);
}

const double* EmbeddingTable::vector_of(HexCellId c) const {
  auto it = index_.find(c);
  if (it == index_.end()) return nullptr;
  return vectors_.data() + static_cast<size_t>(it->second) * dim_;
}

HexCellId EmbeddingTable::nearest_trained_cell(HexCellId c,
                                               const HexGridSpec& spec) const {
  if (index_.count(c)) return c;
  if (cells_.empty()) throw_state("nearest_trained_cell: empty table");
  auto cached = nearest_cache_.find(c);
  if (cached != nearest_cache_.end()) return cached->second;

  XY target = spec.center(c);
  double e = spec.edge_len_m();
  HexCellId best{};
  double best_d2 = -1.0;
  bool found = false;

  auto consider = [&](HexCellId cand) {
    if (!index_.count(cand)) return;
    XY cc = spec.center(cand);
    double d2 = (cc.x - target.x) * (cc.x - target.x) +
                (cc.y - target.y) * (cc.y - target.y);
    if (!found || d2 < best_d2 || (d2 == best_d2 && cand < best)) {
      best = cand;
      best_d2 = d2;
      found = true;
    }
  };

  // Expanding ring scan. A cell at hex distance k has center distance of at
  // least 1.5*k*e, so once that bound exceeds the best hit we can stop.
  const auto& dirs = hex_directions();
  for (int32_t k = 1; k <= 4096; ++k) {
    if (found && 1.5 * static_cast<double>(k) * e > std::sqrt(best_d2)) break;
    HexCellId cur{c.q + dirs[4].q * k, c.r + dirs[4].r * k};
    for (int side = 0; side < 6; ++side)
      for (int32_t step = 0; step < k; ++step) {
        consider(cur);
        cur = {cur.q + dirs[static_cast<size_t>(side)].q,
               cur.r + dirs[static_cast<size_t>(side)].r};
      }
  }
  if (!found) {
    for (const HexCellId& cand : cells_) consider(cand);
  }
  nearest_cache_[c] = best;
  return best;
}

std::vector<double> EmbeddingTable::lookup(GpsPoint p,
                                           const HexGridSpec& spec) const {
  if (cells_.empty()) throw_state("lookup: embedding table is empty");
  HexCellId c = spec.assign(p);
  const double* v = vector_of(c);
  if (v == nullptr) v = vector_of(nearest_trained_cell(c, spec));
  return std::vector<double>(v, v + dim_);
}

std::string EmbeddingTable::to_bytes() const {
  ByteWriter w;
  w.u8(static_cast<uint8_t>(kTableMagic[0]));
  w.u8(static_cast<uint8_t>(kTableMagic[1]));
  w.u8(static_cast<uint8_t>(kTableMagic[2]));
  w.u8(static_cast<uint8_t>(kTableMagic[3]));
  w.u32(kTableVersion);
  w.u32(static_cast<uint32_t>(dim_));
  w.u64(cells_.size());
  for (size_t i = 0; i < cells_.size(); ++i) {
    w.i32(cells_[i].q);
    w.i32(cells_[i].r);
    for (int32_t j = 0; j < dim_; ++j)
      w.f64(vectors_[i * static_cast<size_t>(dim_) + static_cast<size_t>(j)]);
  }
  return w.bytes();
}

EmbeddingTable EmbeddingTable::from_bytes(const std::string& bytes) {
  ByteReader r(bytes);
  char magic[4];
  for (char& ch : magic) ch = static_cast<char>(r.u8());
  if (std::memcmp(magic, kTableMagic, 4) != 0)
    throw_data("embedding table: bad magic");
  uint32_t version = r.u32();
  if (version != kTableVersion)
    throw_data("embedding table: unsupported version " + std::to_string(version));
  int32_t dim = static_cast<int32_t>(r.u32());
  uint64_t count = r.u64();
  std::vector<HexCellId> cells(count);
  std::vector<double> vectors(count * static_cast<uint64_t>(dim));
  for (uint64_t i = 0; i < count; ++i) {
    cells[i].q = r.i32();
    cells[i].r = r.i32();
    for (int32_t j = 0; j < dim; ++j)
      vectors[i * static_cast<uint64_t>(dim) + static_cast<uint64_t>(j)] = r.f64();
  }
  return EmbeddingTable(dim, std::move(cells), std::move(vectors));
}

void EmbeddingTable::save(const std::string& path) const {
  write_file(path, to_bytes());
}

EmbeddingTable EmbeddingTable::load(const std::string& path) {
  return from_bytes(read_file(path));
}

void WalkConfig::validate() const {
  if (walks_per_node < 1 || walk_len < 1 || window < 1 || negatives < 1 ||
      epochs < 1)
    throw_config("WalkConfig: counts must be >= 1");
  if (return_p <= 0.0 || inout_q <= 0.0)
    throw_config("WalkConfig: return_p and inout_q must be > 0");
  if (lr <= 0.0) throw_config("WalkConfig: lr must be > 0");
}

std::vector<std::vector<int32_t>> random_walks(const RegionGraph& g,
                                               const WalkConfig& cfg,
                                               uint64_t seed) {
  cfg.validate();
  if (g.node_count() == 0) throw_data("random_walks: empty graph");

  auto has_edge = [&](int32_t a, int32_t b) {
    const auto& adj = g.adjacency(a);
    return std::binary_search(adj.begin(), adj.end(), b);
  };

  std::vector<std::vector<int32_t>> walks;
  walks.reserve(static_cast<size_t>(g.node_count()) *
                static_cast<size_t>(cfg.walks_per_node));
  std::vector<double> weights;
  for (int32_t node = 0; node < g.node_count(); ++node) {
    for (int32_t widx = 0; widx < cfg.walks_per_node; ++widx) {
      Rng rng(derive_seed({seed, static_cast<uint64_t>(node),
                           static_cast<uint64_t>(widx)}));
      std::vector<int32_t> walk;
      walk.reserve(static_cast<size_t>(cfg.walk_len));
      walk.push_back(node);
      while (static_cast<int32_t>(walk.size()) < cfg.walk_len) {
        int32_t cur = walk.back();
        const auto& adj = g.adjacency(cur);
        if (adj.empty()) break;  // isolated node
        int32_t next;
        if (walk.size() == 1) {
          next = adj[rng.uniform_int(adj.size())];
        } else {
          int32_t prev = walk[walk.size() - 2];
          weights.assign(adj.size(), 0.0);
          double total = 0.0;
          for (size_t i = 0; i < adj.size(); ++i) {
            double w;
            if (adj[i] == prev)
              w = 1.0 / cfg.return_p;
            else if (has_edge(adj[i], prev))
              w = 1.0;
            else
              w = 1.0 / cfg.inout_q;
            weights[i] = w;
            total += w;
          }
          double draw = rng.uniform() * total;
          size_t pick = 0;
          double acc = 0.0;
          for (size_t i = 0; i < adj.size(); ++i) {
            acc += weights[i];
            if (draw < acc) {
              pick = i;
              break;
            }
            pick = i;
          }
          next = adj[pick];
        }
        walk.push_back(next);
      }
      walks.push_back(std::move(walk));
    }
  }
  return walks;
}

EmbeddingTable train_skipgram(const std::vector<std::vector<int32_t>>& walks,
                              const RegionGraph& g, int32_t dim,
                              const WalkConfig& cfg, uint64_t seed,
                              SkipgramStats* stats) {
  cfg.validate();
  if (dim <= 0) throw_config("train_skipgram: dim must be > 0");
  if (walks.empty()) throw_data("train_skipgram: no walks");

  int64_t vocab = g.node_count();
  Rng rng(derive_seed({seed, 0x534b4950ULL}));  // "SKIP"

  std::vector<double> in_vec(static_cast<size_t>(vocab * dim));
  std::vector<double> out_vec(static_cast<size_t>(vocab * dim), 0.0);
  for (auto& v : in_vec) v = rng.uniform(-0.5 / dim, 0.5 / dim);

  // unigram^0.75 negative-sampling distribution over walk tokens
  std::vector<double> cum(static_cast<size_t>(vocab), 0.0);
  {
    std::vector<int64_t> counts(static_cast<size_t>(vocab), 0);
    for (const auto& w : walks)
      for (int32_t t : w) ++counts[static_cast<size_t>(t)];
    double acc = 0.0;
    for (int64_t i = 0; i < vocab; ++i) {
      acc += std::pow(static_cast<double>(counts[static_cast<size_t>(i)]), 0.75);
      cum[static_cast<size_t>(i)] = acc;
    }
    if (acc <= 0.0) throw_data("train_skipgram: empty walk corpus");
    for (auto& v : cum) v /= acc;
  }
  auto sample_negative = [&]() {
    double u = rng.uniform();
    return static_cast<int32_t>(
        std::lower_bound(cum.begin(), cum.end(), u) - cum.begin());
  };

  int64_t pairs_per_epoch = 0;
  for (const auto& w : walks) {
    int64_t len = static_cast<int64_t>(w.size());
    for (int64_t c = 0; c < len; ++c) {
      int64_t lo = std::max<int64_t>(0, c - cfg.window);
      int64_t hi = std::min<int64_t>(len - 1, c + cfg.window);
      pairs_per_epoch += hi - lo;  // window minus the center itself
    }
  }
  int64_t total_pairs = pairs_per_epoch * cfg.epochs;
  int64_t done_pairs = 0;

  std::vector<double> grad_h(static_cast<size_t>(dim));
  if (stats) stats->epoch_loss.clear();
  for (int32_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_loss = 0.0;
    int64_t epoch_events = 0;
    for (const auto& walk : walks) {
      int64_t len = static_cast<int64_t>(walk.size());
      for (int64_t c = 0; c < len; ++c) {
        int32_t center = walk[static_cast<size_t>(c)];
        double* h = in_vec.data() + static_cast<size_t>(center) * dim;
        int64_t lo = std::max<int64_t>(0, c - cfg.window);
        int64_t hi = std::min<int64_t>(len - 1, c + cfg.window);
        for (int64_t j = lo; j <= hi; ++j) {
          if (j == c) continue;
          double lr_now =
              cfg.lr * std::max(1e-4, 1.0 - static_cast<double>(done_pairs) /
                                                static_cast<double>(total_pairs));
          ++done_pairs;
          std::fill(grad_h.begin(), grad_h.end(), 0.0);
          double pair_loss = 0.0;
          for (int32_t ns = 0; ns <= cfg.negatives; ++ns) {
            int32_t target;
            double label;
            if (ns == 0) {
              target = walk[static_cast<size_t>(j)];
              label = 1.0;
            } else {
              target = sample_negative();
              label = 0.0;
            }
            double* u = out_vec.data() + static_cast<size_t>(target) * dim;
            double dot = 0.0;
            for (int32_t k = 0; k < dim; ++k) dot += h[k] * u[k];
            double s = sigmoid_clamped(dot);
            pair_loss += label > 0.5 ? -std::log(std::max(s, 1e-12))
                                     : -std::log(std::max(1.0 - s, 1e-12));
            double gscale = (s - label) * lr_now;
            for (int32_t k = 0; k < dim; ++k) {
              grad_h[static_cast<size_t>(k)] += gscale * u[k];
              u[k] -= gscale * h[k];
            }
          }
          for (int32_t k = 0; k < dim; ++k) h[k] -= grad_h[static_cast<size_t>(k)];
          epoch_loss += pair_loss;
          ++epoch_events;
        }
      }
    }
    if (stats)
      stats->epoch_loss.push_back(
          epoch_events > 0 ? epoch_loss / static_cast<double>(epoch_events) : 0.0);
  }

  return EmbeddingTable(dim, g.nodes(), std::move(in_vec));
}

}  // namespace trajepa
