#include "trajepa/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "trajepa/rng.hpp"

namespace trajepa {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

double parse_double(const std::string& s, int64_t line_no, const char* col) {
  try {
    size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing chars");
    return v;
  } catch (const std::exception&) {
    throw_data("csv line " + std::to_string(line_no) + ": bad " + col +
               " value '" + s + "'");
  }
}

}  // namespace

Dataset load_csv(const std::string& path, const HexGridSpec& spec,
                 const LoadOptions& opts, LoadReport* report) {
  std::ifstream in(path);
  if (!in) throw_data("load_csv: cannot open " + path);

  std::string header;
  if (!std::getline(in, header)) throw_data("load_csv: empty file " + path);
  auto cols = split_csv_line(header);
  auto col_of = [&](const std::string& name) {
    for (size_t i = 0; i < cols.size(); ++i)
      if (cols[i] == name) return static_cast<int>(i);
    return -1;
  };
  int c_id = col_of("traj_id"), c_seq = col_of("seq"), c_lon = col_of("lon"),
      c_lat = col_of("lat"), c_t = col_of("t");
  if (c_id < 0 || c_seq < 0 || c_lon < 0 || c_lat < 0)
    throw_data("load_csv: header must contain traj_id, seq, lon, lat");

  struct Row {
    int64_t seq;
    GpsPoint p;
    double t;
    bool has_t;
  };
  std::map<std::string, std::vector<Row>> grouped;  // ordered by id
  LoadReport rep;
  std::string line;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (static_cast<int>(fields.size()) <
        std::max({c_id, c_seq, c_lon, c_lat}) + 1)
      throw_data("csv line " + std::to_string(line_no) + ": too few columns");
    Row row;
    row.seq = static_cast<int64_t>(
        parse_double(fields[static_cast<size_t>(c_seq)], line_no, "seq"));
    row.p.lon = parse_double(fields[static_cast<size_t>(c_lon)], line_no, "lon");
    row.p.lat = parse_double(fields[static_cast<size_t>(c_lat)], line_no, "lat");
    row.has_t = c_t >= 0 && static_cast<int>(fields.size()) > c_t;
    row.t = row.has_t ? parse_double(fields[static_cast<size_t>(c_t)], line_no, "t")
                      : 0.0;
    ++rep.rows_read;
    if (!spec.contains(row.p)) {
      ++rep.points_dropped_oob;
      continue;
    }
    grouped[fields[static_cast<size_t>(c_id)]].push_back(row);
  }

  Dataset out;
  for (auto& [id, rows] : grouped) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.seq < b.seq; });
    Trajectory t;
    t.id = id;
    bool all_t = !rows.empty();
    for (const Row& r : rows) {
      t.points.push_back(r.p);
      all_t = all_t && r.has_t;
    }
    if (all_t)
      for (const Row& r : rows) t.timestamps.push_back(r.t);
    if (t.size() < opts.min_len || t.size() > opts.max_len) {
      ++rep.trajs_filtered_len;
      continue;
    }
    out.push_back(std::move(t));
  }
  if (report) *report = rep;
  if (out.empty()) throw_data("load_csv: no trajectories survived filtering");
  return out;
}

Dataset synth_generate(const SynthConfig& cfg, const HexGridSpec& spec,
                       uint64_t seed) {
  if (cfg.n_traj < 1) throw_config("synth_generate: n_traj must be >= 1");
  if (cfg.min_len < 2 || cfg.max_len < cfg.min_len)
    throw_config("synth_generate: bad length range");
  if (cfg.step_min_m <= 0.0 || cfg.step_max_m < cfg.step_min_m)
    throw_config("synth_generate: bad step range");

  XY lo = spec.project({spec.min_lon(), spec.min_lat()});
  XY hi = spec.project({spec.max_lon(), spec.max_lat()});
  const double two_pi = 2.0 * 3.14159265358979323846;
  const double turn_std_rad = cfg.turn_std_deg * 3.14159265358979323846 / 180.0;

  Dataset out;
  out.reserve(static_cast<size_t>(cfg.n_traj));
  for (int64_t i = 0; i < cfg.n_traj; ++i) {
    Rng rng(derive_seed({seed, static_cast<uint64_t>(i), 0x53594e54ULL}));
    int64_t len = cfg.min_len + static_cast<int64_t>(rng.uniform_int(
                                    static_cast<uint64_t>(cfg.max_len - cfg.min_len + 1)));
    Trajectory t;
    t.id = "synth_" + std::to_string(i);
    double x = rng.uniform(lo.x, hi.x);
    double y = rng.uniform(lo.y, hi.y);
    double heading = rng.uniform(0.0, two_pi);
    for (int64_t k = 0; k < len; ++k) {
      t.points.push_back(spec.unproject({x, y}));
      if (rng.bernoulli(cfg.turn_prob))
        heading = rng.uniform(0.0, two_pi);
      else
        heading += rng.normal(0.0, turn_std_rad);
      double step = rng.uniform(cfg.step_min_m, cfg.step_max_m);
      x = std::clamp(x + step * std::cos(heading), lo.x, hi.x);
      y = std::clamp(y + step * std::sin(heading), lo.y, hi.y);
    }
    out.push_back(std::move(t));
  }
  return out;
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("save_csv: cannot open " + path);
  out << "traj_id,seq,lon,lat\n";
  out.precision(12);
  for (const Trajectory& t : ds)
    for (int64_t i = 0; i < t.size(); ++i)
      out << t.id << "," << i << "," << t.points[static_cast<size_t>(i)].lon
          << "," << t.points[static_cast<size_t>(i)].lat << "\n";
  if (!out) throw_data("save_csv: write failed for " + path);
}

Trajectory downsample(const Trajectory& t, double rate, uint64_t seed) {
  if (rate < 0.0 || rate > 0.9)
    throw_config("downsample: rate must be within [0, 0.9]");
  if (rate == 0.0) return t;
  Rng rng(derive_seed({seed, 0x44534d50ULL}));
  Trajectory out;
  out.id = t.id;
  bool has_t = !t.timestamps.empty();
  for (int64_t i = 0; i < t.size(); ++i) {
    bool endpoint = i == 0 || i == t.size() - 1;
    if (!endpoint && rng.bernoulli(rate)) continue;
    out.points.push_back(t.points[static_cast<size_t>(i)]);
    if (has_t) out.timestamps.push_back(t.timestamps[static_cast<size_t>(i)]);
  }
  return out;
}

Trajectory distort(const Trajectory& t, double rate, double std_m,
                   const HexGridSpec& spec, uint64_t seed) {
  if (rate < 0.0 || rate > 0.9)
    throw_config("distort: rate must be within [0, 0.9]");
  if (std_m < 0.0) throw_config("distort: std_m must be >= 0");
  if (rate == 0.0) return t;
  Rng rng(derive_seed({seed, 0x44495354ULL}));
  Trajectory out = t;
  for (auto& p : out.points) {
    if (!rng.bernoulli(rate)) continue;
    XY xy = spec.project(p);
    xy.x += rng.normal(0.0, std_m);
    xy.y += rng.normal(0.0, std_m);
    p = spec.unproject(xy);
  }
  return out;
}

std::pair<Trajectory, Trajectory> odd_even_split(const Trajectory& q) {
  if (q.size() < 4)
    throw_data("odd_even_split: trajectory '" + q.id + "' has fewer than 4 points");
  Trajectory a, b;
  a.id = q.id + "_a";
  b.id = q.id + "_b";
  bool has_t = !q.timestamps.empty();
  for (int64_t i = 0; i < q.size(); ++i) {
    Trajectory& dst = (i % 2 == 0) ? a : b;  // 1-based odd = 0-based even
    dst.points.push_back(q.points[static_cast<size_t>(i)]);
    if (has_t) dst.timestamps.push_back(q.timestamps[static_cast<size_t>(i)]);
  }
  return {std::move(a), std::move(b)};
}

Tensor Batch::item(int64_t b) const {
  std::vector<double> block(static_cast<size_t>(n_max * dim));
  std::copy_n(embeddings.data().data() + b * n_max * dim, n_max * dim,
              block.data());
  return Tensor::from({n_max, dim}, std::move(block));
}

std::vector<uint8_t> Batch::item_mask(int64_t b) const {
  return std::vector<uint8_t>(pad_mask.begin() + b * n_max,
                              pad_mask.begin() + (b + 1) * n_max);
}

Batch embed_batch(const std::vector<const Trajectory*>& trajs,
                  const EmbeddingTable& table, const HexGridSpec& spec) {
  if (trajs.empty()) throw_data("embed_batch: empty batch");
  if (table.empty()) throw_state("embed_batch: embedding table is empty");
  Batch batch;
  batch.batch_size = static_cast<int64_t>(trajs.size());
  batch.dim = table.dim();
  for (const Trajectory* t : trajs)
    batch.n_max = std::max(batch.n_max, t->size());
  batch.pad_mask.assign(static_cast<size_t>(batch.batch_size * batch.n_max), 0);

  std::vector<double> data(
      static_cast<size_t>(batch.batch_size * batch.n_max * batch.dim), 0.0);
  for (int64_t b = 0; b < batch.batch_size; ++b) {
    const Trajectory& t = *trajs[static_cast<size_t>(b)];
    batch.lengths.push_back(t.size());
    for (int64_t i = 0; i < t.size(); ++i) {
      auto vec = table.lookup(t.points[static_cast<size_t>(i)], spec);
      std::copy(vec.begin(), vec.end(),
                data.begin() + (b * batch.n_max + i) * batch.dim);
      batch.pad_mask[static_cast<size_t>(b * batch.n_max + i)] = 1;
    }
  }
  batch.embeddings =
      Tensor::from({batch.batch_size * batch.n_max, batch.dim}, std::move(data));
  return batch;
}

Batch embed_batch(const Dataset& trajs, const EmbeddingTable& table,
                  const HexGridSpec& spec) {
  std::vector<const Trajectory*> ptrs;
  ptrs.reserve(trajs.size());
  for (const auto& t : trajs) ptrs.push_back(&t);
  return embed_batch(ptrs, table, spec);
}

}  // namespace trajepa
