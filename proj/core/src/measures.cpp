#include "trajepa/measures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "trajepa/io.hpp"

namespace trajepa {

namespace {

constexpr char kMatrixMagic[4] = {'T', 'J', 'D', 'M'};
constexpr uint32_t kMatrixVersion = 1;

double dist2(XY a, XY b) {
  return (a.x - b.x) * (a.x - b.x) + (a.y - b.y) * (a.y - b.y);
}

void check_nonempty(const ProjectedTraj& a, const ProjectedTraj& b,
                    const char* op) {
  if (a.empty() || b.empty())
    throw_data(std::string(op) + ": empty trajectory");
}

}  // namespace

MeasureKind measure_kind_from_string(const std::string& s) {
  if (s == "edr") return MeasureKind::Edr;
  if (s == "lcss") return MeasureKind::Lcss;
  if (s == "hausdorff") return MeasureKind::Hausdorff;
  if (s == "frechet") return MeasureKind::Frechet;
  throw_config("unknown measure kind '" + s +
               "' (expected edr|lcss|hausdorff|frechet)");
}

std::string to_string(MeasureKind kind) {
  switch (kind) {
    case MeasureKind::Edr: return "edr";
    case MeasureKind::Lcss: return "lcss";
    case MeasureKind::Hausdorff: return "hausdorff";
    case MeasureKind::Frechet: return "frechet";
  }
  return "?";
}

ProjectedTraj project_trajectory(const Trajectory& t, const HexGridSpec& spec) {
  ProjectedTraj out;
  out.reserve(t.points.size());
  for (const GpsPoint& p : t.points) out.push_back(spec.project(p));
  return out;
}

int64_t edr(const ProjectedTraj& a, const ProjectedTraj& b, double eps_m) {
  check_nonempty(a, b, "edr");
  if (eps_m <= 0.0) throw_config("edr: eps_m must be > 0");
  size_t n = a.size(), m = b.size();
  double eps2 = eps_m * eps_m;
  // two-row rolling DP over (n+1) x (m+1)
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  for (size_t j = 0; j <= m; ++j) prev[j] = static_cast<int64_t>(j);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      int64_t match_cost = dist2(a[i - 1], b[j - 1]) <= eps2 ? 0 : 1;
      cur[j] = std::min({prev[j - 1] + match_cost, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

double lcss_dist(const ProjectedTraj& a, const ProjectedTraj& b, double eps_m) {
  check_nonempty(a, b, "lcss");
  if (eps_m <= 0.0) throw_config("lcss: eps_m must be > 0");
  size_t n = a.size(), m = b.size();
  double eps2 = eps_m * eps_m;
  std::vector<int64_t> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = 0;
    for (size_t j = 1; j <= m; ++j) {
      if (dist2(a[i - 1], b[j - 1]) <= eps2)
        cur[j] = prev[j - 1] + 1;
      else
        cur[j] = std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  double lcss = static_cast<double>(prev[m]);
  return 1.0 - lcss / static_cast<double>(std::min(n, m));
}

double hausdorff(const ProjectedTraj& a, const ProjectedTraj& b) {
  check_nonempty(a, b, "hausdorff");
  auto directed = [](const ProjectedTraj& u, const ProjectedTraj& v) {
    double worst = 0.0;
    for (const XY& p : u) {
      double best = 1e300;
      for (const XY& q : v) best = std::min(best, dist2(p, q));
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::sqrt(std::max(directed(a, b), directed(b, a)));
}

double discrete_frechet(const ProjectedTraj& a, const ProjectedTraj& b) {
  check_nonempty(a, b, "discrete_frechet");
  size_t n = a.size(), m = b.size();
  std::vector<double> prev(m), cur(m);
  for (size_t j = 0; j < m; ++j) {
    double d = dist2(a[0], b[j]);
    prev[j] = j == 0 ? d : std::max(prev[j - 1], d);
  }
  for (size_t i = 1; i < n; ++i) {
    cur[0] = std::max(prev[0], dist2(a[i], b[0]));
    for (size_t j = 1; j < m; ++j) {
      double reach = std::min({prev[j], cur[j - 1], prev[j - 1]});
      cur[j] = std::max(reach, dist2(a[i], b[j]));
    }
    std::swap(prev, cur);
  }
  return std::sqrt(prev[m - 1]);
}

double measure_distance(const ProjectedTraj& a, const ProjectedTraj& b,
                        const MeasureConfig& cfg) {
  switch (cfg.kind) {
    case MeasureKind::Edr:
      return static_cast<double>(edr(a, b, cfg.eps_m));
    case MeasureKind::Lcss:
      return lcss_dist(a, b, cfg.eps_m);
    case MeasureKind::Hausdorff:
      return hausdorff(a, b);
    case MeasureKind::Frechet:
      return discrete_frechet(a, b);
  }
  throw_config("measure_distance: bad kind");
}

PairwiseResult pairwise_matrix(const std::vector<ProjectedTraj>& trajs,
                               const MeasureConfig& cfg, int64_t top_k) {
  if (trajs.size() < 2) throw_data("pairwise_matrix: need at least 2 trajectories");
  PairwiseResult out;
  out.count = static_cast<int64_t>(trajs.size());
  out.dist.assign(static_cast<size_t>(out.count * out.count), 0.0);
  for (int64_t i = 0; i < out.count; ++i)
    for (int64_t j = i + 1; j < out.count; ++j) {
      double d = measure_distance(trajs[static_cast<size_t>(i)],
                                  trajs[static_cast<size_t>(j)], cfg);
      out.dist[static_cast<size_t>(i * out.count + j)] = d;
      out.dist[static_cast<size_t>(j * out.count + i)] = d;
    }

  out.neighbors.resize(static_cast<size_t>(out.count));
  for (int64_t i = 0; i < out.count; ++i) {
    std::vector<int64_t> order;
    order.reserve(static_cast<size_t>(out.count - 1));
    for (int64_t j = 0; j < out.count; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
      double dx = out.at(i, x), dy = out.at(i, y);
      if (dx != dy) return dx < dy;
      return x < y;
    });
    if (top_k > 0 && static_cast<int64_t>(order.size()) > top_k)
      order.resize(static_cast<size_t>(top_k));
    out.neighbors[static_cast<size_t>(i)] = std::move(order);
  }
  return out;
}

void save_matrix(const PairwiseResult& m, const std::string& path) {
  ByteWriter w;
  for (char c : kMatrixMagic) w.u8(static_cast<uint8_t>(c));
  w.u32(kMatrixVersion);
  w.u64(static_cast<uint64_t>(m.count));
  for (int64_t i = 0; i < m.count; ++i)
    for (int64_t j = i + 1; j < m.count; ++j) w.f64(m.at(i, j));
  w.save(path);
}

PairwiseResult load_matrix(const std::string& path, int64_t top_k) {
  ByteReader r = ByteReader::load(path);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMatrixMagic, 4) != 0)
    throw_data("distance matrix: bad magic in " + path);
  if (r.u32() != kMatrixVersion)
    throw_data("distance matrix: unsupported version");
  PairwiseResult out;
  out.count = static_cast<int64_t>(r.u64());
  out.dist.assign(static_cast<size_t>(out.count * out.count), 0.0);
  for (int64_t i = 0; i < out.count; ++i)
    for (int64_t j = i + 1; j < out.count; ++j) {
      double d = r.f64();
      out.dist[static_cast<size_t>(i * out.count + j)] = d;
      out.dist[static_cast<size_t>(j * out.count + i)] = d;
    }
  // rebuild neighbor lists the same way pairwise_matrix does
  out.neighbors.resize(static_cast<size_t>(out.count));
  for (int64_t i = 0; i < out.count; ++i) {
    std::vector<int64_t> order;
    for (int64_t j = 0; j < out.count; ++j)
      if (j != i) order.push_back(j);
    std::stable_sort(order.begin(), order.end(), [&](int64_t x, int64_t y) {
      double dx = out.at(i, x), dy = out.at(i, y);
      if (dx != dy) return dx < dy;
      return x < y;
    });
    if (top_k > 0 && static_cast<int64_t>(order.size()) > top_k)
      order.resize(static_cast<size_t>(top_k));
    out.neighbors[static_cast<size_t>(i)] = std::move(order);
  }
  return out;
}

void save_neighbors_csv(const PairwiseResult& m, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot write neighbors csv: " + path);
  out << "traj_index,rank,neighbor_index,distance\n";
  out.precision(17);
  for (int64_t i = 0; i < m.count; ++i) {
    const auto& nb = m.neighbors[static_cast<size_t>(i)];
    for (size_t r = 0; r < nb.size(); ++r)
      out << i << "," << (r + 1) << "," << nb[r] << "," << m.at(i, nb[r]) << "\n";
  }
}

}  // namespace trajepa
