#include "trajepa/hexgrid.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace trajepa {

namespace {

constexpr double kEarthRadiusM = 6371000.0;
constexpr double kDegToRad = 3.14159265358979323846 / 180.0;
constexpr double kSqrt3 = 1.7320508075688772935;

}  // namespace

HexGridSpec::HexGridSpec(double min_lon, double min_lat, double max_lon,
                         double max_lat, double edge_len_m)
    : min_lon_(min_lon),
      min_lat_(min_lat),
      max_lon_(max_lon),
      max_lat_(max_lat),
      edge_len_m_(edge_len_m) {
  if (edge_len_m <= 0.0) throw_config("HexGridSpec: edge_len_m must be > 0");
  if (min_lon >= max_lon || min_lat >= max_lat)
    throw_config("HexGridSpec: empty bounding box");
  origin_lon_ = 0.5 * (min_lon + max_lon);
  origin_lat_ = 0.5 * (min_lat + max_lat);
  meters_per_deg_lat_ = kDegToRad * kEarthRadiusM;
  meters_per_deg_lon_ = meters_per_deg_lat_ * std::cos(origin_lat_ * kDegToRad);
}

XY HexGridSpec::project(GpsPoint p) const {
  return {(p.lon - origin_lon_) * meters_per_deg_lon_,
          (p.lat - origin_lat_) * meters_per_deg_lat_};
}

GpsPoint HexGridSpec::unproject(XY xy) const {
  return {origin_lon_ + xy.x / meters_per_deg_lon_,
          origin_lat_ + xy.y / meters_per_deg_lat_};
}

XY HexGridSpec::center(HexCellId c) const {
  // pointy-top axial layout
  double x = edge_len_m_ * kSqrt3 * (static_cast<double>(c.q) + 0.5 * c.r);
  double y = edge_len_m_ * 1.5 * static_cast<double>(c.r);
  return {x, y};
}

HexCellId HexGridSpec::assign_xy(XY xy) const {
  // fractional axial coordinates, then cube rounding
  double qf = (kSqrt3 / 3.0 * xy.x - xy.y / 3.0) / edge_len_m_;
  double rf = (2.0 / 3.0 * xy.y) / edge_len_m_;
  double xc = qf, zc = rf, yc = -xc - zc;
  double rx = std::round(xc), ry = std::round(yc), rz = std::round(zc);
  double dx = std::abs(rx - xc), dy = std::abs(ry - yc), dz = std::abs(rz - zc);
  if (dx > dy && dx > dz)
    rx = -ry - rz;
  else if (dy > dz)
    ry = -rx - rz;
  else
    rz = -rx - ry;
  HexCellId rounded{static_cast<int32_t>(rx), static_cast<int32_t>(rz)};

  // Cube rounding lands on or next to the nearest-center cell; settle the
  // exact nearest (with the (q, r) tie-break) over the cell and its ring.
  HexCellId best = rounded;
  XY bc = center(best);
  double best_d2 = (bc.x - xy.x) * (bc.x - xy.x) + (bc.y - xy.y) * (bc.y - xy.y);
  for (const HexCellId& d : hex_directions()) {
    HexCellId cand{rounded.q + d.q, rounded.r + d.r};
    XY cc = center(cand);
    double d2 = (cc.x - xy.x) * (cc.x - xy.x) + (cc.y - xy.y) * (cc.y - xy.y);
    if (d2 < best_d2 || (d2 == best_d2 && cand < best)) {
      best = cand;
      best_d2 = d2;
    }
  }
  return best;
}

HexCellId HexGridSpec::assign(GpsPoint p) const {
  if (!contains(p))
    throw_data("assign: point (" + std::to_string(p.lon) + ", " +
               std::to_string(p.lat) + ") outside the study region");
  return assign_xy(project(p));
}

const std::array<HexCellId, 6>& hex_directions() {
  static const std::array<HexCellId, 6> dirs = {{{1, 0},
                                                 {1, -1},
                                                 {0, -1},
                                                 {-1, 0},
                                                 {-1, 1},
                                                 {0, 1}}};
  return dirs;
}

std::array<HexCellId, 6> neighbors(HexCellId c) {
  std::array<HexCellId, 6> out;
  const auto& dirs = hex_directions();
  for (size_t i = 0; i < 6; ++i) out[i] = {c.q + dirs[i].q, c.r + dirs[i].r};
  return out;
}

RegionGraph::RegionGraph(std::vector<HexCellId> nodes,
                         std::vector<std::vector<int32_t>> adjacency)
    : nodes_(std::move(nodes)), adjacency_(std::move(adjacency)) {
  index_.reserve(nodes_.size());
  for (size_t i = 0; i < nodes_.size(); ++i)
    index_[nodes_[i]] = static_cast<int32_t>(i);
  for (const auto& adj : adjacency_) edge_count_ += static_cast<int64_t>(adj.size());
  edge_count_ /= 2;
}

int32_t RegionGraph::index_of(HexCellId c) const {
  auto it = index_.find(c);
  return it == index_.end() ? -1 : it->second;
}

bool RegionGraphBuilder::add(GpsPoint p) {
  if (!spec_->contains(p)) {
    ++dropped_;
    return false;
  }
  seen_.emplace(spec_->assign(p), 0);
  ++accepted_;
  return true;
}

RegionGraph RegionGraphBuilder::build() const {
  if (seen_.empty())
    throw_data("build_region_graph: no in-bounds points, graph would be empty");
  std::vector<HexCellId> nodes;
  nodes.reserve(seen_.size());
  for (const auto& [cell, _] : seen_) nodes.push_back(cell);
  std::sort(nodes.begin(), nodes.end());

  std::unordered_map<HexCellId, int32_t, HexCellIdHash> index;
  index.reserve(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i)
    index[nodes[i]] = static_cast<int32_t>(i);

  std::vector<std::vector<int32_t>> adjacency(nodes.size());
  for (size_t i = 0; i < nodes.size(); ++i) {
    for (const HexCellId& nb : neighbors(nodes[i])) {
      auto it = index.find(nb);
      if (it != index.end())
        adjacency[i].push_back(it->second);
    }
    std::sort(adjacency[i].begin(), adjacency[i].end());
  }
  return RegionGraph(std::move(nodes), std::move(adjacency));
}

RegionGraph build_region_graph(const std::vector<std::vector<GpsPoint>>& seqs,
                               const HexGridSpec& spec) {
  RegionGraphBuilder builder(spec);
  for (const auto& seq : seqs)
    for (const GpsPoint& p : seq) builder.add(p);
  return builder.build();
}

}  // namespace trajepa
