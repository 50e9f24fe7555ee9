#pragma once

#include <array>
#include <cstdint>
#include <unordered_map>
#include <vector>

#include "trajepa/error.hpp"

namespace trajepa {

struct GpsPoint {
  double lon = 0.0;
  double lat = 0.0;
};

struct XY {
  double x = 0.0;
  double y = 0.0;
};

// Axial coordinates on a pointy-top hexagonal tessellation.
struct HexCellId {
  int32_t q = 0;
  int32_t r = 0;

  bool operator==(const HexCellId& o) const { return q == o.q && r == o.r; }
  bool operator!=(const HexCellId& o) const { return !(*this == o); }
  bool operator<(const HexCellId& o) const {
    return q != o.q ? q < o.q : r < o.r;
  }
};

struct HexCellIdHash {
  size_t operator()(const HexCellId& c) const {
    uint64_t k = (static_cast<uint64_t>(static_cast<uint32_t>(c.q)) << 32) |
                 static_cast<uint32_t>(c.r);
    k ^= k >> 33;
    k *= 0xff51afd7ed558ccdULL;
    k ^= k >> 33;
    return static_cast<size_t>(k);
  }
};

// Planar tessellation over a local equirectangular projection about the
// region center. edge_len_m plays the role of the cell resolution knob.
class HexGridSpec {
 public:
  HexGridSpec() = default;
  HexGridSpec(double min_lon, double min_lat, double max_lon, double max_lat,
              double edge_len_m);

  double origin_lon() const { return origin_lon_; }
  double origin_lat() const { return origin_lat_; }
  double min_lon() const { return min_lon_; }
  double min_lat() const { return min_lat_; }
  double max_lon() const { return max_lon_; }
  double max_lat() const { return max_lat_; }
  double edge_len_m() const { return edge_len_m_; }

  bool contains(GpsPoint p) const {
    return p.lon >= min_lon_ && p.lon <= max_lon_ && p.lat >= min_lat_ &&
           p.lat <= max_lat_;
  }

  XY project(GpsPoint p) const;
  GpsPoint unproject(XY xy) const;

  // cell center in projected meters
  XY center(HexCellId c) const;
  GpsPoint center_gps(HexCellId c) const { return unproject(center(c)); }

  // nearest-center cell for an in-bounds point; exact ties break to the
  // lexicographically smaller (q, r)
  HexCellId assign(GpsPoint p) const;
  HexCellId assign_xy(XY xy) const;

 private:
  double min_lon_ = 0.0, min_lat_ = 0.0, max_lon_ = 0.0, max_lat_ = 0.0;
  double origin_lon_ = 0.0, origin_lat_ = 0.0;
  double edge_len_m_ = 0.0;
  double meters_per_deg_lat_ = 0.0;
  double meters_per_deg_lon_ = 0.0;
};

// The six axial unit directions, fixed order.
const std::array<HexCellId, 6>& hex_directions();
std::array<HexCellId, 6> neighbors(HexCellId c);

// Occupied-cell graph: nodes are cells containing at least one point, edges
// connect occupied cells that are hex neighbors.
class RegionGraph {
 public:
  RegionGraph(std::vector<HexCellId> nodes,
              std::vector<std::vector<int32_t>> adjacency);

  int64_t node_count() const { return static_cast<int64_t>(nodes_.size()); }
  int64_t edge_count() const { return edge_count_; }
  const std::vector<HexCellId>& nodes() const { return nodes_; }
  const std::vector<int32_t>& adjacency(int32_t node) const {
    return adjacency_[static_cast<size_t>(node)];
  }
  int32_t index_of(HexCellId c) const;  // -1 when absent
  HexCellId cell(int32_t index) const { return nodes_[static_cast<size_t>(index)]; }

 private:
  std::vector<HexCellId> nodes_;  // sorted by (q, r)
  std::vector<std::vector<int32_t>> adjacency_;
  std::unordered_map<HexCellId, int32_t, HexCellIdHash> index_;
  int64_t edge_count_ = 0;
};

// Incremental construction so callers can stream points without copying
// whole datasets.
class RegionGraphBuilder {
 public:
  explicit RegionGraphBuilder(const HexGridSpec& spec) : spec_(&spec) {}

  // returns false (and counts) when the point is out of bounds
  bool add(GpsPoint p);
  int64_t dropped() const { return dropped_; }
  int64_t accepted() const { return accepted_; }

  RegionGraph build() const;

 private:
  const HexGridSpec* spec_;
  std::unordered_map<HexCellId, int32_t, HexCellIdHash> seen_;
  int64_t dropped_ = 0;
  int64_t accepted_ = 0;
};

RegionGraph build_region_graph(const std::vector<std::vector<GpsPoint>>& seqs,
                               const HexGridSpec& spec);

}  // namespace trajepa
