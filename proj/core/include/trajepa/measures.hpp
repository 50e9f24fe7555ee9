#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "trajepa/data.hpp"

namespace trajepa {

enum class MeasureKind { Edr, Lcss, Hausdorff, Frechet };

MeasureKind measure_kind_from_string(const std::string& s);
std::string to_string(MeasureKind kind);

struct MeasureConfig {
  MeasureKind kind = MeasureKind::Hausdorff;
  double eps_m = 0.0;  // matching threshold for edr/lcss; must be > 0 there
};

// All four operate on projected planar coordinates.
using ProjectedTraj = std::vector<XY>;
ProjectedTraj project_trajectory(const Trajectory& t, const HexGridSpec& spec);

// edit distance on real sequences: unit-cost insert/delete/mismatch, match
// free when points are within eps_m
int64_t edr(const ProjectedTraj& a, const ProjectedTraj& b, double eps_m);

// 1 - LCSS(a, b) / min(|a|, |b|)
double lcss_dist(const ProjectedTraj& a, const ProjectedTraj& b, double eps_m);

double hausdorff(const ProjectedTraj& a, const ProjectedTraj& b);

double discrete_frechet(const ProjectedTraj& a, const ProjectedTraj& b);

double measure_distance(const ProjectedTraj& a, const ProjectedTraj& b,
                        const MeasureConfig& cfg);

struct PairwiseResult {
  int64_t count = 0;
  std::vector<double> dist;  // row-major full matrix, symmetric, zero diagonal
  // per-row neighbor indices sorted by ascending distance, index tie-break
  std::vector<std::vector<int64_t>> neighbors;

  double at(int64_t i, int64_t j) const {
    return dist[static_cast<size_t>(i * count + j)];
  }
};

PairwiseResult pairwise_matrix(const std::vector<ProjectedTraj>& trajs,
                               const MeasureConfig& cfg, int64_t top_k = 20);

// header + float64 upper triangle
void save_matrix(const PairwiseResult& m, const std::string& path);
PairwiseResult load_matrix(const std::string& path, int64_t top_k = 20);
void save_neighbors_csv(const PairwiseResult& m, const std::string& path);

}  // namespace trajepa
