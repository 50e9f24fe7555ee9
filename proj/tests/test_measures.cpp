#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "support/measure_oracles.hpp"
#include "trajepa/measures.hpp"
#include "trajepa/rng.hpp"

using namespace trajepa;
using testsupport::random_projected;

TEST_CASE("edr basics") {
  auto t = random_projected(6, 1);
  CHECK(edr(t, t, 10.0) == 0);

  auto longer = t;
  longer.push_back({1e6, 1e6});
  CHECK(edr(t, longer, 10.0) == 1);

  CHECK_THROWS_AS(edr({}, t, 10.0), Error);
  CHECK_THROWS_AS(edr(t, t, 0.0), Error);
}

TEST_CASE("edr equals the memoized recursion oracle on 1000 random pairs") {
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    size_t la = 1 + rng.uniform_int(8), lb = 1 + rng.uniform_int(8);
    auto a = random_projected(la, 1000 + static_cast<uint64_t>(trial));
    auto b = random_projected(lb, 2000 + static_cast<uint64_t>(trial));
    double eps = rng.uniform(10.0, 120.0);
    CHECK(edr(a, b, eps) == testsupport::edr_oracle(a, b, eps));
  }
}

TEST_CASE("edr length bounds") {
  Rng rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    size_t la = 1 + rng.uniform_int(12), lb = 1 + rng.uniform_int(12);
    auto a = random_projected(la, 3000 + static_cast<uint64_t>(trial));
    auto b = random_projected(lb, 4000 + static_cast<uint64_t>(trial));
    int64_t d = edr(a, b, 25.0);
    CHECK(d >= std::abs(static_cast<int64_t>(la) - static_cast<int64_t>(lb)));
    CHECK(d <= static_cast<int64_t>(std::max(la, lb)));
  }
}

TEST_CASE("lcss basics and brute-force agreement") {
  auto t = random_projected(7, 11);
  CHECK(lcss_dist(t, t, 5.0) == 0.0);

  // points further apart than eps everywhere
  ProjectedTraj far_a{{0, 0}, {1, 0}};
  ProjectedTraj far_b{{1000, 1000}, {2000, 2000}};
  CHECK(lcss_dist(far_a, far_b, 5.0) == 1.0);

  Rng rng(12);
  for (int trial = 0; trial < 400; ++trial) {
    size_t la = 1 + rng.uniform_int(8), lb = 1 + rng.uniform_int(8);
    auto a = random_projected(la, 5000 + static_cast<uint64_t>(trial));
    auto b = random_projected(lb, 6000 + static_cast<uint64_t>(trial));
    double eps = rng.uniform(20.0, 150.0);
    CHECK(lcss_dist(a, b, eps) ==
          doctest::Approx(testsupport::lcss_dist_oracle(a, b, eps)).epsilon(1e-12));
  }
  CHECK_THROWS_AS(lcss_dist({}, t, 5.0), Error);
}

TEST_CASE("hausdorff closed forms and symmetry") {
  auto t = random_projected(9, 13);
  CHECK(hausdorff(t, t) == 0.0);

  ProjectedTraj a{{0, 0}};
  ProjectedTraj b{{3, 4}};
  CHECK(hausdorff(a, b) == doctest::Approx(5.0));

  Rng rng(14);
  for (int trial = 0; trial < 1000; ++trial) {
    auto u = random_projected(1 + rng.uniform_int(10), 7000 + static_cast<uint64_t>(trial));
    auto v = random_projected(1 + rng.uniform_int(10), 8000 + static_cast<uint64_t>(trial));
    CHECK(hausdorff(u, v) == hausdorff(v, u));
    CHECK(hausdorff(u, v) >= 0.0);
  }
}

TEST_CASE("discrete frechet: closed forms, oracle, and hausdorff dominance") {
  auto t = random_projected(8, 15);
  CHECK(discrete_frechet(t, t) == 0.0);

  ProjectedTraj a{{1, 2}};
  ProjectedTraj b{{4, 6}};
  CHECK(discrete_frechet(a, b) == doctest::Approx(5.0));

  Rng rng(16);
  for (int trial = 0; trial < 1000; ++trial) {
    auto u = random_projected(1 + rng.uniform_int(8), 9000 + static_cast<uint64_t>(trial));
    auto v = random_projected(1 + rng.uniform_int(8), 10000 + static_cast<uint64_t>(trial));
    double f = discrete_frechet(u, v);
    CHECK(f == doctest::Approx(testsupport::frechet_oracle(u, v)).epsilon(1e-12));
    CHECK(f >= hausdorff(u, v) - 1e-12);
  }
}

TEST_CASE("frechet dominates hausdorff on 10k longer random pairs") {
  Rng rng(17);
  for (int trial = 0; trial < 10000; ++trial) {
    auto u = random_projected(2 + rng.uniform_int(30), 20000 + static_cast<uint64_t>(trial));
    auto v = random_projected(2 + rng.uniform_int(30), 40000 + static_cast<uint64_t>(trial));
    CHECK(discrete_frechet(u, v) >= hausdorff(u, v) - 1e-12);
  }
}

TEST_CASE("identity, symmetry, non-negativity across all four measures") {
  Rng rng(18);
  MeasureConfig cfgs[4] = {{MeasureKind::Edr, 30.0},
                           {MeasureKind::Lcss, 30.0},
                           {MeasureKind::Hausdorff, 0.0},
                           {MeasureKind::Frechet, 0.0}};
  for (int trial = 0; trial < 100; ++trial) {
    auto u = random_projected(2 + rng.uniform_int(10), 50000 + static_cast<uint64_t>(trial));
    auto v = random_projected(2 + rng.uniform_int(10), 60000 + static_cast<uint64_t>(trial));
    for (const auto& cfg : cfgs) {
      CHECK(measure_distance(u, u, cfg) == 0.0);
      CHECK(measure_distance(u, v, cfg) == measure_distance(v, u, cfg));
      CHECK(measure_distance(u, v, cfg) >= 0.0);
    }
  }
}

TEST_CASE("pairwise matrix: symmetry, zero diagonal, deterministic repeat") {
  std::vector<ProjectedTraj> trajs;
  for (uint64_t i = 0; i < 10; ++i)
    trajs.push_back(random_projected(6, 70000 + i));
  MeasureConfig cfg{MeasureKind::Frechet, 0.0};
  PairwiseResult m = pairwise_matrix(trajs, cfg, 5);
  PairwiseResult m2 = pairwise_matrix(trajs, cfg, 5);
  CHECK(m.dist == m2.dist);
  CHECK(m.neighbors == m2.neighbors);
  for (int64_t i = 0; i < m.count; ++i) {
    CHECK(m.at(i, i) == 0.0);
    for (int64_t j = 0; j < m.count; ++j) CHECK(m.at(i, j) == m.at(j, i));
    // neighbor lists ascend with index tie-break
    const auto& nb = m.neighbors[static_cast<size_t>(i)];
    CHECK(nb.size() == 5);
    for (size_t r = 1; r < nb.size(); ++r) {
      double prev = m.at(i, nb[r - 1]), cur = m.at(i, nb[r]);
      CHECK((prev < cur || (prev == cur && nb[r - 1] < nb[r])));
    }
  }

  // two-trajectory corner: one mirrored off-diagonal value
  PairwiseResult small =
      pairwise_matrix({trajs[0], trajs[1]}, cfg, 5);
  CHECK(small.at(0, 1) == small.at(1, 0));
  CHECK(small.at(0, 1) > 0.0);
}

TEST_CASE("matrix persistence round-trips") {
  std::vector<ProjectedTraj> trajs;
  for (uint64_t i = 0; i < 8; ++i)
    trajs.push_back(random_projected(5, 90000 + i));
  MeasureConfig cfg{MeasureKind::Hausdorff, 0.0};
  PairwiseResult m = pairwise_matrix(trajs, cfg, 20);

  auto path = std::filesystem::temp_directory_path() / "trajepa_matrix_test.bin";
  save_matrix(m, path.string());
  PairwiseResult loaded = load_matrix(path.string(), 20);
  CHECK(loaded.count == m.count);
  CHECK(loaded.dist == m.dist);
  CHECK(loaded.neighbors == m.neighbors);

  auto csv = std::filesystem::temp_directory_path() / "trajepa_neighbors.csv";
  save_neighbors_csv(m, csv.string());
  CHECK(std::filesystem::file_size(csv) > 0);
  std::filesystem::remove(path);
  std::filesystem::remove(csv);
}
