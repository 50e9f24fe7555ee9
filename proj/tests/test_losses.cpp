#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support/gradcheck.hpp"
#include "support/model_fixtures.hpp"
#include "trajepa/losses.hpp"
#include "trajepa/train.hpp"

using namespace trajepa;
using testsupport::make_item;
using testsupport::random_tensor;
using testsupport::tiny_config;

TEST_CASE("jepa_loss: zero for identical predictions and targets") {
  Tensor a = random_tensor({4, 6}, 1, false);
  CHECK(jepa_loss({a, a}, {a, a}, 1, 2, 1.0).value() == 0.0);
}

TEST_CASE("jepa_loss closed form: one mask, one position, diff 2") {
  Tensor pred = Tensor::from({1, 1}, {2.0});
  Tensor target = Tensor::from({1, 1}, {0.0});
  CHECK(jepa_loss({pred}, {target}, 1, 1, 1.0).value() == doctest::Approx(1.5));
}

TEST_CASE("jepa_loss unchanged when doubling M with identical per-mask losses") {
  Tensor pred = random_tensor({3, 4}, 2, false);
  Tensor target = random_tensor({3, 4}, 3, false);
  double two = jepa_loss({pred, pred}, {target, target}, 1, 2, 1.0).value();
  double four =
      jepa_loss({pred, pred, pred, pred}, {target, target, target, target}, 1, 4, 1.0)
          .value();
  CHECK(two == doctest::Approx(four).epsilon(1e-12));
}

TEST_CASE("jepa_loss permutation invariance over mask and batch axes") {
  std::vector<Tensor> preds, targets;
  for (uint64_t i = 0; i < 6; ++i) {
    preds.push_back(random_tensor({2, 3}, 10 + i, false));
    targets.push_back(random_tensor({2, 3}, 20 + i, false));
  }
  double base = jepa_loss(preds, targets, 3, 2, 1.0).value();
  std::vector<size_t> perm{4, 2, 0, 5, 1, 3};
  std::vector<Tensor> p2, t2;
  for (size_t i : perm) {
    p2.push_back(preds[i]);
    t2.push_back(targets[i]);
  }
  CHECK(jepa_loss(p2, t2, 3, 2, 1.0).value() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("jepa_loss rejects shape mismatches") {
  Tensor a = Tensor::zeros({2, 2});
  Tensor b = Tensor::zeros({3, 2});
  CHECK_THROWS_AS(jepa_loss({a}, {b}, 1, 1, 1.0), Error);
}

TEST_CASE("vicreg is (0,0) at unit std with orthogonal columns") {
  // Hadamard-style +-1 columns: unbiased std = sqrt(n/(n-1)) >= 1, cov = 0
  Tensor z = Tensor::from({4, 2}, {1, 1, 1, -1, -1, 1, -1, -1});
  auto [var_loss, cov_loss] = vicreg(z);
  CHECK(var_loss.value() == 0.0);
  CHECK(cov_loss.value() == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("vicreg collapse case: identical rows") {
  Tensor z = Tensor::from({8, 3}, std::vector<double>(24, 0.7));
  auto [var_loss, cov_loss] = vicreg(z, 1e-4);
  // std is exactly sqrt(eps): hinge = 1 - 0.01
  CHECK(var_loss.value() == doctest::Approx(1.0 - 0.01).epsilon(1e-12));
  CHECK(cov_loss.value() == doctest::Approx(0.0));
}

TEST_CASE("vicreg matches a direct-definition oracle on a random 64x8 matrix") {
  Tensor z = random_tensor({64, 8}, 99, false, -2.0, 2.0);
  auto [var_loss, cov_loss] = vicreg(z, 1e-4);

  // oracle: straight loops over the definition
  int64_t n = 64, d = 8;
  std::vector<double> mean(static_cast<size_t>(d), 0.0);
  for (int64_t i = 0; i < n; ++i)
    for (int64_t j = 0; j < d; ++j) mean[static_cast<size_t>(j)] += z.at(i, j);
  for (auto& m : mean) m /= static_cast<double>(n);

  double var_expect = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    double var = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double c = z.at(i, j) - mean[static_cast<size_t>(j)];
      var += c * c;
    }
    var /= static_cast<double>(n - 1);
    var_expect += std::max(0.0, 1.0 - std::sqrt(var + 1e-4));
  }
  var_expect /= static_cast<double>(d);

  double cov_expect = 0.0;
  for (int64_t j = 0; j < d; ++j)
    for (int64_t k = 0; k < d; ++k) {
      if (j == k) continue;
      double c = 0.0;
      for (int64_t i = 0; i < n; ++i)
        c += (z.at(i, j) - mean[static_cast<size_t>(j)]) *
             (z.at(i, k) - mean[static_cast<size_t>(k)]);
      c /= static_cast<double>(n - 1);
      cov_expect += c * c;
    }
  cov_expect /= static_cast<double>(d);

  CHECK(std::abs(var_loss.value() - var_expect) <= 1e-10);
  CHECK(std::abs(cov_loss.value() - cov_expect) <= 1e-10);
}

TEST_CASE("vicreg var loss is zero whenever every dimension has std >= 1") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> data(16 * 4);
    for (auto& v : data) v = rng.uniform(-3.0, 3.0);
    Tensor z = Tensor::from({16, 4}, std::move(data));
    // scale columns so each has sample std exactly >= 1
    for (int64_t j = 0; j < 4; ++j) {
      double mean = 0;
      for (int64_t i = 0; i < 16; ++i) mean += z.at(i, j);
      mean /= 16.0;
      double var = 0;
      for (int64_t i = 0; i < 16; ++i) {
        double c = z.at(i, j) - mean;
        var += c * c;
      }
      var /= 15.0;
      double scale = var > 0 ? 1.2 / std::sqrt(var) : 1.0;
      for (int64_t i = 0; i < 16; ++i)
        z.data()[static_cast<size_t>(i * 4 + j)] *= scale;
    }
    auto [var_loss, cov_loss] = vicreg(z);
    CHECK(var_loss.value() == 0.0);
    CHECK(cov_loss.value() >= 0.0);
  }
}

TEST_CASE("vicreg needs at least 2 samples") {
  CHECK_THROWS_AS(vicreg(Tensor::zeros({1, 4})), Error);
}

TEST_CASE("total_loss weighting") {
  auto mk = [](double v) { return Tensor::scalar(v); };
  std::array<bool, 3> all{true, true, true};
  CHECK(total_loss({mk(1), mk(1), mk(1)}, all, 0.05, 0.15, 0.8).value() ==
        doctest::Approx(1.0));
  CHECK(total_loss({mk(3), mk(7), mk(9)}, all, 0.05, 0.0, 0.0).value() ==
        doctest::Approx(0.15));
  CHECK(total_loss({mk(0), mk(0), mk(0)}, all, 0.05, 0.15, 0.8).value() == 0.0);
  // linearity in each level
  double base = total_loss({mk(1), mk(2), mk(3)}, all, 0.05, 0.15, 0.8).value();
  double bumped = total_loss({mk(2), mk(2), mk(3)}, all, 0.05, 0.15, 0.8).value();
  CHECK(bumped - base == doctest::Approx(0.05));
  std::array<bool, 3> only1{true, false, false};
  CHECK(total_loss({mk(4), Tensor(), Tensor()}, only1, 0.05, 0.15, 0.8).value() ==
        doctest::Approx(0.2));
  CHECK_THROWS_AS(total_loss({mk(1), mk(1), mk(1)}, all, -0.1, 0.15, 0.8), Error);
}

TEST_CASE("full-model gradient probe matches finite differences") {
  ModelConfig cfg = tiny_config();
  cfg.max_len = 16;
  ModelState model = ModelState::init(cfg, 43);
  auto item = make_item(model, 8, 91);
  std::vector<AbstractionStack> stacks{item.stack};
  std::vector<std::array<MaskPlan, 3>> plans{item.plans};
  LossParams lp;

  auto loss_value = [&] {
    return compute_batch_loss(stacks, plans, model, lp).total.value();
  };
  for (Parameter& p : model.trainable) p.tensor.zero_grad();
  BatchLoss loss = compute_batch_loss(stacks, plans, model, lp);
  loss.total.backward();

  // probe a fixed spread of 10 parameters across the model
  Rng rng(4242);
  int probed = 0;
  double worst = 0.0;
  while (probed < 10) {
    Parameter& p = model.trainable[rng.uniform_int(model.trainable.size())];
    if (!p.tensor.has_grad()) continue;
    size_t idx = static_cast<size_t>(rng.uniform_int(p.tensor.data().size()));
    double orig = p.tensor.data()[idx];
    double h = 1e-5 * std::max(1.0, std::abs(orig));
    p.tensor.data()[idx] = orig + h;
    double up = loss_value();
    p.tensor.data()[idx] = orig - h;
    double down = loss_value();
    p.tensor.data()[idx] = orig;
    double fd = (up - down) / (2 * h);
    worst = std::max(worst, testsupport::rel_err(fd, p.tensor.grad()[idx]));
    ++probed;
  }
  CHECK(worst <= 1e-4);
}
