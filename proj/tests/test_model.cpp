#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "support/model_fixtures.hpp"
#include "trajepa/train.hpp"

using namespace trajepa;
using testsupport::make_item;
using testsupport::random_embedding;
using testsupport::tiny_config;

TEST_CASE("target mask sizes follow max(1, round(r*n))") {
  ModelConfig cfg = tiny_config();
  cfg.num_masks = 4;
  cfg.mask_ratios = {0.2};
  auto masks = sample_target_masks(100, cfg, 3);
  REQUIRE(masks.size() == 4);
  for (const auto& m : masks) CHECK(m.size() == 20);

  cfg.mask_ratios = {0.1};
  for (const auto& m : sample_target_masks(5, cfg, 4))
    CHECK(m.size() == 1);  // max(1, round(0.5))
}

TEST_CASE("successive masks are contiguous runs") {
  ModelConfig cfg = tiny_config();
  cfg.p_successive = 1.0;
  cfg.num_masks = 4;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    std::vector<uint8_t> succ;
    auto masks = sample_target_masks(30, cfg, seed, nullptr, &succ);
    for (size_t i = 0; i < masks.size(); ++i) {
      CHECK(succ[i] == 1);
      for (size_t j = 1; j < masks[i].size(); ++j)
        CHECK(masks[i][j] == masks[i][j - 1] + 1);
      CHECK(masks[i].front() >= 0);
      CHECK(masks[i].back() < 30);
    }
  }
}

TEST_CASE("scattered masks have no duplicates and stay in range") {
  ModelConfig cfg = tiny_config();
  cfg.p_successive = 0.0;
  cfg.num_masks = 4;
  for (uint64_t seed = 0; seed < 50; ++seed) {
    auto masks = sample_target_masks(10, cfg, seed);
    REQUIRE(masks.size() == 4);
    for (const auto& m : masks) {
      CHECK(!m.empty());
      std::set<int64_t> uniq(m.begin(), m.end());
      CHECK(uniq.size() == m.size());
      CHECK(*uniq.begin() >= 0);
      CHECK(*uniq.rbegin() < 10);
    }
  }
}

TEST_CASE("mask covering the whole sequence is a config error") {
  ModelConfig cfg = tiny_config();
  cfg.mask_ratios = {0.8};
  cfg.num_masks = 1;
  CHECK_THROWS_AS(sample_target_masks(2, cfg, 1), Error);
}

TEST_CASE("context with p_gamma=1 and no targets is every position") {
  ModelConfig cfg = tiny_config();
  cfg.context_min = 1.0;
  cfg.context_max = 1.0;
  auto ctx = sample_context(12, cfg, {}, 5);
  REQUIRE(ctx.size() == 12);
  for (int64_t i = 0; i < 12; ++i) CHECK(ctx[static_cast<size_t>(i)] == i);
}

TEST_CASE("context never overlaps targets") {
  ModelConfig cfg = tiny_config();
  for (uint64_t seed = 0; seed < 200; ++seed) {
    auto masks = sample_target_masks(20, cfg, seed);
    auto ctx = sample_context(20, cfg, masks, seed + 1000);
    std::set<int64_t> target_set;
    for (const auto& m : masks) target_set.insert(m.begin(), m.end());
    CHECK(!ctx.empty());
    for (int64_t i : ctx) CHECK(target_set.count(i) == 0);
  }
}

TEST_CASE("context size bounds with one block of 3 targets in n=10") {
  ModelConfig cfg = tiny_config();
  cfg.context_min = 0.9;
  cfg.context_max = 0.9;
  std::vector<std::vector<int64_t>> targets{{4, 5, 6}};
  for (uint64_t seed = 0; seed < 200; ++seed) {
    auto ctx = sample_context(10, cfg, targets, seed);
    // sample is 9 positions; removing 0..3 covered targets leaves 6..9
    CHECK(ctx.size() >= 6);
    CHECK(ctx.size() <= 9);
  }
}

TEST_CASE("all-target coverage raises the degenerate-context error") {
  ModelConfig cfg = tiny_config();
  std::vector<std::vector<int64_t>> targets{{0, 1}, {2, 3}};
  bool threw = false;
  try {
    sample_context(4, cfg, targets, 9);
  } catch (const Error& e) {
    threw = true;
    CHECK(e.kind() == ErrorKind::State);
  }
  CHECK(threw);
}

TEST_CASE("sample_mask_plan retries degenerate draws and stays consistent") {
  ModelConfig cfg = tiny_config();
  cfg.num_masks = 4;
  cfg.mask_ratios = {0.3};
  for (uint64_t seed = 0; seed < 100; ++seed) {
    MaskPlan plan = sample_mask_plan(5, cfg, seed);
    REQUIRE(plan.target_masks.size() == 4);
    std::set<int64_t> target_set;
    for (const auto& m : plan.target_masks) {
      CHECK(m.size() == 2);  // round(0.3*5) = 2
      target_set.insert(m.begin(), m.end());
    }
    CHECK(!plan.context_indices.empty());
    for (int64_t i : plan.context_indices) CHECK(target_set.count(i) == 0);
  }
}

TEST_CASE("single-token encode returns the trivial attention map") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 1);
  Tensor input = random_embedding(1, 8, 2);
  auto enc = run_encoder(model.levels[0].ctx, input, {0}, {1}, nullptr, nullptr, cfg);
  CHECK(enc.attn.numel() == 1);
  CHECK(enc.attn.value() == 1.0);
  CHECK(enc.seq.dim(0) == 1);
  CHECK(enc.seq.dim(1) == 8);
}

TEST_CASE("sigma = 0 makes fusion bit-identical to no injection") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 3);
  std::fill(model.levels[0].sigma.data().begin(),
            model.levels[0].sigma.data().end(), 0.0);
  std::fill(model.levels[1].sigma.data().begin(),
            model.levels[1].sigma.data().end(), 0.0);

  Tensor input = random_embedding(6, 8, 4);
  std::vector<int64_t> pos{0, 1, 2, 3, 4, 5};
  std::vector<uint8_t> mask(6, 1);
  Tensor injected = random_embedding(6, 6, 5);

  auto plain = run_encoder(model.levels[0].ctx, input, pos, mask, nullptr,
                           nullptr, cfg);
  auto fused = run_encoder(model.levels[0].ctx, input, pos, mask, &injected,
                           &model.levels[1].sigma, cfg);
  CHECK(plain.seq.data() == fused.seq.data());
  CHECK(plain.attn.data() == fused.attn.data());
}

TEST_CASE("propagation maps are row-stochastic within 1e-9 and in [0,1]") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 5);
  for (uint64_t trial = 0; trial < 100; ++trial) {
    int64_t n = 2 + static_cast<int64_t>(trial % 7);
    Tensor input = random_embedding(n, 8, 100 + trial);
    std::vector<int64_t> pos(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) pos[static_cast<size_t>(i)] = i;
    std::vector<uint8_t> mask(static_cast<size_t>(n), 1);
    // half the trials inject a random upsampled-style map
    Tensor inj;
    const Tensor* injp = nullptr;
    if (trial % 2 == 1) {
      inj = random_embedding(n, n, 200 + trial);
      for (auto& v : inj.data()) v = std::abs(v);
      injp = &inj;
    }
    auto enc = run_encoder(model.levels[0].ctx, input, pos, mask, injp,
                           &model.levels[1].sigma, cfg);
    for (int64_t i = 0; i < n; ++i) {
      double sum = 0;
      for (int64_t j = 0; j < n; ++j) {
        double v = enc.attn.at(i, j);
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) <= 1e-9);
    }
  }
}

TEST_CASE("propagate_attention doubles the map and clamps into [0,1]") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 7);
  // replication init: every entry copied into its 2x2 block
  Tensor map = random_embedding(4, 4, 8);
  for (auto& v : map.data()) v = std::abs(v) * 0.5;
  Tensor up = propagate_attention(map, model.levels[1], cfg);
  REQUIRE(up.dim(0) == 8);
  REQUIRE(up.dim(1) == 8);
  for (int64_t i = 0; i < 4; ++i)
    for (int64_t j = 0; j < 4; ++j)
      for (int64_t a = 0; a < 2; ++a)
        for (int64_t b = 0; b < 2; ++b)
          CHECK(up.at(2 * i + a, 2 * j + b) == doctest::Approx(map.at(i, j)));

  // raw outputs above 1 clamp to exactly 1
  model.levels[1].deconv_w.data() = {2.0, 2.0};
  Tensor big = propagate_attention(map, model.levels[1], cfg);
  bool saw_clamp = false;
  for (int64_t i = 0; i < 8; ++i)
    for (int64_t j = 0; j < 8; ++j) {
      CHECK(big.at(i, j) <= 1.0);
      if (big.at(i, j) == 1.0) saw_clamp = true;
    }
  CHECK(saw_clamp);
}

TEST_CASE("resize_map truncates or zero-pads the top-left block") {
  Tensor map = random_embedding(5, 5, 9);
  Tensor small = resize_map(map, 3);
  REQUIRE(small.shape() == std::vector<int64_t>{3, 3});
  for (int64_t i = 0; i < 3; ++i)
    for (int64_t j = 0; j < 3; ++j) CHECK(small.at(i, j) == map.at(i, j));

  Tensor big = resize_map(map, 7);
  REQUIRE(big.shape() == std::vector<int64_t>{7, 7});
  for (int64_t i = 0; i < 7; ++i)
    for (int64_t j = 0; j < 7; ++j) {
      if (i < 5 && j < 5)
        CHECK(big.at(i, j) == map.at(i, j));
      else
        CHECK(big.at(i, j) == 0.0);
    }
}

TEST_CASE("predict shapes, determinism, and empty-mask error") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 11);
  Tensor s_ctx = random_embedding(10, 8, 12);
  std::vector<int64_t> mask{1, 4, 7};
  Tensor out1 = predict(s_ctx, mask, model.levels[0], cfg);
  Tensor out2 = predict(s_ctx, mask, model.levels[0], cfg);
  REQUIRE(out1.shape() == std::vector<int64_t>{3, 8});
  CHECK(out1.data() == out2.data());
  CHECK_THROWS_AS(predict(s_ctx, {}, model.levels[0], cfg), Error);
}

TEST_CASE("forward_hierarchy shapes follow |M_i| x (d, 2d, 4d)") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 13);
  auto item = make_item(model, 16, 21);
  ItemForward fwd = forward_hierarchy(item.stack, item.plans, model);
  for (int l = 0; l < 3; ++l) {
    const LevelForward& lf = fwd.level[static_cast<size_t>(l)];
    REQUIRE(lf.active);
    REQUIRE(lf.predictions.size() == 2);
    for (size_t i = 0; i < lf.predictions.size(); ++i) {
      CHECK(lf.predictions[i].dim(0) ==
            static_cast<int64_t>(item.plans[static_cast<size_t>(l)]
                                     .target_masks[i].size()));
      CHECK(lf.predictions[i].dim(1) == (8 << l));
      CHECK(lf.predictions[i].shape() == lf.targets[i].shape());
    }
  }
}

TEST_CASE("levels=1 skips upper levels entirely") {
  ModelConfig cfg = tiny_config();
  cfg.levels = 1;
  ModelState model = ModelState::init(cfg, 13);
  auto item = make_item(model, 16, 21);
  ItemForward fwd = forward_hierarchy(item.stack, item.plans, model);
  CHECK(fwd.level[0].active);
  CHECK_FALSE(fwd.level[1].active);
  CHECK_FALSE(fwd.level[2].active);
}

TEST_CASE("single-level ablation matches the 3-level no-interaction forward at level 1") {
  ModelConfig cfg3 = tiny_config();
  cfg3.interaction = Interaction::None;
  ModelState m3 = ModelState::init(cfg3, 17);

  ModelConfig cfg1 = tiny_config();
  cfg1.levels = 1;
  ModelState m1 = ModelState::init(cfg1, 17);  // same init stream

  auto item3 = make_item(m3, 16, 31);
  auto item1 = make_item(m1, 16, 31);
  REQUIRE(item1.plans[0].context_indices == item3.plans[0].context_indices);

  ItemForward f3 = forward_hierarchy(item3.stack, item3.plans, m3);
  ItemForward f1 = forward_hierarchy(item1.stack, item1.plans, m1);
  CHECK(f1.level[0].ctx_seq.data() == f3.level[0].ctx_seq.data());
  for (size_t i = 0; i < f1.level[0].predictions.size(); ++i)
    CHECK(f1.level[0].predictions[i].data() == f3.level[0].predictions[i].data());
}

TEST_CASE("fusion neutrality: sigma=0 everywhere bit-equals interaction=none") {
  ModelConfig cfg_attn = tiny_config();
  ModelState ma = ModelState::init(cfg_attn, 19);
  for (auto& lm : ma.levels) std::fill(lm.sigma.data().begin(), lm.sigma.data().end(), 0.0);

  ModelConfig cfg_none = tiny_config();
  cfg_none.interaction = Interaction::None;
  ModelState mn = ModelState::init(cfg_none, 19);
  for (auto& lm : mn.levels) std::fill(lm.sigma.data().begin(), lm.sigma.data().end(), 0.0);

  auto item_a = make_item(ma, 20, 41);
  auto item_n = make_item(mn, 20, 41);
  ItemForward fa = forward_hierarchy(item_a.stack, item_a.plans, ma);
  ItemForward fn = forward_hierarchy(item_n.stack, item_n.plans, mn);
  for (int l = 0; l < 3; ++l) {
    CHECK(fa.level[static_cast<size_t>(l)].ctx_seq.data() ==
          fn.level[static_cast<size_t>(l)].ctx_seq.data());
    CHECK(fa.level[static_cast<size_t>(l)].target_seq.data() ==
          fn.level[static_cast<size_t>(l)].target_seq.data());
    for (size_t i = 0; i < fa.level[static_cast<size_t>(l)].predictions.size(); ++i)
      CHECK(fa.level[static_cast<size_t>(l)].predictions[i].data() ==
            fn.level[static_cast<size_t>(l)].predictions[i].data());
  }
}

TEST_CASE("pad positions are rejected by the leakage guard") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 23);
  // 9 real + 7 pad
  std::vector<uint8_t> mask(16, 0);
  for (int i = 0; i < 9; ++i) mask[static_cast<size_t>(i)] = 1;
  auto stack = build_abstractions_item(random_embedding(16, 8, 51), mask,
                                       model.conv, cfg.conv_activation);
  std::array<MaskPlan, 3> plans;
  for (int l = 0; l < 3; ++l)
    plans[static_cast<size_t>(l)] = sample_mask_plan(
        stack.real_len[static_cast<size_t>(l)], cfg, plan_seed(1, 0, 0, l));

  // valid plans pass
  CHECK_NOTHROW(forward_hierarchy(stack, plans, model));

  // a mask touching a pad position must be rejected
  auto bad = plans;
  bad[0].target_masks[0].back() = 15;
  CHECK_THROWS_AS(forward_hierarchy(stack, bad, model), Error);

  // overlapping context must be rejected
  auto bad2 = plans;
  bad2[0].context_indices.push_back(bad2[0].target_masks[0.0].front());
  CHECK_THROWS_AS(forward_hierarchy(stack, bad2, model), Error);
}

TEST_CASE("gradients reach predictor machinery but never the target encoder") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 29);
  std::vector<AbstractionStack> stacks;
  std::vector<std::array<MaskPlan, 3>> plans;
  auto item = make_item(model, 16, 61);
  stacks.push_back(item.stack);
  plans.push_back(item.plans);
  LossParams lp;
  BatchLoss loss = compute_batch_loss(stacks, plans, model, lp);
  loss.total.backward();

  auto grad_norm = [](const Tensor& t) {
    if (!t.has_grad()) return 0.0;
    double s = 0;
    for (double g : t.grad()) s += g * g;
    return s;
  };
  // mask token, predictor PE, predictor block, context encoder all receive grad
  CHECK(grad_norm(model.levels[0].mask_token) > 0.0);
  CHECK(grad_norm(model.levels[0].pred.pos) > 0.0);
  CHECK(grad_norm(model.levels[0].pred.blocks[0].wq) > 0.0);
  CHECK(grad_norm(model.levels[0].ctx.blocks[0].wq) > 0.0);
  CHECK(grad_norm(model.levels[0].ctx.pos) > 0.0);
  // deconv and sigma sit on the propagation path of levels 2 and 3
  CHECK(grad_norm(model.levels[2].deconv_w) > 0.0);
  CHECK(grad_norm(model.levels[2].sigma) > 0.0);
  // conv stack feeds the context path
  CHECK(grad_norm(model.conv.w1) > 0.0);
  // the EMA target copies never accumulate gradient
  for (const Parameter& p : model.target_params) {
    CHECK_FALSE(p.tensor.requires_grad());
    CHECK_FALSE(p.tensor.has_grad());
  }
}

TEST_CASE("ema_update closed forms") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 31);
  // make target and context differ
  auto& pair0 = model.ema_pairs[0];
  for (auto& v : pair0.first.data()) v += 1.0;
  std::vector<double> tar_before = pair0.first.data();

  ema_update(model, 1.0);
  CHECK(pair0.first.data() == tar_before);

  ema_update(model, 0.0);
  CHECK(pair0.first.data() == pair0.second.data());

  // geometric contraction for fixed context params
  for (auto& v : pair0.first.data()) v += 1.0;
  double d0 = 0;
  for (size_t i = 0; i < pair0.first.data().size(); ++i)
    d0 = std::max(d0, std::abs(pair0.first.data()[i] - pair0.second.data()[i]));
  for (int k = 1; k <= 10; ++k) {
    ema_update(model, 0.9);
    double dk = 0;
    for (size_t i = 0; i < pair0.first.data().size(); ++i)
      dk = std::max(dk, std::abs(pair0.first.data()[i] - pair0.second.data()[i]));
    CHECK(std::abs(dk - std::pow(0.9, k) * d0) <= 1e-12);
  }

  CHECK_THROWS_AS(ema_update(model, 1.5), Error);
}

TEST_CASE("infer is deterministic, d-wide, and order-invariant") {
  ModelConfig cfg = tiny_config();
  ModelState model = ModelState::init(cfg, 37);
  std::vector<Tensor> embedded;
  for (uint64_t i = 0; i < 5; ++i)
    embedded.push_back(random_embedding(12 + static_cast<int64_t>(i), 8, 70 + i));

  std::vector<std::vector<double>> forward_order, reverse_order(5);
  for (const auto& e : embedded) forward_order.push_back(infer_embedded(e, model));
  for (int i = 4; i >= 0; --i)
    reverse_order[static_cast<size_t>(i)] =
        infer_embedded(embedded[static_cast<size_t>(i)], model);
  for (size_t i = 0; i < 5; ++i) {
    CHECK(forward_order[i].size() == 8);
    CHECK(forward_order[i] == reverse_order[i]);
  }
  CHECK(infer_embedded(embedded[0], model) == forward_order[0]);
}

TEST_CASE("embed_concat interaction runs and changes the output") {
  ModelConfig cfg = tiny_config();
  cfg.interaction = Interaction::EmbedConcat;
  ModelState me = ModelState::init(cfg, 41);
  auto item = make_item(me, 16, 81);
  ItemForward fe = forward_hierarchy(item.stack, item.plans, me);
  CHECK(fe.level[0].ctx_seq.dim(1) == 8);

  ModelConfig cfg_none = tiny_config();
  cfg_none.interaction = Interaction::None;
  ModelState mn = ModelState::init(cfg_none, 41);
  ItemForward fn = forward_hierarchy(item.stack, item.plans, mn);
  CHECK(fe.level[0].ctx_seq.data() != fn.level[0].ctx_seq.data());
  // level 3 has nothing above it, so both agree there
  CHECK(fe.level[2].ctx_seq.data() == fn.level[2].ctx_seq.data());
}
