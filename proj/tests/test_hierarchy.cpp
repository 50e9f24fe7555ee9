#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support/model_fixtures.hpp"
#include "trajepa/hierarchy.hpp"

using namespace trajepa;
using testsupport::random_embedding;

namespace {

ConvStageParams test_params(int64_t d, uint64_t seed = 1) {
  Rng rng(seed);
  return ConvStageParams::init(d, rng);
}

}  // namespace

TEST_CASE("shape chain for n=8 and n=9 at d=4") {
  auto params = test_params(4);
  for (int64_t n : {8, 9}) {
    std::vector<uint8_t> mask(static_cast<size_t>(n), 1);
    auto s = build_abstractions_item(random_embedding(n, 4, 3), mask, params,
                                     ConvActivation::Gelu);
    CHECK(s.levels[0].dim(0) == n);
    CHECK(s.levels[0].dim(1) == 4);
    CHECK(s.levels[1].dim(0) == 4);
    CHECK(s.levels[1].dim(1) == 8);
    CHECK(s.levels[2].dim(0) == 2);
    CHECK(s.levels[2].dim(1) == 16);
  }
}

TEST_CASE("closed-form length chain holds for all n in 4..256") {
  for (int64_t d : {8, 16}) {
    auto params = test_params(d, static_cast<uint64_t>(d));
    for (int64_t n = 4; n <= 256; n += (n < 40 ? 1 : 7)) {
      std::vector<uint8_t> mask(static_cast<size_t>(n), 1);
      auto s = build_abstractions_item(random_embedding(n, d, 5), mask, params,
                                       ConvActivation::Gelu);
      CHECK(s.levels[0].dim(0) == n);
      CHECK(s.levels[1].dim(0) == n / 2);
      CHECK(s.levels[2].dim(0) == (n / 2) / 2);
      CHECK(s.levels[0].dim(1) == d);
      CHECK(s.levels[1].dim(1) == 2 * d);
      CHECK(s.levels[2].dim(1) == 4 * d);
    }
  }
}

TEST_CASE("zero input and zero bias give an all-zero stack") {
  auto params = test_params(4);
  for (Tensor* b : {&params.b1, &params.b2, &params.b3})
    std::fill(b->data().begin(), b->data().end(), 0.0);
  std::vector<uint8_t> mask(8, 1);
  auto s = build_abstractions_item(Tensor::zeros({8, 4}), mask, params,
                                   ConvActivation::Gelu);
  for (int l = 0; l < 3; ++l)
    for (double v : s.levels[static_cast<size_t>(l)].data()) CHECK(v == 0.0);
}

TEST_CASE("n < 4 is rejected") {
  auto params = test_params(4);
  std::vector<uint8_t> mask(3, 1);
  CHECK_THROWS_AS(build_abstractions_item(random_embedding(3, 4, 7), mask,
                                          params, ConvActivation::Gelu),
                  Error);
}

TEST_CASE("gradient flows from every level back to the input") {
  auto params = test_params(4);
  for (int level = 0; level < 3; ++level) {
    Tensor input = random_embedding(10, 4, 9);
    Tensor tracked = Tensor::from(input.shape(), input.data(), true);
    std::vector<uint8_t> mask(10, 1);
    auto s = build_abstractions_item(tracked, mask, params, ConvActivation::Gelu);
    Tensor loss = sum_all(s.levels[static_cast<size_t>(level)]);
    loss.backward();
    REQUIRE(tracked.has_grad());
    double norm = 0;
    for (double g : tracked.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("pad masks pool as any-real, so pad iff both sources pad") {
  auto params = test_params(4);
  // 9 real tokens padded to 16
  std::vector<uint8_t> mask(16, 0);
  for (int i = 0; i < 9; ++i) mask[static_cast<size_t>(i)] = 1;
  auto s = build_abstractions_item(random_embedding(16, 4, 11), mask, params,
                                   ConvActivation::Gelu);
  // level 2: windows (0,1)..(14,15); window (8,9) mixes real+pad -> real
  std::vector<uint8_t> want2{1, 1, 1, 1, 1, 0, 0, 0};
  CHECK(s.masks[1] == want2);
  for (size_t j = 0; j < want2.size(); ++j) {
    bool both_pad = !mask[2 * j] && !mask[2 * j + 1];
    CHECK(static_cast<bool>(!s.masks[1][j]) == both_pad);
  }
  // level 3 pools level 2 the same way
  std::vector<uint8_t> want3{1, 1, 1, 0};
  CHECK(s.masks[2] == want3);
  CHECK(s.real_len[0] == 9);
  CHECK(s.real_len[1] == 5);
  CHECK(s.real_len[2] == 3);
}

TEST_CASE("batch build matches per-item build") {
  auto params = test_params(4);
  // fabricate a Batch by embedding two point runs through a tiny table is
  // overkill here; drive the per-item API against the Batch API contract
  Tensor e0 = random_embedding(6, 4, 21);
  Tensor e1 = random_embedding(8, 4, 22);
  std::vector<double> data;
  auto append_padded = [&](const Tensor& t) {
    data.insert(data.end(), t.data().begin(), t.data().end());
    data.insert(data.end(), static_cast<size_t>((8 - t.dim(0)) * 4), 0.0);
  };
  append_padded(e0);
  append_padded(e1);
  Batch batch;
  batch.batch_size = 2;
  batch.n_max = 8;
  batch.dim = 4;
  batch.lengths = {6, 8};
  batch.pad_mask = {1, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 1, 1, 1, 1, 1};
  batch.embeddings = Tensor::from({16, 4}, std::move(data));

  auto stacks = build_abstractions(batch, params, ConvActivation::Gelu);
  REQUIRE(stacks.size() == 2);
  auto direct = build_abstractions_item(batch.item(1), batch.item_mask(1),
                                        params, ConvActivation::Gelu);
  CHECK(stacks[1].levels[2].data() == direct.levels[2].data());
  CHECK(stacks[0].real_len[0] == 6);
}
