#include <gtest/gtest.h>

#include "mtscan/autodiff.hpp"
#include "mtscan/bi_scan.hpp"
#include "mtscan/error.hpp"
#include "mtscan/ops.hpp"
#include "oracles.hpp"

using namespace mtscan;

namespace {

TaskFeatureSet random_set(std::size_t tasks, std::size_t c, std::size_t h, std::size_t w, Rng& rng) {
  TaskFeatureSet fs{{}, TaskOrder::identity(tasks)};
  for (std::size_t t = 0; t < tasks; ++t) fs.maps.push_back(normal_tensor({c, h, w}, 1.0, rng));
  return fs;
}

}  // namespace

TEST(TaskOrder, IdentityReverseValidate) {
  const auto id = TaskOrder::identity(3);
  EXPECT_EQ(id.perm, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(id.reversed().perm, (std::vector<std::size_t>{2, 1, 0}));
  EXPECT_NO_THROW(id.validate(3));
  EXPECT_THROW((TaskOrder{{0, 0, 1}}.validate(3)), PermutationError);
  EXPECT_THROW(id.validate(4), PermutationError);
}

TEST(BiScanOrder, HandExampleTwoTasksOneByTwo) {
  const auto id = TaskOrder::identity(2);
  // tokens a0 a1 b0 b1 have ids 0 1 2 3
  EXPECT_EQ(task_first_token_order(2, 1, 2, ScanDirection::row_fwd, id), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(position_first_token_order(2, 1, 2, ScanDirection::row_fwd, id), (std::vector<std::size_t>{0, 2, 1, 3}));
  const TaskOrder rev{{1, 0}};
  EXPECT_EQ(task_first_token_order(2, 1, 2, ScanDirection::row_fwd, rev), (std::vector<std::size_t>{2, 3, 0, 1}));
  EXPECT_EQ(position_first_token_order(2, 1, 2, ScanDirection::row_rev, id), (std::vector<std::size_t>{1, 3, 0, 2}));
}

TEST(BiScanOrder, PositionFirstIsTransposeOfTaskFirst) {
  Rng rng = make_rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t T = 1 + rng() % 4, H = 1 + rng() % 5, W = 1 + rng() % 5;
    TaskOrder order = TaskOrder::identity(T);
    std::shuffle(order.perm.begin(), order.perm.end(), rng);
    const auto dir = kAllDirections[rng() % 4];
    const auto tf = task_first_token_order(T, H, W, dir, order);
    const auto pf = position_first_token_order(T, H, W, dir, order);
    const std::size_t P = H * W;
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t p = 0; p < P; ++p) EXPECT_EQ(pf[p * T + t], tf[t * P + p]);
  }
}

TEST(BiScanSerialize, RoundTripIsExact) {
  Rng rng = make_rng(2);
  for (auto mode : {ScanMode::task_first, ScanMode::position_first}) {
    auto fs = random_set(3, 2, 3, 4, rng);
    fs.order = TaskOrder{{2, 0, 1}};
    const auto seq = mode == ScanMode::task_first ? task_first_serialize(fs, ScanDirection::col_rev, fs.order)
                                                  : position_first_serialize(fs, ScanDirection::col_rev, fs.order);
    EXPECT_EQ(seq.tokens.shape(), (Shape{36, 2}));
    const auto back = deserialize(seq);
    ASSERT_EQ(back.tasks(), 3u);
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < fs.maps[t].numel(); ++i) EXPECT_EQ(back.maps[t].at(i), fs.maps[t].at(i));
  }
}

TEST(BiScanSerialize, TokensFollowIndexMap) {
  Rng rng = make_rng(3);
  const auto fs = random_set(2, 3, 2, 2, rng);
  const auto seq = position_first_serialize(fs, ScanDirection::row_fwd, fs.order);
  for (std::size_t l = 0; l < seq.token_order.size(); ++l) {
    const std::size_t t = seq.token_order[l] / 4, p = seq.token_order[l] % 4;
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(seq.tokens.at(l * 3 + c), fs.maps[t].at(c * 4 + p));
  }
}

TEST(BiScanSerialize, DeserializeErrors) {
  Rng rng = make_rng(4);
  const auto fs = random_set(2, 2, 2, 2, rng);
  auto seq = task_first_serialize(fs, ScanDirection::row_fwd, fs.order);
  EXPECT_THROW(deserialize(seq, Shape{2, 4, 1}), ShapeError);
  seq.token_order.clear();
  EXPECT_THROW(deserialize(seq), ProtocolError);
  seq = task_first_serialize(fs, ScanDirection::row_fwd, fs.order);
  seq.token_order[0] = seq.token_order[1];
  EXPECT_THROW(deserialize(seq), PermutationError);
}

TEST(BiScanSerialize, SingleTaskModesCoincide) {
  Rng rng = make_rng(5);
  const auto fs = random_set(1, 2, 3, 3, rng);
  for (auto dir : kAllDirections) {
    const auto a = task_first_serialize(fs, dir, fs.order);
    const auto b = position_first_serialize(fs, dir, fs.order);
    EXPECT_EQ(a.token_order, b.token_order);
    for (std::size_t i = 0; i < a.tokens.numel(); ++i) EXPECT_EQ(a.tokens.at(i), b.tokens.at(i));
  }
}

TEST(ModeOrder, NamesAndSequences) {
  for (auto m : {ModeOrder::tf_then_pf, ModeOrder::pf_then_tf, ModeOrder::tf_only, ModeOrder::pf_only})
    EXPECT_EQ(parse_mode_order(to_string(m)), m);
  EXPECT_THROW(parse_mode_order("sideways"), ConfigError);
  EXPECT_EQ(mode_sequence(ModeOrder::pf_then_tf),
            (std::vector<ScanMode>{ScanMode::position_first, ScanMode::task_first}));
  EXPECT_EQ(mode_sequence(ModeOrder::tf_only).size(), 1u);
}

TEST(BiScanBlock, ShapesCountsAndErrors) {
  Rng rng = make_rng(6);
  BiScanConfig cfg{BiScanConfig::default_patterns(std::vector<std::size_t>{1, 2})};
  EXPECT_EQ(cfg.patterns[1].scale, 2u);
  EXPECT_EQ(cfg.patterns[2].scale, 1u);
  const auto block = BiScan::make(cfg, 4, 2, rng);
  std::size_t total = 0;
  for (const auto& t : block.parameters()) total += t.numel();
  EXPECT_EQ(total, BiScan::parameter_count(cfg, 4, 2));
  const auto out = bi_scan(random_set(3, 4, 4, 4, rng), block);
  ASSERT_EQ(out.tasks(), 3u);
  EXPECT_EQ(out.maps[2].shape(), (Shape{4, 4, 4}));
  EXPECT_THROW(BiScan::make(cfg, 3, 2, rng), ConfigError);
  BiScanConfig empty;
  EXPECT_THROW(BiScan::make(empty, 4, 2, rng), ConfigError);
}

TEST(BiScanBlock, UnidirectionalIsForwardScan) {
  Rng rng = make_rng(7);
  BiScanConfig cfg{BiScanConfig::default_patterns()};
  cfg.bidirectional = false;
  const auto block = BiScan::make(cfg, 3, 2, rng);
  const auto fs = random_set(2, 3, 2, 2, rng);
  const auto a = bi_scan(fs, block);
  const auto b = forward_scan(fs, cfg, block.heads[0]);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t i = 0; i < a.maps[t].numel(); ++i) EXPECT_EQ(a.maps[t].at(i), b.maps[t].at(i));
}

TEST(BiScanBlock, BackwardHalfScansReversedTaskOrder) {
  // the second half must equal a forward scan over the reversed task list,
  // mapped back to declaration order
  Rng rng = make_rng(8);
  BiScanConfig cfg{{{ScanDirection::row_fwd, 1}}};
  cfg.mode_order = ModeOrder::tf_only;
  const auto block = BiScan::make(cfg, 4, 2, rng);
  auto fs = random_set(3, 4, 2, 2, rng);
  fs.order = TaskOrder{{1, 2, 0}};
  const auto out = bi_scan(fs, block);
  TaskFeatureSet half{{}, fs.order.reversed()};
  for (const auto& m : fs.maps) half.maps.push_back(slice(m, 2, 4));
  const auto ref = forward_scan(half, cfg, block.heads[1]);
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(out.maps[t].at(8 + i), ref.maps[t].at(i), 1e-12);
}

TEST(BiScanBlock, StateCrossesTaskBoundary) {
  // in task-first mode the last task sees the first; the first does not see the last
  Rng rng = make_rng(9);
  BiScanConfig cfg{{{ScanDirection::row_fwd, 1}}};
  cfg.mode_order = ModeOrder::tf_only;
  cfg.bidirectional = false;
  const auto block = BiScan::make(cfg, 2, 2, rng);
  auto fs = random_set(2, 2, 2, 2, rng);
  const auto base = bi_scan(fs, block);
  fs.maps[0] = affine(fs.maps[0], 1.0, 0.5);
  const auto moved = bi_scan(fs, block);
  EXPECT_NE(base.maps[1].at(0), moved.maps[1].at(0));
  auto fs2 = random_set(2, 2, 2, 2, rng);
  const auto base2 = bi_scan(fs2, block);
  fs2.maps[1] = affine(fs2.maps[1], 1.0, 0.5);
  const auto moved2 = bi_scan(fs2, block);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(base2.maps[0].at(i), moved2.maps[0].at(i));
}

TEST(BiScanBlock, FlopsAffineInTasks) {
  BiScanConfig cfg{BiScanConfig::default_patterns(std::vector<std::size_t>{1, 4})};
  std::vector<std::int64_t> f;
  for (std::size_t t = 1; t <= 6; ++t) f.push_back(static_cast<std::int64_t>(flop_count(cfg, t, 16, 16, 16, 4)));
  for (std::size_t i = 2; i < f.size(); ++i) EXPECT_EQ(f[i] - 2 * f[i - 1] + f[i - 2], 0);
  cfg.dilated = true;
  EXPECT_LT(flop_count(cfg, 3, 16, 16, 16, 4), flop_count(BiScanConfig{cfg.patterns}, 3, 16, 16, 16, 4));
}

TEST(BiScanBlock, Gradients) {
  Rng rng = make_rng(10);
  BiScanConfig cfg{BiScanConfig::default_patterns(std::vector<std::size_t>{1, 2})};
  const auto block = BiScan::make(cfg, 4, 2, rng);
  TaskFeatureSet fs{{}, TaskOrder::identity(2)};
  std::vector<Tensor> leaves;
  for (int t = 0; t < 2; ++t) {
    fs.maps.push_back(normal_tensor({4, 2, 2}, 1.0, rng, true));
    leaves.push_back(fs.maps.back());
  }
  for (const auto& p : block.parameters()) leaves.push_back(p);
  const Tensor w = normal_tensor({4, 2, 2}, 1.0, rng);
  GradCheckOptions o;
  o.max_coords_per_tensor = 3;
  const double err = grad_check(
      [&] {
        const auto out = bi_scan(fs, block);
        return add(sum(mul(out.maps[0], w)), sum(mul(out.maps[1], out.maps[1])));
      },
      leaves, o);
  EXPECT_LT(err, 1e-5);
}
