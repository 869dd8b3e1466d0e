#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "mtscan/autodiff.hpp"
#include "mtscan/error.hpp"
#include "mtscan/model.hpp"
#include "mtscan/ops.hpp"

using namespace mtscan;

namespace {

ModelConfig small_config(std::size_t tasks = 2) {
  ModelConfig c;
  c.tasks = default_tasks(3);
  c.tasks.resize(tasks);
  c.channels = 4;
  c.state = 2;
  c.head_channels = 16;
  c.mfr_scales = {{{1, 2}, {1, 2}, {1, 2}}};
  return c;
}

TaskFeatureSet random_set(std::size_t tasks, std::size_t c, std::size_t hw, Rng& rng) {
  TaskFeatureSet fs{{}, TaskOrder::identity(tasks)};
  for (std::size_t t = 0; t < tasks; ++t) fs.maps.push_back(normal_tensor({c, hw, hw}, 1.0, rng));
  return fs;
}

}  // namespace

TEST(ModelConfig, NamesRoundTrip) {
  for (auto k : {TaskKind::semseg, TaskKind::depth, TaskKind::normals, TaskKind::boundary})
    EXPECT_EQ(parse_task_kind(to_string(k)), k);
  for (auto m : {Interaction::bi_scan, Interaction::fused_ss2d, Interaction::none})
    EXPECT_EQ(parse_interaction(to_string(m)), m);
  EXPECT_THROW(parse_task_kind("edges"), ConfigError);
  EXPECT_THROW(parse_loss_kind("l3"), ConfigError);
}

TEST(ModelConfig, ValidationErrors) {
  auto c = small_config();
  EXPECT_NO_THROW(c.validate_input(32, 32));
  EXPECT_THROW(c.validate_input(48, 32), ConfigError);
  c.head_channels = 20;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.mfr_scales[0] = {1, 2, 4};
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.channels = 5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_config();
  c.task_order = {0, 0};
  EXPECT_THROW(c.validate(), PermutationError);
  c = small_config();
  c.mfr_scales = {{{1, 4}, {1, 4}, {1, 4}}};
  EXPECT_THROW(c.validate_input(32, 32), ConfigError);
}

TEST(Model, OutputShapes) {
  const auto c = small_config(4);
  const Model m = Model::init(c, 1);
  Rng rng = make_rng(2);
  const auto out = model_forward(uniform_tensor({3, 32, 32}, 0, 1, rng), m);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[0].shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(out[1].shape(), (Shape{1, 32, 32}));
  EXPECT_EQ(out[2].shape(), (Shape{3, 32, 32}));
  EXPECT_EQ(out[3].shape(), (Shape{2, 32, 32}));
}

TEST(Model, EncoderStageShapes) {
  const auto c = small_config();
  const Model m = Model::init(c, 1);
  Rng rng = make_rng(3);
  const auto g = encoder_forward(uniform_tensor({3, 64, 32}, 0, 1, rng), m);
  EXPECT_EQ(g.g[0].shape(), (Shape{4, 16, 8}));
  EXPECT_EQ(g.g[1].shape(), (Shape{8, 8, 4}));
  EXPECT_EQ(g.g[2].shape(), (Shape{16, 4, 2}));
  EXPECT_EQ(g.g[3].shape(), (Shape{32, 2, 1}));
}

TEST(Model, InitIsDeterministic) {
  const auto c = small_config();
  const Model a = Model::init(c, 7), b = Model::init(c, 7), d = Model::init(c, 8);
  const auto pa = a.parameters(), pb = b.parameters(), pd = d.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool differs = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pa[i].numel(); ++k) EXPECT_EQ(pa[i].at(k), pb[i].at(k));
    for (std::size_t k = 0; k < pa[i].numel(); ++k) differs |= pa[i].at(k) != pd[i].at(k);
  }
  EXPECT_TRUE(differs);
}

TEST(Model, ParameterNamesAreUnique) {
  const Model m = Model::init(small_config(), 1);
  std::set<std::string> names;
  std::size_t n = 0;
  m.visit([&](const std::string& name, const Tensor&) {
    names.insert(name);
    ++n;
  });
  EXPECT_EQ(names.size(), n);
  EXPECT_TRUE(names.count("head.psi.weight"));
}

TEST(Model, AnalyticCountsMatchInstantiatedModel) {
  for (auto mode : {Interaction::bi_scan, Interaction::fused_ss2d, Interaction::none})
    for (bool dilated : {false, true})
      for (std::size_t tasks : {0, 1, 3}) {
        auto c = small_config(tasks);
        c.interaction = mode;
        c.dilated = dilated;
        EXPECT_EQ(count_params(c), Model::init(c, 0).parameter_count());
      }
}

TEST(Model, CountsAffineInTasks) {
  for (auto mode : {Interaction::bi_scan, Interaction::fused_ss2d, Interaction::none}) {
    std::vector<std::int64_t> f, p;
    for (std::size_t t = 2; t <= 6; ++t) {
      auto c = small_config(1);
      c.interaction = mode;
      c.tasks.assign(t, c.tasks[0]);
      f.push_back(static_cast<std::int64_t>(count_flops(c, 32, 32)));
      p.push_back(static_cast<std::int64_t>(count_params(c)));
    }
    for (std::size_t i = 2; i < f.size(); ++i) {
      EXPECT_EQ(f[i] - 2 * f[i - 1] + f[i - 2], 0);
      EXPECT_EQ(p[i] - 2 * p[i - 1] + p[i - 2], 0);
    }
  }
}

TEST(Model, DilatedIsCheaper) {
  auto c = small_config(3);
  auto d = c;
  d.dilated = true;
  EXPECT_LT(count_params(d), count_params(c));
  EXPECT_LT(count_flops(d, 32, 32), count_flops(c, 32, 32));
}

TEST(Bcfr, MatchesHandComposition) {
  const auto c = small_config(2);
  const Model m = Model::init(c, 3);
  const auto& block = m.mfr[2].bcfr;  // C = 4
  Rng rng = make_rng(4);
  const auto fs = random_set(2, 4, 4, rng);
  const auto out = bcfr_forward(fs, block, Interaction::bi_scan);
  TaskFeatureSet normed{{}, fs.order};
  for (std::size_t t = 0; t < 2; ++t) normed.maps.push_back(block.norms[t](fs.maps[t]));
  const auto sh = bi_scan(normed, block.bi);
  for (std::size_t t = 0; t < 2; ++t) {
    const Tensor gate = block.gates[t](normed.maps[t]);
    for (std::size_t i = 0; i < fs.maps[t].numel(); ++i) {
      const double g = 1.0 / (1.0 + std::exp(-gate.at(i)));
      const double ref = fs.maps[t].at(i) + g * sh.maps[t].at(i) + (1.0 - g) * normed.maps[t].at(i);
      EXPECT_NEAR(out.maps[t].at(i), ref, 1e-12);
    }
  }
}

TEST(Bcfr, GateSaturationLimits) {
  const auto c = small_config(2);
  Model m = Model::init(c, 5);
  auto& block = m.mfr[2].bcfr;
  Rng rng = make_rng(6);
  const auto fs = random_set(2, 4, 4, rng);
  TaskFeatureSet normed{{}, fs.order};
  for (std::size_t t = 0; t < 2; ++t) normed.maps.push_back(block.norms[t](fs.maps[t]));
  const auto sh = bi_scan(normed, block.bi);
  for (double bias : {40.0, -40.0}) {
    for (auto& g : block.gates) {
      for (auto& w : g.weight.mutable_data()) w = 0.0;
      for (auto& b : g.bias.mutable_data()) b = bias;
    }
    const auto out = bcfr_forward(fs, block, Interaction::bi_scan);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t i = 0; i < fs.maps[t].numel(); ++i) {
        const double expect = fs.maps[t].at(i) + (bias > 0 ? sh.maps[t].at(i) : normed.maps[t].at(i));
        EXPECT_NEAR(out.maps[t].at(i), expect, 1e-6);
      }
  }
}

TEST(Bcfr, NoneIsIdentityAndFusedSharesMap) {
  const auto c = small_config(2);
  const Model m = Model::init(c, 3);
  Rng rng = make_rng(7);
  const auto fs = random_set(2, 4, 4, rng);
  const auto same = bcfr_forward(fs, m.mfr[2].bcfr, Interaction::none);
  EXPECT_EQ(same.maps[0].id(), fs.maps[0].id());
  auto cf = c;
  cf.interaction = Interaction::fused_ss2d;
  const Model mf = Model::init(cf, 3);
  EXPECT_NO_THROW(bcfr_forward(fs, mf.mfr[2].bcfr, Interaction::fused_ss2d));
}

TEST(Mfr, SingleTaskStillRuns) {
  const auto c = small_config(1);
  const Model m = Model::init(c, 1);
  Rng rng = make_rng(8);
  const auto out = model_forward(uniform_tensor({3, 32, 32}, 0, 1, rng), m);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].shape(), (Shape{3, 32, 32}));
}

TEST(Model, TaskOrderChangesCrossTaskOutputs) {
  const auto c = small_config(3);
  const Model m = Model::init(c, 1);
  Rng rng = make_rng(9);
  const Tensor img = uniform_tensor({3, 32, 32}, 0, 1, rng);
  const auto a = model_forward(img, m);
  const TaskOrder order{{2, 0, 1}};
  const auto b = model_forward(img, m, &order);
  bool differs = false;
  for (std::size_t i = 0; i < a[0].numel(); ++i) differs |= a[0].at(i) != b[0].at(i);
  EXPECT_TRUE(differs);
  const TaskOrder bad{{0, 0, 1}};
  EXPECT_THROW(model_forward(img, m, &bad), PermutationError);
}

TEST(Checkpoint, RoundTripAndMismatch) {
  const auto dir = std::filesystem::temp_directory_path() / "mtscan_test_ckpt";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "m.bin").string();
  const auto c = small_config();
  const Model a = Model::init(c, 1);
  save_checkpoint(path, a);
  Model b = Model::init(c, 2);
  load_checkpoint(path, b);
  const auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i)
    for (std::size_t k = 0; k < pa[i].numel(); ++k) EXPECT_EQ(pa[i].at(k), pb[i].at(k));
  auto wider = c;
  wider.channels = 8;
  Model w = Model::init(wider, 1);
  EXPECT_THROW(load_checkpoint(path, w), FormatError);
  {
    std::ofstream os(dir / "bad.bin", std::ios::binary);
    os << "NOTACKPT";
  }
  EXPECT_THROW(load_checkpoint((dir / "bad.bin").string(), b), FormatError);
  std::filesystem::remove_all(dir);
}

TEST(Model, EndToEndGradient) {
  auto c = small_config(2);
  const Model m = Model::init(c, 11);
  Rng rng = make_rng(12);
  const Tensor img = uniform_tensor({3, 32, 32}, 0, 1, rng);
  const Tensor w0 = normal_tensor({3, 32, 32}, 1.0, rng);
  const Tensor w1 = normal_tensor({1, 32, 32}, 1.0, rng);
  GradCheckOptions o;
  o.max_coords_per_tensor = 1;
  o.seed = 3;
  auto params = m.parameters();
  params.resize(std::min<std::size_t>(params.size(), 40));
  const double err = grad_check(
      [&] {
        const auto out = model_forward(img, m);
        return add(mean(mul(out[0], w0)), mean(mul(out[1], w1)));
      },
      params, o);
  EXPECT_LT(err, 1e-3);
}
