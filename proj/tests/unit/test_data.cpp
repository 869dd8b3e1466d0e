#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "mtscan/data.hpp"
#include "mtscan/error.hpp"
#include "oracles.hpp"

using namespace mtscan;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("mtscan_test_data_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void expect_same(const SceneSample& a, const SceneSample& b) {
  ASSERT_EQ(a.height, b.height);
  ASSERT_EQ(a.width, b.width);
  EXPECT_EQ(a.semseg, b.semseg);
  EXPECT_EQ(a.boundary, b.boundary);
  EXPECT_EQ(a.depth, b.depth);
  EXPECT_EQ(a.normals, b.normals);
  for (std::size_t i = 0; i < a.image.numel(); ++i) ASSERT_EQ(a.image.at(i), b.image.at(i));
}

void expect_unit_normals(const SceneSample& s) {
  const std::size_t hw = s.height * s.width;
  for (std::size_t p = 0; p < hw; ++p) {
    const double x = s.normals[p], y = s.normals[hw + p], z = s.normals[2 * hw + p];
    const double n = std::sqrt(x * x + y * y + z * z);
    if (n != 0.0) {
      EXPECT_NEAR(n, 1.0, 1e-6);
    }
  }
}

}  // namespace

TEST(Scene, Deterministic) {
  expect_same(generate_scene(42, 64, 64, 4), generate_scene(42, 64, 64, 4));
  EXPECT_NE(generate_scene(42, 64, 64, 4).depth, generate_scene(43, 64, 64, 4).depth);
}

TEST(Scene, GroundPlaneOnly) {
  const SceneSample s = generate_scene(5, 32, 64, 0);
  for (auto l : s.semseg) EXPECT_EQ(l, 0);
  for (auto b : s.boundary) EXPECT_EQ(b, 0);
  const std::size_t hw = 32 * 64;
  // constant normal; depth steps by the same amount every row
  for (std::size_t p = 1; p < hw; ++p)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(s.normals[c * hw + p], s.normals[c * hw], 1e-12);
  const double step = s.depth[64] - s.depth[0];
  for (std::size_t y = 1; y < 32; ++y)
    for (std::size_t x = 0; x < 64; ++x) EXPECT_NEAR(s.depth[y * 64 + x] - s.depth[(y - 1) * 64 + x], step, 1e-12);
  // z = a + b (1 - v) has normal (0, b, 1) / |.|, with b = -step * H
  const double b = -step * 32.0;
  EXPECT_NEAR(s.normals[hw], b / std::sqrt(b * b + 1.0), 1e-12);
  EXPECT_NEAR(s.normals[0], 0.0, 1e-12);
}

TEST(Scene, BoundaryIsLabelChangeMask) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SceneSample s = generate_scene(seed, 64, 64, 5);
    EXPECT_EQ(s.boundary, oracle::label_change_mask(s.semseg, 64, 64));
  }
}

TEST(Scene, LabelsAndRanges) {
  SceneOptions o;
  o.classes = 7;
  o.objects = 6;
  const SceneSample s = generate_scene(9, o);
  for (auto l : s.semseg) EXPECT_LT(l, 7);
  for (double d : s.depth) EXPECT_GT(d, 0.0);
  for (double v : s.image.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  expect_unit_normals(s);
}

TEST(Scene, DepthAgreesWithNormals) {
  // inside a region, integrating the slope read off the normals
  // (dz/du = -n_x / n_z) across two pixels reproduces the depth change
  const SceneSample s = generate_scene(17, 64, 64, 3);
  const std::size_t w = 64, hw = 64 * 64;
  auto su = [&](std::size_t p) { return -s.normals[p] / s.normals[2 * hw + p]; };
  auto sv = [&](std::size_t p) { return -s.normals[hw + p] / s.normals[2 * hw + p]; };
  std::size_t checked = 0;
  double worst = 0.0;
  for (std::size_t y = 2; y + 2 < 64; ++y)
    for (std::size_t x = 2; x + 2 < 64; ++x) {
      const std::size_t p = y * w + x;
      bool inside = true;
      for (long dy = -2; dy <= 2; ++dy)
        for (long dx = -2; dx <= 2; ++dx) inside = inside && s.semseg[p + dy * 64 + dx] == s.semseg[p];
      if (!inside) continue;
      // Simpson over [p-1, p+1], step 1/64
      const double iu = (su(p - 1) + 4.0 * su(p) + su(p + 1)) / 6.0 * (2.0 / 64.0);
      const double iv = (sv(p - w) + 4.0 * sv(p) + sv(p + w)) / 6.0 * (2.0 / 64.0);
      worst = std::max({worst, std::abs(iu - (s.depth[p + 1] - s.depth[p - 1])),
                        std::abs(iv - (s.depth[p + w] - s.depth[p - w]))});
      ++checked;
    }
  EXPECT_GT(checked, 1000u);
  // steps are ~0.1; the residue is quadrature error near steep cap rims
  EXPECT_LT(worst, 1e-3);
}

TEST(Scene, RejectsBadSizes) {
  EXPECT_THROW(generate_scene(0, 48, 64, 1), ConfigError);
  SceneOptions o;
  o.classes = 1;
  EXPECT_THROW(generate_scene(0, o), ConfigError);
}

TEST(Augment, FlipIsInvolution) {
  const SceneSample s = generate_scene(3, 32, 32, 4);
  const SceneSample f = flip_horizontal(s);
  EXPECT_EQ(f.semseg[5], s.semseg[31 - 5]);
  EXPECT_EQ(f.normals[7], -s.normals[31 - 7]);
  expect_same(flip_horizontal(f), s);
  expect_unit_normals(f);
  EXPECT_EQ(f.boundary, oracle::label_change_mask(f.semseg, 32, 32));
}

TEST(Augment, TranslateKeepsLabelsConsistent) {
  const SceneSample s = generate_scene(4, 32, 32, 5);
  for (auto [dy, dx] : {std::pair<long, long>{3, -2}, {-4, 4}, {0, 1}}) {
    const SceneSample t = translate(s, dy, dx);
    expect_unit_normals(t);
    // away from the padded ring the recomputed mask agrees with the moved one
    const auto mask = oracle::label_change_mask(t.semseg, 32, 32);
    for (long y = 0; y < 32; ++y)
      for (long x = 0; x < 32; ++x) {
        const long sy = y - dy, sx = x - dx;
        const std::size_t p = static_cast<std::size_t>(y * 32 + x);
        if (sy < 0 || sy >= 32 || sx < 0 || sx >= 32) {
          EXPECT_EQ(t.semseg[p], kIgnoreLabel);
          EXPECT_EQ(t.depth[p], 0.0);
          continue;
        }
        auto inside = [&](long yy, long xx) {
          return yy >= 0 && yy < 32 && xx >= 0 && xx < 32 && yy - dy >= 0 && yy - dy < 32 && xx - dx >= 0 &&
                 xx - dx < 32;
        };
        const bool ring = !(inside(y - 1, x) && inside(y + 1, x) && inside(y, x - 1) && inside(y, x + 1));
        if (!ring) {
          EXPECT_EQ(t.boundary[p], mask[p]) << y << "," << x;
        }
        EXPECT_EQ(t.depth[p], s.depth[static_cast<std::size_t>(sy * 32 + sx)]);
      }
  }
}

TEST(Augment, RandomAugmentKeepsUnitNormals) {
  const SceneSample s = generate_scene(6, 32, 32, 4);
  Rng rng = make_rng(1);
  AugmentOptions o;
  for (int i = 0; i < 10; ++i) expect_unit_normals(augment(s, o, rng));
  o.enabled = false;
  expect_same(augment(s, o, rng), s);
}

TEST(TensorFile, RoundTripIsBitExact) {
  const fs::path d = scratch_dir("roundtrip");
  Rng rng = make_rng(2);
  std::vector<double> v(48);
  std::normal_distribution<double> nd(0.0, 1e3);
  for (auto& e : v) e = nd(rng);
  v[0] = -0.0;
  v[1] = 1e-310;
  const Tensor t = Tensor::from_data({3, 4, 4}, v);
  write_tensor(d / "t.mtsn", t);
  const Tensor back = read_tensor(d / "t.mtsn");
  EXPECT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < 48; ++i) EXPECT_EQ(std::memcmp(&v[i], &back.data()[i], sizeof(double)), 0);
  EXPECT_EQ(fs::file_size(d / "t.mtsn"), 5u + 1u + 4u + 3u * 4u + 48u * 8u);

  const std::vector<std::uint16_t> ids{0, 1, 65535, 7};
  write_labels(d / "l.mtsn", {2, 2}, ids);
  const auto l = read_tensor_file(d / "l.mtsn");
  EXPECT_EQ(l.dtype, TensorDType::u16);
  EXPECT_EQ(l.u16, ids);
  EXPECT_THROW(read_tensor(d / "l.mtsn"), FormatError);
}

TEST(TensorFile, Rejections) {
  const fs::path d = scratch_dir("reject");
  TensorFileData empty;
  empty.shape = {3, 0};
  EXPECT_THROW(write_tensor_file(d / "e.mtsn", empty), FormatError);
  TensorFileData short_payload;
  short_payload.shape = {2};
  short_payload.f64 = {1.0};
  EXPECT_THROW(write_tensor_file(d / "s.mtsn", short_payload), FormatError);

  write_tensor(d / "ok.mtsn", Tensor::from_data({2}, {1.0, 2.0}));
  std::string bytes;
  {
    std::ifstream is(d / "ok.mtsn", std::ios::binary);
    bytes.assign(std::istreambuf_iterator<char>(is), {});
  }
  auto put = [&](const fs::path& p, const std::string& b) {
    std::ofstream os(p, std::ios::binary);
    os << b;
  };
  std::string bad = bytes;
  bad[0] = 'X';
  put(d / "magic.mtsn", bad);
  EXPECT_THROW(read_tensor(d / "magic.mtsn"), FormatError);
  put(d / "trunc.mtsn", bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_tensor(d / "trunc.mtsn"), FormatError);
  put(d / "trail.mtsn", bytes + "z");
  EXPECT_THROW(read_tensor(d / "trail.mtsn"), FormatError);
  bad = bytes;
  bad[5] = 9;
  put(d / "tag.mtsn", bad);
  EXPECT_THROW(read_tensor(d / "tag.mtsn"), FormatError);
  EXPECT_THROW(read_tensor(d / "absent.mtsn"), DataError);
}

TEST(Manifest, SamplesRoundTripThroughFiles) {
  const fs::path d = scratch_dir("manifest");
  const SceneSample a = generate_scene(1, 32, 32, 2), b = generate_scene(2, 32, 32, 3);
  Manifest m;
  m.samples.push_back(save_sample(d, "a", a));
  m.samples.push_back(save_sample(d, "b", b));
  {
    std::ofstream os(d / "manifest.json");
    os << m.to_json();
  }
  const Dataset ds = Dataset::from_manifest(Manifest::load(d / "manifest.json"));
  ASSERT_EQ(ds.size(), 2u);
  expect_same(ds.at(0), a);
  expect_same(ds.at(1), b);

  fs::remove(d / "b_depth.mtsn");
  EXPECT_THROW(Dataset::from_manifest(Manifest::load(d / "manifest.json")), DataError);
}

TEST(Manifest, GeneratorAndErrors) {
  const auto m = Manifest::parse(R"({"generator": {"seed": 5, "count": 3, "height": 32, "width": 32}})", ".");
  ASSERT_TRUE(m.generator.has_value());
  const Dataset ds = Dataset::from_manifest(m);
  EXPECT_EQ(ds.size(), 3u);
  expect_same(ds.at(1), generate_scene(6, m.generator->scene));
  EXPECT_EQ(Manifest::parse(m.to_json(), ".").to_json(), m.to_json());
  EXPECT_THROW(Manifest::parse("{", "."), ConfigError);
  EXPECT_THROW(Manifest::parse(R"({"generator": {"sead": 1}})", "."), ConfigError);
  EXPECT_THROW(Manifest::parse(R"({"generator": {}, "samples": []})", "."), ConfigError);
  EXPECT_THROW(Manifest::parse(R"({"samples": [{"image": "x"}]})", "."), ConfigError);
  EXPECT_THROW(Manifest::load("/nonexistent/manifest.json"), DataError);
}

TEST(Batches, ShuffledPerEpochAndDeterministic) {
  GeneratorSpec g;
  g.count = 5;
  g.scene.height = g.scene.width = 32;
  g.scene.objects = 1;
  const Dataset ds = Dataset::generated(g);
  AugmentOptions off;
  off.enabled = false;
  BatchIterator a(ds, 2, 3, off), b(ds, 2, 3, off);
  std::vector<double> seen;
  for (int i = 0; i < 5; ++i) {
    const auto ba = a.next(), bb = b.next();
    ASSERT_EQ(ba.size(), 2u);
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(ba[k].depth, bb[k].depth);
      seen.push_back(ba[k].depth[0]);
    }
  }
  EXPECT_EQ(a.epoch(), 1u);
  // the first epoch visits every sample once
  std::vector<double> first(seen.begin(), seen.begin() + 5), all;
  for (std::size_t i = 0; i < 5; ++i) all.push_back(ds.at(i).depth[0]);
  std::sort(first.begin(), first.end());
  std::sort(all.begin(), all.end());
  EXPECT_EQ(first, all);
  EXPECT_THROW(BatchIterator(ds, 0, 0, off), ConfigError);
}
