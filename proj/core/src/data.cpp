#include "mtscan/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "le_io.hpp"
#include "mtscan/error.hpp"

namespace mtscan {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Surface {
  double z, dzdu, dzdv;
};

struct Object {
  std::uint16_t cls;
  bool cap;
  double cu, cv, hu, hv, theta, z0, gu, gv, height;

  // Surface at (u, v), or nothing when outside the footprint.
  std::optional<Surface> at(double u, double v) const {
    const double du = u - cu, dv = v - cv;
    if (!cap) {
      const double c = std::cos(theta), s = std::sin(theta);
      const double a = c * du + s * dv, b = -s * du + c * dv;
      if (std::abs(a) >= hu || std::abs(b) >= hv) return std::nullopt;
      return Surface{z0 + gu * du + gv * dv, gu, gv};
    }
    const double r2 = (du * du) / (hu * hu) + (dv * dv) / (hv * hv);
    if (r2 >= 0.98) return std::nullopt;
    const double root = std::sqrt(1.0 - r2);
    return Surface{z0 - height * root, height * du / (hu * hu * root), height * dv / (hv * hv * root)};
  }
};

std::array<double, 3> class_color(std::uint16_t cls) {
  static constexpr std::array<std::array<double, 3>, 8> palette{{{0.55, 0.50, 0.42},
                                                                  {0.85, 0.25, 0.20},
                                                                  {0.20, 0.55, 0.85},
                                                                  {0.30, 0.75, 0.30},
                                                                  {0.90, 0.80, 0.20},
                                                                  {0.65, 0.30, 0.75},
                                                                  {0.20, 0.80, 0.75},
                                                                  {0.95, 0.55, 0.15}}};
  return palette[cls % palette.size()];
}

}  // namespace

SceneSample generate_scene(std::uint64_t seed, const SceneOptions& o) {
  if (o.height == 0 || o.width == 0 || o.height % 32 != 0 || o.width % 32 != 0)
    throw ConfigError("scene size " + std::to_string(o.height) + "x" + std::to_string(o.width) +
                      " must be divisible by 32");
  if (o.classes < 2 || o.classes >= kIgnoreLabel) throw ConfigError("scene needs between 2 and 65534 classes");
  Rng rng = make_rng(seed, 0x7363656e65ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  const double ground_near = uni(2.0, 3.0), ground_slope = uni(1.0, 3.0);
  std::vector<Object> objects;
  for (std::size_t i = 0; i < o.objects; ++i) {
    Object ob;
    ob.cls = static_cast<std::uint16_t>(1 + static_cast<std::size_t>(unit(rng) * static_cast<double>(o.classes - 1)) %
                                                (o.classes - 1));
    ob.cap = ob.cls % 2 == 0;
    ob.cu = uni(0.15, 0.85);
    ob.cv = uni(0.15, 0.85);
    ob.hu = uni(0.08, 0.25);
    ob.hv = uni(0.08, 0.25);
    ob.theta = uni(0.0, 3.14159265358979);
    ob.z0 = ob.cap ? uni(1.0, 2.0) : uni(0.8, 1.8);
    ob.gu = uni(-1.0, 1.0);
    ob.gv = uni(-1.0, 1.0);
    ob.height = uni(0.1, 0.5);
    objects.push_back(ob);
  }

  const std::size_t h = o.height, w = o.width, hw = h * w;
  SceneSample s;
  s.height = h;
  s.width = w;
  s.semseg.assign(hw, 0);
  s.depth.assign(hw, 0.0);
  s.normals.assign(3 * hw, 0.0);
  std::vector<double> img(3 * hw);
  const std::array<double, 3> light{0.3 / 1.1576, 0.5 / 1.1576, 1.0 / 1.1576};
  std::normal_distribution<double> noise(0.0, 0.02);

  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
      Surface best{ground_near + ground_slope * (1.0 - v), 0.0, -ground_slope};
      std::uint16_t cls = 0;
      for (const auto& ob : objects)
        if (auto sf = ob.at(u, v); sf && sf->z < best.z) {
          best = *sf;
          cls = ob.cls;
        }
      const std::size_t p = y * w + x;
      const double nx = -best.dzdu, ny = -best.dzdv, norm = std::sqrt(nx * nx + ny * ny + 1.0);
      s.semseg[p] = cls;
      s.depth[p] = best.z;
      s.normals[p] = nx / norm;
      s.normals[hw + p] = ny / norm;
      s.normals[2 * hw + p] = 1.0 / norm;
      const double shade =
          0.3 + 0.7 * std::max(0.0, (light[0] * nx + light[1] * ny + light[2]) / norm);
      const auto col = class_color(cls);
      for (std::size_t c = 0; c < 3; ++c) img[c * hw + p] = std::clamp(col[c] * shade + noise(rng), 0.0, 1.0);
    }
  s.image = Tensor::from_data({3, h, w}, std::move(img));
  s.boundary = boundary_from_labels(s.semseg, h, w);
  return s;
}

SceneSample generate_scene(std::uint64_t seed, std::size_t height, std::size_t width, std::size_t objects) {
  SceneOptions o;
  o.height = height;
  o.width = width;
  o.objects = objects;
  return generate_scene(seed, o);
}

std::vector<std::uint16_t> boundary_from_labels(const std::vector<std::uint16_t>& labels, std::size_t height,
                                                std::size_t width) {
  if (labels.size() != height * width) throw ShapeError("label map does not match its extents");
  std::vector<std::uint16_t> out(labels.size(), 0);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const std::uint16_t l = labels[y * width + x];
      const bool edge = (y > 0 && labels[(y - 1) * width + x] != l) || (y + 1 < height && labels[(y + 1) * width + x] != l) ||
                        (x > 0 && labels[y * width + x - 1] != l) || (x + 1 < width && labels[y * width + x + 1] != l);
      out[y * width + x] = edge ? 1 : 0;
    }
  return out;
}

namespace {

// Rebuilds every modality through a pixel source map; src < 0 means padding.
template <typename SrcFn>
SceneSample remap(const SceneSample& s, SrcFn src_of, bool negate_nx) {
  const std::size_t h = s.height, w = s.width, hw = h * w;
  SceneSample out;
  out.height = h;
  out.width = w;
  out.semseg.assign(hw, kIgnoreLabel);
  out.boundary.assign(hw, kIgnoreLabel);
  out.depth.assign(hw, 0.0);
  out.normals.assign(3 * hw, 0.0);
  std::vector<double> img(3 * hw, 0.0);
  const auto in = s.image.data();
  for (std::size_t p = 0; p < hw; ++p) {
    const long q = src_of(p);
    if (q < 0) continue;
    const auto sq = static_cast<std::size_t>(q);
    out.semseg[p] = s.semseg[sq];
    out.boundary[p] = s.boundary[sq];
    out.depth[p] = s.depth[sq];
    out.normals[p] = negate_nx ? -s.normals[sq] : s.normals[sq];
    out.normals[hw + p] = s.normals[hw + sq];
    out.normals[2 * hw + p] = s.normals[2 * hw + sq];
    for (std::size_t c = 0; c < 3; ++c) img[c * hw + p] = in[c * hw + sq];
  }
  out.image = Tensor::from_data({3, h, w}, std::move(img));
  return out;
}

}  // namespace

SceneSample flip_horizontal(const SceneSample& s) {
  const std::size_t w = s.width;
  return remap(
      s, [w](std::size_t p) { return static_cast<long>((p / w) * w + (w - 1 - p % w)); }, true);
}

SceneSample translate(const SceneSample& s, long dy, long dx) {
  const long h = static_cast<long>(s.height), w = static_cast<long>(s.width);
  return remap(
      s,
      [=](std::size_t p) {
        const long y = static_cast<long>(p) / w - dy, x = static_cast<long>(p) % w - dx;
        return (y < 0 || y >= h || x < 0 || x >= w) ? -1L : y * w + x;
      },
      false);
}

SceneSample augment(const SceneSample& s, const AugmentOptions& options, Rng& rng) {
  if (!options.enabled) return s;
  std::uniform_int_distribution<int> coin(0, 1);
  const long m = static_cast<long>(options.max_shift);
  std::uniform_int_distribution<long> shift(-m, m);
  const bool flip = options.flip && coin(rng) == 1;
  const long dy = shift(rng), dx = shift(rng);
  SceneSample out = flip ? flip_horizontal(s) : s;
  if (dy != 0 || dx != 0) out = translate(out, dy, dx);
  return out;
}

namespace {
constexpr char kTensorMagic[5] = {'M', 'T', 'S', 'N', '1'};
}

void write_tensor_file(const fs::path& path, const TensorFileData& d) {
  if (d.shape.empty() || shape_numel(d.shape) == 0) throw FormatError("tensor files need a non-empty extent list");
  const std::size_t n = shape_numel(d.shape);
  if ((d.dtype == TensorDType::f64 && d.f64.size() != n) || (d.dtype == TensorDType::u16 && d.u16.size() != n))
    throw FormatError("payload length does not match extents " + shape_str(d.shape));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os.write(kTensorMagic, sizeof(kTensorMagic));
  le::put<std::uint8_t>(os, static_cast<std::uint8_t>(d.dtype));
  le::put<std::uint32_t>(os, static_cast<std::uint32_t>(d.shape.size()));
  for (auto e : d.shape) le::put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
  if (d.dtype == TensorDType::f64)
    for (double v : d.f64) le::put_f64(os, v);
  else
    for (auto v : d.u16) le::put<std::uint16_t>(os, v);
  if (!os) throw DataError("failed writing '" + path.string() + "'");
}

TensorFileData read_tensor_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open tensor file '" + path.string() + "'");
  char magic[5];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 5, kTensorMagic))
    throw FormatError("'" + path.string() + "' does not start with MTSN1");
  TensorFileData d;
  const auto tag = le::get<std::uint8_t>(is, "dtype tag");
  if (tag != 1 && tag != 2) throw FormatError("unknown dtype tag " + std::to_string(tag));
  d.dtype = static_cast<TensorDType>(tag);
  const auto rank = le::get<std::uint32_t>(is, "rank");
  if (rank == 0 || rank > 8) throw FormatError("unsupported rank " + std::to_string(rank));
  d.shape.resize(rank);
  for (auto& e : d.shape) {
    e = le::get<std::uint32_t>(is, "extent");
    if (e == 0) throw FormatError("zero extent in '" + path.string() + "'");
  }
  const std::size_t n = shape_numel(d.shape);
  if (d.dtype == TensorDType::f64) {
    d.f64.resize(n);
    for (auto& v : d.f64) v = le::get_f64(is, "payload");
  } else {
    d.u16.resize(n);
    for (auto& v : d.u16) v = le::get<std::uint16_t>(is, "payload");
  }
  if (is.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes in '" + path.string() + "'");
  return d;
}

void write_tensor(const fs::path& path, const Tensor& t) {
  if (!t.defined()) throw FormatError("cannot write an undefined tensor");
  TensorFileData d;
  d.shape = t.shape();
  d.f64.assign(t.data().begin(), t.data().end());
  write_tensor_file(path, d);
}

Tensor read_tensor(const fs::path& path) {
  auto d = read_tensor_file(path);
  if (d.dtype != TensorDType::f64) throw FormatError("'" + path.string() + "' holds class ids, not float64");
  return Tensor::from_data(d.shape, std::move(d.f64));
}

void write_labels(const fs::path& path, const Shape& shape, const std::vector<std::uint16_t>& labels) {
  TensorFileData d;
  d.dtype = TensorDType::u16;
  d.shape = shape;
  d.u16 = labels;
  write_tensor_file(path, d);
}

SamplePaths save_sample(const fs::path& dir, const std::string& stem, const SceneSample& s) {
  fs::create_directories(dir);
  SamplePaths p{dir / (stem + "_image.mtsn"), dir / (stem + "_semseg.mtsn"), dir / (stem + "_depth.mtsn"),
                dir / (stem + "_normals.mtsn"), dir / (stem + "_boundary.mtsn")};
  write_tensor(p.image, s.image);
  write_labels(p.semseg, {s.height, s.width}, s.semseg);
  write_tensor(p.depth, Tensor::from_data({s.height, s.width}, s.depth));
  write_tensor(p.normals, Tensor::from_data({3, s.height, s.width}, s.normals));
  write_labels(p.boundary, {s.height, s.width}, s.boundary);
  return p;
}

SceneSample load_sample(const SamplePaths& paths) {
  for (const auto* f : {&paths.image, &paths.semseg, &paths.depth, &paths.normals, &paths.boundary})
    if (!fs::exists(*f)) throw DataError("sample file '" + f->string() + "' is missing");
  SceneSample s;
  s.image = read_tensor(paths.image);
  if (s.image.rank() != 3 || s.image.dim(0) != 3) throw DataError("image must be 3 x H x W");
  s.height = s.image.dim(1);
  s.width = s.image.dim(2);
  const Shape plane{s.height, s.width};
  auto labels = [&](const fs::path& p) {
    auto d = read_tensor_file(p);
    if (d.dtype != TensorDType::u16 || d.shape != plane) throw DataError("'" + p.string() + "' is not an H x W id map");
    return d.u16;
  };
  s.semseg = labels(paths.semseg);
  s.boundary = labels(paths.boundary);
  const Tensor depth = read_tensor(paths.depth);
  const Tensor normals = read_tensor(paths.normals);
  if (depth.shape() != plane || normals.shape() != Shape{3, s.height, s.width})
    throw DataError("depth / normals extents disagree with the image");
  s.depth.assign(depth.data().begin(), depth.data().end());
  s.normals.assign(normals.data().begin(), normals.data().end());
  return s;
}

Manifest Manifest::parse(const std::string& text, const fs::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("manifest must be a JSON object");
  Manifest m;
  try {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (it.key() != "generator" && it.key() != "samples") throw ConfigError("manifest: unknown key '" + it.key() + "'");
    if (j.contains("generator") == j.contains("samples"))
      throw ConfigError("manifest needs exactly one of 'generator' or 'samples'");
    if (j.contains("generator")) {
      const auto& g = j.at("generator");
      GeneratorSpec spec;
      for (auto it = g.begin(); it != g.end(); ++it) {
        const auto& k = it.key();
        if (k == "seed") spec.seed = it->get<std::uint64_t>();
        else if (k == "count") spec.count = it->get<std::size_t>();
        else if (k == "height") spec.scene.height = it->get<std::size_t>();
        else if (k == "width") spec.scene.width = it->get<std::size_t>();
        else if (k == "objects") spec.scene.objects = it->get<std::size_t>();
        else if (k == "classes") spec.scene.classes = it->get<std::size_t>();
        else throw ConfigError("manifest generator: unknown key '" + k + "'");
      }
      m.generator = spec;
    } else {
      for (const auto& e : j.at("samples")) {
        auto path = [&](const char* key) { return base / e.at(key).get<std::string>(); };
        m.samples.push_back({path("image"), path("semseg"), path("depth"), path("normals"), path("boundary")});
      }
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  return m;
}

Manifest Manifest::load(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open manifest '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse(ss.str(), path.parent_path());
}

std::string Manifest::to_json() const {
  json j;
  if (generator) {
    j["generator"] = {{"seed", generator->seed},
                      {"count", generator->count},
                      {"height", generator->scene.height},
                      {"width", generator->scene.width},
                      {"objects", generator->scene.objects},
                      {"classes", generator->scene.classes}};
  } else {
    j["samples"] = json::array();
    for (const auto& s : samples)
      j["samples"].push_back({{"image", s.image.string()},
                              {"semseg", s.semseg.string()},
                              {"depth", s.depth.string()},
                              {"normals", s.normals.string()},
                              {"boundary", s.boundary.string()}});
  }
  return j.dump(2);
}

Dataset Dataset::generated(const GeneratorSpec& spec) {
  Dataset d;
  d.classes_ = spec.scene.classes;
  for (std::size_t i = 0; i < spec.count; ++i) d.samples_.push_back(generate_scene(spec.seed + i, spec.scene));
  return d;
}

Dataset Dataset::from_manifest(const Manifest& manifest) {
  if (manifest.generator) return generated(*manifest.generator);
  if (manifest.samples.empty()) throw DataError("manifest lists no samples");
  Dataset d;
  for (const auto& p : manifest.samples) {
    d.samples_.push_back(load_sample(p));
    for (auto l : d.samples_.back().semseg)
      if (l != kIgnoreLabel) d.classes_ = std::max<std::size_t>(d.classes_, l + 1u);
  }
  return d;
}

BatchIterator::BatchIterator(const Dataset& data, std::size_t batch, std::uint64_t seed, AugmentOptions augment)
    : data_(&data), batch_(batch), seed_(seed), augment_(augment), aug_rng_(make_rng(seed, 0x61756700ULL)) {
  if (batch == 0) throw ConfigError("batch size must be positive");
  if (data.size() == 0) throw DataError("dataset is empty");
  reshuffle();
}

void BatchIterator::reshuffle() {
  order_.resize(data_->size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng rng = make_rng(seed_, 0x7368756600ULL + epoch_);
  std::shuffle(order_.begin(), order_.end(), rng);
  cursor_ = 0;
}

std::vector<SceneSample> BatchIterator::next() {
  std::vector<SceneSample> out;
  while (out.size() < batch_) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      reshuffle();
    }
    out.push_back(augment(data_->at(order_[cursor_++]), augment_, aug_rng_));
  }
  return out;
}

}  // namespace mtscan
