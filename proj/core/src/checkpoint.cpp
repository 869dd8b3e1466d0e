#include <fstream>
#include <map>
#include <string>

#include "le_io.hpp"
#include "mtscan/error.hpp"
#include "mtscan/model.hpp"

namespace mtscan {

namespace {
constexpr char kMagic[8] = {'B', 'I', 'M', 'C', 'K', 'P', 'T', '1'};
}

void save_checkpoint(const std::string& path, const Model& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open checkpoint '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  std::uint32_t count = 0;
  model.visit([&](const std::string&, const Tensor&) { ++count; });
  le::put<std::uint32_t>(os, count);
  model.visit([&](const std::string& name, const Tensor& t) {
    le::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    le::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) le::put<std::uint32_t>(os, static_cast<std::uint32_t>(e));
    for (double v : t.data()) le::put_f64(os, v);
  });
  if (!os) throw DataError("failed writing checkpoint '" + path + "'");
}

void load_checkpoint(const std::string& path, Model& model) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || !std::equal(magic, magic + 8, kMagic))
    throw FormatError("'" + path + "' is not a BIMCKPT1 checkpoint");
  const auto count = le::get<std::uint32_t>(is, "blob count");
  std::map<std::string, std::pair<Shape, std::vector<double>>> blobs;
  for (std::uint32_t b = 0; b < count; ++b) {
    const auto len = le::get<std::uint32_t>(is, "name length");
    if (len > 4096) throw FormatError("implausible blob name length");
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw FormatError("truncated blob name");
    const auto rank = le::get<std::uint32_t>(is, "rank");
    if (rank > 8) throw FormatError("implausible rank for '" + name + "'");
    Shape shape(rank);
    for (auto& e : shape) e = le::get<std::uint32_t>(is, "extent");
    std::vector<double> data(shape_numel(shape));
    for (auto& v : data) v = le::get_f64(is, "payload of '" + name + "'");
    blobs[name] = {std::move(shape), std::move(data)};
  }
  model.visit([&](const std::string& name, const Tensor& t) {
    auto it = blobs.find(name);
    if (it == blobs.end()) throw FormatError("checkpoint lacks '" + name + "'");
    if (it->second.first != t.shape())
      throw FormatError("'" + name + "' has shape " + shape_str(it->second.first) + ", model expects " +
                        shape_str(t.shape()));
    auto dst = Tensor(t).mutable_data();
    std::copy(it->second.second.begin(), it->second.second.end(), dst.begin());
  });
}

}  // namespace mtscan
