#include "run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "mtscan/error.hpp"

namespace mtscan::cli {

using json = nlohmann::json;

RunConfig::RunConfig() {
  model.tasks = default_tasks(5);
  GeneratorSpec tr;
  tr.seed = 1000;
  tr.count = 256;
  train_data.generator = tr;
  GeneratorSpec va;
  va.seed = 900000;
  va.count = 64;
  val_data.generator = va;
}

namespace {

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<long>(offset), '\n'));
}

class Reader {
 public:
  explicit Reader(const std::string& text) : text_(text) {}

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    const auto pos = text_.find("\"" + key + "\"");
    std::string where = pos == std::string::npos ? "" : "line " + std::to_string(line_of_offset(text_, pos)) + ": ";
    throw ConfigError("config " + where + msg);
  }

  void allow(const json& obj, const std::string& section, std::initializer_list<const char*> keys) const {
    if (!obj.is_object()) fail(section, "'" + section + "' must be an object");
    const std::set<std::string> ok(keys.begin(), keys.end());
    for (auto it = obj.begin(); it != obj.end(); ++it)
      if (!ok.count(it.key())) fail(it.key(), "unknown key '" + it.key() + "' in '" + section + "'");
  }

  template <typename T>
  void get(const json& obj, const char* key, T& out) const {
    if (!obj.contains(key)) return;
    try {
      out = obj.at(key).get<T>();
    } catch (const json::exception& e) {
      fail(key, "bad value for '" + std::string(key) + "': " + e.what());
    }
  }

 private:
  const std::string& text_;
};

Manifest read_manifest(const Reader& r, const json& j, const std::string& section, const std::filesystem::path& base) {
  if (j.is_string()) return Manifest::load(base / j.get<std::string>());
  if (!j.is_object()) r.fail(section, "'" + section + "' must be a manifest object or a manifest path");
  try {
    return Manifest::parse(j.dump(), base);
  } catch (const ConfigError& e) {
    r.fail(section, e.what());
  }
}

void read_model(const Reader& r, const json& m, ModelConfig& cfg) {
  r.allow(m, "model",
          {"in_channels", "channels", "partition", "state", "head_channels", "mfr_scales", "dilated", "interaction",
           "bi_scan", "task_order"});
  r.get(m, "in_channels", cfg.in_channels);
  r.get(m, "channels", cfg.channels);
  r.get(m, "partition", cfg.partition);
  r.get(m, "state", cfg.state);
  r.get(m, "head_channels", cfg.head_channels);
  r.get(m, "dilated", cfg.dilated);
  r.get(m, "task_order", cfg.task_order);
  if (m.contains("mfr_scales")) {
    std::vector<std::vector<std::size_t>> scales;
    r.get(m, "mfr_scales", scales);
    if (scales.size() != 3) r.fail("mfr_scales", "'mfr_scales' needs exactly three lists");
    for (std::size_t i = 0; i < 3; ++i) cfg.mfr_scales[i] = scales[i];
  }
  if (m.contains("interaction")) {
    std::string s;
    r.get(m, "interaction", s);
    try {
      cfg.interaction = parse_interaction(s);
    } catch (const ConfigError& e) {
      r.fail("interaction", e.what());
    }
  }
  if (m.contains("bi_scan")) {
    const json& b = m.at("bi_scan");
    r.allow(b, "bi_scan", {"mode_order", "bidirectional", "patterns", "scale_patterns"});
    r.get(b, "bidirectional", cfg.bi_scan.bidirectional);
    r.get(b, "scale_patterns", cfg.scale_patterns);
    if (b.contains("mode_order")) {
      std::string s;
      r.get(b, "mode_order", s);
      try {
        cfg.bi_scan.mode_order = parse_mode_order(s);
      } catch (const ConfigError& e) {
        r.fail("mode_order", e.what());
      }
    }
    if (b.contains("patterns")) {
      std::vector<std::string> names;
      r.get(b, "patterns", names);
      cfg.bi_scan.patterns.clear();
      for (const auto& n : names) {
        try {
          cfg.bi_scan.patterns.push_back({parse_direction(n), 1});
        } catch (const Error& e) {
          r.fail("patterns", e.what());
        }
      }
    }
  }
}

void read_tasks(const Reader& r, const json& arr, std::vector<TaskSpec>& tasks) {
  if (!arr.is_array()) r.fail("tasks", "'tasks' must be an array");
  tasks.clear();
  for (const auto& t : arr) {
    r.allow(t, "tasks", {"name", "kind", "out_channels", "loss", "weight", "classes", "class_weights"});
    std::string kind_name;
    r.get(t, "kind", kind_name);
    if (kind_name.empty()) r.fail("kind", "every task needs a 'kind'");
    TaskKind kind;
    try {
      kind = parse_task_kind(kind_name);
    } catch (const ConfigError& e) {
      r.fail("kind", e.what());
    }
    std::size_t classes = 5;
    r.get(t, "classes", classes);
    TaskSpec spec = TaskSpec::standard(kind, classes);
    r.get(t, "name", spec.name);
    r.get(t, "out_channels", spec.out_channels);
    r.get(t, "weight", spec.weight);
    r.get(t, "class_weights", spec.class_weights);
    if (t.contains("loss")) {
      std::string s;
      r.get(t, "loss", s);
      try {
        spec.loss = parse_loss_kind(s);
      } catch (const ConfigError& e) {
        r.fail("loss", e.what());
      }
    }
    tasks.push_back(spec);
  }
}

void read_train(const Reader& r, const json& j, TrainOptions& o) {
  r.allow(j, "train",
          {"iterations", "batch", "lr", "weight_decay", "poly_power", "eval_every", "augment", "random_task_order",
           "seed"});
  r.get(j, "iterations", o.iterations);
  r.get(j, "batch", o.batch);
  r.get(j, "lr", o.lr);
  r.get(j, "weight_decay", o.adam.weight_decay);
  r.get(j, "poly_power", o.poly_power);
  r.get(j, "eval_every", o.eval_every);
  r.get(j, "random_task_order", o.random_task_order);
  r.get(j, "seed", o.seed);
  if (j.contains("augment")) {
    const json& a = j.at("augment");
    r.allow(a, "augment", {"enabled", "flip", "max_shift"});
    r.get(a, "enabled", o.augment.enabled);
    r.get(a, "flip", o.augment.flip);
    r.get(a, "max_shift", o.augment.max_shift);
  }
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::filesystem::path& base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config line " + std::to_string(line_of_offset(text, e.byte == 0 ? 0 : e.byte - 1)) +
                      ": syntax error: " + e.what());
  }
  Reader r(text);
  RunConfig cfg;
  r.allow(j, "config", {"model", "tasks", "data", "train", "ablation"});
  if (j.contains("model")) read_model(r, j.at("model"), cfg.model);
  if (j.contains("tasks")) read_tasks(r, j.at("tasks"), cfg.model.tasks);
  if (j.contains("data")) {
    const json& d = j.at("data");
    r.allow(d, "data", {"train", "val"});
    if (d.contains("train")) cfg.train_data = read_manifest(r, d.at("train"), "train", base);
    if (d.contains("val")) cfg.val_data = read_manifest(r, d.at("val"), "val", base);
  }
  if (j.contains("train")) read_train(r, j.at("train"), cfg.train);
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    r.allow(a, "ablation", {"seeds"});
    r.get(a, "seeds", cfg.ablation_seeds);
  }
  try {
    cfg.model.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config '" + path.string() + "'");
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_run_config(ss.str(), path.parent_path());
}

std::string dump_run_config(const RunConfig& cfg) {
  const ModelConfig& m = cfg.model;
  json j;
  std::vector<std::string> patterns;
  for (const auto& p : m.bi_scan.patterns) patterns.push_back(to_string(p.direction));
  j["model"] = {{"in_channels", m.in_channels},
                {"channels", m.channels},
                {"partition", m.partition},
                {"state", m.state},
                {"head_channels", m.head_channels},
                {"mfr_scales", {m.mfr_scales[0], m.mfr_scales[1], m.mfr_scales[2]}},
                {"dilated", m.dilated},
                {"interaction", to_string(m.interaction)},
                {"bi_scan",
                 {{"mode_order", to_string(m.bi_scan.mode_order)},
                  {"bidirectional", m.bi_scan.bidirectional},
                  {"patterns", patterns},
                  {"scale_patterns", m.scale_patterns}}},
                {"task_order", m.task_order}};
  j["tasks"] = json::array();
  for (const auto& t : m.tasks)
    j["tasks"].push_back({{"name", t.name},
                          {"kind", to_string(t.kind)},
                          {"out_channels", t.out_channels},
                          {"loss", to_string(t.loss)},
                          {"weight", t.weight},
                          {"class_weights", t.class_weights}});
  j["data"] = {{"train", json::parse(cfg.train_data.to_json())}, {"val", json::parse(cfg.val_data.to_json())}};
  const TrainOptions& o = cfg.train;
  j["train"] = {{"iterations", o.iterations},
                {"batch", o.batch},
                {"lr", o.lr},
                {"weight_decay", o.adam.weight_decay},
                {"poly_power", o.poly_power},
                {"eval_every", o.eval_every},
                {"augment", {{"enabled", o.augment.enabled}, {"flip", o.augment.flip}, {"max_shift", o.augment.max_shift}}},
                {"random_task_order", o.random_task_order},
                {"seed", o.seed}};
  j["ablation"] = {{"seeds", cfg.ablation_seeds}};
  return j.dump(2) + "\n";
}

}  // namespace mtscan::cli
