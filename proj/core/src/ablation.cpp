#include "mtscan/ablation.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cstdio>
#include <exception>
#include <functional>
#include <thread>

#include "mtscan/error.hpp"

namespace mtscan {

namespace {
constexpr AblationKind kKinds[] = {AblationKind::task_order, AblationKind::scan_scale, AblationKind::scan_number,
                                   AblationKind::uni_vs_bi,  AblationKind::mode_order, AblationKind::components};

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}
}  // namespace

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  workers = std::clamp<std::size_t>(workers, 1, std::max<std::size_t>(n, 1));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto loop = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(loop);
  loop();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::string to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::task_order: return "task_order";
    case AblationKind::scan_scale: return "scan_scale";
    case AblationKind::scan_number: return "scan_number";
    case AblationKind::uni_vs_bi: return "uni_vs_bi";
    case AblationKind::mode_order: return "mode_order";
    case AblationKind::components: return "components";
  }
  return "?";
}

AblationKind parse_ablation_kind(const std::string& name) {
  for (auto k : kKinds)
    if (to_string(k) == name) return k;
  throw UsageError("unsupported ablation '" + name + "'");
}

ModelConfig stl_config(const ModelConfig& base, std::size_t task) {
  ModelConfig c = base;
  c.tasks = {base.tasks.at(task)};
  c.interaction = Interaction::none;
  c.mfr_scales = {{{1}, {1}, {1}}};
  c.task_order.clear();
  return c;
}

ModelConfig mtl_config(const ModelConfig& base) {
  ModelConfig c = base;
  c.interaction = Interaction::none;
  c.mfr_scales = {{{1}, {1}, {1}}};
  return c;
}

namespace {

std::vector<AblationArm> raw_arms(AblationKind kind, const ModelConfig& base) {
  std::vector<AblationArm> arms;
  auto arm = [&](std::string name, auto edit) {
    AblationArm a{std::move(name), base, false, false};
    edit(a.config);
    arms.push_back(std::move(a));
  };
  const std::array<std::vector<std::size_t>, 3> plain{{{1}, {1}, {1}}};
  switch (kind) {
    case AblationKind::components:
      arms.push_back({"STL", base, false, true});
      arms.push_back({"MTL", mtl_config(base), false, false});
      arm("Baseline", [&](ModelConfig& c) {
        c.interaction = Interaction::fused_ss2d;
        c.mfr_scales = plain;
      });
      arm("BI-Scan", [&](ModelConfig& c) {
        c.interaction = Interaction::bi_scan;
        c.mfr_scales = plain;
      });
      arm("MS-Scan", [&](ModelConfig& c) { c.interaction = Interaction::fused_ss2d; });
      arm("BIM", [&](ModelConfig& c) { c.interaction = Interaction::bi_scan; });
      break;
    case AblationKind::task_order: {
      auto index_of = [&](TaskKind k) {
        for (std::size_t t = 0; t < base.tasks.size(); ++t)
          if (base.tasks[t].kind == k) return t;
        throw ConfigError("task_order ablation needs semseg, depth, normals and boundary tasks");
      };
      if (base.tasks.size() != 4) throw ConfigError("task_order ablation needs exactly four tasks");
      const auto s = index_of(TaskKind::semseg), d = index_of(TaskKind::depth), n = index_of(TaskKind::normals),
                 b = index_of(TaskKind::boundary);
      const std::vector<std::pair<std::string, std::vector<std::size_t>>> orders{
          {"S-D-N-B", {s, d, n, b}}, {"N-S-D-B", {n, s, d, b}}, {"B-S-D-N", {b, s, d, n}}, {"S-N-D-B", {s, n, d, b}}};
      for (const auto& [name, perm] : orders) arm(name, [&](ModelConfig& c) { c.task_order = perm; });
      arm("Random", [](ModelConfig& c) { c.task_order.clear(); });
      arms.back().random_order = true;
      break;
    }
    case AblationKind::scan_scale:
      for (std::size_t s : {2, 3, 4})
        arm("{1," + std::to_string(s) + "}", [&](ModelConfig& c) { c.mfr_scales = {{{1, s}, {1, s}, {1, s}}}; });
      break;
    case AblationKind::scan_number:
      arm("Type 1", [&](ModelConfig& c) { c.mfr_scales = plain; });
      arm("Type 2", [](ModelConfig& c) { c.mfr_scales = {{{1, 4}, {1, 4}, {1, 4}}}; });
      arm("Type 3", [](ModelConfig& c) { c.mfr_scales = {{{1, 2}, {1, 2, 4}, {1, 2, 4, 6}}}; });
      break;
    case AblationKind::uni_vs_bi:
      arm("Uni", [](ModelConfig& c) { c.bi_scan.bidirectional = false; });
      arm("Bi", [](ModelConfig& c) { c.bi_scan.bidirectional = true; });
      break;
    case AblationKind::mode_order:
      for (auto m : {ModeOrder::tf_only, ModeOrder::pf_only, ModeOrder::tf_then_pf, ModeOrder::pf_then_tf})
        arm(to_string(m), [m](ModelConfig& c) { c.bi_scan.mode_order = m; });
      break;
  }
  return arms;
}

bool all_valid(const std::vector<AblationArm>& arms) {
  try {
    for (const auto& a : arms) a.config.validate();
  } catch (const ConfigError&) {
    return false;
  }
  return true;
}

}  // namespace

std::vector<AblationArm> ablation_arms(AblationKind kind, const ModelConfig& base) {
  base.validate();
  for (std::size_t c = base.channels; c <= 64 * base.channels; c += 2) {
    ModelConfig widened = base;
    widened.channels = c;
    auto arms = raw_arms(kind, widened);
    if (all_valid(arms)) return arms;
  }
  throw ConfigError("no channel width satisfies every arm of the " + to_string(kind) + " ablation");
}

std::size_t smallest_valid_size(const std::vector<AblationArm>& arms, std::size_t at_least) {
  if (arms.empty()) throw ConfigError("no ablation arms");
  const std::size_t unit = 8 * arms.front().config.partition;
  for (std::size_t size = std::max(unit, (at_least + unit - 1) / unit * unit); size <= 64 * unit * 64; size += unit) {
    bool ok = true;
    for (const auto& a : arms) {
      try {
        a.config.validate_input(size, size);
      } catch (const ConfigError&) {
        ok = false;
        break;
      }
    }
    if (ok) return size;
  }
  throw ConfigError("no input size satisfies every ablation arm");
}

MetricReport train_stl_reference(const ModelConfig& base, const Dataset& train_data, const Dataset& val_data,
                                 const TrainOptions& options, std::size_t workers) {
  MetricReport ref;
  ref.values.resize(base.tasks.size());
  parallel_for(base.tasks.size(), workers, [&](std::size_t t) {
    TrainOptions o = options;
    o.random_task_order = false;
    const auto r = train(stl_config(base, t), train_data, val_data, o);
    ref.values[t] = r.final_eval.report.values.at(0);
  });
  return ref;
}

AblationTable run_ablation(AblationKind kind, const ModelConfig& base, const Dataset& train_data,
                           const Dataset& val_data, const AblationOptions& options) {
  if (options.seeds.empty()) throw ConfigError("an ablation needs at least one seed");
  if (train_data.size() == 0 || val_data.size() == 0) throw DataError("ablation needs training and validation data");
  const auto arms = ablation_arms(kind, base);
  const std::size_t h = train_data.at(0).height, w = train_data.at(0).width;
  for (const auto& a : arms) a.config.validate_input(h, w);

  AblationTable table;
  table.kind = kind;
  const ModelConfig& fitted = arms.front().config;
  for (const auto& t : fitted.tasks) table.tasks.push_back(t.name);

  TrainOptions ref_opts = options.train;
  ref_opts.seed = options.seeds.front();
  const MetricReport stl = train_stl_reference(fitted, train_data, val_data, ref_opts, options.workers);

  // one job per (arm, seed); results land in fixed slots so the table is
  // independent of scheduling
  std::vector<std::pair<std::size_t, std::size_t>> jobs;
  for (std::size_t a = 0; a < arms.size(); ++a)
    if (!arms[a].stl)
      for (std::size_t k = 0; k < options.seeds.size(); ++k) jobs.emplace_back(a, k);
  std::vector<Evaluation> evals(jobs.size());
  std::vector<double> gains_by_job(jobs.size());
  parallel_for(jobs.size(), options.workers, [&](std::size_t j) {
    const auto& a = arms[jobs[j].first];
    TrainOptions o = options.train;
    o.seed = options.seeds[jobs[j].second];
    o.random_task_order = a.random_order;
    auto r = train(a.config, train_data, val_data, o, &stl);
    gains_by_job[j] = mtl_gain(r.final_eval.report, stl);
    evals[j] = std::move(r.final_eval);
  });

  std::size_t j = 0;
  for (const auto& a : arms) {
    AblationRow row;
    row.arm = a.name;
    if (a.stl) {
      row.report = stl;
      for (std::size_t t = 0; t < fitted.tasks.size(); ++t) {
        row.flops += count_flops(stl_config(fitted, t), h, w);
        row.params += count_params(stl_config(fitted, t));
      }
      row.val_loss = 0.0;
      table.rows.push_back(std::move(row));
      continue;
    }
    row.flops = count_flops(a.config, h, w);
    row.params = count_params(a.config);
    for (std::size_t k = 0; k < options.seeds.size(); ++k, ++j) {
      const auto& rep = evals[j].report;
      if (row.report.values.empty()) {
        row.report = rep;
        for (auto& v : row.report.values) v.value = 0.0;
      }
      for (std::size_t t = 0; t < rep.values.size(); ++t) row.report.values[t].value += rep.values[t].value;
      row.delta_m += gains_by_job[j];
      row.val_loss += evals[j].loss;
    }
    const double n = static_cast<double>(options.seeds.size());
    for (auto& v : row.report.values) v.value /= n;
    row.delta_m /= n;
    row.val_loss /= n;
    table.rows.push_back(std::move(row));
  }

  std::vector<double> losses, gains;
  for (std::size_t i = 0; i < table.rows.size(); ++i) {
    if (arms[i].stl || arms[i].random_order) continue;
    losses.push_back(table.rows[i].val_loss);
    gains.push_back(table.rows[i].delta_m);
  }
  if (!losses.empty()) {
    table.summary.emplace_back("val_loss_spread", *std::max_element(losses.begin(), losses.end()) -
                                                      *std::min_element(losses.begin(), losses.end()));
    table.summary.emplace_back("delta_m_spread", *std::max_element(gains.begin(), gains.end()) -
                                                     *std::min_element(gains.begin(), gains.end()));
  }
  table.summary.emplace_back("channels", static_cast<double>(fitted.channels));
  table.summary.emplace_back("image_size", static_cast<double>(h));
  return table;
}

std::string AblationTable::csv() const {
  std::string out = "arm";
  if (!rows.empty())
    for (const auto& v : rows.front().report.values) out += "," + v.task + "_" + v.metric;
  out += ",delta_m,val_loss,flops,params\n";
  for (const auto& r : rows) {
    out += "\"" + r.arm + "\"";
    for (const auto& v : r.report.values) out += "," + num(v.value);
    out += "," + num(r.delta_m) + "," + num(r.val_loss) + "," + std::to_string(r.flops) + "," +
           std::to_string(r.params) + "\n";
  }
  return out;
}

std::string AblationTable::summary_csv() const {
  std::string out = "key,value\n";
  for (const auto& [k, v] : summary) out += k + "," + num(v) + "\n";
  return out;
}

}  // namespace mtscan
