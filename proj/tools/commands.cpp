#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "mtscan/ablation.hpp"
#include "mtscan/error.hpp"
#include "run_config.hpp"

namespace mtscan::cli {

namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write '" + path.string() + "'");
}

RunConfig config_or_default(const fs::path& path) { return path.empty() ? RunConfig{} : load_run_config(path); }

std::string metrics_csv(const MetricReport& report, std::optional<double> delta_m) {
  std::string out = "task,metric,value\n";
  for (const auto& v : report.values) out += v.task + "," + v.metric + "," + num(v.value) + "\n";
  if (delta_m) out += "all,delta_m," + num(*delta_m) + "\n";
  return out;
}

void read_metrics_csv(const fs::path& path, MetricReport& into) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read metrics file '" + path.string() + "'");
  std::string line;
  std::getline(is, line);
  if (line != "task,metric,value") throw FormatError("'" + path.string() + "' is not a metrics file");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string task, metric, value;
    std::getline(ss, task, ',');
    std::getline(ss, metric, ',');
    std::getline(ss, value, ',');
    if (task == "all") continue;
    double v = 0.0;
    try {
      v = std::stod(value);
    } catch (const std::exception&) {
      throw FormatError("bad value in '" + path.string() + "': " + line);
    }
    if (into.find(task)) throw DataError("task '" + task + "' appears in more than one metrics file");
    into.values.push_back({task, metric, v, metric == "miou" || metric == "f1"});
  }
}

// T copies of the first configured task, so every added task brings the same
// head and the counts can be compared exactly
ModelConfig with_task_count(ModelConfig cfg, std::size_t tasks) {
  const TaskSpec base = cfg.tasks.empty() ? default_tasks(5).front() : cfg.tasks.front();
  cfg.tasks.clear();
  for (std::size_t t = 0; t < tasks; ++t) {
    TaskSpec spec = base;
    spec.name += std::to_string(t);
    cfg.tasks.push_back(spec);
  }
  cfg.task_order.clear();
  return cfg;
}

void write_pgm(const fs::path& path, std::size_t h, std::size_t w, const std::vector<std::uint8_t>& pixels) {
  std::ofstream os(path, std::ios::binary);
  os << "P5\n" << w << " " << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw DataError("cannot write '" + path.string() + "'");
}

}  // namespace

std::vector<std::size_t> parse_task_counts(const std::string& text) {
  std::vector<std::size_t> out;
  auto to_num = [&](const std::string& s) -> std::size_t {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(s, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos == 0 || pos != s.size()) throw UsageError("bad task count list '" + text + "'");
    return v;
  };
  if (const auto dots = text.find(".."); dots != std::string::npos) {
    const std::size_t lo = to_num(text.substr(0, dots)), hi = to_num(text.substr(dots + 2));
    if (lo > hi) throw UsageError("empty task range '" + text + "'");
    for (std::size_t t = lo; t <= hi; ++t) out.push_back(t);
  } else {
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(to_num(item));
  }
  if (out.empty()) throw UsageError("no task counts in '" + text + "'");
  for (auto t : out)
    if (t == 0) throw UsageError("task counts must be positive");
  return out;
}

std::size_t env_workers() {
  const char* v = std::getenv("MTSCAN_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end != '\0' || n < 1) throw UsageError("MTSCAN_THREADS must be a positive integer");
  return static_cast<std::size_t>(n);
}

void cmd_train(const TrainArgs& args, std::ostream& log) {
  if (args.out.empty()) throw UsageError("train needs --out");
  RunConfig cfg = config_or_default(args.config);
  if (args.seed) cfg.train.seed = *args.seed;
  if (args.iters) cfg.train.iterations = *args.iters;

  std::optional<MetricReport> stl;
  if (!args.stl_metrics.empty()) {
    stl.emplace();
    for (const auto& p : args.stl_metrics) read_metrics_csv(p, *stl);
  }
  const Dataset train_data = Dataset::from_manifest(cfg.train_data);
  const Dataset val_data = Dataset::from_manifest(cfg.val_data);
  const auto result = train(cfg.model, train_data, val_data, cfg.train, stl ? &*stl : nullptr);

  fs::create_directories(args.out);
  write_text(args.out / "history.csv", history_csv(result.history, cfg.model.tasks));
  save_checkpoint((args.out / "checkpoint.bin").string(), result.model);
  std::optional<double> dm;
  if (stl) dm = mtl_gain(result.final_eval.report, *stl);
  write_text(args.out / "metrics.csv", metrics_csv(result.final_eval.report, dm));

  log << "best iteration " << result.best_iteration << ", val loss " << num(result.final_eval.loss) << "\n";
  for (const auto& v : result.final_eval.report.values) log << "  " << v.task << " " << v.metric << " " << num(v.value) << "\n";
  if (dm) log << "  delta_m " << num(*dm) << "\n";
}

void cmd_ablate(const AblateArgs& args, std::ostream& log) {
  const AblationKind kind = parse_ablation_kind(args.kind);
  if (args.out_dir.empty()) throw UsageError("ablate needs --out-dir");
  RunConfig cfg = config_or_default(args.config);
  if (args.iters) cfg.train.iterations = *args.iters;
  AblationOptions opts;
  opts.train = cfg.train;
  opts.seeds = args.seeds.empty() ? cfg.ablation_seeds : args.seeds;
  opts.workers = args.workers;

  // generated data is resized to the smallest size every arm accepts
  const auto arms = ablation_arms(kind, cfg.model);
  for (Manifest* m : {&cfg.train_data, &cfg.val_data}) {
    if (!m->generator) continue;
    auto& scene = m->generator->scene;
    const std::size_t size = smallest_valid_size(arms, std::max(scene.height, scene.width));
    if (size != scene.height || size != scene.width)
      log << "resizing generated " << (m == &cfg.train_data ? "train" : "val") << " scenes to " << size << "x" << size
          << "\n";
    scene.height = scene.width = size;
  }
  const Dataset train_data = Dataset::from_manifest(cfg.train_data);
  const Dataset val_data = Dataset::from_manifest(cfg.val_data);
  const auto table = run_ablation(kind, cfg.model, train_data, val_data, opts);

  fs::create_directories(args.out_dir);
  write_text(args.out_dir / (to_string(kind) + ".csv"), table.csv());
  write_text(args.out_dir / (to_string(kind) + "_summary.csv"), table.summary_csv());
  for (const auto& r : table.rows) log << "  " << r.arm << ": delta_m " << num(r.delta_m) << ", val loss " << num(r.val_loss) << "\n";
  for (const auto& [k, v] : table.summary) log << "  " << k << " " << num(v) << "\n";
}

void cmd_bench(const BenchArgs& args, std::ostream& log) {
  if (args.out.empty()) throw UsageError("bench needs --out");
  RunConfig cfg = config_or_default(args.config);
  if (args.dilated) cfg.model.dilated = true;
  const auto counts = parse_task_counts(args.tasks);
  std::size_t size = cfg.train_data.generator ? cfg.train_data.generator->scene.height : 64;
  if (args.size) size = *args.size;

  struct Row {
    std::size_t tasks;
    std::uint64_t flops;
    std::size_t params;
    double seconds = 0.0;
  };
  std::vector<Row> rows;
  for (auto t : counts) {
    const ModelConfig mc = with_task_count(cfg.model, t);
    mc.validate();
    mc.validate_input(size, size);
    Row r{t, count_flops(mc, size, size), count_params(mc)};
    if (args.with_timing) {
      const Model model = Model::init(mc, cfg.train.seed);
      const SceneSample s = generate_scene(cfg.train.seed, size, size, 4);
      NoGradGuard guard;
      const auto t0 = std::chrono::steady_clock::now();
      model_forward(s.image, model);
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
    rows.push_back(r);
  }

  std::string out = "tasks,flops,params,flops_increment,params_increment";
  if (args.with_timing) out += ",seconds";
  out += "\n";
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    out += std::to_string(r.tasks) + "," + std::to_string(r.flops) + "," + std::to_string(r.params) + ",";
    if (i > 0) {
      out += std::to_string(static_cast<std::int64_t>(r.flops - rows[i - 1].flops)) + "," +
             std::to_string(static_cast<std::int64_t>(r.params - rows[i - 1].params));
    } else {
      out += ",";
    }
    if (args.with_timing) out += "," + num(r.seconds);
    out += "\n";
  }
  write_text(args.out, out);

  // consecutive task counts must grow by exactly the same step
  bool affine = true;
  for (std::size_t i = 2; i < rows.size(); ++i) {
    if (rows[i].tasks - rows[i - 1].tasks != 1 || rows[i - 1].tasks - rows[i - 2].tasks != 1) continue;
    const auto d2f = static_cast<std::int64_t>(rows[i].flops - 2 * rows[i - 1].flops + rows[i - 2].flops);
    const auto d2p = static_cast<std::int64_t>(rows[i].params - 2 * rows[i - 1].params + rows[i - 2].params);
    if (d2f != 0 || d2p != 0) affine = false;
  }
  for (std::size_t i = 1; i < rows.size(); ++i)
    log << "  T=" << rows[i].tasks << ": +" << rows[i].flops - rows[i - 1].flops << " flops, +"
        << rows[i].params - rows[i - 1].params << " params\n";
  if (!affine) throw NumericalError("analytic counts are not affine in the number of tasks");
  log << "second differences are zero\n";
}

void cmd_inspect_scan(const InspectArgs& args, std::ostream& log) {
  if (args.out.empty()) throw UsageError("inspect-scan needs --out");
  if (args.mode != "tf" && args.mode != "pf") throw UsageError("--mode must be tf or pf");
  if (args.tasks == 0 || args.height == 0 || args.width == 0) throw UsageError("tasks, h and w must be positive");
  if (args.tasks > 26) throw UsageError("at most 26 tasks can be labelled");
  ScanDirection dir;
  try {
    dir = parse_direction(args.pattern);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  const std::size_t hw = args.height * args.width;
  const auto order = TaskOrder::identity(args.tasks);
  const auto tokens = args.mode == "tf" ? task_first_token_order(args.tasks, args.height, args.width, dir, order)
                                        : position_first_token_order(args.tasks, args.height, args.width, dir, order);

  fs::create_directories(args.out);
  const std::string stem = "scan_" + args.mode + "_" + args.pattern;
  std::string csv = "step,task,row,col,token,label\n";
  std::vector<std::size_t> step_of(tokens.size());
  for (std::size_t l = 0; l < tokens.size(); ++l) {
    const std::size_t tok = tokens[l], t = tok / hw, p = tok % hw;
    step_of[tok] = l;
    csv += std::to_string(l) + "," + std::to_string(t) + "," + std::to_string(p / args.width) + "," +
           std::to_string(p % args.width) + "," + std::to_string(tok) + "," + static_cast<char>('a' + t) +
           std::to_string(p) + "\n";
  }
  write_text(args.out / (stem + ".csv"), csv);

  // brightness = visiting step, shared scale across tasks
  const double top = tokens.size() > 1 ? static_cast<double>(tokens.size() - 1) : 1.0;
  for (std::size_t t = 0; t < args.tasks; ++t) {
    std::vector<std::uint8_t> px(hw);
    for (std::size_t p = 0; p < hw; ++p)
      px[p] = static_cast<std::uint8_t>(255.0 * static_cast<double>(step_of[t * hw + p]) / top + 0.5);
    write_pgm(args.out / (stem + "_task" + std::to_string(t) + ".pgm"), args.height, args.width, px);
  }
  log << "wrote " << tokens.size() << " steps to " << (args.out / (stem + ".csv")).string() << "\n";
}

void cmd_generate(const GenerateArgs& args, std::ostream& log) {
  if (args.out.empty()) throw UsageError("generate needs --out");
  if (args.count == 0) throw UsageError("--count must be positive");
  SceneOptions scene;
  scene.height = scene.width = args.size;
  scene.objects = args.objects;
  scene.classes = args.classes;
  fs::create_directories(args.out);
  Manifest m;
  for (std::size_t i = 0; i < args.count; ++i) {
    char stem[32];
    std::snprintf(stem, sizeof(stem), "sample%05zu", i);
    auto paths = save_sample(args.out, stem, generate_scene(args.seed + i, scene));
    for (fs::path* p : {&paths.image, &paths.semseg, &paths.depth, &paths.normals, &paths.boundary})
      *p = p->lexically_relative(args.out);
    m.samples.push_back(paths);
  }
  write_text(args.out / "manifest.json", m.to_json() + "\n");
  log << "wrote " << args.count << " samples and manifest.json to " << args.out.string() << "\n";
}

}  // namespace mtscan::cli
