#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "mtscan/error.hpp"

using namespace mtscan;
using namespace mtscan::cli;

int main(int argc, char** argv) {
  CLI::App app{"Multi-task scan models at desk scale"};
  app.require_subcommand(1);

  TrainArgs train_args;
  std::uint64_t train_seed = 0;
  std::size_t train_iters = 0;
  auto* train = app.add_subcommand("train", "Train one model; writes history.csv, checkpoint.bin, metrics.csv");
  train->add_option("--config", train_args.config, "JSON run config (defaults if omitted)");
  auto* train_seed_opt = train->add_option("--seed", train_seed, "Training seed");
  auto* train_iters_opt = train->add_option("--iters", train_iters, "Iterations");
  train->add_option("--out", train_args.out, "Output directory")->required();
  train->add_option("--stl-metrics", train_args.stl_metrics, "metrics.csv of single-task runs");

  AblateArgs ablate_args;
  std::size_t ablate_iters = 0;
  auto* ablate = app.add_subcommand("ablate", "Run an ablation table");
  ablate->add_option("kind", ablate_args.kind, "task_order|scan_scale|scan_number|uni_vs_bi|mode_order|components")
      ->required();
  ablate->add_option("--config", ablate_args.config, "JSON run config");
  ablate->add_option("--out-dir", ablate_args.out_dir, "Output directory")->required();
  ablate->add_option("--seeds", ablate_args.seeds, "Training seeds")->delimiter(',');
  auto* ablate_iters_opt = ablate->add_option("--iters", ablate_iters, "Iterations per run");

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Analytic FLOPs/params against the number of tasks");
  bench->add_option("--config", bench_args.config, "JSON run config");
  bench->add_option("--tasks", bench_args.tasks, "Task counts, a..b or a,b,c")->capture_default_str();
  bench->add_option("--out", bench_args.out, "Output CSV")->required();
  std::size_t bench_size = 0;
  auto* bench_size_opt = bench->add_option("--size", bench_size, "Input size (default: training scenes)");
  bench->add_flag("--dilated", bench_args.dilated, "Dilated scans");
  bench->add_flag("--with-timing", bench_args.with_timing, "Add a measured forward-time column");

  InspectArgs inspect_args;
  auto* inspect = app.add_subcommand("inspect-scan", "Dump a cross-task scan order");
  inspect->set_help_flag("--help", "Print this help message and exit");
  inspect->add_option("--mode", inspect_args.mode, "tf or pf")->capture_default_str();
  inspect->add_option("--pattern", inspect_args.pattern, "row_fwd|row_rev|col_fwd|col_rev")->capture_default_str();
  inspect->add_option("--tasks", inspect_args.tasks, "Number of tasks")->capture_default_str();
  inspect->add_option("--h", inspect_args.height, "Grid height")->capture_default_str();
  inspect->add_option("--w", inspect_args.width, "Grid width")->capture_default_str();
  inspect->add_option("--out", inspect_args.out, "Output directory")->required();

  GenerateArgs gen_args;
  auto* gen = app.add_subcommand("generate", "Write synthetic samples and a manifest");
  gen->add_option("--out", gen_args.out, "Output directory")->required();
  gen->add_option("--seed", gen_args.seed, "First scene seed")->capture_default_str();
  gen->add_option("--count", gen_args.count, "Number of scenes")->capture_default_str();
  gen->add_option("--size", gen_args.size, "Scene height and width")->capture_default_str();
  gen->add_option("--objects", gen_args.objects, "Objects per scene")->capture_default_str();
  gen->add_option("--classes", gen_args.classes, "Semantic classes")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      if (*train_seed_opt) train_args.seed = train_seed;
      if (*train_iters_opt) train_args.iters = train_iters;
      cmd_train(train_args, std::cout);
    } else if (*ablate) {
      if (*ablate_iters_opt) ablate_args.iters = ablate_iters;
      ablate_args.workers = env_workers();
      cmd_ablate(ablate_args, std::cout);
    } else if (*bench) {
      if (*bench_size_opt) bench_args.size = bench_size;
      cmd_bench(bench_args, std::cout);
    } else if (*inspect) {
      cmd_inspect_scan(inspect_args, std::cout);
    } else if (*gen) {
      cmd_generate(gen_args, std::cout);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitOther;
  }
  return kExitOk;
}
