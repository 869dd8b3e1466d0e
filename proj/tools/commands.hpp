#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mtscan::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitConfig = 3;
inline constexpr int kExitNumeric = 4;

struct TrainArgs {
  std::filesystem::path config;  // empty: all defaults
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> iters;
  std::filesystem::path out;
  /// metrics.csv files of single-task runs; merged by task name.
  std::vector<std::filesystem::path> stl_metrics;
};
/// Writes history.csv, checkpoint.bin and metrics.csv into `out`.
void cmd_train(const TrainArgs& args, std::ostream& log);

struct AblateArgs {
  std::string kind;
  std::filesystem::path config;
  std::filesystem::path out_dir;
  std::vector<std::uint64_t> seeds;  // empty: from config
  std::optional<std::size_t> iters;
  std::size_t workers = 1;
};
/// Writes <kind>.csv and <kind>_summary.csv into `out_dir`.
void cmd_ablate(const AblateArgs& args, std::ostream& log);

struct BenchArgs {
  std::filesystem::path config;
  std::string tasks = "2..6";
  std::filesystem::path out;
  std::optional<std::size_t> size;  // default: training image size
  bool dilated = false;
  bool with_timing = false;
};
/// Model with T copies of the first configured task, for each requested T:
/// tasks,flops,params,flops_increment,params_increment[,seconds]. Throws
/// NumericalError when the analytic counts are not affine in T.
void cmd_bench(const BenchArgs& args, std::ostream& log);

struct InspectArgs {
  std::string mode = "tf";
  std::string pattern = "row_fwd";
  std::size_t tasks = 2;
  std::size_t height = 4, width = 4;
  std::filesystem::path out;
};
/// Writes scan_<mode>_<pattern>.csv (step,task,row,col,token,label) and one
/// PGM heat map of visiting steps per task.
void cmd_inspect_scan(const InspectArgs& args, std::ostream& log);

struct GenerateArgs {
  std::filesystem::path out;
  std::uint64_t seed = 0;
  std::size_t count = 16;
  std::size_t size = 64;
  std::size_t objects = 4;
  std::size_t classes = 5;
};
/// Writes sample tensor files plus manifest.json into `out`.
void cmd_generate(const GenerateArgs& args, std::ostream& log);

/// Parses "a..b" or "a,b,c".
std::vector<std::size_t> parse_task_counts(const std::string& text);

/// Worker cap from MTSCAN_THREADS (default 1).
std::size_t env_workers();

}  // namespace mtscan::cli
