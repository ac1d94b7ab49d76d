#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace espo {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;

struct TrainArgs {
  std::string config;  // empty: defaults only
  std::vector<std::string> overrides;
  bool resume = false;
  bool quiet = false;
};

struct GradCheckArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;  // instance seed; train.seed when unset
  double tolerance = 1e-4;
  std::string rows;  // optional CSV of every compared coordinate
  bool corrupt_gradient = false;
  bool verbose = false;  // print every entry, not just the flagged ones
};

struct CompareArgs {
  std::vector<std::string> files;
  std::string metric = "accuracy";
  int mini_epoch = -1;  // -1: last mini-epoch of each step
  std::vector<std::string> labels;
  std::string output;  // empty: stdout
};

struct AnalyzeArgs {
  std::string log;
  std::string config;
  std::vector<std::string> overrides;
  std::string checkpoint;  // current policy for would-be clip fractions
  std::vector<double> rho_sweep{0.1, 0.2, 0.4};
};

/// Each command returns its exit status: kExitOk, kExitFailure on runtime
/// errors, kExitConfig on invalid configuration or arguments.
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradCheckArgs& args, std::ostream& out, std::ostream& err);
int cmd_compare(const CompareArgs& args, std::ostream& out, std::ostream& err);
int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err);

/// Column label of a metrics file: the parent directory name for files called
/// metrics.*, otherwise the file stem.
std::string run_label(const std::string& path);

}  // namespace espo
