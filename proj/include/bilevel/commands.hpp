#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "bilevel/config.hpp"
#include "bilevel/optimizers.hpp"
#include "bilevel/rate_harness.hpp"

namespace bilevel {

struct Experiment {
  std::vector<ProblemInstance> train;
  std::vector<ProblemInstance> test;
  std::shared_ptr<const Regularizer> reg;
  ThetaParams theta0;
};

std::shared_ptr<const Regularizer> make_regularizer(const ExperimentConfig& cfg);
Experiment build_experiment(const ExperimentConfig& cfg);
RunConfig make_run_config(const ExperimentConfig& cfg);

// Exit codes shared by the commands.
inline constexpr int kExitOk = 0;
inline constexpr int kExitCheckFailed = 1;
inline constexpr int kExitInvalid = 2;
inline constexpr int kExitRuntime = 3;

// Writes config.ini, runlog.csv, checkpoints and plots into the run
// directory; prints the directory on `out`.
int cmd_run(const std::filesystem::path& config, std::ostream& out, std::ostream& err);
int cmd_rates(const std::filesystem::path& config, std::ostream& out, std::ostream& err);

struct CheckItem {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

std::vector<CheckItem> run_checks(bool full);
int cmd_check(const std::string& level, std::ostream& out, std::ostream& err);

// Re-renders plots from runlog CSV files (label = file stem).
int cmd_export_plots(const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out_dir,
                     int smoothing_window, std::ostream& out, std::ostream& err);
// Dumps a checkpoint as JSON: {"tensors": [{"name", "shape", "values"}]}.
int cmd_export_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& json_out,
                          std::ostream& out, std::ostream& err);

}  // namespace bilevel
