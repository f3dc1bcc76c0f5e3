#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "bilevel/optimizers.hpp"

namespace bilevel {

// || full-batch inexact hypergradient at tight_eps || with v = 1; cost goes
// to `proxy_cost` only.
double gradient_proxy(const std::vector<ProblemInstance>& instances, const Regularizer& reg,
                      const ThetaParams& theta, double tight_eps, const HypergradConfig& cfg,
                      WarmStartStore& warm, CostCounter& proxy_cost);

struct SeriesPoint {
  double k = 0.0;
  double value = 0.0;
};

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double k_min = 0.0;
  double k_max = 0.0;
  std::size_t points = 0;
};

std::vector<SeriesPoint> running_min(const std::vector<SeriesPoint>& series);

// sqrt(sum_j alpha_j g_j^2 / sum_j alpha_j) over the logged proxies up to
// each k: the step-weighted average of squared gradient norms.
std::vector<SeriesPoint> ergodic_series(const std::vector<RunRow>& rows);

// Raw proxy values as a series.
std::vector<SeriesPoint> proxy_series(const std::vector<RunRow>& rows);

/// Least-squares line through (log k, log running-min value) for k in
/// [k_min, k_max]. Needs >= 5 points spanning >= 1.5 decades.
RateFit fit_rate(const std::vector<SeriesPoint>& series, double k_min = 0.0,
                 double k_max = std::numeric_limits<double>::infinity());

struct SweepCell {
  double p = 0.0;
  double q = 0.0;
  double eps0 = 1.0;
  double alpha0 = 1.0;
};

struct SweepProblem {
  std::vector<ProblemInstance> train;
  std::vector<ProblemInstance> test;
  std::shared_ptr<const Regularizer> reg;
  ThetaParams theta0;
};

using ProblemFactory = std::function<SweepProblem(std::uint64_t seed)>;

struct SweepOptions {
  double fit_k_min = 100.0;
  double fit_k_max = 1e4;
  bool ergodic = true;  // fit the step-weighted series instead of raw proxies
  int threads = 1;
};

struct SweepRow {
  SweepCell cell;
  std::uint64_t seed = 0;
  double final_loss = 0.0;
  std::optional<double> best_psnr;
  std::optional<double> slope;
  std::optional<double> r2;
  std::int64_t total_cost = 0;
  std::optional<double> raw_slope;  // fit of the raw running-min proxy
  std::string failure;              // empty when the cell ran cleanly
};

struct SweepAggregate {
  SweepCell cell;
  double mean_final_loss = 0.0;
  std::optional<double> mean_best_psnr;
  std::optional<double> median_slope;
  std::optional<double> mean_r2;
  double mean_total_cost = 0.0;
  double sd_final_loss = 0.0;
  std::optional<double> sd_slope;
};

struct SweepResult {
  std::vector<SweepRow> rows;  // cell-major, seeds in the given order
  std::vector<SweepAggregate> aggregates;
};

// Step schedule alpha0 k^-q and accuracy eps0 k^-p (constant when the
// exponent is 0).
RunConfig cell_config(const RunConfig& base, const SweepCell& cell);

SweepResult sweep(const std::vector<SweepCell>& grid, const std::vector<std::uint64_t>& seeds,
                  const RunConfig& base, const ProblemFactory& factory, const SweepOptions& opts = {});

inline constexpr const char* kSweepHeader = "p,q,eps0,alpha0,seed,final_loss,best_psnr,slope,r2,total_cost";

// One row per (cell, seed) followed by an "agg" row per cell.
std::string sweep_csv(const SweepResult& result);
// `cell,seed,message` lines for rows that failed; empty text if none did.
std::string sweep_failures_csv(const SweepResult& result);

struct NamedLog {
  std::string label;
  std::vector<RunRow> rows;
};

struct PlotOptions {
  int smoothing_window = 50;  // running average applied to the loss curve
};

// Writes loss.svg and psnr.svg (log-x cost axis) into `dir`, plus
// <label>.csv for each log. Returns the written paths.
std::vector<std::filesystem::path> emit_plots(const std::vector<NamedLog>& logs,
                                              const std::filesystem::path& dir,
                                              const PlotOptions& opts = {});

}  // namespace bilevel
