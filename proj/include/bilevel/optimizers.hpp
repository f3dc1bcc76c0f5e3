#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bilevel/hypergradient.hpp"
#include "bilevel/schedules.hpp"

namespace bilevel {

enum class OptimizerKind { ISGD, IAdam };

struct AdamParams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

struct BatchSpec {
  SamplingMode mode = SamplingMode::MinibatchScaled;
  int size = 8;  // ignored for Binomial
};

struct RunConfig {
  Schedule step = Schedule::constant(1e-2);
  Schedule acc = Schedule::constant(1e-2);
  OptimizerKind optimizer = OptimizerKind::ISGD;
  AdamParams adam;
  BatchSpec batch;
  std::int64_t budget = 100000;
  std::int64_t max_outer_iters = 0;  // 0: budget only
  int log_every = 1;
  int proxy_every = 0;  // 0 disables the gradient proxy
  double proxy_eps = 1e-8;
  int test_every = 0;   // 0: test PSNR only after the last step
  std::uint64_t seed = 0;
  HypergradConfig hyper;
};

void validate(const RunConfig& cfg);

Vec isgd_step(const Vec& theta, const Vec& z, double alpha);

struct AdamState {
  Vec m, v;
  std::int64_t t = 0;
};

Vec iadam_step(AdamState& state, const Vec& theta, const Vec& z, double alpha, const AdamParams& p = {});

struct RunRow {
  std::int64_t k = 0;
  std::int64_t cum_cost = 0;
  double epsilon = 0.0;
  double alpha = 0.0;
  double batch_loss = 0.0;
  std::optional<double> grad_proxy;
  std::optional<double> test_psnr;
};

enum class RunStatus { Completed, BudgetExhausted, Aborted };
std::string to_string(RunStatus s);

struct RunLog {
  std::vector<RunRow> rows;
  RunStatus status = RunStatus::Completed;
  std::string message;
  std::int64_t steps = 0;        // completed outer iterations
  std::int64_t proxy_cost = 0;   // excluded from the budget
  std::optional<std::int64_t> skipped_cost;  // cost of the discarded evaluation; a lower bound if abandoned early
  ThetaParams theta;             // final parameters
};

struct RunHooks {
  // Called after every completed step with the (possibly unlogged) row.
  std::function<void(const RunRow&, const ThetaParams&)> on_step;
};

/// Outer loop: sample v, evaluate z at eps_k, step with alpha_k, project,
/// log. An evaluation whose cost would overrun the budget is discarded and
/// ends the run.
RunLog run(const std::vector<ProblemInstance>& train, const Regularizer& reg, const ThetaParams& theta0,
           const RunConfig& cfg, const std::vector<ProblemInstance>* test = nullptr, const RunHooks& hooks = {});

// Mean PSNR of tight lower-level reconstructions against x*.
double mean_test_psnr(const std::vector<ProblemInstance>& test, const Regularizer& reg, const ThetaParams& theta);

inline constexpr const char* kRunLogHeader = "k,cum_cost,epsilon_k,alpha_k,batch_loss,grad_proxy,test_psnr";

std::string runlog_csv(const RunLog& log);
void write_runlog_csv(const std::filesystem::path& path, const RunLog& log);
std::vector<RunRow> read_runlog_csv(const std::filesystem::path& path);
std::vector<RunRow> parse_runlog_csv(const std::string& text);

}  // namespace bilevel
