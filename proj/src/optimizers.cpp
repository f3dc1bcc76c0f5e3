#include "bilevel/optimizers.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "bilevel/rate_harness.hpp"

namespace bilevel {

void validate(const RunConfig& cfg) {
  validate(cfg.step);
  validate(cfg.acc);
  if (cfg.budget <= 0) throw std::invalid_argument("run: budget must be positive");
  if (cfg.max_outer_iters < 0) throw std::invalid_argument("run: max_outer_iters must be >= 0");
  if (!(cfg.adam.beta1 >= 0.0 && cfg.adam.beta1 < 1.0) || !(cfg.adam.beta2 >= 0.0 && cfg.adam.beta2 < 1.0)) {
    throw std::invalid_argument("run: Adam betas must lie in [0, 1)");
  }
  if (!(cfg.adam.eps_hat > 0.0)) throw std::invalid_argument("run: Adam eps_hat must be positive");
  if (cfg.log_every < 1) throw std::invalid_argument("run: log_every must be >= 1");
  if (cfg.proxy_every < 0 || cfg.test_every < 0) throw std::invalid_argument("run: proxy/test cadence must be >= 0");
  if (!(cfg.proxy_eps > 0.0)) throw std::invalid_argument("run: proxy_eps must be positive");
  if (cfg.batch.mode == SamplingMode::MinibatchScaled && cfg.batch.size < 1) {
    throw std::invalid_argument("run: batch size must be >= 1");
  }
  validate(cfg.hyper.solver);
}

Vec isgd_step(const Vec& theta, const Vec& z, double alpha) {
  if (theta.size() != z.size()) throw std::invalid_argument("isgd_step: shape mismatch");
  if (!(alpha > 0.0)) throw std::invalid_argument("isgd_step: alpha must be positive");
  if (!z.allFinite()) throw std::domain_error("isgd_step: non-finite hypergradient");
  return theta - alpha * z;
}

Vec iadam_step(AdamState& s, const Vec& theta, const Vec& z, double alpha, const AdamParams& p) {
  if (theta.size() != z.size()) throw std::invalid_argument("iadam_step: shape mismatch");
  if (!(alpha > 0.0)) throw std::invalid_argument("iadam_step: alpha must be positive");
  if (!z.allFinite()) throw std::domain_error("iadam_step: non-finite hypergradient");
  if (s.m.size() != z.size()) {
    s.m = Vec::Zero(z.size());
    s.v = Vec::Zero(z.size());
    s.t = 0;
  }
  ++s.t;
  s.m = p.beta1 * s.m + (1.0 - p.beta1) * z;
  s.v = p.beta2 * s.v + (1.0 - p.beta2) * z.cwiseProduct(z);
  const double c1 = 1.0 - std::pow(p.beta1, static_cast<double>(s.t));
  const double c2 = 1.0 - std::pow(p.beta2, static_cast<double>(s.t));
  const Vec m_hat = s.m / c1;
  const Vec v_hat = s.v / c2;
  return theta - alpha * (m_hat.array() / (v_hat.array().sqrt() + p.eps_hat)).matrix();
}

std::string to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Completed: return "completed";
    case RunStatus::BudgetExhausted: return "budget_exhausted";
    case RunStatus::Aborted: return "aborted";
  }
  return "unknown";
}

double mean_test_psnr(const std::vector<ProblemInstance>& test, const Regularizer& reg, const ThetaParams& theta) {
  if (test.empty()) throw std::invalid_argument("mean_test_psnr: empty test set");
  SolverConfig sc;
  sc.stop = StopMode::GradTol;
  sc.max_iters = 20000;
  CostCounter scratch;
  double total = 0.0;
  for (const auto& inst : test) {
    const LowerSolution s = solve_lower(inst, reg, theta, inst.y, 1e-6, sc, scratch);
    total += psnr(s.x, inst.x_star);
  }
  return total / static_cast<double>(test.size());
}

RunLog run(const std::vector<ProblemInstance>& train, const Regularizer& reg, const ThetaParams& theta0,
           const RunConfig& cfg, const std::vector<ProblemInstance>* test, const RunHooks& hooks) {
  validate(cfg);
  if (train.empty()) throw std::invalid_argument("run: empty training set");
  const int m = static_cast<int>(train.size());
  if (cfg.batch.mode == SamplingMode::MinibatchScaled && cfg.batch.size > m) {
    throw std::invalid_argument("run: batch size exceeds the number of training instances");
  }

  RunLog log;
  log.theta = reg.project(theta0);
  Rng rng(cfg.seed);
  WarmStartStore warm, proxy_warm;
  CostCounter proxy_cost;
  AdamState adam;
  std::int64_t cum = 0;
  std::optional<RunRow> last_unlogged;

  for (std::int64_t k = 0;; ++k) {
    if (cfg.max_outer_iters > 0 && k >= cfg.max_outer_iters) {
      log.status = RunStatus::Completed;
      break;
    }
    const double eps = cfg.acc.value(k);
    const double alpha = cfg.step.value(k);
    const Vec v = sample_v(m, cfg.batch.mode, cfg.batch.size, rng);

    CostCounter step_cost;
    HypergradResult hg;
    WarmStartStore warm_backup = warm;
    HypergradConfig hyper = cfg.hyper;
    hyper.cost_limit = cfg.budget - cum;
    try {
      hg = inexact_hypergradient(train, v, reg, log.theta, eps, hyper, warm, step_cost);
    } catch (const CostLimitExceeded&) {
      // Abandoned part-way: the recorded skipped cost is a lower bound.
      warm = std::move(warm_backup);
      log.status = RunStatus::BudgetExhausted;
      log.skipped_cost = step_cost.value();
      break;
    } catch (const std::exception& e) {
      log.status = RunStatus::Aborted;
      log.message = std::string("step ") + std::to_string(k) + ": " + e.what();
      break;
    }
    if (cum + step_cost.value() > cfg.budget) {
      warm = std::move(warm_backup);
      log.status = RunStatus::BudgetExhausted;
      log.skipped_cost = step_cost.value();
      break;
    }
    if (!hg.z.allFinite()) {
      log.status = RunStatus::Aborted;
      log.message = "step " + std::to_string(k) + ": non-finite hypergradient";
      break;
    }
    const bool moved = step_cost.value() > 0;
    cum += step_cost.value();
    if (moved) {
      log.theta.flat = cfg.optimizer == OptimizerKind::ISGD ? isgd_step(log.theta.flat, hg.z, alpha)
                                                             : iadam_step(adam, log.theta.flat, hg.z, alpha, cfg.adam);
      log.theta = reg.project(log.theta);
    }
    ++log.steps;

    RunRow row;
    row.k = k;
    row.cum_cost = cum;
    row.epsilon = eps;
    row.alpha = alpha;
    row.batch_loss = hg.batch_loss;
    if (cfg.proxy_every > 0 && k % cfg.proxy_every == 0) {
      row.grad_proxy = gradient_proxy(train, reg, log.theta, cfg.proxy_eps, cfg.hyper, proxy_warm, proxy_cost);
    }
    if (test && !test->empty() && cfg.test_every > 0 && k % cfg.test_every == 0) {
      row.test_psnr = mean_test_psnr(*test, reg, log.theta);
    }
    if (hooks.on_step) hooks.on_step(row, log.theta);
    const bool has_cost_increase = log.rows.empty() || row.cum_cost > log.rows.back().cum_cost;
    if (has_cost_increase && moved && (k % cfg.log_every == 0 || row.grad_proxy || row.test_psnr)) {
      log.rows.push_back(row);
      last_unlogged.reset();
    } else if (has_cost_increase && moved) {
      last_unlogged = row;
    }
  }

  if (last_unlogged) log.rows.push_back(*last_unlogged);
  if (test && !test->empty() && !log.rows.empty() && !log.rows.back().test_psnr) {
    log.rows.back().test_psnr = mean_test_psnr(*test, reg, log.theta);
  }
  log.proxy_cost = proxy_cost.value();
  return log;
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::optional<double> parse_optional(const std::string& field, std::size_t line) {
  if (field.empty()) return std::nullopt;
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size()) throw std::invalid_argument("trailing");
    return v;
  } catch (const std::exception&) {
    throw std::runtime_error("runlog line " + std::to_string(line) + ": bad number '" + field + "'");
  }
}

}  // namespace

std::string runlog_csv(const RunLog& log) {
  std::string out = std::string(kRunLogHeader) + "\n";
  for (const auto& r : log.rows) {
    out += std::to_string(r.k) + "," + std::to_string(r.cum_cost) + "," + fmt(r.epsilon) + "," + fmt(r.alpha) +
           "," + fmt(r.batch_loss) + "," + (r.grad_proxy ? fmt(*r.grad_proxy) : "") + "," +
           (r.test_psnr ? fmt(*r.test_psnr) : "") + "\n";
  }
  return out;
}

void write_runlog_csv(const std::filesystem::path& path, const RunLog& log) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << runlog_csv(log);
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::vector<RunRow> parse_runlog_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kRunLogHeader) throw std::runtime_error("runlog: unexpected header");
  std::vector<RunRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 7) throw std::runtime_error("runlog line " + std::to_string(lineno) + ": expected 7 fields");
    RunRow r;
    const auto k = parse_optional(f[0], lineno), c = parse_optional(f[1], lineno);
    const auto e = parse_optional(f[2], lineno), a = parse_optional(f[3], lineno), l = parse_optional(f[4], lineno);
    if (!k || !c || !e || !a || !l) throw std::runtime_error("runlog line " + std::to_string(lineno) + ": missing field");
    r.k = static_cast<std::int64_t>(*k);
    r.cum_cost = static_cast<std::int64_t>(*c);
    r.epsilon = *e;
    r.alpha = *a;
    r.batch_loss = *l;
    r.grad_proxy = parse_optional(f[5], lineno);
    r.test_psnr = parse_optional(f[6], lineno);
    rows.push_back(r);
  }
  return rows;
}

std::vector<RunRow> read_runlog_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_runlog_csv(ss.str());
}

}  // namespace bilevel
