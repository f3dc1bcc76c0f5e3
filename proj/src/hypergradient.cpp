#include "bilevel/hypergradient.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include "bilevel/parallel.hpp"

namespace bilevel {

ErrorBudget error_budget(double eps, double mu, const LocalConstants& c) {
  if (!(eps > 0.0) || !(mu > 0.0)) throw std::invalid_argument("error_budget: eps and mu must be positive");
  if (c.L_g < 0 || c.L_H < 0 || c.grad_g_norm < 0 || c.J_max < 0 || c.L_J < 0) {
    throw std::invalid_argument("error_budget: constants must be non-negative");
  }
  ErrorBudget b;
  b.c_x = c.L_g * c.J_max / mu + c.L_J * c.grad_g_norm / mu + c.J_max * c.L_H * c.grad_g_norm / (mu * mu);
  const double inf = std::numeric_limits<double>::infinity();
  b.delta_x = b.c_x > 0.0 ? eps / (2.0 * b.c_x) : inf;
  b.delta_cg = c.J_max > 0.0 ? eps * mu / (2.0 * c.J_max) : inf;
  return b;
}

double sample_error_bound(double distance, double cg_residual, double mu, const LocalConstants& c) {
  const ErrorBudget b = error_budget(1.0, mu, c);
  return b.c_x * distance + c.J_max * cg_residual / mu;
}

void WarmStartStore::prepare(std::size_t m, const Vec& theta) {
  if (x.size() != m) {
    x.assign(m, std::nullopt);
    q.assign(m, std::nullopt);
    lipschitz.assign(m, 0.0);
  } else if (theta_ref && (theta_ref->size() != theta.size() || (theta - *theta_ref).norm() > reset_distance)) {
    clear();
    x.assign(m, std::nullopt);
    q.assign(m, std::nullopt);
    lipschitz.assign(m, 0.0);
  }
  theta_ref = theta;
}

void WarmStartStore::clear() {
  x.clear();
  q.clear();
  lipschitz.clear();
  theta_ref.reset();
}

Vec mixed_jvp(const Vec& x, const ThetaParams& theta, const Vec& q, const ProblemInstance& inst,
              const Regularizer& reg) {
  if (x.size() != q.size() || static_cast<std::size_t>(x.size()) != inst.shape.size()) {
    throw std::invalid_argument("mixed_jvp: shape mismatch");
  }
  return reg.mixed_jvp(x, inst.shape, theta, q);
}

namespace {

struct SampleOut {
  Vec g;
  Vec x;
  Vec q;
  double lipschitz = 0.0;
  double loss = 0.0;
  SampleCost cost;
};

LocalConstants local_constants(const HypergradConfig& cfg, const ProblemInstance& inst, const Regularizer& reg,
                               const ThetaParams& theta, const Vec& x, double radius) {
  if (cfg.constants_mode == ConstantsMode::Unit) return LocalConstants{};
  if (cfg.constants_mode == ConstantsMode::Supplied) return cfg.constants;
  LocalConstants c = cfg.constants;
  const Vec gg = upper_grad(x, inst);
  c.L_g = 2.0;
  c.grad_g_norm = gg.norm() + c.L_g * radius;
  if (cfg.constants_mode == ConstantsMode::Exact) {
    if (auto b = reg.sensitivity_bounds(x, inst.shape, theta, radius)) {
      c.J_max = b->jac_norm;
      c.L_J = b->jac_lipschitz;
      c.L_H = b->hess_lipschitz;
      return c;
    }
  }
  // Probe the mixed operator along the normalized upper gradient.
  const double n = gg.norm();
  const Vec u = n > 0.0 ? Vec(gg / n) : Vec(Vec::Ones(x.size()) / std::sqrt(static_cast<double>(x.size())));
  const Vec bu = reg.mixed_jvp(x, inst.shape, theta, u);
  c.J_max = bu.size() > 0 ? 2.0 * bu.norm() : 0.0;
  return c;
}

bool meets(const LowerSolution& s, const ErrorBudget& b, StopMode mode) {
  return mode == StopMode::Certified ? s.certified_distance <= b.delta_x : s.grad_norm <= b.delta_x;
}

SampleOut run_sample(const ProblemInstance& inst, const Regularizer& reg, const ThetaParams& theta, double eps,
                     const HypergradConfig& cfg, const std::optional<Vec>& x_warm, const std::optional<Vec>& q_warm,
                     double l_warm) {
  SampleOut out;
  CostCounter local;
  SolverConfig sc = cfg.solver;
  if (!sc.lipschitz_estimate && l_warm > 0.0) sc.lipschitz_estimate = l_warm;
  const double mu = strong_convexity_floor(inst, reg, theta);

  Vec x = x_warm && x_warm->size() == inst.y.size() ? *x_warm : inst.y;
  LocalConstants c = local_constants(cfg, inst, reg, theta, x, 0.0);
  ErrorBudget budget = error_budget(eps, mu, c);
  LowerSolution sol;
  for (int round = 0; round < 8; ++round) {
    sol = solve_lower(inst, reg, theta, x, budget.delta_x, sc, local);
    out.cost.lower_iters += sol.iters;
    x = sol.x;
    if (!sc.lipschitz_estimate) sc.lipschitz_estimate = sol.lipschitz;
    c = local_constants(cfg, inst, reg, theta, x, sol.certified_distance);
    budget = error_budget(eps, mu, c);
    if (!sol.converged || meets(sol, budget, sc.stop)) break;
  }
  out.cost.lower_converged = meets(sol, budget, sc.stop);
  out.lipschitz = sol.lipschitz;

  const LowerObjective h(inst, reg, theta);
  const SpdOperator H{h.hessian_at(x), inst.shape.size()};
  const Vec rhs = upper_grad(x, inst);
  const CgResult cg = cg_solve(H, rhs, budget.delta_cg, cfg.cg_max_iters, local,
                               cfg.warm_start ? q_warm : std::nullopt);
  out.cost.cg_iters = cg.iters;
  out.cost.cg_converged = cg.converged;
  out.g = -reg.mixed_jvp(x, inst.shape, theta, cg.q);
  out.cost.error_bound = sample_error_bound(sol.certified_distance, cg.residual, mu, c);
  out.loss = upper_loss(x, inst);
  out.x = std::move(x);
  out.q = cg.q;
  if (local.value() != out.cost.lower_iters + out.cost.cg_iters) {
    throw std::logic_error("hypergradient: cost accounting mismatch");
  }
  return out;
}

}  // namespace

HypergradResult inexact_hypergradient(const std::vector<ProblemInstance>& instances, const Vec& v,
                                      const Regularizer& reg, const ThetaParams& theta, double eps,
                                      const HypergradConfig& cfg, WarmStartStore& warm, CostCounter& cost) {
  const std::size_t m = instances.size();
  if (m == 0) throw std::invalid_argument("hypergradient: no instances");
  if (static_cast<std::size_t>(v.size()) != m) throw std::invalid_argument("hypergradient: v has wrong length");
  if (!(eps > 0.0)) throw std::invalid_argument("hypergradient: eps must be positive");
  if ((v.array() < 0.0).any() || !v.allFinite()) throw std::invalid_argument("hypergradient: v must be non-negative");
  if (static_cast<std::size_t>(theta.flat.size()) != reg.layout().size()) {
    throw std::invalid_argument("hypergradient: theta does not match the regularizer layout");
  }

  HypergradResult res;
  res.z = Vec::Zero(theta.flat.size());
  res.solutions.resize(m);
  const double vsum = v.sum();
  if (vsum == 0.0) return res;

  warm.prepare(m, theta.flat);
  const double eps_i = eps * static_cast<double>(m) / std::max(vsum, static_cast<double>(m));

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < m; ++i) {
    if (v[static_cast<Eigen::Index>(i)] > 0.0) active.push_back(i);
  }
  std::vector<SampleOut> outs(active.size());
  std::atomic<std::int64_t> spent{0};
  const auto over_limit = [&] { return cfg.cost_limit && spent.load() > *cfg.cost_limit; };
  parallel_for(active.size(), cfg.threads, [&](std::size_t j) {
    if (over_limit()) return;
    const std::size_t i = active[j];
    outs[j] = run_sample(instances[i], reg, theta, eps_i, cfg, cfg.warm_start ? warm.x[i] : std::nullopt,
                         cfg.warm_start ? warm.q[i] : std::nullopt, cfg.warm_start ? warm.lipschitz[i] : 0.0);
    spent += outs[j].cost.lower_iters + outs[j].cost.cg_iters;
  });
  if (over_limit()) {
    cost.add(spent.load());
    throw CostLimitExceeded(spent.load());
  }

  double loss = 0.0;
  for (std::size_t j = 0; j < active.size(); ++j) {
    const std::size_t i = active[j];
    const double vi = v[static_cast<Eigen::Index>(i)];
    SampleOut& o = outs[j];
    o.cost.index = i;
    res.z += (vi / static_cast<double>(m)) * o.g;
    res.error_bound += vi / static_cast<double>(m) * o.cost.error_bound;
    res.lower_iters += o.cost.lower_iters;
    res.cg_iters += o.cost.cg_iters;
    res.inexact = res.inexact || !o.cost.lower_converged || !o.cost.cg_converged;
    loss += vi * o.loss;
    res.per_sample.push_back(o.cost);
    if (cfg.warm_start) {
      warm.x[i] = o.x;
      warm.q[i] = o.q;
      warm.lipschitz[i] = o.lipschitz;
    }
    res.solutions[i] = std::move(o.x);
  }
  res.batch_loss = loss / vsum;
  cost.add(res.lower_iters + res.cg_iters);
  return res;
}

double upper_objective(const std::vector<ProblemInstance>& instances, const Vec& v, const Regularizer& reg,
                       const ThetaParams& theta, double grad_tol, int max_iters) {
  if (static_cast<std::size_t>(v.size()) != instances.size()) throw std::invalid_argument("upper_objective: v length");
  SolverConfig sc;
  sc.max_iters = max_iters;
  sc.stop = StopMode::GradTol;
  CostCounter scratch;
  double total = 0.0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const double vi = v[static_cast<Eigen::Index>(i)];
    if (vi == 0.0) continue;
    const LowerSolution s = solve_lower(instances[i], reg, theta, instances[i].y, grad_tol, sc, scratch);
    total += vi * upper_loss(s.x, instances[i]);
  }
  return total / static_cast<double>(instances.size());
}

Vec fd_hypergradient_oracle(const std::vector<ProblemInstance>& instances, const Vec& v, const Regularizer& reg,
                            const ThetaParams& theta, double fd_step, const std::vector<Vec>& directions) {
  if (!(fd_step > 0.0)) throw std::invalid_argument("fd oracle: step must be positive");
  auto f_along = [&](const Vec& d) {
    ThetaParams tp = theta, tm = theta;
    tp.flat += fd_step * d;
    tm.flat -= fd_step * d;
    return (upper_objective(instances, v, reg, tp) - upper_objective(instances, v, reg, tm)) / (2.0 * fd_step);
  };
  if (!directions.empty()) {
    Vec out(static_cast<Eigen::Index>(directions.size()));
    for (std::size_t j = 0; j < directions.size(); ++j) {
      if (directions[j].size() != theta.flat.size()) throw std::invalid_argument("fd oracle: direction length");
      out[static_cast<Eigen::Index>(j)] = f_along(directions[j]);
    }
    return out;
  }
  Vec out(theta.flat.size());
  for (Eigen::Index j = 0; j < theta.flat.size(); ++j) out[j] = f_along(Vec::Unit(theta.flat.size(), j));
  return out;
}

}  // namespace bilevel
