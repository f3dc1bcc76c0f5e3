#include "bilevel/lower_solver.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

namespace bilevel {

LowerObjective::LowerObjective(const ProblemInstance& inst, const Regularizer& reg, const ThetaParams& theta)
    : inst_(inst), reg_(reg), theta_(theta) {
  inst_.validate();
}

void LowerObjective::check(const Vec& x) const {
  if (static_cast<std::size_t>(x.size()) != inst_.shape.size()) {
    throw std::invalid_argument("lower objective: vector of length " + std::to_string(x.size()) +
                                " does not match " + to_string(inst_.shape));
  }
}

double LowerObjective::value(const Vec& x) const {
  check(x);
  return (inst_.apply_op(x) - inst_.y).squaredNorm() + reg_.value(x, inst_.shape, theta_) +
         0.5 * inst_.xi * x.squaredNorm();
}

Vec LowerObjective::grad(const Vec& x) const {
  Vec g;
  value_grad(x, g);
  return g;
}

double LowerObjective::value_grad(const Vec& x, Vec& grad) const {
  check(x);
  const Vec r = inst_.apply_op(x) - inst_.y;
  Vec rg;
  const double rv = reg_.value_grad(x, inst_.shape, theta_, rg);
  grad = 2.0 * inst_.apply_adjoint(r) + rg;
  if (inst_.xi != 0.0) grad += inst_.xi * x;
  return r.squaredNorm() + rv + 0.5 * inst_.xi * x.squaredNorm();
}

Vec LowerObjective::hvp(const Vec& x, const Vec& v) const {
  check(x);
  check(v);
  return 2.0 * inst_.apply_adjoint(inst_.apply_op(v)) + reg_.hvp_x(x, inst_.shape, theta_, v) + inst_.xi * v;
}

std::function<Vec(const Vec&)> LowerObjective::hessian_at(const Vec& x) const {
  check(x);
  auto rh = reg_.hessian_at(x, inst_.shape, theta_);
  const ProblemInstance* inst = &inst_;
  return [inst, rh = std::move(rh)](const Vec& v) -> Vec {
    return 2.0 * inst->apply_adjoint(inst->apply_op(v)) + rh(v) + inst->xi * v;
  };
}

Vec grad_h(const Vec& x, const ThetaParams& theta, const ProblemInstance& inst, const Regularizer& reg) {
  return LowerObjective(inst, reg, theta).grad(x);
}

void validate(const SolverConfig& cfg) {
  if (cfg.max_iters < 1) throw std::invalid_argument("solver: max_iters must be >= 1");
  if (cfg.lipschitz_estimate && !(*cfg.lipschitz_estimate > 0.0)) {
    throw std::invalid_argument("solver: lipschitz_estimate must be positive");
  }
  if (cfg.nonmonotone_window < 0) throw std::invalid_argument("solver: nonmonotone_window must be >= 0");
}

double estimate_lipschitz(const LowerObjective& h, const Vec& x, int iters, double safety) {
  const auto H = h.hessian_at(x);
  Rng rng(0x11b5);
  std::normal_distribution<double> normal;
  Vec v(static_cast<Eigen::Index>(h.dim()));
  for (auto& e : v) e = normal(rng);
  v.normalize();
  double lambda = 0.0;
  for (int i = 0; i < iters; ++i) {
    const Vec hv = H(v);
    lambda = v.dot(hv);
    const double n = hv.norm();
    if (!(n > 0.0)) break;
    v = hv / n;
  }
  return safety * std::max(lambda, 1e-12);
}

namespace {

// Gradient step from y with the step constant doubled until the descent
// lemma holds; returns h at the new point.
double safeguarded_step(const LowerObjective& h, const Vec& y, double fy, const Vec& gy, double& L, Vec& z) {
  const double gn2 = gy.squaredNorm();
  for (int tries = 0; tries < 60; ++tries) {
    z = y - gy / L;
    const double fz = h.value(z);
    if (fz <= fy - 0.5 * gn2 / L + 1e-12 * (1.0 + std::fabs(fy))) return fz;
    L *= 2.0;
  }
  throw std::runtime_error("lower solver: step constant diverged (non-finite objective?)");
}

}  // namespace

LowerSolution solve_lower(const ProblemInstance& inst, const Regularizer& reg, const ThetaParams& theta,
                          const Vec& x0, double eps, const SolverConfig& cfg, CostCounter& cost) {
  validate(cfg);
  if (!(eps > 0.0)) throw std::invalid_argument("solver: eps must be positive");
  const LowerObjective h(inst, reg, theta);
  const double mu = strong_convexity_floor(inst, reg, theta);
  const double thr = cfg.stop == StopMode::Certified ? mu * eps : eps;

  Vec x = x0, g;
  double fx = h.value_grad(x, g);
  const double f0 = fx;
  int iters = 1;

  LowerSolution best;
  best.x = x;
  best.grad_norm = g.norm();
  best.objective = fx;
  auto finish = [&](LowerSolution s) {
    s.iters = iters;
    s.certified_distance = s.grad_norm / mu;
    s.converged = s.grad_norm <= thr;
    cost.add(iters);
    return s;
  };
  if (!std::isfinite(fx) || !std::isfinite(best.grad_norm)) {
    throw std::runtime_error("lower solver: non-finite objective at the starting point");
  }
  double L = cfg.lipschitz_estimate ? *cfg.lipschitz_estimate : estimate_lipschitz(h, x0);
  best.lipschitz = L;
  if (best.grad_norm <= thr) return finish(best);

  std::deque<double> window{fx};
  Vec x_prev = x, y, gy, z;
  bool g_valid = true;
  double t = 1.0;

  while (iters < cfg.max_iters) {
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double beta = (t - 1.0) / t_next;
    double fy;
    if (beta == 0.0) {
      if (!g_valid) {
        fx = h.value_grad(x, g);
        g_valid = true;
      }
      y = x;
      gy = g;
      fy = fx;
    } else {
      y = x + beta * (x - x_prev);
      fy = h.value_grad(y, gy);
    }
    ++iters;
    const double gyn = gy.norm();
    if (!std::isfinite(fy) || !std::isfinite(gyn)) throw std::runtime_error("lower solver: non-finite iterate");
    if (fy <= f0 && gyn < best.grad_norm) {
      best.x = y;
      best.grad_norm = gyn;
      best.objective = fy;
      best.lipschitz = L;
      if (gyn <= thr) return finish(best);
    }

    double fz = safeguarded_step(h, y, fy, gy, L, z);
    const double ref = cfg.nonmonotone_window > 0 ? *std::max_element(window.begin(), window.end()) : fx;
    if (fz <= ref) {
      if (cfg.restart && fz > fx) {
        x_prev = z;
        t = 1.0;
      } else {
        x_prev = x;
        t = t_next;
      }
      x = z;
      fx = fz;
      g_valid = false;
    } else {
      if (!g_valid) fx = h.value_grad(x, g);
      fz = safeguarded_step(h, x, fx, g, L, z);
      x = z;
      x_prev = z;
      fx = fz;
      g_valid = false;
      t = 1.0;
    }
    window.push_back(fx);
    while (static_cast<int>(window.size()) > std::max(cfg.nonmonotone_window, 1)) window.pop_front();
  }
  best.lipschitz = L;
  return finish(best);
}

}  // namespace bilevel
