#pragma once

#include <cstdint>
#include <functional>
#include <optional>

#include "bilevel/cost.hpp"
#include "bilevel/problems.hpp"
#include "bilevel/regularizer.hpp"

namespace bilevel {

/// h(x) = ||A x - y||^2 + R_theta(x) + (xi/2) ||x||^2 for one instance.
class LowerObjective {
 public:
  LowerObjective(const ProblemInstance& inst, const Regularizer& reg, const ThetaParams& theta);

  double value(const Vec& x) const;
  Vec grad(const Vec& x) const;
  double value_grad(const Vec& x, Vec& grad) const;
  Vec hvp(const Vec& x, const Vec& v) const;
  // Hessian-vector products at a fixed x.
  std::function<Vec(const Vec&)> hessian_at(const Vec& x) const;

  const ProblemInstance& instance() const { return inst_; }
  std::size_t dim() const { return inst_.shape.size(); }

 private:
  void check(const Vec& x) const;

  const ProblemInstance& inst_;
  const Regularizer& reg_;
  const ThetaParams& theta_;
};

Vec grad_h(const Vec& x, const ThetaParams& theta, const ProblemInstance& inst, const Regularizer& reg);

enum class StopMode {
  Certified,  // stop at ||grad h|| <= mu * eps, so ||x - x_hat|| <= eps
  GradTol,    // stop at ||grad h|| <= eps
};

struct SolverConfig {
  int max_iters = 5000;
  std::optional<double> lipschitz_estimate;
  bool restart = true;
  int nonmonotone_window = 10;  // 0 gives a monotone method
  StopMode stop = StopMode::Certified;
};

void validate(const SolverConfig& cfg);

struct LowerSolution {
  Vec x;
  double grad_norm = 0.0;
  double certified_distance = 0.0;  // grad_norm / mu
  int iters = 0;
  bool converged = false;
  double lipschitz = 0.0;  // step constant in use at exit (after any doubling)
  double objective = 0.0;
};

// Largest eigenvalue of the Hessian at x by power iteration, times `safety`.
double estimate_lipschitz(const LowerObjective& h, const Vec& x, int iters = 20, double safety = 1.1);

/// Accelerated gradient method with 1/L steps, function-value restart and
/// nonmonotone acceptance over a sliding window. Evaluating the starting
/// point counts as one iteration. Returns the iterate with the smallest
/// gradient norm seen.
LowerSolution solve_lower(const ProblemInstance& inst, const Regularizer& reg, const ThetaParams& theta,
                          const Vec& x0, double eps, const SolverConfig& cfg, CostCounter& cost);

}  // namespace bilevel
