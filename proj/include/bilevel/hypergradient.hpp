#pragma once

#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bilevel/cost.hpp"
#include "bilevel/linear_solver.hpp"
#include "bilevel/lower_solver.hpp"
#include "bilevel/problems.hpp"
#include "bilevel/regularizer.hpp"

namespace bilevel {

struct LocalConstants {
  double L_g = 1.0;          // Lipschitz constant of grad g
  double L_H = 1.0;          // Lipschitz constant of the lower Hessian in x
  double grad_g_norm = 1.0;  // bound on ||grad g|| near the solution
  double J_max = 1.0;        // bound on ||d^2 h / dtheta dx||
  double L_J = 1.0;          // Lipschitz constant of d^2 h / dtheta dx in x
};

struct ErrorBudget {
  double delta_x = 0.0;   // lower-level distance target
  double delta_cg = 0.0;  // absolute CG residual target
  double c_x = 0.0;       // sensitivity of the sample hypergradient to x errors
};

// First-order error model for one sample:
//   err <= C_x * delta_x + (J_max / mu) * r_cg,
//   C_x = L_g J / mu + L_J |grad g| / mu + J L_H |grad g| / mu^2.
// Half of eps goes to each term.
ErrorBudget error_budget(double eps, double mu, const LocalConstants& c);

// Bound for achieved accuracies under the same model.
double sample_error_bound(double distance, double cg_residual, double mu, const LocalConstants& c);

enum class ConstantsMode {
  Exact,     // regularizer-supplied bounds, re-derived around each solution
  Supplied,  // HypergradConfig::constants as given
  Probed,    // measured |grad g| and a sampled mixed-JVP norm (heuristic)
  Unit,      // all constants 1
};

struct HypergradConfig {
  SolverConfig solver;
  ConstantsMode constants_mode = ConstantsMode::Exact;
  LocalConstants constants;
  int cg_max_iters = 2000;
  bool warm_start = true;
  int threads = 1;
  // When set, the evaluation stops starting new samples once its cost
  // exceeds the limit and throws CostLimitExceeded.
  std::optional<std::int64_t> cost_limit;
};

class CostLimitExceeded : public std::runtime_error {
 public:
  explicit CostLimitExceeded(std::int64_t spent)
      : std::runtime_error("hypergradient: cost limit exceeded after " + std::to_string(spent) + " units"),
        spent_(spent) {}
  std::int64_t spent() const { return spent_; }

 private:
  std::int64_t spent_;
};

/// Lower-level and adjoint solutions from the previous evaluation, keyed by
/// sample index. Cleared when theta moves by more than reset_distance.
struct WarmStartStore {
  std::vector<std::optional<Vec>> x, q;
  std::vector<double> lipschitz;
  std::optional<Vec> theta_ref;
  double reset_distance = std::numeric_limits<double>::infinity();

  void prepare(std::size_t m, const Vec& theta);
  void clear();
};

struct SampleCost {
  std::size_t index = 0;
  std::int64_t lower_iters = 0;
  std::int64_t cg_iters = 0;
  double error_bound = 0.0;
  bool lower_converged = true;
  bool cg_converged = true;
};

struct HypergradResult {
  Vec z;
  double error_bound = 0.0;
  std::int64_t lower_iters = 0;
  std::int64_t cg_iters = 0;
  std::vector<SampleCost> per_sample;
  bool inexact = false;      // some solve missed its target; the bound uses achieved accuracy
  double batch_loss = 0.0;   // sum v_i g_i(x_i) / sum v_i, 0 for an empty batch
  std::vector<Vec> solutions;  // x_i per sample index (empty when v_i = 0)

  std::int64_t total_cost() const { return lower_iters + cg_iters; }
};

/// z = (1/m) sum_i v_i g_i with g_i = -(d^2 h_i / dtheta dx)^T H_i^{-1} grad g_i,
/// each sample solved so that its error is at most eps m / sum v.
HypergradResult inexact_hypergradient(const std::vector<ProblemInstance>& instances, const Vec& v,
                                      const Regularizer& reg, const ThetaParams& theta, double eps,
                                      const HypergradConfig& cfg, WarmStartStore& warm, CostCounter& cost);

// grad_theta <grad_x h(x, theta), q> at fixed x; the fidelity is theta-free.
Vec mixed_jvp(const Vec& x, const ThetaParams& theta, const Vec& q, const ProblemInstance& inst,
              const Regularizer& reg);

// f_v(theta) = (1/m) sum v_i ||x_hat_i(theta) - x_i*||^2 with x_hat from
// tight solves (gradient norm <= grad_tol).
double upper_objective(const std::vector<ProblemInstance>& instances, const Vec& v, const Regularizer& reg,
                       const ThetaParams& theta, double grad_tol = 1e-12, int max_iters = 200000);

// Central differences of upper_objective, per coordinate or along the given
// directions (one entry per direction).
Vec fd_hypergradient_oracle(const std::vector<ProblemInstance>& instances, const Vec& v, const Regularizer& reg,
                            const ThetaParams& theta, double fd_step,
                            const std::vector<Vec>& directions = {});

}  // namespace bilevel
