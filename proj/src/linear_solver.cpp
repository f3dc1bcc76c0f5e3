#include "bilevel/linear_solver.hpp"

#include <cmath>
#include <string>

namespace bilevel {

CgResult cg_solve(const SpdOperator& op, const Vec& b, double tol, int max_iters, CostCounter& cost,
                  const std::optional<Vec>& x0) {
  if (!(tol > 0.0)) throw std::invalid_argument("cg: tol must be positive");
  if (max_iters < 0) throw std::invalid_argument("cg: max_iters must be >= 0");
  if (static_cast<std::size_t>(b.size()) != op.dim) throw std::invalid_argument("cg: rhs dimension mismatch");
  if (!b.allFinite()) throw std::invalid_argument("cg: rhs is not finite");

  CgResult res;
  Vec r;
  if (x0 && x0->size() == b.size()) {
    res.q = *x0;
    // The warm-start residual needs one application; it counts as an iteration.
    r = b - op.apply(res.q);
    ++res.iters;
  } else {
    res.q = Vec::Zero(b.size());
    r = b;
  }
  double rr = r.squaredNorm();
  Vec p = r;
  while (std::sqrt(rr) > tol && res.iters < max_iters) {
    const Vec Ap = op.apply(p);
    ++res.iters;
    const double pAp = p.dot(Ap);
    if (!(pAp > 0.0)) {
      cost.add(res.iters);
      throw NonSpdError("cg: non-positive curvature <Ap, p> = " + std::to_string(pAp) +
                        "; the operator is not symmetric positive definite");
    }
    const double a = rr / pAp;
    res.q += a * p;
    r -= a * Ap;
    const double rr_new = r.squaredNorm();
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  res.residual = std::sqrt(rr);
  res.converged = res.residual <= tol;
  cost.add(res.iters);
  return res;
}

}  // namespace bilevel
