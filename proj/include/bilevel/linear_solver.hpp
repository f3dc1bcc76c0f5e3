#pragma once

#include <functional>
#include <optional>
#include <stdexcept>

#include "bilevel/cost.hpp"
#include "bilevel/types.hpp"

namespace bilevel {

struct SpdOperator {
  std::function<Vec(const Vec&)> apply;
  std::size_t dim = 0;
};

class NonSpdError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CgResult {
  Vec q;
  double residual = 0.0;  // recursive residual norm at exit
  int iters = 0;
  bool converged = false;
};

// Plain conjugate gradients for A q = b with an absolute residual target.
// Every operator application after the initial residual counts as one
// iteration and is charged to `cost`.
CgResult cg_solve(const SpdOperator& op, const Vec& b, double tol, int max_iters, CostCounter& cost,
                  const std::optional<Vec>& x0 = std::nullopt);

}  // namespace bilevel
