#include <cmath>
#include <stdexcept>

#include <Eigen/QR>

#include "doctest.h"
#include "oracles.hpp"

#include "bilevel/crr.hpp"
#include "bilevel/linear_solver.hpp"
#include "bilevel/lower_solver.hpp"

using namespace bilevel;

namespace {

ProblemInstance toy_instance(const Vec& y) {
  ProblemInstance p;
  p.shape = {1, 1, static_cast<int>(y.size())};
  p.y = y;
  p.x_star = 0.4 * y;
  return p;
}

SpdOperator dense_op(const oracle::Mat& A) {
  return SpdOperator{[A](const Vec& v) -> Vec { return A * v; }, static_cast<std::size_t>(A.rows())};
}

// Q diag(lambda) Q^T with eigenvalues spread geometrically over [1, cond].
oracle::Mat conditioned_spd(int n, double cond, std::mt19937_64& rng) {
  oracle::Mat B(n, n);
  for (int j = 0; j < n; ++j) B.col(j) = oracle::gaussian(n, rng);
  const oracle::Mat Q = Eigen::HouseholderQR<oracle::Mat>(B).householderQ();
  Vec lambda(n);
  for (int i = 0; i < n; ++i) lambda[i] = std::pow(cond, static_cast<double>(i) / (n - 1));
  return Q * lambda.asDiagonal() * Q.transpose();
}

}  // namespace

TEST_CASE("grad_h examples") {
  Rng rng(1);
  const ZeroRegularizer zero;
  const ThetaParams none(zero.layout());
  const auto insts = make_denoising(synth_images(1, 8, rng), 0.1, rng);
  const ProblemInstance& p = insts[0];
  CHECK(grad_h(p.y, none, p, zero).isZero(0.0));
  const Vec d = oracle::gaussian(64, rng);
  CHECK((grad_h(p.y + d, none, p, zero) - 2.0 * d).norm() <= 1e-14 * d.norm());
  CHECK_THROWS_AS(grad_h(Vec::Zero(3), none, p, zero), std::invalid_argument);

  auto inp = make_inpainting(synth_images(1, 8, rng), 0.5, 0.0, 0.3, rng);
  const Vec x = oracle::gaussian(64, rng);
  const Vec expect = 2.0 * inp[0].mask.cwiseProduct(inp[0].mask.cwiseProduct(x) - inp[0].y) + 0.3 * x;
  CHECK((grad_h(x, none, inp[0], zero) - expect).norm() <= 1e-13 * expect.norm());
}

TEST_CASE("grad_h with crr matches finite differences") {
  CrrConfig cfg;
  cfg.norm_shape = {1, 8, 8};
  const Crr crr(cfg);
  Rng rng(2);
  const ThetaParams th = crr.initial_params(rng);
  const auto insts = make_denoising(synth_images(10, 8, rng), 0.1, rng);
  for (const auto& p : insts) {
    const LowerObjective h(p, crr, th);
    const Vec x = p.y + oracle::gaussian(64, rng, 0.05);
    const Vec fd = oracle::fd_gradient([&](const Vec& z) { return h.value(z); }, x, 1e-5);
    CHECK(oracle::rel_err(grad_h(x, th, p, crr), fd) <= 1e-6);
    const Vec v = oracle::gaussian(64, rng);
    const Vec fd_hv = oracle::fd_jvp([&](const Vec& z) { return h.grad(z); }, x, v, 1e-5);
    CHECK(oracle::rel_err(h.hvp(x, v), fd_hv) <= 1e-6);
    CHECK(oracle::rel_err(h.hessian_at(x)(v), h.hvp(x, v)) <= 1e-14);
  }
}

TEST_CASE("solve: already optimal start") {
  Rng rng(3);
  const ZeroRegularizer zero;
  const ThetaParams none(zero.layout());
  const auto insts = make_denoising(synth_images(1, 8, rng), 0.1, rng);
  CostCounter cost;
  const auto sol = solve_lower(insts[0], zero, none, insts[0].y, 1e-6, SolverConfig{}, cost);
  CHECK(sol.converged);
  CHECK(sol.iters <= 1);
  CHECK(sol.x == insts[0].y);
  CHECK(sol.certified_distance == 0.0);
  CHECK(cost.value() == sol.iters);
}

TEST_CASE("solve: quadratic toy closed form") {
  const QuadToy quad;
  Rng rng(4);
  for (double s : {-1.0, 0.0, 0.8}) {
    const ThetaParams th = quad.params(s);
    const Vec y = oracle::gaussian(6, rng);
    const ProblemInstance p = toy_instance(y);
    const Vec xhat = oracle::toy_xhat(y, s);
    int prev_iters = 0;
    for (double eps : {1e-2, 1e-4, 1e-6}) {
      CostCounter cost;
      const auto sol = solve_lower(p, quad, th, Vec::Zero(6), eps, SolverConfig{}, cost);
      CAPTURE(s);
      CAPTURE(eps);
      CHECK(sol.converged);
      CHECK((sol.x - xhat).norm() <= eps);
      CHECK(sol.certified_distance <= eps);
      CHECK(sol.certified_distance == doctest::Approx(sol.grad_norm / (2.0 + 2.0 * std::exp(s))));
      CHECK(sol.iters >= prev_iters);
      CHECK(cost.value() == sol.iters);
      prev_iters = sol.iters;
    }
  }
  CostCounter cost;
  CHECK_THROWS_AS(solve_lower(toy_instance(Vec::Ones(3)), quad, quad.params(0), Vec::Zero(3), 0.0, SolverConfig{},
                              cost),
                  std::invalid_argument);
  SolverConfig bad;
  bad.max_iters = 0;
  CHECK_THROWS_AS(solve_lower(toy_instance(Vec::Ones(3)), quad, quad.params(0), Vec::Zero(3), 1e-3, bad, cost),
                  std::invalid_argument);
}

TEST_CASE("solve: tightening eps never decreases iterations") {
  CrrConfig cfg;
  cfg.norm_shape = {1, 12, 12};
  const Crr crr(cfg);
  Rng rng(5);
  const ThetaParams th = crr.initial_params(rng);
  const auto insts = make_denoising(synth_images(3, 12, rng), 0.1, rng);
  for (const auto& p : insts) {
    int prev = 0;
    for (double eps = 1e-1; eps >= 1e-7; eps /= 10.0) {
      CostCounter cost;
      const auto sol = solve_lower(p, crr, th, p.y, eps, SolverConfig{}, cost);
      REQUIRE(sol.converged);
      REQUIRE(sol.iters >= prev);
      prev = sol.iters;
    }
  }
}

TEST_CASE("certification soundness on the toy") {
  const QuadToy quad;
  Rng rng(6);
  std::uniform_real_distribution<double> us(-2.0, 2.0), ue(-8.0, -1.0);
  int converged = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const double s = us(rng), eps = std::pow(10.0, ue(rng));
    const Vec y = oracle::gaussian(5, rng, 2.0);
    SolverConfig cfg;
    cfg.max_iters = 1 + trial % 50;
    CostCounter cost;
    const auto sol = solve_lower(toy_instance(y), quad, quad.params(s), oracle::gaussian(5, rng), eps, cfg, cost);
    const double dist = (sol.x - oracle::toy_xhat(y, s)).norm();
    REQUIRE(dist <= sol.certified_distance * (1.0 + 1e-9) + 1e-15);
    if (sol.converged) {
      ++converged;
      REQUIRE(dist <= eps);
    }
  }
  CHECK(converged > 20);
}

TEST_CASE("descent") {
  CrrConfig cfg;
  cfg.norm_shape = {1, 12, 12};
  const Crr crr(cfg);
  Rng rng(7);
  const ThetaParams th = crr.initial_params(rng);
  const auto insts = make_denoising(synth_images(4, 12, rng), 0.15, rng);
  for (int window : {0, 10}) {
    for (const auto& p : insts) {
      SolverConfig sc;
      sc.nonmonotone_window = window;
      sc.max_iters = 30;
      const Vec x0 = p.y + oracle::gaussian(144, rng, 0.1);
      const LowerObjective h(p, crr, th);
      CostCounter cost;
      const auto sol = solve_lower(p, crr, th, x0, 1e-9, sc, cost);
      CHECK(h.value(sol.x) <= h.value(x0));
      CHECK(sol.objective == doctest::Approx(h.value(sol.x)).epsilon(1e-12));
    }
  }
}

TEST_CASE("warm start does not cost more than a cold start") {
  CrrConfig cfg;
  cfg.norm_shape = {1, 16, 16};
  const Crr crr(cfg);
  double ratio_sum = 0.0;
  for (int run = 0; run < 20; ++run) {
    Rng rng(100 + run);
    const auto insts = make_denoising(synth_images(1, 16, rng), 0.1, rng);
    const auto& p = insts[0];
    ThetaParams th = crr.initial_params(rng);
    CostCounter c0;
    const auto prev = solve_lower(p, crr, th, p.y, 1e-5, SolverConfig{}, c0);
    // A small outer step.
    th.flat += oracle::gaussian(th.flat.size(), rng, 1e-3);
    th = crr.project(th);
    CostCounter cold, warm;
    const auto a = solve_lower(p, crr, th, p.y, 1e-5, SolverConfig{}, cold);
    const auto b = solve_lower(p, crr, th, prev.x, 1e-5, SolverConfig{}, warm);
    REQUIRE(a.converged);
    REQUIRE(b.converged);
    ratio_sum += static_cast<double>(b.iters) / a.iters;
  }
  CHECK(ratio_sum / 20.0 <= 1.05);
}

TEST_CASE("lipschitz estimate") {
  const QuadToy quad;
  const ProblemInstance p = toy_instance(Vec::Ones(4));
  const ThetaParams th = quad.params(0.5);
  const LowerObjective h(p, quad, th);
  const double L = estimate_lipschitz(h, Vec::Zero(4), 20, 1.0);
  CHECK(L == doctest::Approx(2.0 + 2.0 * std::exp(0.5)).epsilon(1e-12));
  CHECK(estimate_lipschitz(h, Vec::Zero(4)) == doctest::Approx(1.1 * L).epsilon(1e-12));
}

TEST_CASE("cg examples") {
  CostCounter cost;
  const Vec b = (Vec(3) << 1, 2, 4).finished();
  const auto id = cg_solve(SpdOperator{[](const Vec& v) { return v; }, 3}, b, 1e-12, 10, cost);
  CHECK(id.q == b);
  CHECK(id.iters == 1);
  CHECK(id.converged);

  const Vec diag = (Vec(3) << 1, 2, 4).finished();
  const auto d = cg_solve(SpdOperator{[diag](const Vec& v) -> Vec { return diag.cwiseProduct(v); }, 3}, b, 1e-12,
                          10, cost);
  CHECK(d.iters <= 3);
  CHECK((d.q - Vec::Ones(3)).norm() <= 1e-12);

  std::mt19937_64 rng(8);
  const oracle::Mat A = oracle::random_spd(8, rng);
  const Vec rhs = oracle::gaussian(8, rng);
  const auto r = cg_solve(dense_op(A), rhs, 1e-10, 100, cost);
  CHECK(oracle::rel_err(r.q, oracle::gauss_solve(A, rhs)) <= 1e-8);
  CHECK((A * r.q - rhs).norm() <= 1e-10 * (1.0 + 1e-6));
}

TEST_CASE("cg charges exactly its iterations") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const oracle::Mat A = oracle::random_spd(12, rng);
    const Vec b = oracle::gaussian(12, rng);
    CostCounter cost;
    cost.add(7);
    int calls = 0;
    const SpdOperator op{[&](const Vec& v) -> Vec {
                           ++calls;
                           return A * v;
                         },
                         12};
    const std::optional<Vec> x0 = trial % 2 ? std::optional<Vec>(oracle::gaussian(12, rng)) : std::nullopt;
    const auto r = cg_solve(op, b, 1e-9, 3 + trial, cost, x0);
    CHECK(cost.value() == 7 + r.iters);
    CHECK(calls == r.iters);
  }
}

TEST_CASE("cg rejects non-SPD operators and bad input") {
  CostCounter cost;
  const Vec b = Vec::Ones(2);
  const auto neg = SpdOperator{[](const Vec& v) -> Vec { return -v; }, 2};
  CHECK_THROWS_AS(cg_solve(neg, b, 1e-8, 10, cost), NonSpdError);
  CHECK(cost.value() == 1);
  const auto id = SpdOperator{[](const Vec& v) { return v; }, 2};
  CHECK_THROWS_AS(cg_solve(id, b, 0.0, 10, cost), std::invalid_argument);
  CHECK_THROWS_AS(cg_solve(id, Vec::Ones(3), 1e-8, 10, cost), std::invalid_argument);
  CHECK_THROWS_AS(cg_solve(id, Vec::Constant(2, std::nan("")), 1e-8, 10, cost), std::invalid_argument);
}

// Exact-arithmetic property; floating-point CG loses orthogonality on spread
// spectra and can need more than dim iterations.
TEST_CASE("cg reaches tol within dim iterations up to condition number 1e6") {
  std::mt19937_64 rng(10);
  for (int n : {4, 8, 16}) {
    for (double cond : {1.0, 1e2, 1e4, 1e6}) {
      const oracle::Mat A = conditioned_spd(n, cond, rng);
      const Vec b = oracle::gaussian(n, rng);
      const double tol = 1e-8 * b.norm();
      CostCounter cost;
      const auto r = cg_solve(dense_op(A), b, tol, n, cost);
      CAPTURE(n);
      CAPTURE(cond);
      CHECK(r.converged);
      CHECK((A * r.q - b).norm() <= tol * 1.01);
    }
  }
}

TEST_CASE("cg converges on ill-conditioned matrices") {
  std::mt19937_64 rng(11);
  for (int n : {4, 8, 16, 32}) {
    for (double cond : {1.0, 1e2, 1e4, 1e6}) {
      const oracle::Mat A = conditioned_spd(n, cond, rng);
      const Vec b = oracle::gaussian(n, rng);
      const double tol = 1e-8 * b.norm();
      CostCounter cost;
      const auto r = cg_solve(dense_op(A), b, tol, 10 * n, cost);
      CAPTURE(n);
      CAPTURE(cond);
      CHECK(r.converged);
      CHECK((A * r.q - b).norm() <= tol * 1.01);
      CHECK(oracle::rel_err(r.q, oracle::gauss_solve(A, b)) <= 1e-8 * cond);
    }
  }
}
