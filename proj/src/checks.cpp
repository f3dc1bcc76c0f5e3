#include <algorithm>
#include <array>
#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "bilevel/commands.hpp"
#include "bilevel/conv.hpp"
#include "bilevel/crr.hpp"
#include "bilevel/icnn.hpp"

namespace bilevel {

namespace {

double rel_err(const Vec& a, const Vec& b) {
  const double scale = std::max({a.norm(), b.norm(), 1e-300});
  return (a - b).norm() / scale;
}

Vec random_vec(Eigen::Index n, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal;
  Vec v(n);
  for (auto& e : v) e = scale * normal(rng);
  return v;
}

Vec central_diff(const std::function<double(const Vec&)>& f, const Vec& x, const Vec& d, double h) {
  Vec out(1);
  out[0] = (f(x + h * d) - f(x - h * d)) / (2.0 * h);
  return out;
}

// Worst relative error of grad_x, hvp_x and mixed_jvp against central
// differences along random directions.
std::array<double, 3> fd_errors(const Regularizer& reg, const Shape& shape, int points, Rng& rng) {
  std::array<double, 3> worst{0.0, 0.0, 0.0};
  const double h = 1e-6;
  for (int t = 0; t < points; ++t) {
    const ThetaParams theta = reg.initial_params(rng);
    ThetaParams th = theta;
    th.flat += random_vec(th.flat.size(), rng, 0.05);
    th = reg.project(th);
    for (const auto& spec : th.layout.specs()) {
      if (spec.nonneg) th.block(spec.name) = th.block(spec.name).cwiseAbs().array() + 1e-3;
    }
    const Vec x = random_vec(static_cast<Eigen::Index>(shape.size()), rng, 0.5);
    const Vec d = random_vec(x.size(), rng);
    const Vec q = random_vec(x.size(), rng);
    const Vec dt = random_vec(th.flat.size(), rng);

    const auto f = [&](const Vec& xx) { return reg.value(xx, shape, th); };
    Vec a(1), n;
    a[0] = reg.grad_x(x, shape, th).dot(d);
    n = central_diff(f, x, d, h);
    worst[0] = std::max(worst[0], rel_err(a, n));

    const Vec hv = reg.hvp_x(x, shape, th, d);
    const Vec fd_hv = (reg.grad_x(x + h * d, shape, th) - reg.grad_x(x - h * d, shape, th)) / (2.0 * h);
    worst[1] = std::max(worst[1], rel_err(hv, fd_hv));

    const auto fq = [&](const Vec& flat) {
      ThetaParams tt = th;
      tt.flat = flat;
      return reg.grad_x(x, shape, tt).dot(q);
    };
    a[0] = reg.mixed_jvp(x, shape, th, q).dot(dt);
    n = central_diff(fq, th.flat, dt, h);
    worst[2] = std::max(worst[2], rel_err(a, n));
  }
  return worst;
}

double slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i] / n;
    my += y[i] / n;
  }
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / sxx;
}

}  // namespace

std::vector<CheckItem> run_checks(bool full) {
  std::vector<CheckItem> items;
  Rng rng(20240601);

  // Toy hypergradient against the closed form d/ds ||y/(1+e^s) - x*||^2.
  {
    const QuadToy reg;
    ProblemInstance inst;
    inst.shape = {1, 1, 1};
    inst.y = Vec::Ones(1);
    inst.x_star = Vec::Zero(1);
    const std::vector<ProblemInstance> batch{inst};
    HypergradConfig hc;
    WarmStartStore warm;
    CostCounter cost;
    const auto res = inexact_hypergradient(batch, Vec::Ones(1), reg, reg.params(0.0), 1e-8, hc, warm, cost);
    const double err = std::fabs(res.z[0] - (-0.25));
    items.push_back({"toy hypergradient closed form", err <= 1e-6, err, 1e-6, ""});
  }

  // Conv adjoint identity on a random two-layer stack.
  {
    ConvStack st;
    st.layers = {ConvLayer(1, 4, 5), ConvLayer(4, 8, 5)};
    for (auto& l : st.layers) l.weights = random_vec(l.weights.size(), rng);
    const Shape s{1, 12, 12};
    const Vec x = random_vec(static_cast<Eigen::Index>(s.size()), rng);
    const Vec u = random_vec(static_cast<Eigen::Index>(st.output_shape(s).size()), rng);
    const double lhs = st.apply(x, s).dot(u), rhs = x.dot(st.adjoint(u, s));
    const double err = std::fabs(lhs - rhs) / std::max(1.0, std::fabs(lhs));
    items.push_back({"conv adjoint identity", err <= 1e-10, err, 1e-10, ""});
  }

  // Analytic derivatives against finite differences.
  {
    const int side = full ? 16 : 8, points = full ? 10 : 3;
    CrrConfig cc;
    cc.norm_shape = {1, side, side};
    const Crr crr(cc);
    const Icnn icnn;
    const Shape s{1, side, side};
    const auto ec = fd_errors(crr, s, points, rng);
    const auto ei = fd_errors(icnn, s, points, rng);
    const char* what[3] = {"grad_x", "hvp_x", "mixed_jvp"};
    for (int i = 0; i < 3; ++i) {
      items.push_back({std::string("crr ") + what[i] + " vs FD", ec[i] <= 1e-5, ec[i], 1e-5, ""});
      items.push_back({std::string("icnn ") + what[i] + " vs FD", ei[i] <= 1e-5, ei[i], 1e-5, ""});
    }
  }

  // CG against a dense direct solve.
  {
    const int n = 8;
    Eigen::MatrixXd B(n, n);
    for (int i = 0; i < n; ++i) B.col(i) = random_vec(n, rng);
    const Eigen::MatrixXd A = B * B.transpose() + Eigen::MatrixXd::Identity(n, n);
    const Vec b = random_vec(n, rng);
    CostCounter cost;
    const auto res = cg_solve({[&](const Vec& v) { return Vec(A * v); }, static_cast<std::size_t>(n)}, b, 1e-12,
                              10 * n, cost);
    const Vec direct = A.ldlt().solve(b);
    const double err = (res.q - direct).norm() / direct.norm();
    items.push_back({"cg vs direct solve", err <= 1e-8, err, 1e-8, ""});
  }

  // L_K slopes per Table-1 row.
  {
    std::vector<double> Ks{1e3, 1e4, 1e5};
    if (full) Ks.push_back(1e6);
    struct Row {
      const char* name;
      Schedule step, acc;
      double expected;
      bool divide_log, log_axis;
      double tol;
    };
    const Row rows[] = {
        {"L_K step-limited", Schedule::polynomial(1, 0.75), Schedule::polynomial(1, 1.0), -0.25, false, false, 0.10},
        {"L_K accuracy-limited", Schedule::polynomial(1, 0.55), Schedule::polynomial(1, 0.05), -0.1, false, false,
         0.10},
        {"L_K boundary", Schedule::polynomial(1, 0.75), Schedule::polynomial(1, 0.125), -0.25, true, false, 0.15},
        {"L_K logarithmic", Schedule::polynomial(1, 0.55), Schedule::logarithmic(1, 0.05), -0.1, false, true, 0.10},
    };
    for (const auto& r : rows) {
      std::vector<double> lx, ly;
      for (double K : Ks) {
        double L = l_k_sum(r.step, r.acc, static_cast<std::int64_t>(K));
        const double lk = std::log(K);
        if (r.divide_log) L /= lk;
        if (r.log_axis) L /= 1.0 + 2.0 * r.acc.exponent / ((1.0 - r.step.exponent) * lk);
        lx.push_back(r.log_axis ? std::log(lk) : lk);
        ly.push_back(std::log(L));
      }
      const double s = slope(lx, ly);
      const double rel = std::fabs(s - r.expected) / std::fabs(r.expected);
      items.push_back({r.name, rel <= r.tol, rel, r.tol, "slope " + std::to_string(s)});
    }
  }
  return items;
}

}  // namespace bilevel
