// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers
// on the command line to run a subset.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"

#include "bilevel/commands.hpp"
#include "bilevel/crr.hpp"
#include "bilevel/hypergradient.hpp"
#include "bilevel/icnn.hpp"

using namespace bilevel;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

ProblemInstance unit_toy() {
  ProblemInstance p;
  p.shape = {1, 1, 1};
  p.y = Vec::Ones(1);
  p.x_star = Vec::Zero(1);
  return p;
}

std::vector<oracle::ToyTask> as_tasks(const std::vector<ProblemInstance>& insts) {
  std::vector<oracle::ToyTask> t;
  for (const auto& p : insts) t.push_back({p.y, p.x_star});
  return t;
}

// 1. Toy hypergradient against the closed form.
Outcome hypergradient_oracle() {
  HypergradConfig hc;
  hc.constants_mode = ConstantsMode::Exact;
  const QuadToy quad;
  bool ok = true;
  std::string detail;

  WarmStartStore warm;
  CostCounter cost;
  const auto tight = inexact_hypergradient({unit_toy()}, Vec::Ones(1), quad, quad.params(0.0), 1e-8, hc, warm, cost);
  const double e0 = std::fabs(tight.z[0] - oracle::toy_grad(Vec::Ones(1), Vec::Zero(1), 0.0));
  ok = ok && e0 <= 1e-6;
  detail += fmt("err %.2e at eps 1e-8", e0);

  Rng rng(11);
  const auto family = make_toy_family(10, 4, rng);
  const auto tasks = as_tasks(family);
  std::uniform_real_distribution<double> s_dist(-2.0, 2.0);
  for (double eps : {1e-1, 1e-2, 1e-3}) {
    double worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      const double s = s_dist(rng);
      const Vec v = t % 2 ? Vec::Ones(10) : sample_v(10, SamplingMode::Binomial, 0, rng);
      WarmStartStore w;
      CostCounter c;
      const auto r = inexact_hypergradient(family, v, quad, quad.params(s), eps, hc, w, c);
      worst = std::max(worst, std::fabs(r.z[0] - oracle::toy_family_grad(tasks, v, s)) / eps);
    }
    ok = ok && worst <= 1.0;
    detail += fmt(", max err/eps %.3f at eps %.0e", worst, eps);
  }
  return {ok, detail};
}

// Worst relative FD error of grad_x, hvp_x and mixed_jvp over random points.
std::array<double, 3> fd_worst(const Regularizer& reg, const Shape& shape, int points, Rng& rng) {
  std::array<double, 3> worst{0.0, 0.0, 0.0};
  const double h = 1e-6;
  const auto n = static_cast<Eigen::Index>(shape.size());
  for (int t = 0; t < points; ++t) {
    ThetaParams th = reg.initial_params(rng);
    th.flat += oracle::gaussian(th.flat.size(), rng, 0.05);
    th = reg.project(th);
    // Keep constrained entries off the boundary so the theta differences stay feasible.
    for (const auto& spec : th.layout.specs()) {
      if (spec.nonneg) th.block(spec.name) = th.block(spec.name).array() + 1e-3;
    }
    const Vec x = oracle::gaussian(n, rng, 0.5);
    const Vec d = oracle::gaussian(n, rng).normalized();
    const Vec q = oracle::gaussian(n, rng);
    const Vec dt = oracle::gaussian(th.flat.size(), rng).normalized();

    Vec a(1), fd(1);
    a[0] = reg.grad_x(x, shape, th).dot(d);
    fd[0] = (reg.value(x + h * d, shape, th) - reg.value(x - h * d, shape, th)) / (2.0 * h);
    worst[0] = std::max(worst[0], oracle::rel_err(a, fd));

    const auto grad = [&](const Vec& z) { return reg.grad_x(z, shape, th); };
    worst[1] = std::max(worst[1], oracle::rel_err(reg.hvp_x(x, shape, th, d), oracle::fd_jvp(grad, x, d, h)));

    const auto coupled = [&](const Vec& flat) {
      ThetaParams tt = th;
      tt.flat = flat;
      Vec out(1);
      out[0] = reg.grad_x(x, shape, tt).dot(q);
      return out;
    };
    a[0] = reg.mixed_jvp(x, shape, th, q).dot(dt);
    worst[2] = std::max(worst[2], oracle::rel_err(a, oracle::fd_jvp(coupled, th.flat, dt, h)));
  }
  return worst;
}

// 2. Finite-difference agreement on 16x16 inputs.
Outcome fd_agreement() {
  const Shape shape{1, 16, 16};
  CrrConfig cc;
  cc.norm_shape = shape;
  const Crr crr(cc);
  const Icnn icnn;
  Rng rng(2024);
  const auto ec = fd_worst(crr, shape, 10, rng);
  const auto ei = fd_worst(icnn, shape, 10, rng);
  bool ok = true;
  for (int i = 0; i < 3; ++i) ok = ok && ec[i] <= 1e-5 && ei[i] <= 1e-5;
  return {ok, fmt("crr grad %.1e hvp %.1e mixed %.1e; icnn grad %.1e hvp %.1e mixed %.1e", ec[0], ec[1], ec[2],
                  ei[0], ei[1], ei[2])};
}

// 3. L_K decade-ratio slopes for each rate-table row.
Outcome lk_table() {
  struct Row {
    const char* name;
    Schedule step, acc;
    double expected, tol;
    bool boundary, logarithmic;
  };
  const Row rows[] = {
      {"accuracy-limited", Schedule::polynomial(1, 0.55), Schedule::polynomial(1, 0.05), -0.1, 0.10, false, false},
      {"boundary", Schedule::polynomial(1, 0.75), Schedule::polynomial(1, 0.125), -0.25, 0.15, true, false},
      {"step-limited", Schedule::polynomial(1, 0.75), Schedule::polynomial(1, 1.0), -0.25, 0.10, false, false},
      {"logarithmic", Schedule::polynomial(1, 0.55), Schedule::logarithmic(1, 0.05), -0.1, 0.10, false, true},
  };
  bool ok = true;
  std::string detail;
  for (const auto& r : rows) {
    std::vector<double> lx, ly;
    for (int dec = 3; dec <= 6; ++dec) {
      const double K = std::pow(10.0, dec), logk = std::log(K);
      double L = l_k_sum(r.step, r.acc, static_cast<std::int64_t>(K));
      if (r.boundary) L /= logk;
      if (r.logarithmic) L /= 1.0 + 2.0 * r.acc.exponent / ((1.0 - r.step.exponent) * logk);
      lx.push_back(r.logarithmic ? std::log(logk) : logk);
      ly.push_back(std::log(L));
    }
    const double slope = (ly.back() - ly.front()) / (lx.back() - lx.front());
    const double rel = std::fabs(slope - r.expected) / std::fabs(r.expected);
    ok = ok && rel <= r.tol;
    detail += fmt("%s%s %.4f (%.1f%%; per decade", detail.empty() ? "" : "; ", r.name, slope, 100 * rel);
    for (std::size_t i = 1; i < lx.size(); ++i) detail += fmt(" %.4f", (ly[i] - ly[i - 1]) / (lx[i] - lx[i - 1]));
    detail += ")";
  }
  return {ok, detail};
}

SweepProblem toy_problem(std::uint64_t seed) {
  Rng rng(1000 + seed);
  SweepProblem p;
  p.train = make_toy_family(10, 4, rng);
  p.reg = std::make_shared<QuadToy>();
  p.theta0 = ThetaParams(p.reg->layout());
  return p;
}

RunConfig toy_base() {
  RunConfig base;
  base.batch.mode = SamplingMode::Binomial;
  base.proxy_every = 25;
  base.log_every = 25;
  base.hyper.constants_mode = ConstantsMode::Exact;
  return base;
}

// 4. Fitted rates on the toy family.
Outcome rate_fits() {
  RunConfig base = toy_base();
  base.budget = std::int64_t{1} << 60;
  base.max_outer_iters = 10000;
  const std::vector<SweepCell> grid{{1, 0.75, 1, 1}, {0.1, 0.6, 1, 1}, {1, 0.55, 1, 1}, {0.25, 0.5, 1, 1}};
  std::vector<std::uint64_t> seeds;
  for (std::uint64_t s = 0; s < 10; ++s) seeds.push_back(s);
  const SweepResult res = sweep(grid, seeds, base, toy_problem);

  bool ok = true;
  std::string detail;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    std::vector<double> slopes;
    for (const auto& row : res.rows) {
      if (row.cell.p == grid[c].p && row.cell.q == grid[c].q && row.slope) slopes.push_back(*row.slope);
    }
    if (slopes.size() != seeds.size()) {
      ok = false;
      detail += fmt("%s(%g,%g) %zu/10 fits", detail.empty() ? "" : "; ", grid[c].p, grid[c].q, slopes.size());
      continue;
    }
    const double med = oracle::median(slopes);
    if (c + 1 < grid.size()) {
      const double predicted = -*predicted_rate(grid[c].p, grid[c].q).exponent;
      ok = ok && std::fabs(med - predicted) <= 0.08;
      detail += fmt("%s(%g,%g) %.3f vs %.3f", detail.empty() ? "" : "; ", grid[c].p, grid[c].q, med, predicted);
    } else {
      ok = ok && med <= -0.17;
      detail += fmt("; (%g,%g) %.3f vs <= -0.17", grid[c].p, grid[c].q, med);
    }
  }
  return {ok, detail};
}

// 5. Constant accuracy stalls, decaying accuracy does not.
Outcome plateau() {
  RunConfig base = toy_base();
  base.budget = 200000;
  std::vector<double> stall_const, stall_decay, tail_const, tail_decay;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SweepProblem prob = toy_problem(seed);
    base.seed = seed;
    for (const SweepCell cell : {SweepCell{0, 0, 0.1, 1}, SweepCell{1, 0.75, 1, 1}}) {
      const RunLog log = run(prob.train, *prob.reg, prob.theta0, cell_config(base, cell));
      const auto raw = proxy_series(log.rows);
      const double best = running_min(raw).back().value;
      std::vector<double> tail;
      for (std::size_t i = raw.size() - raw.size() / 5; i < raw.size(); ++i) tail.push_back(raw[i].value);
      (cell.q == 0 ? stall_const : stall_decay).push_back(best);
      (cell.q == 0 ? tail_const : tail_decay).push_back(oracle::median(tail));
    }
  }
  const double mc = oracle::median(stall_const), md = oracle::median(stall_decay);
  return {mc > 1e-3 && md < 1e-3,
          fmt("median running-min proxy: constant %.2e (need > 1e-3), decaying %.2e (need < 1e-3); "
              "median tail proxy: constant %.2e, decaying %.2e",
              mc, md, oracle::median(tail_const), oracle::median(tail_decay))};
}

ExperimentConfig desk_config(const std::string& reg, const std::string& optimizer) {
  ExperimentConfig c;
  c.problem = "denoise";
  c.train_images = 16;
  c.train_size = 32;
  c.regularizer = reg;
  c.channels = {1, 4, 8};
  c.optimizer = optimizer;
  c.step = Schedule::constant(1e-2);
  c.accuracy = Schedule::polynomial(1.0, 2.0);
  c.budget = 10000;
  c.batch = 8;
  c.threads = 1;
  return c;
}

// 6. Denoising with a small CRR improves on the noisy input.
Outcome denoising() {
  ExperimentConfig cfg = desk_config("crr", "isgd");
  cfg.seed = 1;
  const Experiment ex = build_experiment(cfg);
  double noisy = 0.0;
  for (const auto& t : ex.test) noisy += psnr(t.y, t.x_star) / static_cast<double>(ex.test.size());
  const double start = mean_test_psnr(ex.test, *ex.reg, ex.theta0);
  const RunLog log = run(ex.train, *ex.reg, ex.theta0, make_run_config(cfg), &ex.test);
  if (log.rows.empty() || !log.rows.back().test_psnr) return {false, "no test PSNR recorded"};
  const double final_psnr = *log.rows.back().test_psnr;
  return {final_psnr >= noisy + 1.0, fmt("test PSNR %.2f dB (start %.2f dB, noisy input %.2f dB), %lld steps",
                                         final_psnr, start, noisy, static_cast<long long>(log.steps))};
}

// 7. IAdam against ISGD with an ICNN at equal cost.
Outcome iadam_sanity() {
  int wins = 0, ties = 0;
  std::string steps;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    double loss[2];
    long long n[2];
    ExperimentConfig cfg = desk_config("icnn", "isgd");
    cfg.seed = seed;
    cfg.test_images = 0;
    const Experiment ex = build_experiment(cfg);
    const Vec ones = Vec::Ones(static_cast<Eigen::Index>(ex.train.size()));
    std::optional<double> start_loss;
    for (int o = 0; o < 2; ++o) {
      cfg.optimizer = o == 0 ? "isgd" : "iadam";
      const RunLog log = run(ex.train, *ex.reg, ex.theta0, make_run_config(cfg));
      n[o] = static_cast<long long>(log.steps);
      if (log.theta.flat == ex.theta0.flat) {
        if (!start_loss) start_loss = upper_objective(ex.train, ones, *ex.reg, ex.theta0, 1e-3, 5000);
        loss[o] = *start_loss;
      } else {
        loss[o] = upper_objective(ex.train, ones, *ex.reg, log.theta, 1e-3, 5000);
      }
    }
    if (loss[1] <= loss[0]) ++wins;
    if (loss[1] == loss[0]) ++ties;
    steps += fmt(" %lld/%lld", n[0], n[1]);
  }
  return {wins >= 7, fmt("IAdam <= ISGD in %d/10 seeds (%d ties); steps isgd/iadam:%s", wins, ties, steps.c_str())};
}

// 8. Invariant suites.
Outcome invariants() {
  std::vector<std::string> failed;
  auto expect = [&](bool cond, const std::string& what) {
    if (!cond) failed.push_back(what);
  };
  Rng rng(8);
  const Shape shape{1, 16, 16};
  const auto n = static_cast<Eigen::Index>(shape.size());
  CrrConfig cc;
  cc.norm_shape = shape;
  const Crr crr(cc);
  const Icnn icnn;

  for (const Regularizer* reg : {static_cast<const Regularizer*>(&crr), static_cast<const Regularizer*>(&icnn)}) {
    const ThetaParams th = reg->initial_params(rng);
    double worst_mono = 0.0, worst_mid = 0.0, worst_psd = 0.0;
    for (int t = 0; t < 20; ++t) {
      const Vec x = oracle::gaussian(n, rng, 0.5), y = oracle::gaussian(n, rng, 0.5);
      const double mono = (reg->grad_x(x, shape, th) - reg->grad_x(y, shape, th)).dot(x - y);
      worst_mono = std::min(worst_mono, mono / (x - y).squaredNorm());
      const double mid = 0.5 * (reg->value(x, shape, th) + reg->value(y, shape, th)) -
                         reg->value(0.5 * (x + y), shape, th);
      worst_mid = std::min(worst_mid, mid);
      const Vec d = oracle::gaussian(n, rng);
      worst_psd = std::min(worst_psd, d.dot(reg->hvp_x(x, shape, th, d)) / d.squaredNorm());
    }
    expect(worst_mono >= -1e-12, reg->name() + " gradient monotonicity");
    expect(worst_mid >= -1e-12, reg->name() + " midpoint convexity");
    expect(worst_psd >= -1e-12, reg->name() + " hvp psd");
  }

  {
    const ConvStack st = crr.stack(crr.initial_params(rng));
    const Vec x = oracle::gaussian(n, rng);
    const Vec u = oracle::gaussian(static_cast<Eigen::Index>(st.output_shape(shape).size()), rng);
    expect(std::fabs(st.apply(x, shape).dot(u) - x.dot(st.adjoint(u, shape))) <= 1e-12 * x.norm() * u.norm(),
           "conv adjoint identity");
    Rng data(3);
    const auto inp = make_inpainting(synth_images(1, 16, data), 0.3, 0.0, 1e-3, data);
    const Vec w = oracle::gaussian(n, rng);
    expect(std::fabs(inp[0].apply_op(x).dot(w) - x.dot(inp[0].apply_adjoint(w))) <= 1e-12 * x.norm() * w.norm(),
           "mask adjoint identity");
  }

  Rng data(6);
  const auto small_train = make_denoising(synth_images(2, 8, data), 0.1, data);
  {
    IcnnConfig ic;
    ic.hidden = 4;
    ic.out_channels = 4;
    ic.kernel = 3;
    ic.nu = 0.05;
    const Icnn small(ic);
    RunConfig cfg;
    cfg.step = Schedule::constant(0.5);
    cfg.acc = Schedule::constant(1e-2);
    cfg.batch = {SamplingMode::MinibatchScaled, 2};
    cfg.max_outer_iters = 8;
    cfg.hyper.constants_mode = ConstantsMode::Unit;
    double min_wz = 0.0;
    RunHooks hooks;
    hooks.on_step = [&](const RunRow&, const ThetaParams& th) { min_wz = std::min(min_wz, th.block("wz").minCoeff()); };
    Rng init(7);
    const RunLog log = run(small_train, small, small.initial_params(init), cfg, nullptr, hooks);
    expect(log.steps == 8 && min_wz >= 0.0, "W_z non-negative after each step");
  }
  {
    CrrConfig sc;
    sc.norm_shape = {1, 8, 8};
    const Crr small(sc);
    RunConfig cfg;
    cfg.step = Schedule::constant(1.0);
    cfg.acc = Schedule::constant(1e-2);
    cfg.batch = {SamplingMode::MinibatchScaled, 2};
    cfg.max_outer_iters = 6;
    cfg.hyper.constants_mode = ConstantsMode::Unit;
    double worst = 0.0;
    int k = 0;
    RunHooks hooks;
    hooks.on_step = [&](const RunRow&, const ThetaParams& th) {
      worst = std::max(worst, spectral_norm_estimate(small.stack(th), sc.norm_shape, 200, 0xfeed + ++k));
    };
    Rng init(9);
    run(small_train, small, small.initial_params(init), cfg, nullptr, hooks);
    expect(k == 6 && worst <= 1.01, fmt("spectral norm after each step (max %.4f)", worst));
  }
  {
    // Budget accounting: per-evaluation cost equals solver iterations, and
    // a run never exceeds its budget.
    CrrConfig sc;
    sc.norm_shape = {1, 8, 8};
    const Crr small(sc);
    Rng init(4);
    const ThetaParams th0 = small.initial_params(init);
    HypergradConfig hc;
    hc.constants_mode = ConstantsMode::Probed;
    WarmStartStore warm;
    CostCounter cost;
    const auto r = inexact_hypergradient(small_train, Vec::Ones(2), small, th0, 1e-2, hc, warm, cost);
    std::int64_t per_sample = 0;
    for (const auto& s : r.per_sample) per_sample += s.lower_iters + s.cg_iters;
    expect(cost.value() == r.total_cost() && per_sample == r.total_cost() && r.total_cost() > 0,
           "hypergradient cost equals solver iterations");

    RunConfig cfg;
    cfg.step = Schedule::polynomial(1e-2, 0.5);
    cfg.acc = Schedule::polynomial(1e-1, 0.5);
    cfg.batch = {SamplingMode::MinibatchScaled, 2};
    cfg.budget = 3000;
    cfg.hyper.constants_mode = ConstantsMode::Probed;
    std::vector<std::int64_t> seen;
    RunHooks hooks;
    hooks.on_step = [&](const RunRow& row, const ThetaParams&) { seen.push_back(row.cum_cost); };
    const RunLog log = run(small_train, small, th0, cfg, nullptr, hooks);
    const bool monotone = std::is_sorted(seen.begin(), seen.end()) &&
                          std::adjacent_find(seen.begin(), seen.end()) == seen.end();
    expect(!seen.empty() && monotone && seen.back() <= cfg.budget && log.skipped_cost &&
               cfg.budget - seen.back() < *log.skipped_cost,
           "run budget accounting");

    // Bit-reproducible logs per seed.
    for (std::uint64_t seed : {1, 2, 3}) {
      cfg.seed = seed;
      expect(runlog_csv(run(small_train, small, th0, cfg)) == runlog_csv(run(small_train, small, th0, cfg)),
             fmt("runlog reproducible for seed %llu", static_cast<unsigned long long>(seed)));
    }
  }

  std::string detail = failed.empty() ? "all invariants hold" : "failed:";
  for (const auto& f : failed) detail += " [" + f + "]";
  return {failed.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    double limit_s;
    std::function<Outcome()> check;
  };
  const std::vector<Criterion> criteria{
      {1, "hypergradient oracle", 1.0, hypergradient_oracle},
      {2, "finite-difference agreement", 120.0, fd_agreement},
      {3, "L_K regime table", 10.0, lk_table},
      {4, "rate fits", 900.0, rate_fits},
      {5, "neighborhood plateau", 0.0, plateau},
      {6, "desk-scale denoising", 600.0, denoising},
      {7, "IAdam sanity", 1200.0, iadam_sanity},
      {8, "invariant suites", 0.0, invariants},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoi(argv[i]));

  int failures = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.check();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::string timing = fmt("%.1f s", secs);
    if (c.limit_s > 0.0) {
      timing += fmt(" (limit %.0f s)", c.limit_s);
      if (secs >= c.limit_s) {
        o.pass = false;
        o.detail += "; over time limit";
      }
    }
    if (!o.pass) ++failures;
    std::printf("%s  criterion %d  %-28s %s  [%s]\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(),
                timing.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
