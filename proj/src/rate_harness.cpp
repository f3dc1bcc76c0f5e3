#include "bilevel/rate_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "bilevel/parallel.hpp"
#include "bilevel/svg_plot.hpp"

namespace bilevel {

double gradient_proxy(const std::vector<ProblemInstance>& instances, const Regularizer& reg,
                      const ThetaParams& theta, double tight_eps, const HypergradConfig& cfg,
                      WarmStartStore& warm, CostCounter& proxy_cost) {
  const Vec ones = Vec::Ones(static_cast<Eigen::Index>(instances.size()));
  return inexact_hypergradient(instances, ones, reg, theta, tight_eps, cfg, warm, proxy_cost).z.norm();
}

std::vector<SeriesPoint> running_min(const std::vector<SeriesPoint>& series) {
  std::vector<SeriesPoint> out;
  out.reserve(series.size());
  double best = std::numeric_limits<double>::infinity();
  for (const auto& p : series) {
    best = std::min(best, p.value);
    out.push_back({p.k, best});
  }
  return out;
}

std::vector<SeriesPoint> proxy_series(const std::vector<RunRow>& rows) {
  std::vector<SeriesPoint> out;
  for (const auto& r : rows) {
    if (r.grad_proxy) out.push_back({static_cast<double>(r.k), *r.grad_proxy});
  }
  return out;
}

std::vector<SeriesPoint> ergodic_series(const std::vector<RunRow>& rows) {
  std::vector<SeriesPoint> out;
  double num = 0.0, den = 0.0;
  for (const auto& r : rows) {
    if (!r.grad_proxy) continue;
    num += r.alpha * *r.grad_proxy * *r.grad_proxy;
    den += r.alpha;
    out.push_back({static_cast<double>(r.k), std::sqrt(num / den)});
  }
  return out;
}

RateFit fit_rate(const std::vector<SeriesPoint>& series, double k_min, double k_max) {
  const auto mins = running_min(series);
  std::vector<double> lx, ly;
  for (const auto& p : mins) {
    if (p.k < k_min || p.k > k_max || p.k <= 0.0) continue;
    if (!(p.value > 0.0) || !std::isfinite(p.value)) {
      throw std::invalid_argument("fit_rate: series values must be positive and finite");
    }
    lx.push_back(std::log(p.k));
    ly.push_back(std::log(p.value));
  }
  if (lx.size() < 5) throw std::invalid_argument("fit_rate: need at least 5 points in the window");
  const double span = (lx.back() - lx.front()) / std::log(10.0);
  if (span < 1.5) throw std::invalid_argument("fit_rate: window spans fewer than 1.5 decades");

  const double n = static_cast<double>(lx.size());
  const double mx = std::accumulate(lx.begin(), lx.end(), 0.0) / n;
  const double my = std::accumulate(ly.begin(), ly.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxx += (lx[i] - mx) * (lx[i] - mx);
    sxy += (lx[i] - mx) * (ly[i] - my);
    syy += (ly[i] - my) * (ly[i] - my);
  }
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r_squared = syy > 0.0 ? std::clamp(sxy * sxy / (sxx * syy), 0.0, 1.0) : 1.0;
  fit.k_min = std::exp(lx.front());
  fit.k_max = std::exp(lx.back());
  fit.points = lx.size();
  return fit;
}

RunConfig cell_config(const RunConfig& base, const SweepCell& cell) {
  RunConfig cfg = base;
  cfg.step = cell.q > 0.0 ? Schedule::polynomial(cell.alpha0, cell.q) : Schedule::constant(cell.alpha0);
  cfg.acc = cell.p > 0.0 ? Schedule::polynomial(cell.eps0, cell.p) : Schedule::constant(cell.eps0);
  return cfg;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t cell) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (cell + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fmt(*v) : ""; }

}  // namespace

SweepResult sweep(const std::vector<SweepCell>& grid, const std::vector<std::uint64_t>& seeds,
                  const RunConfig& base, const ProblemFactory& factory, const SweepOptions& opts) {
  if (grid.empty()) throw std::invalid_argument("sweep: empty grid");
  if (seeds.empty()) throw std::invalid_argument("sweep: no seeds");
  SweepResult res;
  res.rows.resize(grid.size() * seeds.size());
  parallel_for(res.rows.size(), opts.threads, [&](std::size_t job) {
    const std::size_t c = job / seeds.size(), s = job % seeds.size();
    SweepRow& row = res.rows[job];
    row.cell = grid[c];
    row.seed = seeds[s];
    try {
      const SweepProblem prob = factory(seeds[s]);
      RunConfig cfg = cell_config(base, grid[c]);
      cfg.seed = mix_seed(seeds[s], c);
      const RunLog log = run(prob.train, *prob.reg, prob.theta0, cfg, prob.test.empty() ? nullptr : &prob.test);
      if (log.status == RunStatus::Aborted) row.failure = log.message;
      row.total_cost = log.rows.empty() ? 0 : log.rows.back().cum_cost;
      row.final_loss = upper_objective(prob.train, Vec::Ones(static_cast<Eigen::Index>(prob.train.size())),
                                       *prob.reg, log.theta, 1e-10, 100000);
      for (const auto& r : log.rows) {
        if (r.test_psnr) row.best_psnr = std::max(row.best_psnr.value_or(-1e300), *r.test_psnr);
      }
      if (base.proxy_every > 0) {
        try {
          const auto series = opts.ergodic ? ergodic_series(log.rows) : proxy_series(log.rows);
          const RateFit fit = fit_rate(series, opts.fit_k_min, opts.fit_k_max);
          row.slope = fit.slope;
          row.r2 = fit.r_squared;
          row.raw_slope = fit_rate(proxy_series(log.rows), opts.fit_k_min, opts.fit_k_max).slope;
        } catch (const std::invalid_argument& e) {
          if (row.failure.empty()) row.failure = std::string("fit: ") + e.what();
        }
      }
    } catch (const std::exception& e) {
      row.failure = e.what();
    }
  });

  for (std::size_t c = 0; c < grid.size(); ++c) {
    SweepAggregate agg;
    agg.cell = grid[c];
    std::vector<double> loss, ps, slopes, r2, cost;
    for (std::size_t s = 0; s < seeds.size(); ++s) {
      const SweepRow& r = res.rows[c * seeds.size() + s];
      loss.push_back(r.final_loss);
      cost.push_back(static_cast<double>(r.total_cost));
      if (r.best_psnr) ps.push_back(*r.best_psnr);
      if (r.slope) slopes.push_back(*r.slope);
      if (r.r2) r2.push_back(*r.r2);
    }
    agg.mean_final_loss = mean(loss);
    agg.sd_final_loss = stddev(loss);
    agg.mean_total_cost = mean(cost);
    if (!ps.empty()) agg.mean_best_psnr = mean(ps);
    if (!slopes.empty()) {
      agg.median_slope = median(slopes);
      agg.sd_slope = stddev(slopes);
    }
    if (!r2.empty()) agg.mean_r2 = mean(r2);
    res.aggregates.push_back(agg);
  }
  return res;
}

std::string sweep_csv(const SweepResult& result) {
  std::string out = std::string(kSweepHeader) + "\n";
  const std::size_t per_cell = result.aggregates.empty() ? 0 : result.rows.size() / result.aggregates.size();
  for (std::size_t c = 0; c < result.aggregates.size(); ++c) {
    for (std::size_t s = 0; s < per_cell; ++s) {
      const SweepRow& r = result.rows[c * per_cell + s];
      out += fmt(r.cell.p) + "," + fmt(r.cell.q) + "," + fmt(r.cell.eps0) + "," + fmt(r.cell.alpha0) + "," +
             std::to_string(r.seed) + "," + fmt(r.final_loss) + "," + opt(r.best_psnr) + "," + opt(r.slope) + "," +
             opt(r.r2) + "," + std::to_string(r.total_cost) + "\n";
    }
    const SweepAggregate& a = result.aggregates[c];
    out += fmt(a.cell.p) + "," + fmt(a.cell.q) + "," + fmt(a.cell.eps0) + "," + fmt(a.cell.alpha0) + ",agg," +
           fmt(a.mean_final_loss) + "," + opt(a.mean_best_psnr) + "," + opt(a.median_slope) + "," +
           opt(a.mean_r2) + "," + fmt(a.mean_total_cost) + "\n";
  }
  return out;
}

std::string sweep_failures_csv(const SweepResult& result) {
  std::string out;
  for (const auto& r : result.rows) {
    if (r.failure.empty()) continue;
    std::string msg = r.failure;
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::replace(msg.begin(), msg.end(), ',', ';');
    out += fmt(r.cell.p) + "," + fmt(r.cell.q) + "," + fmt(r.cell.eps0) + "," + fmt(r.cell.alpha0) + "," +
           std::to_string(r.seed) + "," + msg + "\n";
  }
  return out.empty() ? out : "p,q,eps0,alpha0,seed,failure\n" + out;
}

std::vector<std::filesystem::path> emit_plots(const std::vector<NamedLog>& logs, const std::filesystem::path& dir,
                                              const PlotOptions& opts) {
  std::filesystem::create_directories(dir);
  std::vector<std::filesystem::path> written;
  std::vector<PlotSeries> loss, ps;
  for (const auto& lg : logs) {
    std::string stem = lg.label;
    for (char& ch : stem) {
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_' && ch != '.') ch = '_';
    }
    if (stem.empty()) stem = "run";
    RunLog tmp;
    tmp.rows = lg.rows;
    const auto csv = dir / (stem + ".csv");
    write_runlog_csv(csv, tmp);
    written.push_back(csv);

    PlotSeries l{lg.label, {}, {}}, p{lg.label, {}, {}};
    const std::size_t w = static_cast<std::size_t>(std::max(opts.smoothing_window, 1));
    double acc = 0.0;
    for (std::size_t i = 0; i < lg.rows.size(); ++i) {
      acc += lg.rows[i].batch_loss;
      if (i >= w) acc -= lg.rows[i - w].batch_loss;
      l.x.push_back(static_cast<double>(lg.rows[i].cum_cost));
      l.y.push_back(acc / static_cast<double>(std::min(i + 1, w)));
      if (lg.rows[i].test_psnr) {
        p.x.push_back(static_cast<double>(lg.rows[i].cum_cost));
        p.y.push_back(*lg.rows[i].test_psnr);
      }
    }
    loss.push_back(std::move(l));
    ps.push_back(std::move(p));
  }
  auto save = [&](const std::string& name, const std::string& svg) {
    const auto path = dir / name;
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    f << svg;
    if (!f) throw std::runtime_error("write failed for " + path.string());
    written.push_back(path);
  };
  save("loss.svg", render_svg(loss, {"Training loss (running average)", "computational cost", "loss", true, true}));
  save("psnr.svg", render_svg(ps, {"Test PSNR", "computational cost", "PSNR [dB]", true, false}));
  return written;
}

}  // namespace bilevel
