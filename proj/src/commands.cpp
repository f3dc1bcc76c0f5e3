#include "bilevel/commands.hpp"

#include <array>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "bilevel/checkpoint.hpp"
#include "bilevel/crr.hpp"
#include "bilevel/icnn.hpp"
#include "bilevel/parallel.hpp"

namespace bilevel {

std::shared_ptr<const Regularizer> make_regularizer(const ExperimentConfig& cfg) {
  if (cfg.regularizer == "quad") return std::make_shared<QuadToy>();
  if (cfg.regularizer == "crr") {
    CrrConfig c;
    c.channels = cfg.channels;
    c.kernel = cfg.kernel;
    c.potential = {Potential::parse_kind(cfg.potential), cfg.beta};
    c.power_iters = cfg.power_iters;
    c.norm_shape = {1, cfg.train_size, cfg.train_size};
    return std::make_shared<Crr>(c);
  }
  IcnnConfig c;
  c.in_channels = 1;
  c.hidden = cfg.hidden;
  c.out_channels = cfg.out_channels;
  c.kernel = cfg.kernel;
  c.nu = cfg.nu;
  return std::make_shared<Icnn>(c);
}

namespace {

std::vector<ProblemInstance> degrade(const ExperimentConfig& cfg, const std::vector<Image>& images, Rng& rng) {
  if (cfg.problem == "inpaint") return make_inpainting(images, cfg.keep_prob, cfg.sigma, cfg.xi, rng);
  return make_denoising(images, cfg.sigma, rng);
}

}  // namespace

Experiment build_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  Experiment ex;
  ex.reg = make_regularizer(cfg);
  Rng init_rng(cfg.seed ^ 0x7e7a);
  ex.theta0 = ex.reg->initial_params(init_rng);
  if (cfg.problem == "toy") {
    Rng rng(cfg.seed);
    ex.train = make_toy_family(cfg.toy_tasks, cfg.toy_dim, rng);
    return ex;
  }
  if (cfg.manifest) {
    for (const auto& e : read_manifest(*cfg.manifest)) {
      Rng rng(e.seed);
      auto inst = degrade(cfg, {load_pgm(e.path)}, rng);
      (e.role == "train" ? ex.train : ex.test).push_back(std::move(inst.front()));
    }
    if (ex.train.empty()) throw ConfigError("dataset.manifest: no train entries");
    return ex;
  }
  Rng img_rng(cfg.seed);
  const auto train_images = synth_images(cfg.train_images, cfg.train_size, img_rng);
  Rng noise_rng(cfg.seed + 1);
  ex.train = degrade(cfg, train_images, noise_rng);
  if (cfg.test_images > 0) {
    Rng test_rng(cfg.seed + 2);
    const auto test_images = synth_images(cfg.test_images, cfg.test_size, test_rng);
    Rng test_noise(cfg.seed + 3);
    ex.test = degrade(cfg, test_images, test_noise);
  }
  return ex;
}

RunConfig make_run_config(const ExperimentConfig& cfg) {
  RunConfig rc;
  rc.step = cfg.step;
  rc.acc = cfg.accuracy;
  rc.optimizer = cfg.optimizer == "iadam" ? OptimizerKind::IAdam : OptimizerKind::ISGD;
  rc.adam = {cfg.beta1, cfg.beta2, cfg.eps_hat};
  rc.batch = {cfg.sampling == "binomial" ? SamplingMode::Binomial : SamplingMode::MinibatchScaled, cfg.batch};
  rc.budget = cfg.budget;
  rc.max_outer_iters = cfg.max_outer_iters;
  rc.log_every = cfg.log_every;
  rc.proxy_every = cfg.proxy_every;
  rc.proxy_eps = cfg.proxy_eps;
  rc.test_every = cfg.test_every;
  rc.seed = cfg.seed;
  rc.hyper.solver.max_iters = cfg.lower_max_iters;
  rc.hyper.solver.stop = cfg.stop == "grad_tol" ? StopMode::GradTol : StopMode::Certified;
  rc.hyper.cg_max_iters = cfg.cg_max_iters;
  rc.hyper.constants_mode = cfg.constants == "exact"    ? ConstantsMode::Exact
                            : cfg.constants == "unit"   ? ConstantsMode::Unit
                                                        : ConstantsMode::Probed;
  rc.hyper.threads = cfg.threads > 0 ? cfg.threads : worker_count();
  return rc;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

std::string run_label(const ExperimentConfig& cfg) {
  return cfg.problem + "-" + cfg.regularizer + "-" + cfg.optimizer;
}

}  // namespace

int cmd_run(const std::filesystem::path& config, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  Experiment ex;
  RunConfig rc;
  try {
    cfg = load_config(config);
    validate(cfg);
    rc = make_run_config(cfg);
    validate(rc);
  } catch (const std::exception& e) {
    err << "invalid config: " << e.what() << "\n";
    return kExitInvalid;
  }
  try {
    ex = build_experiment(cfg);
    const auto dir = run_directory(cfg);
    std::filesystem::create_directories(dir);
    write_text(dir / "config.ini", serialize_config(cfg));

    constexpr std::array<int, 4> kPercents{5, 10, 50, 100};
    std::array<bool, 4> saved{};
    auto ckpt_path = [&](int pct) {
      char name[32];
      std::snprintf(name, sizeof name, "ckpt_%03d.bin", pct);
      return dir / name;
    };
    RunHooks hooks;
    hooks.on_step = [&](const RunRow& row, const ThetaParams& theta) {
      for (std::size_t i = 0; i < kPercents.size(); ++i) {
        if (!saved[i] && row.cum_cost * 100 >= static_cast<std::int64_t>(kPercents[i]) * cfg.budget) {
          save_checkpoint(ckpt_path(kPercents[i]), theta);
          saved[i] = true;
        }
      }
    };
    const RunLog log = run(ex.train, *ex.reg, ex.theta0, rc, ex.test.empty() ? nullptr : &ex.test, hooks);
    // A run that stops short of the full budget still leaves its last iterate as the 100% checkpoint.
    if (!saved.back()) save_checkpoint(ckpt_path(100), log.theta);
    save_checkpoint(dir / "theta_final.bin", log.theta);
    write_runlog_csv(dir / "runlog.csv", log);
    emit_plots({{run_label(cfg), log.rows}}, dir / "plots");
    out << dir.string() << "\n";
    out << "status " << to_string(log.status) << ", steps " << log.steps << ", cost "
        << (log.rows.empty() ? 0 : log.rows.back().cum_cost) << "/" << cfg.budget << "\n";
    if (log.status == RunStatus::Aborted) {
      err << "run aborted: " << log.message << "\n";
      return kExitRuntime;
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_rates(const std::filesystem::path& config, std::ostream& out, std::ostream& err) {
  ExperimentConfig cfg;
  RunConfig rc;
  try {
    cfg = load_config(config);
    validate(cfg);
    rc = make_run_config(cfg);
    validate(rc);
  } catch (const std::exception& e) {
    err << "invalid config: " << e.what() << "\n";
    return kExitInvalid;
  }
  try {
    std::vector<SweepCell> grid;
    for (double p : cfg.rates_p) {
      for (double q : cfg.rates_q) {
        for (double e0 : cfg.rates_eps0) {
          for (double a0 : cfg.rates_alpha0) grid.push_back({p, q, e0, a0});
        }
      }
    }
    ProblemFactory factory = [cfg](std::uint64_t seed) {
      ExperimentConfig c = cfg;
      c.seed = seed;
      const Experiment ex = build_experiment(c);
      return SweepProblem{ex.train, ex.test, ex.reg, ex.theta0};
    };
    SweepOptions opts;
    opts.fit_k_min = cfg.fit_k_min;
    opts.fit_k_max = cfg.fit_k_max;
    // Cells run concurrently; the per-sample pool stays serial to avoid oversubscription.
    opts.threads = rc.hyper.threads;
    rc.hyper.threads = 1;
    const SweepResult res = sweep(grid, cfg.rates_seeds, rc, factory, opts);
    const auto dir = run_directory(cfg);
    std::filesystem::create_directories(dir);
    write_text(dir / "config.ini", serialize_config(cfg));
    write_text(dir / "summary.csv", sweep_csv(res));
    const std::string failures = sweep_failures_csv(res);
    if (!failures.empty()) {
      write_text(dir / "failures.csv", failures);
      err << "some cells failed; see " << (dir / "failures.csv").string() << "\n";
    }
    out << dir.string() << "\n";
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "invalid config: " << e.what() << "\n";
    return kExitInvalid;
  } catch (const std::exception& e) {
    err << "rates failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_check(const std::string& level, std::ostream& out, std::ostream& err) {
  if (level != "fast" && level != "full") {
    err << "check: level must be fast or full\n";
    return kExitInvalid;
  }
  std::vector<CheckItem> items;
  try {
    items = run_checks(level == "full");
  } catch (const std::exception& e) {
    err << "check aborted: " << e.what() << "\n";
    return kExitRuntime;
  }
  bool ok = true;
  for (const auto& it : items) {
    char line[256];
    std::snprintf(line, sizeof line, "%-4s %-40s measured %.3e  tolerance %.1e", it.passed ? "PASS" : "FAIL",
                  it.name.c_str(), it.measured, it.tolerance);
    out << line;
    if (!it.detail.empty()) out << "  (" << it.detail << ")";
    out << "\n";
    ok = ok && it.passed;
  }
  out << (ok ? "all checks passed" : "some checks failed") << "\n";
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_export_plots(const std::vector<std::filesystem::path>& csvs, const std::filesystem::path& out_dir,
                     int smoothing_window, std::ostream& out, std::ostream& err) {
  if (csvs.empty()) {
    err << "export: no runlog files given\n";
    return kExitInvalid;
  }
  try {
    std::vector<NamedLog> logs;
    for (const auto& p : csvs) {
      std::string label = p.stem().string();
      if (label == "runlog" && p.has_parent_path()) label = p.parent_path().filename().string();
      logs.push_back({label, read_runlog_csv(p)});
    }
    for (const auto& path : emit_plots(logs, out_dir, {smoothing_window})) out << path.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "export failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cmd_export_checkpoint(const std::filesystem::path& checkpoint, const std::filesystem::path& json_out,
                          std::ostream& out, std::ostream& err) {
  try {
    const ThetaParams theta = load_checkpoint(checkpoint);
    nlohmann::json doc;
    doc["format"] = "BILEV01";
    doc["tensors"] = nlohmann::json::array();
    for (const auto& s : theta.layout.specs()) {
      const auto blk = theta.block(s.name);
      doc["tensors"].push_back({{"name", s.name},
                                {"shape", s.shape},
                                {"values", std::vector<double>(blk.data(), blk.data() + blk.size())}});
    }
    write_text(json_out, doc.dump(1) + "\n");
    out << json_out.string() << "\n";
    return kExitOk;
  } catch (const std::exception& e) {
    err << "export failed: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace bilevel
