#include "bilevel/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace bilevel {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& key, const std::string& msg) {
  throw ConfigError(key + ": " + msg);
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    fail(key, "expected a real number, got '" + v + "'");
  }
  return out;
}

template <typename Int>
Int to_int(const std::string& key, const std::string& v) {
  Int out = 0;
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) fail(key, "expected an integer, got '" + v + "'");
  return out;
}

template <typename T, typename F>
std::vector<T> to_list(const std::string& key, const std::string& v, F conv) {
  std::vector<T> out;
  if (trim(v).empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(conv(key, trim(item)));
  return out;
}

std::string fmt(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, ptr);
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

Schedule to_schedule(const std::string& key, const std::string& v) {
  try {
    return Schedule::parse(v);
  } catch (const std::invalid_argument& e) {
    fail(key, e.what());
  }
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::filesystem::path&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"experiment.problem", [](auto& c, auto& v, auto&) { c.problem = v; }},
      {"experiment.seed", [](auto& c, auto& v, auto&) { c.seed = to_int<std::uint64_t>("experiment.seed", v); }},
      {"experiment.output",
       [](auto& c, auto& v, auto& base) {
         std::filesystem::path p(v);
         c.output = p.is_absolute() || base.empty() ? p : base / p;
       }},
      {"dataset.train_images", [](auto& c, auto& v, auto&) { c.train_images = to_int<int>("dataset.train_images", v); }},
      {"dataset.test_images", [](auto& c, auto& v, auto&) { c.test_images = to_int<int>("dataset.test_images", v); }},
      {"dataset.train_size", [](auto& c, auto& v, auto&) { c.train_size = to_int<int>("dataset.train_size", v); }},
      {"dataset.test_size", [](auto& c, auto& v, auto&) { c.test_size = to_int<int>("dataset.test_size", v); }},
      {"dataset.sigma", [](auto& c, auto& v, auto&) { c.sigma = to_double("dataset.sigma", v); }},
      {"dataset.keep_prob", [](auto& c, auto& v, auto&) { c.keep_prob = to_double("dataset.keep_prob", v); }},
      {"dataset.xi", [](auto& c, auto& v, auto&) { c.xi = to_double("dataset.xi", v); }},
      {"dataset.manifest",
       [](auto& c, auto& v, auto& base) {
         if (v.empty()) {
           c.manifest.reset();
           return;
         }
         std::filesystem::path p(v);
         c.manifest = p.is_absolute() || base.empty() ? p : base / p;
       }},
      {"dataset.toy_tasks", [](auto& c, auto& v, auto&) { c.toy_tasks = to_int<int>("dataset.toy_tasks", v); }},
      {"dataset.toy_dim", [](auto& c, auto& v, auto&) { c.toy_dim = to_int<int>("dataset.toy_dim", v); }},
      {"regularizer.kind", [](auto& c, auto& v, auto&) { c.regularizer = v; }},
      {"regularizer.channels",
       [](auto& c, auto& v, auto&) { c.channels = to_list<int>("regularizer.channels", v, to_int<int>); }},
      {"regularizer.kernel", [](auto& c, auto& v, auto&) { c.kernel = to_int<int>("regularizer.kernel", v); }},
      {"regularizer.potential", [](auto& c, auto& v, auto&) { c.potential = v; }},
      {"regularizer.beta", [](auto& c, auto& v, auto&) { c.beta = to_double("regularizer.beta", v); }},
      {"regularizer.power_iters",
       [](auto& c, auto& v, auto&) { c.power_iters = to_int<int>("regularizer.power_iters", v); }},
      {"regularizer.hidden", [](auto& c, auto& v, auto&) { c.hidden = to_int<int>("regularizer.hidden", v); }},
      {"regularizer.out_channels",
       [](auto& c, auto& v, auto&) { c.out_channels = to_int<int>("regularizer.out_channels", v); }},
      {"regularizer.nu", [](auto& c, auto& v, auto&) { c.nu = to_double("regularizer.nu", v); }},
      {"optimizer.kind", [](auto& c, auto& v, auto&) { c.optimizer = v; }},
      {"optimizer.step", [](auto& c, auto& v, auto&) { c.step = to_schedule("optimizer.step", v); }},
      {"optimizer.accuracy", [](auto& c, auto& v, auto&) { c.accuracy = to_schedule("optimizer.accuracy", v); }},
      {"optimizer.budget", [](auto& c, auto& v, auto&) { c.budget = to_int<std::int64_t>("optimizer.budget", v); }},
      {"optimizer.max_outer_iters",
       [](auto& c, auto& v, auto&) { c.max_outer_iters = to_int<std::int64_t>("optimizer.max_outer_iters", v); }},
      {"optimizer.sampling", [](auto& c, auto& v, auto&) { c.sampling = v; }},
      {"optimizer.batch", [](auto& c, auto& v, auto&) { c.batch = to_int<int>("optimizer.batch", v); }},
      {"optimizer.beta1", [](auto& c, auto& v, auto&) { c.beta1 = to_double("optimizer.beta1", v); }},
      {"optimizer.beta2", [](auto& c, auto& v, auto&) { c.beta2 = to_double("optimizer.beta2", v); }},
      {"optimizer.eps_hat", [](auto& c, auto& v, auto&) { c.eps_hat = to_double("optimizer.eps_hat", v); }},
      {"optimizer.log_every", [](auto& c, auto& v, auto&) { c.log_every = to_int<int>("optimizer.log_every", v); }},
      {"optimizer.proxy_every",
       [](auto& c, auto& v, auto&) { c.proxy_every = to_int<int>("optimizer.proxy_every", v); }},
      {"optimizer.proxy_eps", [](auto& c, auto& v, auto&) { c.proxy_eps = to_double("optimizer.proxy_eps", v); }},
      {"optimizer.test_every", [](auto& c, auto& v, auto&) { c.test_every = to_int<int>("optimizer.test_every", v); }},
      {"optimizer.stop", [](auto& c, auto& v, auto&) { c.stop = v; }},
      {"optimizer.lower_max_iters",
       [](auto& c, auto& v, auto&) { c.lower_max_iters = to_int<int>("optimizer.lower_max_iters", v); }},
      {"optimizer.cg_max_iters",
       [](auto& c, auto& v, auto&) { c.cg_max_iters = to_int<int>("optimizer.cg_max_iters", v); }},
      {"optimizer.constants", [](auto& c, auto& v, auto&) { c.constants = v; }},
      {"optimizer.threads", [](auto& c, auto& v, auto&) { c.threads = to_int<int>("optimizer.threads", v); }},
      {"rates.p", [](auto& c, auto& v, auto&) { c.rates_p = to_list<double>("rates.p", v, to_double); }},
      {"rates.q", [](auto& c, auto& v, auto&) { c.rates_q = to_list<double>("rates.q", v, to_double); }},
      {"rates.eps0", [](auto& c, auto& v, auto&) { c.rates_eps0 = to_list<double>("rates.eps0", v, to_double); }},
      {"rates.alpha0",
       [](auto& c, auto& v, auto&) { c.rates_alpha0 = to_list<double>("rates.alpha0", v, to_double); }},
      {"rates.seeds",
       [](auto& c, auto& v, auto&) {
         c.rates_seeds = to_list<std::uint64_t>("rates.seeds", v, to_int<std::uint64_t>);
       }},
      {"rates.fit_k_min", [](auto& c, auto& v, auto&) { c.fit_k_min = to_double("rates.fit_k_min", v); }},
      {"rates.fit_k_max", [](auto& c, auto& v, auto&) { c.fit_k_max = to_double("rates.fit_k_max", v); }},
  };
  return table;
}

}  // namespace

ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside a section");
    const std::string key = section + "." + trim(t.substr(0, eq));
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError(key + ": unknown key");
    it->second(cfg, trim(t.substr(eq + 1)), base_dir);
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string serialize_config(const ExperimentConfig& c) {
  auto i = [](auto v) { return std::to_string(v); };
  std::string o;
  o += "[experiment]\n";
  o += "problem = " + c.problem + "\n";
  o += "seed = " + i(c.seed) + "\n";
  o += "output = " + c.output.string() + "\n";
  o += "\n[dataset]\n";
  o += "train_images = " + i(c.train_images) + "\n";
  o += "test_images = " + i(c.test_images) + "\n";
  o += "train_size = " + i(c.train_size) + "\n";
  o += "test_size = " + i(c.test_size) + "\n";
  o += "sigma = " + fmt(c.sigma) + "\n";
  o += "keep_prob = " + fmt(c.keep_prob) + "\n";
  o += "xi = " + fmt(c.xi) + "\n";
  o += "manifest = " + (c.manifest ? c.manifest->string() : std::string()) + "\n";
  o += "toy_tasks = " + i(c.toy_tasks) + "\n";
  o += "toy_dim = " + i(c.toy_dim) + "\n";
  o += "\n[regularizer]\n";
  o += "kind = " + c.regularizer + "\n";
  o += "channels = " + join(c.channels, i) + "\n";
  o += "kernel = " + i(c.kernel) + "\n";
  o += "potential = " + c.potential + "\n";
  o += "beta = " + fmt(c.beta) + "\n";
  o += "power_iters = " + i(c.power_iters) + "\n";
  o += "hidden = " + i(c.hidden) + "\n";
  o += "out_channels = " + i(c.out_channels) + "\n";
  o += "nu = " + fmt(c.nu) + "\n";
  o += "\n[optimizer]\n";
  o += "kind = " + c.optimizer + "\n";
  o += "step = " + c.step.to_string() + "\n";
  o += "accuracy = " + c.accuracy.to_string() + "\n";
  o += "budget = " + i(c.budget) + "\n";
  o += "max_outer_iters = " + i(c.max_outer_iters) + "\n";
  o += "sampling = " + c.sampling + "\n";
  o += "batch = " + i(c.batch) + "\n";
  o += "beta1 = " + fmt(c.beta1) + "\n";
  o += "beta2 = " + fmt(c.beta2) + "\n";
  o += "eps_hat = " + fmt(c.eps_hat) + "\n";
  o += "log_every = " + i(c.log_every) + "\n";
  o += "proxy_every = " + i(c.proxy_every) + "\n";
  o += "proxy_eps = " + fmt(c.proxy_eps) + "\n";
  o += "test_every = " + i(c.test_every) + "\n";
  o += "stop = " + c.stop + "\n";
  o += "lower_max_iters = " + i(c.lower_max_iters) + "\n";
  o += "cg_max_iters = " + i(c.cg_max_iters) + "\n";
  o += "constants = " + c.constants + "\n";
  o += "threads = " + i(c.threads) + "\n";
  o += "\n[rates]\n";
  o += "p = " + join(c.rates_p, fmt) + "\n";
  o += "q = " + join(c.rates_q, fmt) + "\n";
  o += "eps0 = " + join(c.rates_eps0, fmt) + "\n";
  o += "alpha0 = " + join(c.rates_alpha0, fmt) + "\n";
  o += "seeds = " + join(c.rates_seeds, i) + "\n";
  o += "fit_k_min = " + fmt(c.fit_k_min) + "\n";
  o += "fit_k_max = " + fmt(c.fit_k_max) + "\n";
  return o;
}

void validate(const ExperimentConfig& c) {
  auto one_of = [](const std::string& key, const std::string& v, std::initializer_list<const char*> allowed) {
    for (const char* a : allowed) {
      if (v == a) return;
    }
    std::string list;
    for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
    fail(key, "'" + v + "' is not one of " + list);
  };
  one_of("experiment.problem", c.problem, {"denoise", "inpaint", "toy"});
  one_of("regularizer.kind", c.regularizer, {"quad", "crr", "icnn"});
  one_of("regularizer.potential", c.potential, {"huber", "logcosh"});
  one_of("optimizer.kind", c.optimizer, {"isgd", "iadam"});
  one_of("optimizer.sampling", c.sampling, {"minibatch", "binomial"});
  one_of("optimizer.stop", c.stop, {"certified", "grad_tol"});
  one_of("optimizer.constants", c.constants, {"exact", "probed", "unit"});
  if ((c.problem == "toy") != (c.regularizer == "quad")) {
    fail("regularizer.kind", "the toy problem pairs with the quad regularizer and only with it");
  }
  if (c.train_images < 1) fail("dataset.train_images", "must be >= 1");
  if (c.test_images < 0) fail("dataset.test_images", "must be >= 0");
  if (c.train_size < 4 || c.test_size < 4) fail("dataset.train_size", "image sizes must be >= 4");
  if (!(c.sigma >= 0.0)) fail("dataset.sigma", "must be >= 0");
  if (!(c.keep_prob > 0.0 && c.keep_prob <= 1.0)) fail("dataset.keep_prob", "must lie in (0, 1]");
  if (!(c.xi >= 0.0)) fail("dataset.xi", "must be >= 0");
  if (c.problem == "inpaint" && !(c.xi > 0.0) && c.keep_prob < 1.0) {
    fail("dataset.xi", "inpainting needs xi > 0 for strong convexity");
  }
  if (c.manifest && !std::filesystem::exists(*c.manifest)) fail("dataset.manifest", "file does not exist");
  if (c.toy_tasks < 1 || c.toy_dim < 1) fail("dataset.toy_tasks", "toy sizes must be >= 1");
  if (c.channels.size() < 2) fail("regularizer.channels", "need at least two entries");
  for (int ch : c.channels) {
    if (ch < 1) fail("regularizer.channels", "entries must be >= 1");
  }
  if (c.channels.front() != 1) fail("regularizer.channels", "first entry must be 1 (grayscale input)");
  if (c.kernel < 1 || c.kernel % 2 == 0) fail("regularizer.kernel", "must be a positive odd integer");
  if (!(c.beta > 0.0)) fail("regularizer.beta", "must be positive");
  if (c.power_iters < 1) fail("regularizer.power_iters", "must be >= 1");
  if (c.hidden < 1 || c.out_channels < 1) fail("regularizer.hidden", "channel counts must be >= 1");
  if (!(c.nu > 0.0)) fail("regularizer.nu", "must be positive");
  if (c.budget < 1) fail("optimizer.budget", "must be >= 1");
  if (c.max_outer_iters < 0) fail("optimizer.max_outer_iters", "must be >= 0");
  if (c.batch < 1) fail("optimizer.batch", "must be >= 1");
  if (c.problem == "toy" ? c.batch > c.toy_tasks : c.batch > c.train_images) {
    if (c.sampling == "minibatch") fail("optimizer.batch", "exceeds the number of training instances");
  }
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) fail("optimizer.beta1", "must lie in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) fail("optimizer.beta2", "must lie in [0, 1)");
  if (!(c.eps_hat > 0.0)) fail("optimizer.eps_hat", "must be positive");
  if (c.log_every < 1) fail("optimizer.log_every", "must be >= 1");
  if (c.proxy_every < 0) fail("optimizer.proxy_every", "must be >= 0");
  if (!(c.proxy_eps > 0.0)) fail("optimizer.proxy_eps", "must be positive");
  if (c.test_every < 0) fail("optimizer.test_every", "must be >= 0");
  if (c.lower_max_iters < 1) fail("optimizer.lower_max_iters", "must be >= 1");
  if (c.cg_max_iters < 1) fail("optimizer.cg_max_iters", "must be >= 1");
  if (c.threads < 0) fail("optimizer.threads", "must be >= 0");
  if (c.rates_p.empty() || c.rates_q.empty() || c.rates_eps0.empty() || c.rates_alpha0.empty()) {
    fail("rates.p", "the sweep grid is empty");
  }
  for (double v : c.rates_p) {
    if (!(v >= 0.0)) fail("rates.p", "exponents must be >= 0");
  }
  for (double v : c.rates_q) {
    if (!(v >= 0.0)) fail("rates.q", "exponents must be >= 0");
  }
  for (double v : c.rates_eps0) {
    if (!(v > 0.0)) fail("rates.eps0", "must be positive");
  }
  for (double v : c.rates_alpha0) {
    if (!(v > 0.0)) fail("rates.alpha0", "must be positive");
  }
  if (c.rates_seeds.empty()) fail("rates.seeds", "need at least one seed");
  if (!(c.fit_k_min > 0.0 && c.fit_k_max > c.fit_k_min)) fail("rates.fit_k_min", "need 0 < fit_k_min < fit_k_max");
}

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::filesystem::path run_directory(const ExperimentConfig& cfg) {
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a64(serialize_config(cfg))));
  return cfg.output / (cfg.problem + "-" + hex);
}

}  // namespace bilevel
