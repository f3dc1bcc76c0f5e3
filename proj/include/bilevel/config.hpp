#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bilevel/schedules.hpp"

namespace bilevel {

// Validation failure naming the offending `section.key`.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // [experiment]
  std::string problem = "denoise";  // denoise | inpaint | toy
  std::uint64_t seed = 0;
  std::filesystem::path output = "runs";

  // [dataset]
  int train_images = 16;
  int test_images = 4;
  int train_size = 32;
  int test_size = 64;
  double sigma = 25.0 / 255.0;
  double keep_prob = 0.3;
  double xi = 1e-6;
  std::optional<std::filesystem::path> manifest;
  int toy_tasks = 10;
  int toy_dim = 4;

  // [regularizer]
  std::string regularizer = "crr";  // quad | crr | icnn
  std::vector<int> channels{1, 4, 8};
  int kernel = 5;
  std::string potential = "huber";
  double beta = 10.0;
  int power_iters = 50;
  int hidden = 8;
  int out_channels = 8;
  double nu = 1e-3;

  // [optimizer]
  std::string optimizer = "isgd";  // isgd | iadam
  Schedule step = Schedule::constant(1e-2);
  Schedule accuracy = Schedule::polynomial(1.0, 2.0);
  std::int64_t budget = 10000;
  std::int64_t max_outer_iters = 0;
  std::string sampling = "minibatch";  // minibatch | binomial
  int batch = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
  int log_every = 1;
  int proxy_every = 0;
  double proxy_eps = 1e-8;
  int test_every = 0;
  std::string stop = "certified";  // certified | grad_tol
  int lower_max_iters = 5000;
  int cg_max_iters = 2000;
  std::string constants = "probed";  // exact | probed | unit
  int threads = 0;                   // 0: BILEV_THREADS or hardware concurrency

  // [rates]
  std::vector<double> rates_p{0.0, 0.25, 0.5, 1.0, 2.0};
  std::vector<double> rates_q{0.0, 0.5, 1.0};
  std::vector<double> rates_eps0{1.0};
  std::vector<double> rates_alpha0{1.0};
  std::vector<std::uint64_t> rates_seeds{0, 1, 2};
  double fit_k_min = 100.0;
  double fit_k_max = 1e4;

  bool operator==(const ExperimentConfig&) const = default;
};

// INI text: `[section]` headers, `key = value` lines, `#` or `;` comments.
// Unknown sections or keys are errors. Relative paths resolve against
// `base_dir`.
ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const ExperimentConfig& cfg);

// Semantic checks (ranges, enum values, existing paths). Throws ConfigError.
void validate(const ExperimentConfig& cfg);

std::uint64_t fnv1a64(const std::string& text);
// <output>/<problem>-<16 hex digits of the hash of the serialized config>
std::filesystem::path run_directory(const ExperimentConfig& cfg);

}  // namespace bilevel
