#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bilevel {

/// A positive, non-increasing sequence used for step sizes (alpha_k) and
/// hypergradient accuracies (eps_k).
///
///   Constant     base
///   Polynomial   base * max(k, 1)^(-exponent)
///   Logarithmic  base * log(max(k, 2))^(-exponent)
///
/// The clamps make k = 0 well defined; for Polynomial, value(0) == base.
struct Schedule {
  enum class Kind { Constant, Polynomial, Logarithmic };

  Kind kind = Kind::Constant;
  double base = 1.0;
  double exponent = 0.0;

  static Schedule constant(double base);
  static Schedule polynomial(double base, double exponent);
  static Schedule logarithmic(double base, double exponent);

  double value(std::int64_t k) const;

  /// Parses `poly:<base>:<exponent>`, `log:<base>:<exponent>` or
  /// `const:<base>`. Throws std::invalid_argument naming the problem.
  static Schedule parse(std::string_view text);
  std::string to_string() const;

  bool operator==(const Schedule&) const = default;
};

// Throws std::invalid_argument unless base > 0, exponent >= 0 (both finite)
// and Constant carries exponent 0.
void validate(const Schedule& s);

struct StepScheduleReport {
  bool square_summable = false;
  bool decay_ok = false;
  bool neighborhood_only = false;
  std::vector<std::string> notes;
};

// Checks sum(alpha_k^2) < inf and 1/(k alpha_k) -> 0 analytically.
StepScheduleReport validate_step_schedule(const Schedule& step);

struct LkOptions {
  std::int64_t max_horizon = 2'000'000'000;
};

// L_K = (1 / (K alpha_K)) * sum_{k=0}^{K-1} alpha_k eps_k^2, summed in long
// double with Neumaier compensation.
double l_k_sum(const Schedule& step, const Schedule& acc, std::int64_t horizon,
               const LkOptions& opts = {});

enum class Regime { AccuracyLimited, Boundary, StepLimited, Logarithmic, NeighborhoodOnly };

std::string to_string(Regime r);

struct RateRegime {
  Regime regime = Regime::NeighborhoodOnly;
  // Gradient-norm rate exponent r: k^-r, or (log k)^-r when log_base is set.
  // Empty when no rate is claimed.
  std::optional<double> exponent;
  bool log_base = false;     // rate is in powers of log k
  bool log_factor = false;   // extra sqrt(log k) factor (boundary row)
  bool admissible = false;   // 1/2 < q < 1 and p > 0
  bool limiting_case = false;  // q == 1/2 exactly
  std::string note;
};

RateRegime predicted_rate(double p, double q,
                          Schedule::Kind accuracy = Schedule::Kind::Polynomial);

struct WeightDiagnostics {
  std::vector<double> weights;  // w_0 .. w_{K-1}
  double product_p = 1.0;       // prod_{j<K} (1 + L A alpha_j^2)
  double sum_w = 0.0;           // W_K
};

// w_0 = 1, w_k = w_{k-1} alpha_k / (alpha_{k-1} (1 + L A alpha_k^2)).
WeightDiagnostics compute_weights(const Schedule& step, double l_smooth, double a_tilde,
                                  std::int64_t horizon);

}  // namespace bilevel
