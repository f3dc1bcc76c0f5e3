#include "bilevel/schedules.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace bilevel {

namespace {

constexpr double kExactTol = 1e-12;

double parse_real(std::string_view field, std::string_view what, std::string_view text) {
  double out = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (field.empty() || ec != std::errc() || ptr != last || !std::isfinite(out)) {
    throw std::invalid_argument("schedule '" + std::string(text) + "': bad " + std::string(what) +
                                " '" + std::string(field) + "'");
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, ptr);
}

// Neumaier-compensated accumulator.
struct CompensatedSum {
  long double sum = 0.0L;
  long double carry = 0.0L;
  void add(long double x) {
    const long double t = sum + x;
    if (std::fabs(sum) >= std::fabs(x)) {
      carry += (sum - t) + x;
    } else {
      carry += (x - t) + sum;
    }
    sum = t;
  }
  long double total() const { return sum + carry; }
};

}  // namespace

Schedule Schedule::constant(double base) {
  Schedule s{Kind::Constant, base, 0.0};
  validate(s);
  return s;
}

Schedule Schedule::polynomial(double base, double exponent) {
  Schedule s{Kind::Polynomial, base, exponent};
  validate(s);
  return s;
}

Schedule Schedule::logarithmic(double base, double exponent) {
  Schedule s{Kind::Logarithmic, base, exponent};
  validate(s);
  return s;
}

void validate(const Schedule& s) {
  if (!(s.base > 0.0) || !std::isfinite(s.base)) {
    throw std::invalid_argument("schedule base must be positive and finite");
  }
  if (!(s.exponent >= 0.0) || !std::isfinite(s.exponent)) {
    throw std::invalid_argument("schedule exponent must be non-negative and finite");
  }
  if (s.kind == Schedule::Kind::Constant && s.exponent != 0.0) {
    throw std::invalid_argument("constant schedule must have exponent 0");
  }
}

double Schedule::value(std::int64_t k) const {
  if (k < 0) throw std::invalid_argument("schedule index must be non-negative");
  switch (kind) {
    case Kind::Constant:
      return base;
    case Kind::Polynomial: {
      const double kk = static_cast<double>(k < 1 ? 1 : k);
      return base * std::pow(kk, -exponent);
    }
    case Kind::Logarithmic: {
      const double kk = static_cast<double>(k < 2 ? 2 : k);
      return base * std::pow(std::log(kk), -exponent);
    }
  }
  return base;
}

Schedule Schedule::parse(std::string_view text) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(':', start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos
                                                                     : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  Schedule s;
  if (parts[0] == "const") {
    if (parts.size() != 2) {
      throw std::invalid_argument("schedule '" + std::string(text) + "': expected const:<base>");
    }
    s = Schedule{Kind::Constant, parse_real(parts[1], "base", text), 0.0};
  } else if (parts[0] == "poly" || parts[0] == "log") {
    if (parts.size() != 3) {
      throw std::invalid_argument("schedule '" + std::string(text) + "': expected " +
                                  std::string(parts[0]) + ":<base>:<exponent>");
    }
    s = Schedule{parts[0] == "poly" ? Kind::Polynomial : Kind::Logarithmic,
                 parse_real(parts[1], "base", text), parse_real(parts[2], "exponent", text)};
  } else {
    throw std::invalid_argument("schedule '" + std::string(text) + "': unknown kind '" +
                                std::string(parts[0]) + "'");
  }
  try {
    validate(s);
  } catch (const std::invalid_argument& e) {
    throw std::invalid_argument("schedule '" + std::string(text) + "': " + e.what());
  }
  return s;
}

std::string Schedule::to_string() const {
  switch (kind) {
    case Kind::Constant:
      return "const:" + format_real(base);
    case Kind::Polynomial:
      return "poly:" + format_real(base) + ":" + format_real(exponent);
    case Kind::Logarithmic:
      return "log:" + format_real(base) + ":" + format_real(exponent);
  }
  return {};
}

StepScheduleReport validate_step_schedule(const Schedule& step) {
  validate(step);
  StepScheduleReport r;
  const double q = step.exponent;
  switch (step.kind) {
    case Schedule::Kind::Constant:
      r.square_summable = false;
      r.decay_ok = true;
      r.neighborhood_only = true;
      r.notes.push_back("constant step: sum of alpha_k^2 diverges; convergence to a neighborhood only");
      break;
    case Schedule::Kind::Polynomial:
      r.square_summable = 2.0 * q > 1.0;
      r.decay_ok = q < 1.0;
      r.neighborhood_only = q == 0.0;
      if (q == 0.0) {
        r.notes.push_back("q = 0 is a constant step: convergence to a neighborhood only");
      } else if (!r.square_summable) {
        r.notes.push_back("q <= 1/2: sum of k^(-2q) diverges");
      }
      if (!r.decay_ok) r.notes.push_back("q >= 1: k * alpha_k does not diverge");
      break;
    case Schedule::Kind::Logarithmic:
      r.square_summable = false;
      r.decay_ok = true;
      r.neighborhood_only = q == 0.0;
      r.notes.push_back("logarithmic step: sum of (log k)^(-2q) diverges");
      break;
  }
  return r;
}

double l_k_sum(const Schedule& step, const Schedule& acc, std::int64_t horizon,
               const LkOptions& opts) {
  validate(step);
  validate(acc);
  if (horizon < 1) throw std::invalid_argument("l_k_sum: horizon must be >= 1");
  if (horizon > opts.max_horizon) {
    throw std::invalid_argument("l_k_sum: horizon " + std::to_string(horizon) +
                                " exceeds cap " + std::to_string(opts.max_horizon));
  }
  CompensatedSum sum;
  for (std::int64_t k = 0; k < horizon; ++k) {
    const long double a = step.value(k);
    const long double e = acc.value(k);
    sum.add(a * e * e);
  }
  const long double denom = static_cast<long double>(horizon) * step.value(horizon);
  return static_cast<double>(sum.total() / denom);
}

std::string to_string(Regime r) {
  switch (r) {
    case Regime::AccuracyLimited:
      return "AccuracyLimited";
    case Regime::Boundary:
      return "Boundary";
    case Regime::StepLimited:
      return "StepLimited";
    case Regime::Logarithmic:
      return "Logarithmic";
    case Regime::NeighborhoodOnly:
      return "NeighborhoodOnly";
  }
  return "?";
}

RateRegime predicted_rate(double p, double q, Schedule::Kind accuracy) {
  RateRegime r;
  if (!(p >= 0.0) || !(q >= 0.0) || !std::isfinite(p) || !std::isfinite(q)) {
    r.regime = Regime::NeighborhoodOnly;
    r.note = "warning: p and q must be finite and non-negative; no rate claimed";
    return r;
  }
  if (q == 0.0 || accuracy == Schedule::Kind::Constant) {
    r.regime = Regime::NeighborhoodOnly;
    r.note = q == 0.0 ? "constant step size: convergence to a neighborhood only"
                      : "constant accuracy: L_K does not vanish; neighborhood only";
    return r;
  }
  r.limiting_case = std::fabs(q - 0.5) <= kExactTol;
  r.admissible = q > 0.5 + kExactTol && q < 1.0 && p > 0.0;
  const bool claim = (r.admissible || r.limiting_case) && p > 0.0;

  if (accuracy == Schedule::Kind::Logarithmic) {
    r.regime = Regime::Logarithmic;
    r.log_base = true;
    if (claim) r.exponent = p;
    r.note = "logarithmic accuracy: rate (log k)^-p, slowest";
  } else {
    const double lhs = 2.0 * p;
    const double rhs = 1.0 - q;
    if (std::fabs(lhs - rhs) <= kExactTol) {
      r.regime = Regime::Boundary;
      r.log_factor = true;
      if (claim) r.exponent = rhs / 2.0;
      r.note = "boundary 2p = 1-q: rate sqrt(log k / k^(1-q))";
    } else if (lhs < rhs) {
      r.regime = Regime::AccuracyLimited;
      if (claim) r.exponent = p;
      r.note = "limited by accuracy: rate k^-p";
    } else {
      r.regime = Regime::StepLimited;
      if (claim) r.exponent = rhs / 2.0;
      r.note = "limited by step size: rate k^-(1-q)/2";
    }
  }
  if (r.limiting_case) {
    r.note += "; q = 1/2 is the limiting case of the admissible range (q > 1/2 required)";
  } else if (!r.admissible) {
    r.note = "warning: outside 1/2 < q < 1, p > 0; no rate claimed (" + r.note + ")";
  }
  return r;
}

WeightDiagnostics compute_weights(const Schedule& step, double l_smooth, double a_tilde,
                                  std::int64_t horizon) {
  validate(step);
  if (!(l_smooth > 0.0)) throw std::invalid_argument("compute_weights: L_smooth must be positive");
  if (!(a_tilde >= 0.0)) throw std::invalid_argument("compute_weights: A_tilde must be >= 0");
  if (horizon < 1) throw std::invalid_argument("compute_weights: horizon must be >= 1");

  WeightDiagnostics d;
  d.weights.reserve(static_cast<std::size_t>(horizon));
  CompensatedSum sum;
  double prev_alpha = step.value(0);
  if (!(prev_alpha > 0.0)) throw std::invalid_argument("compute_weights: alpha_0 <= 0");
  double w = 1.0;
  d.product_p = 1.0 + l_smooth * a_tilde * prev_alpha * prev_alpha;
  d.weights.push_back(w);
  sum.add(w);
  for (std::int64_t k = 1; k < horizon; ++k) {
    const double alpha = step.value(k);
    if (!(alpha > 0.0)) {
      throw std::invalid_argument("compute_weights: alpha_" + std::to_string(k) + " <= 0");
    }
    const double growth = 1.0 + l_smooth * a_tilde * alpha * alpha;
    w = w * alpha / (prev_alpha * growth);
    d.product_p *= growth;
    d.weights.push_back(w);
    sum.add(w);
    prev_alpha = alpha;
  }
  d.sum_w = static_cast<double>(sum.total());
  return d;
}

}  // namespace bilevel
