#include "bilevel/potential.hpp"

#include <cmath>
#include <stdexcept>

namespace bilevel {

PotentialValue Potential::eval(double u) const {
  const double au = std::fabs(u);
  PotentialValue r;
  if (kind == Kind::Huber) {
    if (au <= 1.0 / beta) {
      r.psi = 0.5 * beta * u * u;
      r.d1 = beta * u;
      r.d2 = beta;
    } else {
      r.psi = au - 0.5 / beta;
      r.d1 = u > 0 ? 1.0 : -1.0;
      r.d2 = 0.0;
    }
  } else {
    // log(cosh(b u)) / b = |u| + (log(1 + exp(-2 b |u|)) - log 2) / b
    r.psi = au + (std::log1p(std::exp(-2.0 * beta * au)) - std::log(2.0)) / beta;
    const double t = std::tanh(beta * u);
    r.d1 = t;
    r.d2 = beta * (1.0 - t * t);
  }
  return r;
}

Potential::Kind Potential::parse_kind(const std::string& s) {
  if (s == "huber") return Kind::Huber;
  if (s == "logcosh") return Kind::LogCosh;
  throw std::invalid_argument("unknown potential '" + s + "' (expected huber or logcosh)");
}

std::string Potential::kind_name(Kind k) { return k == Kind::Huber ? "huber" : "logcosh"; }

PotentialValue potential_eval(const Potential& pot, double u) {
  if (!(pot.beta > 0.0)) throw std::invalid_argument("potential beta must be positive");
  return pot.eval(u);
}

}  // namespace bilevel
