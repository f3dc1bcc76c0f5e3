#pragma once

#include <string>

namespace bilevel {

struct PotentialValue {
  double psi = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

/// Convex scalar potential psi^beta: Huber (Moreau envelope of |u|) or
/// log-cosh. Both satisfy psi(0) = 0, |psi'| <= 1 and 0 <= psi'' <= beta.
struct Potential {
  enum class Kind { Huber, LogCosh };
  Kind kind = Kind::Huber;
  double beta = 1.0;

  PotentialValue eval(double u) const;
  static Kind parse_kind(const std::string& s);
  static std::string kind_name(Kind k);
};

PotentialValue potential_eval(const Potential& pot, double u);

}  // namespace bilevel
