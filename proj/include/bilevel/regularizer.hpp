#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>

#include "bilevel/params.hpp"
#include "bilevel/types.hpp"

namespace bilevel {

using Rng = std::mt19937_64;

/// Local constants bounding how the sample hypergradient reacts to a
/// perturbation of the lower-level point, valid on a ball around x.
struct SensitivityBounds {
  double jac_norm = 0.0;        // sup ||(d^2 h / dtheta dx)|| on the ball
  double jac_lipschitz = 0.0;   // Lipschitz constant of that operator in x
  double hess_lipschitz = 0.0;  // Lipschitz constant of d^2 h / dx^2 in x
};

/// Parametric convex regularizer R_theta(x). Every derivative is taken at
/// fixed shape; theta must follow layout().
class Regularizer {
 public:
  virtual ~Regularizer() = default;

  virtual std::string name() const = 0;
  virtual const ParamLayout& layout() const = 0;

  virtual double value(const Vec& x, const Shape& shape, const ThetaParams& theta) const = 0;
  virtual Vec grad_x(const Vec& x, const Shape& shape, const ThetaParams& theta) const = 0;
  virtual Vec hvp_x(const Vec& x, const Shape& shape, const ThetaParams& theta,
                    const Vec& v) const = 0;
  // Value and x-gradient in one pass; the default calls value() and grad_x().
  virtual double value_grad(const Vec& x, const Shape& shape, const ThetaParams& theta,
                            Vec& grad) const;
  // v -> hvp_x(x, v) with x fixed; implementations may cache the forward pass.
  virtual std::function<Vec(const Vec&)> hessian_at(const Vec& x, const Shape& shape,
                                                    const ThetaParams& theta) const;
  // grad_theta <grad_x R(x, theta), q> at fixed x.
  virtual Vec mixed_jvp(const Vec& x, const Shape& shape, const ThetaParams& theta,
                        const Vec& q) const = 0;

  // Modulus of strong convexity of R in x (0 if merely convex).
  virtual double strong_convexity(const ThetaParams&) const { return 0.0; }
  // Feasibility map applied after every upper-level step.
  virtual ThetaParams project(const ThetaParams& theta) const { return theta; }
  virtual ThetaParams initial_params(Rng& rng) const = 0;

  // Exact local constants on the ball of the given radius around x, when the
  // regularizer can provide them.
  virtual std::optional<SensitivityBounds> sensitivity_bounds(const Vec&, const Shape&,
                                                              const ThetaParams&,
                                                              double /*radius*/) const {
    return std::nullopt;
  }

 protected:
  void check_theta(const ThetaParams& theta) const;
  static void check_x(const Vec& x, const Shape& shape, const char* what);
};

/// R = 0, no parameters.
class ZeroRegularizer final : public Regularizer {
 public:
  std::string name() const override { return "none"; }
  const ParamLayout& layout() const override { return layout_; }
  double value(const Vec&, const Shape&, const ThetaParams&) const override { return 0.0; }
  Vec grad_x(const Vec& x, const Shape&, const ThetaParams&) const override;
  Vec hvp_x(const Vec& x, const Shape&, const ThetaParams&, const Vec& v) const override;
  Vec mixed_jvp(const Vec&, const Shape&, const ThetaParams&, const Vec&) const override;
  ThetaParams initial_params(Rng&) const override { return ThetaParams(layout_); }

 private:
  ParamLayout layout_;
};

/// R_s(x) = exp(s) ||x||^2 with a single scalar parameter `log_scale`.
class QuadToy final : public Regularizer {
 public:
  QuadToy();

  std::string name() const override { return "quad"; }
  const ParamLayout& layout() const override { return layout_; }
  double value(const Vec& x, const Shape& shape, const ThetaParams& theta) const override;
  Vec grad_x(const Vec& x, const Shape& shape, const ThetaParams& theta) const override;
  Vec hvp_x(const Vec& x, const Shape& shape, const ThetaParams& theta, const Vec& v) const override;
  Vec mixed_jvp(const Vec& x, const Shape& shape, const ThetaParams& theta,
                const Vec& q) const override;
  double strong_convexity(const ThetaParams& theta) const override;
  ThetaParams initial_params(Rng&) const override;
  std::optional<SensitivityBounds> sensitivity_bounds(const Vec& x, const Shape& shape,
                                                      const ThetaParams& theta,
                                                      double radius) const override;

  ThetaParams params(double s) const;

 private:
  ParamLayout layout_;
};

}  // namespace bilevel
