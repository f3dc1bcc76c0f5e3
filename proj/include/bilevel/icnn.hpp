#pragma once

#include "bilevel/conv.hpp"
#include "bilevel/regularizer.hpp"

namespace bilevel {

struct IcnnConfig {
  int in_channels = 1;
  int hidden = 8;
  int out_channels = 8;
  int kernel = 5;
  double nu = 1e-3;  // smoothing width of the clipped ReLU
};

struct Activation {
  double phi = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
};

// Smoothed clipped ReLU: 0 for u < 0, u^2 / (2 nu) on [0, nu), u - nu/2 above.
Activation smoothed_relu(double u, double nu);

/// Two-layer convolutional input-convex network
///   R(x) = sum_c exp(s_c) sum_pix phi(W_z phi(W_x x + b_x) + b_z)_c
/// with W_z >= 0 elementwise.
class Icnn final : public Regularizer {
 public:
  explicit Icnn(IcnnConfig cfg = {});

  std::string name() const override { return "icnn"; }
  const ParamLayout& layout() const override { return layout_; }
  const IcnnConfig& config() const { return cfg_; }

  double value(const Vec& x, const Shape& shape, const ThetaParams& theta) const override;
  Vec grad_x(const Vec& x, const Shape& shape, const ThetaParams& theta) const override;
  Vec hvp_x(const Vec& x, const Shape& shape, const ThetaParams& theta, const Vec& v) const override;
  double value_grad(const Vec& x, const Shape& shape, const ThetaParams& theta,
                    Vec& grad) const override;
  std::function<Vec(const Vec&)> hessian_at(const Vec& x, const Shape& shape,
                                            const ThetaParams& theta) const override;
  Vec mixed_jvp(const Vec& x, const Shape& shape, const ThetaParams& theta,
                const Vec& q) const override;
  ThetaParams project(const ThetaParams& theta) const override;
  ThetaParams initial_params(Rng& rng) const override;

 private:
  struct Forward;
  Forward forward(const Vec& x, const Shape& shape, const ThetaParams& theta, bool backward = true) const;
  Vec hvp_from(const Forward& f, const Vec& v) const;

  IcnnConfig cfg_;
  ParamLayout layout_;
};

}  // namespace bilevel
