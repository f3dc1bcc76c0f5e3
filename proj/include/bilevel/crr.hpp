#pragma once

#include <vector>

#include "bilevel/conv.hpp"
#include "bilevel/potential.hpp"
#include "bilevel/regularizer.hpp"

namespace bilevel {

struct CrrConfig {
  std::vector<int> channels{1, 4, 8};  // input channels first
  int kernel = 5;
  Potential potential{Potential::Kind::Huber, 10.0};
  int power_iters = 50;
  Shape norm_shape{1, 32, 32};  // geometry at which the spectral norm is enforced
};

/// Convex ridge regularizer R(x) = sum_c sum_pix psi(exp(s_c) (W x)_c) with
/// W a zero-padded convolution stack. Raw kernels live in theta; the
/// operator uses their zero-mean projection.
class Crr final : public Regularizer {
 public:
  explicit Crr(CrrConfig cfg = {});

  std::string name() const override { return "crr"; }
  const ParamLayout& layout() const override { return layout_; }
  const CrrConfig& config() const { return cfg_; }

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

  // Operator actually applied to images: zero-mean kernels from theta.
  ConvStack stack(const ThetaParams& theta) const;
  std::string layer_name(std::size_t l) const;

 private:
  void check_shape(const Shape& shape) const;
  Vec scales(const ThetaParams& theta) const;

  CrrConfig cfg_;
  ParamLayout layout_;
};

}  // namespace bilevel
