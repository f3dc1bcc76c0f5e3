#include <cmath>
#include <stdexcept>

#include "bilevel/regularizer.hpp"

namespace bilevel {

void Regularizer::check_theta(const ThetaParams& theta) const {
  if (!(theta.layout == layout()) || static_cast<std::size_t>(theta.flat.size()) != layout().size()) {
    throw std::invalid_argument(name() + ": parameter layout mismatch");
  }
}

void Regularizer::check_x(const Vec& x, const Shape& shape, const char* what) {
  if (static_cast<std::size_t>(x.size()) != shape.size()) {
    throw std::invalid_argument(std::string(what) + ": vector of length " + std::to_string(x.size()) +
                                " does not match shape " + to_string(shape));
  }
}

double Regularizer::value_grad(const Vec& x, const Shape& shape, const ThetaParams& theta,
                               Vec& grad) const {
  grad = grad_x(x, shape, theta);
  return value(x, shape, theta);
}

std::function<Vec(const Vec&)> Regularizer::hessian_at(const Vec& x, const Shape& shape,
                                                       const ThetaParams& theta) const {
  return [this, x, shape, theta](const Vec& v) { return hvp_x(x, shape, theta, v); };
}

Vec ZeroRegularizer::grad_x(const Vec& x, const Shape&, const ThetaParams&) const {
  return Vec::Zero(x.size());
}

Vec ZeroRegularizer::hvp_x(const Vec&, const Shape&, const ThetaParams&, const Vec& v) const {
  return Vec::Zero(v.size());
}

Vec ZeroRegularizer::mixed_jvp(const Vec&, const Shape&, const ThetaParams&, const Vec&) const {
  return Vec();
}

QuadToy::QuadToy() : layout_({TensorSpec{"log_scale", {1}, false}}) {}

ThetaParams QuadToy::params(double s) const {
  ThetaParams t(layout_);
  t.flat[0] = s;
  return t;
}

double QuadToy::value(const Vec& x, const Shape& shape, const ThetaParams& theta) const {
  check_theta(theta);
  check_x(x, shape, "quad.value");
  return std::exp(theta.flat[0]) * x.squaredNorm();
}

Vec QuadToy::grad_x(const Vec& x, const Shape& shape, const ThetaParams& theta) const {
  check_theta(theta);
  check_x(x, shape, "quad.grad_x");
  return 2.0 * std::exp(theta.flat[0]) * x;
}

Vec QuadToy::hvp_x(const Vec& x, const Shape& shape, const ThetaParams& theta, const Vec& v) const {
  check_theta(theta);
  check_x(x, shape, "quad.hvp_x");
  check_x(v, shape, "quad.hvp_x");
  return 2.0 * std::exp(theta.flat[0]) * v;
}

Vec QuadToy::mixed_jvp(const Vec& x, const Shape& shape, const ThetaParams& theta,
                       const Vec& q) const {
  check_theta(theta);
  check_x(x, shape, "quad.mixed_jvp");
  check_x(q, shape, "quad.mixed_jvp");
  Vec out(1);
  out[0] = 2.0 * std::exp(theta.flat[0]) * x.dot(q);
  return out;
}

double QuadToy::strong_convexity(const ThetaParams& theta) const {
  check_theta(theta);
  return 2.0 * std::exp(theta.flat[0]);
}

ThetaParams QuadToy::initial_params(Rng&) const { return params(0.0); }

std::optional<SensitivityBounds> QuadToy::sensitivity_bounds(const Vec& x, const Shape& shape,
                                                             const ThetaParams& theta,
                                                             double radius) const {
  check_theta(theta);
  check_x(x, shape, "quad.sensitivity_bounds");
  const double c = 2.0 * std::exp(theta.flat[0]);
  return SensitivityBounds{c * (x.norm() + radius), c, 0.0};
}

}  // namespace bilevel
