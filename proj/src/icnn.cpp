#include "bilevel/icnn.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace bilevel {

Activation smoothed_relu(double u, double nu) {
  if (u < 0.0) return {0.0, 0.0, 0.0};
  if (u < nu) return {0.5 * u * u / nu, u / nu, 1.0 / nu};
  return {u - 0.5 * nu, 1.0, 0.0};
}

namespace {

void add_bias(Vec& a, const Eigen::Map<const Vec>& b, std::size_t plane) {
  for (Eigen::Index c = 0; c < b.size(); ++c) a.segment(c * plane, plane).array() += b[c];
}

Vec channel_sums(const Vec& a, int channels, std::size_t plane) {
  Vec s(channels);
  for (int c = 0; c < channels; ++c) s[c] = a.segment(c * plane, plane).sum();
  return s;
}

}  // namespace

struct Icnn::Forward {
  ConvLayer wx, wz;
  Shape in, hidden;
  std::size_t plane = 0;
  Vec e;              // exp(s) per output channel
  Vec a1, z1, d1a1, d2a1;
  Vec a2, d1a2, d2a2;
  Vec delta2;         // exp(s) phi'(a2)
  Vec wz_t_delta2;    // W_z^T delta2
};

Icnn::Icnn(IcnnConfig cfg) : cfg_(cfg) {
  if (cfg_.in_channels < 1 || cfg_.hidden < 1 || cfg_.out_channels < 1) {
    throw std::invalid_argument("icnn: channel counts must be positive");
  }
  if (cfg_.kernel < 1 || cfg_.kernel % 2 == 0) throw std::invalid_argument("icnn: kernel must be odd");
  if (!(cfg_.nu > 0.0)) throw std::invalid_argument("icnn: nu must be positive");
  const int k = cfg_.kernel;
  layout_ = ParamLayout({
      {"wx", {cfg_.hidden, cfg_.in_channels, k, k}, false},
      {"wz", {cfg_.out_channels, cfg_.hidden, k, k}, true},
      {"bx", {cfg_.hidden}, false},
      {"bz", {cfg_.out_channels}, false},
      {"log_scale", {cfg_.out_channels}, false},
  });
}

Icnn::Forward Icnn::forward(const Vec& x, const Shape& shape, const ThetaParams& theta, bool backward) const {
  check_theta(theta);
  if (shape.channels != cfg_.in_channels) {
    throw std::invalid_argument("icnn: input " + to_string(shape) + " has wrong channel count");
  }
  check_x(x, shape, "icnn");
  Forward f;
  f.wx = ConvLayer(cfg_.in_channels, cfg_.hidden, cfg_.kernel);
  f.wz = ConvLayer(cfg_.hidden, cfg_.out_channels, cfg_.kernel);
  f.wx.weights = theta.block("wx");
  f.wz.weights = theta.block("wz");
  if (f.wz.weights.size() > 0 && f.wz.weights.minCoeff() < 0.0) {
    throw std::domain_error("icnn: W_z has negative entries; convexity in x is lost");
  }
  f.in = shape;
  f.hidden = f.wx.output_shape(shape);
  f.plane = shape.plane();
  f.e = theta.block("log_scale").array().exp();

  f.a1 = conv_forward(f.wx, x, shape);
  add_bias(f.a1, theta.block("bx"), f.plane);
  f.z1.resize(f.a1.size());
  f.d1a1.resize(f.a1.size());
  f.d2a1.resize(f.a1.size());
  for (Eigen::Index i = 0; i < f.a1.size(); ++i) {
    const Activation act = smoothed_relu(f.a1[i], cfg_.nu);
    f.z1[i] = act.phi;
    f.d1a1[i] = act.d1;
    f.d2a1[i] = act.d2;
  }

  f.a2 = conv_forward(f.wz, f.z1, f.hidden);
  add_bias(f.a2, theta.block("bz"), f.plane);
  f.d1a2.resize(f.a2.size());
  f.d2a2.resize(f.a2.size());
  f.delta2.resize(f.a2.size());
  for (int c = 0; c < cfg_.out_channels; ++c) {
    for (std::size_t p = 0; p < f.plane; ++p) {
      const std::size_t i = c * f.plane + p;
      const Activation act = smoothed_relu(f.a2[i], cfg_.nu);
      f.d1a2[i] = act.d1;
      f.d2a2[i] = act.d2;
      f.delta2[i] = f.e[c] * act.d1;
    }
  }
  if (backward) f.wz_t_delta2 = conv_adjoint(f.wz, f.delta2, f.hidden);
  return f;
}

double Icnn::value(const Vec& x, const Shape& shape, const ThetaParams& theta) const {
  const Forward f = forward(x, shape, theta, false);
  double total = 0.0;
  for (int c = 0; c < cfg_.out_channels; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < f.plane; ++p) s += smoothed_relu(f.a2[c * f.plane + p], cfg_.nu).phi;
    total += f.e[c] * s;
  }
  return total;
}

Vec Icnn::grad_x(const Vec& x, const Shape& shape, const ThetaParams& theta) const {
  const Forward f = forward(x, shape, theta);
  const Vec delta1 = f.d1a1.cwiseProduct(f.wz_t_delta2);
  return conv_adjoint(f.wx, delta1, shape);
}

Vec Icnn::hvp_from(const Forward& f, const Vec& v) const {
  const Vec w1 = conv_forward(f.wx, v, f.in);
  const Vec t = f.d1a1.cwiseProduct(w1);
  Vec g2 = conv_forward(f.wz, t, f.hidden);
  for (int c = 0; c < cfg_.out_channels; ++c) {
    g2.segment(c * f.plane, f.plane).array() *= f.e[c] * f.d2a2.segment(c * f.plane, f.plane).array();
  }
  const Vec g1 = f.d1a1.cwiseProduct(conv_adjoint(f.wz, g2, f.hidden)) +
                 f.d2a1.cwiseProduct(w1).cwiseProduct(f.wz_t_delta2);
  return conv_adjoint(f.wx, g1, f.in);
}

Vec Icnn::hvp_x(const Vec& x, const Shape& shape, const ThetaParams& theta, const Vec& v) const {
  check_x(v, shape, "icnn.hvp_x");
  return hvp_from(forward(x, shape, theta), v);
}

double Icnn::value_grad(const Vec& x, const Shape& shape, const ThetaParams& theta, Vec& grad) const {
  const Forward f = forward(x, shape, theta);
  double total = 0.0;
  for (int c = 0; c < cfg_.out_channels; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < f.plane; ++p) s += smoothed_relu(f.a2[c * f.plane + p], cfg_.nu).phi;
    total += f.e[c] * s;
  }
  grad = conv_adjoint(f.wx, f.d1a1.cwiseProduct(f.wz_t_delta2), shape);
  return total;
}

std::function<Vec(const Vec&)> Icnn::hessian_at(const Vec& x, const Shape& shape,
                                                const ThetaParams& theta) const {
  auto f = std::make_shared<const Forward>(forward(x, shape, theta));
  return [this, f](const Vec& v) {
    check_x(v, f->in, "icnn.hvp");
    return hvp_from(*f, v);
  };
}

Vec Icnn::mixed_jvp(const Vec& x, const Shape& shape, const ThetaParams& theta, const Vec& q) const {
  check_x(q, shape, "icnn.mixed_jvp");
  const Forward f = forward(x, shape, theta);
  const Vec w1 = conv_forward(f.wx, q, shape);
  const Vec t = f.d1a1.cwiseProduct(w1);
  const Vec u2 = conv_forward(f.wz, t, f.hidden);
  Vec g2(u2.size());
  Vec ds(cfg_.out_channels);
  for (int c = 0; c < cfg_.out_channels; ++c) {
    const auto seg = Eigen::seqN(c * f.plane, f.plane);
    g2(seg) = f.e[c] * f.d2a2(seg).cwiseProduct(u2(seg));
    ds[c] = f.e[c] * f.d1a2(seg).dot(u2(seg));
  }
  const Vec g1 = f.d1a1.cwiseProduct(conv_adjoint(f.wz, g2, f.hidden)) +
                 f.d2a1.cwiseProduct(w1).cwiseProduct(f.wz_t_delta2);
  const Vec delta1 = f.d1a1.cwiseProduct(f.wz_t_delta2);

  ThetaParams out(layout_);
  out.block("wz") = conv_weight_grad(f.wz, f.delta2, t, f.hidden) + conv_weight_grad(f.wz, g2, f.z1, f.hidden);
  out.block("wx") = conv_weight_grad(f.wx, g1, x, shape) + conv_weight_grad(f.wx, delta1, q, shape);
  out.block("bx") = channel_sums(g1, cfg_.hidden, f.plane);
  out.block("bz") = channel_sums(g2, cfg_.out_channels, f.plane);
  out.block("log_scale") = ds;
  return out.flat;
}

ThetaParams Icnn::project(const ThetaParams& theta) const {
  check_theta(theta);
  return clamp_nonneg(theta);
}

ThetaParams Icnn::initial_params(Rng& rng) const {
  ThetaParams theta(layout_);
  std::normal_distribution<double> normal;
  const int k2 = cfg_.kernel * cfg_.kernel;
  const double sx = std::sqrt(2.0 / static_cast<double>((cfg_.in_channels + cfg_.hidden) * k2));
  const double sz = std::sqrt(2.0 / static_cast<double>((cfg_.hidden + cfg_.out_channels) * k2));
  auto wx = theta.block("wx");
  for (auto& v : wx) v = sx * normal(rng);
  wx = zero_mean_kernels(wx, cfg_.hidden, cfg_.in_channels, cfg_.kernel);
  for (auto& v : theta.block("wz")) v = sz * std::fabs(normal(rng));
  return theta;
}

}  // namespace bilevel
