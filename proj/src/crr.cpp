#include "bilevel/crr.hpp"

#include <cmath>
#include <memory>
#include <stdexcept>

namespace bilevel {

Crr::Crr(CrrConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.channels.size() < 2) throw std::invalid_argument("crr: need at least one layer");
  if (cfg_.kernel < 1 || cfg_.kernel % 2 == 0) throw std::invalid_argument("crr: kernel must be odd");
  if (!(cfg_.potential.beta > 0.0)) throw std::invalid_argument("crr: beta must be positive");
  if (cfg_.power_iters < 1) throw std::invalid_argument("crr: power_iters must be >= 1");
  std::vector<TensorSpec> specs;
  for (std::size_t l = 0; l + 1 < cfg_.channels.size(); ++l) {
    specs.push_back({layer_name(l), {cfg_.channels[l + 1], cfg_.channels[l], cfg_.kernel, cfg_.kernel}, false});
  }
  specs.push_back({"log_scale", {cfg_.channels.back()}, false});
  layout_ = ParamLayout(std::move(specs));
}

std::string Crr::layer_name(std::size_t l) const { return "conv" + std::to_string(l); }

void Crr::check_shape(const Shape& shape) const {
  if (shape.channels != cfg_.channels.front()) {
    throw std::invalid_argument("crr: input " + to_string(shape) + " has wrong channel count");
  }
}

ConvStack Crr::stack(const ThetaParams& theta) const {
  check_theta(theta);
  ConvStack st;
  for (std::size_t l = 0; l + 1 < cfg_.channels.size(); ++l) {
    ConvLayer layer(cfg_.channels[l], cfg_.channels[l + 1], cfg_.kernel);
    layer.weights = zero_mean_kernels(theta.block(layer_name(l)), layer.out_channels,
                                      layer.in_channels, cfg_.kernel);
    st.layers.push_back(std::move(layer));
  }
  return st;
}

Vec Crr::scales(const ThetaParams& theta) const { return theta.block("log_scale").array().exp(); }

double Crr::value(const Vec& x, const Shape& shape, const ThetaParams& theta) const {
  check_shape(shape);
  check_x(x, shape, "crr.value");
  const Vec u = stack(theta).apply(x, shape);
  const Vec e = scales(theta);
  const std::size_t plane = shape.plane();
  double total = 0.0;
  for (Eigen::Index c = 0; c < e.size(); ++c) {
    for (std::size_t p = 0; p < plane; ++p) total += cfg_.potential.eval(e[c] * u[c * plane + p]).psi;
  }
  return total;
}

Vec Crr::grad_x(const Vec& x, const Shape& shape, const ThetaParams& theta) const {
  check_shape(shape);
  check_x(x, shape, "crr.grad_x");
  const ConvStack st = stack(theta);
  Vec t = st.apply(x, shape);
  const Vec e = scales(theta);
  const std::size_t plane = shape.plane();
  for (Eigen::Index c = 0; c < e.size(); ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      double& u = t[c * plane + p];
      u = e[c] * cfg_.potential.eval(e[c] * u).d1;
    }
  }
  return st.adjoint(t, shape);
}

Vec Crr::hvp_x(const Vec& x, const Shape& shape, const ThetaParams& theta, const Vec& v) const {
  check_shape(shape);
  check_x(x, shape, "crr.hvp_x");
  check_x(v, shape, "crr.hvp_x");
  const ConvStack st = stack(theta);
  const Vec u = st.apply(x, shape);
  Vec w = st.apply(v, shape);
  const Vec e = scales(theta);
  const std::size_t plane = shape.plane();
  for (Eigen::Index c = 0; c < e.size(); ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      w[i] *= e[c] * e[c] * cfg_.potential.eval(e[c] * u[i]).d2;
    }
  }
  return st.adjoint(w, shape);
}

double Crr::value_grad(const Vec& x, const Shape& shape, const ThetaParams& theta, Vec& grad) const {
  check_shape(shape);
  check_x(x, shape, "crr.value_grad");
  const ConvStack st = stack(theta);
  Vec t = st.apply(x, shape);
  const Vec e = scales(theta);
  const std::size_t plane = shape.plane();
  double total = 0.0;
  for (Eigen::Index c = 0; c < e.size(); ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      double& u = t[c * plane + p];
      const PotentialValue pv = cfg_.potential.eval(e[c] * u);
      total += pv.psi;
      u = e[c] * pv.d1;
    }
  }
  grad = st.adjoint(t, shape);
  return total;
}

std::function<Vec(const Vec&)> Crr::hessian_at(const Vec& x, const Shape& shape,
                                               const ThetaParams& theta) const {
  check_shape(shape);
  check_x(x, shape, "crr.hessian_at");
  auto st = std::make_shared<const ConvStack>(stack(theta));
  Vec d = st->apply(x, shape);
  const Vec e = scales(theta);
  const std::size_t plane = shape.plane();
  for (Eigen::Index c = 0; c < e.size(); ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      double& u = d[c * plane + p];
      u = e[c] * e[c] * cfg_.potential.eval(e[c] * u).d2;
    }
  }
  return [st, d = std::move(d), shape](const Vec& v) {
    if (static_cast<std::size_t>(v.size()) != shape.size()) throw std::invalid_argument("crr.hvp: shape mismatch");
    const Vec w = st->apply(v, shape).cwiseProduct(d);
    return st->adjoint(w, shape);
  };
}

Vec Crr::mixed_jvp(const Vec& x, const Shape& shape, const ThetaParams& theta, const Vec& q) const {
  check_shape(shape);
  check_x(x, shape, "crr.mixed_jvp");
  check_x(q, shape, "crr.mixed_jvp");
  const ConvStack st = stack(theta);
  Vec u, w;
  const auto acts_x = st.forward_activations(x, shape, u);
  const auto acts_q = st.forward_activations(q, shape, w);
  const Vec e = scales(theta);
  const std::size_t plane = shape.plane();

  Vec a(u.size()), b(u.size());
  Vec ds = Vec::Zero(e.size());
  for (Eigen::Index c = 0; c < e.size(); ++c) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t i = c * plane + p;
      const PotentialValue pv = cfg_.potential.eval(e[c] * u[i]);
      a[i] = e[c] * e[c] * pv.d2 * w[i];
      b[i] = e[c] * pv.d1;
      ds[c] += (e[c] * pv.d1 + e[c] * e[c] * u[i] * pv.d2) * w[i];
    }
  }

  std::vector<Vec> grads;
  st.weight_grads(a, acts_x, shape, grads);
  st.weight_grads(b, acts_q, shape, grads);

  ThetaParams out(layout_);
  for (std::size_t l = 0; l < st.layers.size(); ++l) {
    const auto& layer = st.layers[l];
    out.block(layer_name(l)) = zero_mean_kernels(grads[l], layer.out_channels, layer.in_channels, cfg_.kernel);
  }
  out.block("log_scale") = ds;
  return out.flat;
}

ThetaParams Crr::project(const ThetaParams& theta) const {
  const ConvStack st = stack(theta);
  const double sigma = spectral_norm_estimate(st, cfg_.norm_shape, cfg_.power_iters);
  ThetaParams out = theta;
  if (!(sigma > 0.0)) return out;
  const double per_layer = std::pow(sigma, -1.0 / static_cast<double>(st.layers.size()));
  for (std::size_t l = 0; l < st.layers.size(); ++l) out.block(layer_name(l)) *= per_layer;
  return out;
}

ThetaParams Crr::initial_params(Rng& rng) const {
  ThetaParams theta(layout_);
  std::normal_distribution<double> normal;
  const int k2 = cfg_.kernel * cfg_.kernel;
  for (std::size_t l = 0; l + 1 < cfg_.channels.size(); ++l) {
    const int cin = cfg_.channels[l], cout = cfg_.channels[l + 1];
    const double std = std::sqrt(2.0 / static_cast<double>((cin + cout) * k2));
    auto blk = theta.block(layer_name(l));
    for (auto& v : blk) v = std * normal(rng);
    blk = zero_mean_kernels(blk, cout, cin, cfg_.kernel);
  }
  return project(theta);
}

}  // namespace bilevel
