#include "bilevel/conv.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <random>
#include <stdexcept>

namespace bilevel {

namespace {

void check_input(const ConvLayer& layer, const Vec& in, const Shape& in_shape, const char* what) {
  if (in_shape.channels != layer.in_channels ||
      static_cast<std::size_t>(in.size()) != in_shape.size()) {
    throw std::invalid_argument(std::string(what) + ": input " + to_string(in_shape) + " (" +
                                std::to_string(in.size()) + " values) does not fit a " +
                                std::to_string(layer.in_channels) + "-channel layer");
  }
  if (layer.kernel % 2 != 1) throw std::invalid_argument(std::string(what) + ": kernel must be odd");
  if (layer.weights.size() != static_cast<Eigen::Index>(layer.weight_count())) {
    throw std::invalid_argument(std::string(what) + ": weight count mismatch");
  }
}

// Valid output rows/cols for tap offset d (in [0, k)) with radius r.
inline int lo(int d, int r) { return std::max(0, r - d); }
inline int hi(int d, int r, int n) { return std::min(n, n + r - d); }

}  // namespace

ConvLayer::ConvLayer(int in, int out, int k)
    : in_channels(in), out_channels(out), kernel(k), weights(Vec::Zero(static_cast<Eigen::Index>(in) * out * k * k)) {}

std::size_t ConvLayer::weight_count() const {
  return static_cast<std::size_t>(in_channels) * out_channels * kernel * kernel;
}

Vec conv_forward(const ConvLayer& layer, const Vec& in, const Shape& in_shape) {
  check_input(layer, in, in_shape, "conv_forward");
  const int H = in_shape.height, W = in_shape.width, k = layer.kernel, r = k / 2;
  const std::size_t plane = in_shape.plane();
  Vec out = Vec::Zero(static_cast<Eigen::Index>(plane * layer.out_channels));
  const double* w = layer.weights.data();
  for (int o = 0; o < layer.out_channels; ++o) {
    double* dst = out.data() + o * plane;
    for (int i = 0; i < layer.in_channels; ++i) {
      const double* src = in.data() + i * plane;
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          const double c = w[((o * layer.in_channels + i) * k + dy) * k + dx];
          if (c == 0.0) continue;
          const int x0 = lo(dx, r), x1 = hi(dx, r, W);
          for (int y = lo(dy, r); y < hi(dy, r, H); ++y) {
            double* drow = dst + y * W;
            const double* srow = src + (y + dy - r) * W + (dx - r);
            for (int x = x0; x < x1; ++x) drow[x] += c * srow[x];
          }
        }
      }
    }
  }
  return out;
}

Vec conv_adjoint(const ConvLayer& layer, const Vec& out, const Shape& in_shape) {
  const int H = in_shape.height, W = in_shape.width, k = layer.kernel, r = k / 2;
  const std::size_t plane = in_shape.plane();
  if (static_cast<std::size_t>(out.size()) != plane * layer.out_channels ||
      in_shape.channels != layer.in_channels) {
    throw std::invalid_argument("conv_adjoint: shape mismatch");
  }
  Vec in = Vec::Zero(static_cast<Eigen::Index>(in_shape.size()));
  const double* w = layer.weights.data();
  for (int o = 0; o < layer.out_channels; ++o) {
    const double* src = out.data() + o * plane;
    for (int i = 0; i < layer.in_channels; ++i) {
      double* dst = in.data() + i * plane;
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          const double c = w[((o * layer.in_channels + i) * k + dy) * k + dx];
          if (c == 0.0) continue;
          const int x0 = lo(dx, r), x1 = hi(dx, r, W);
          for (int y = lo(dy, r); y < hi(dy, r, H); ++y) {
            const double* srow = src + y * W;
            double* drow = dst + (y + dy - r) * W + (dx - r);
            for (int x = x0; x < x1; ++x) drow[x] += c * srow[x];
          }
        }
      }
    }
  }
  return in;
}

Vec conv_weight_grad(const ConvLayer& layer, const Vec& signal, const Vec& in, const Shape& in_shape) {
  check_input(layer, in, in_shape, "conv_weight_grad");
  const int H = in_shape.height, W = in_shape.width, k = layer.kernel, r = k / 2;
  const std::size_t plane = in_shape.plane();
  if (static_cast<std::size_t>(signal.size()) != plane * layer.out_channels) {
    throw std::invalid_argument("conv_weight_grad: signal shape mismatch");
  }
  Vec g = Vec::Zero(static_cast<Eigen::Index>(layer.weight_count()));
  for (int o = 0; o < layer.out_channels; ++o) {
    const double* sig = signal.data() + o * plane;
    for (int i = 0; i < layer.in_channels; ++i) {
      const double* src = in.data() + i * plane;
      for (int dy = 0; dy < k; ++dy) {
        for (int dx = 0; dx < k; ++dx) {
          const int x0 = lo(dx, r), x1 = hi(dx, r, W);
          double acc = 0.0;
          for (int y = lo(dy, r); y < hi(dy, r, H); ++y) {
            const double* srow = sig + y * W;
            const double* irow = src + (y + dy - r) * W + (dx - r);
            for (int x = x0; x < x1; ++x) acc += srow[x] * irow[x];
          }
          g[((o * layer.in_channels + i) * k + dy) * k + dx] = acc;
        }
      }
    }
  }
  return g;
}

Shape ConvStack::output_shape(const Shape& in) const {
  Shape s = in;
  for (const auto& l : layers) s = l.output_shape(s);
  return s;
}

Vec ConvStack::apply(const Vec& x, const Shape& in_shape) const {
  Vec cur = x;
  Shape s = in_shape;
  for (const auto& l : layers) {
    cur = conv_forward(l, cur, s);
    s = l.output_shape(s);
  }
  return cur;
}

std::vector<Vec> ConvStack::forward_activations(const Vec& x, const Shape& in_shape, Vec& out) const {
  std::vector<Vec> acts;
  acts.reserve(layers.size());
  Vec cur = x;
  Shape s = in_shape;
  for (const auto& l : layers) {
    acts.push_back(cur);
    cur = conv_forward(l, cur, s);
    s = l.output_shape(s);
  }
  out = std::move(cur);
  return acts;
}

Vec ConvStack::adjoint(const Vec& u, const Shape& in_shape) const {
  std::vector<Shape> shapes;
  Shape s = in_shape;
  for (const auto& l : layers) {
    shapes.push_back(s);
    s = l.output_shape(s);
  }
  Vec cur = u;
  for (std::size_t j = layers.size(); j-- > 0;) cur = conv_adjoint(layers[j], cur, shapes[j]);
  return cur;
}

void ConvStack::weight_grads(const Vec& signal, const std::vector<Vec>& activations,
                             const Shape& in_shape, std::vector<Vec>& grads) const {
  if (activations.size() != layers.size()) throw std::invalid_argument("weight_grads: activation count");
  grads.resize(layers.size());
  std::vector<Shape> shapes;
  Shape s = in_shape;
  for (const auto& l : layers) {
    shapes.push_back(s);
    s = l.output_shape(s);
  }
  Vec sig = signal;
  for (std::size_t j = layers.size(); j-- > 0;) {
    Vec g = conv_weight_grad(layers[j], sig, activations[j], shapes[j]);
    if (grads[j].size() == g.size()) {
      grads[j] += g;
    } else {
      grads[j] = std::move(g);
    }
    if (j > 0) sig = conv_adjoint(layers[j], sig, shapes[j]);
  }
}

double spectral_norm_estimate(const ConvStack& stack, const Shape& in_shape, int iters,
                              std::uint64_t seed) {
  if (iters < 1) throw std::invalid_argument("spectral_norm_estimate: iters must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Vec v(static_cast<Eigen::Index>(in_shape.size()));
  for (auto& e : v) e = normal(rng);
  v.normalize();
  double sigma = 0.0;
  for (int it = 0; it < iters; ++it) {
    const Vec wv = stack.apply(v, in_shape);
    sigma = wv.norm();
    if (sigma == 0.0) return 0.0;
    v = stack.adjoint(wv, in_shape);
    const double n = v.norm();
    if (n == 0.0) return 0.0;
    v /= n;
  }
  return stack.apply(v, in_shape).norm();
}

ConvStack spectral_normalize(const ConvStack& stack, const Shape& in_shape, int iters) {
  const double sigma = spectral_norm_estimate(stack, in_shape, iters);
  if (!(sigma > 0.0)) {
    std::cerr << "warning: spectral_normalize: zero operator left unchanged\n";
    return stack;
  }
  ConvStack out = stack;
  const double per_layer = std::pow(sigma, -1.0 / static_cast<double>(stack.layers.size()));
  for (auto& l : out.layers) l.weights *= per_layer;
  return out;
}

Vec zero_mean_kernels(const Vec& weights, int out_channels, int in_channels, int kernel) {
  const Eigen::Index slice = static_cast<Eigen::Index>(kernel) * kernel;
  if (weights.size() != slice * out_channels * in_channels) {
    throw std::invalid_argument("zero_mean_kernels: size mismatch");
  }
  Vec out = weights;
  for (Eigen::Index s = 0; s < static_cast<Eigen::Index>(out_channels) * in_channels; ++s) {
    auto seg = out.segment(s * slice, slice);
    seg.array() -= seg.mean();
  }
  return out;
}

}  // namespace bilevel
