#pragma once

#include <cstdint>
#include <vector>

#include "bilevel/types.hpp"

namespace bilevel {

/// Zero-padded, stride-1 2-D cross-correlation with an odd square kernel.
/// Weights are stored as [out][in][dy][dx].
struct ConvLayer {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 1;
  Vec weights;

  ConvLayer() = default;
  ConvLayer(int in, int out, int k);

  std::size_t weight_count() const;
  Shape output_shape(const Shape& in) const { return {out_channels, in.height, in.width}; }
};

// out = K * in
Vec conv_forward(const ConvLayer& layer, const Vec& in, const Shape& in_shape);
// in = K^T * out (transposed convolution)
Vec conv_adjoint(const ConvLayer& layer, const Vec& out, const Shape& in_shape);
// Gradient of <signal, K * in> with respect to the weights.
Vec conv_weight_grad(const ConvLayer& layer, const Vec& signal, const Vec& in, const Shape& in_shape);

/// Composite linear operator W = K_L ... K_1.
struct ConvStack {
  std::vector<ConvLayer> layers;

  Shape output_shape(const Shape& in) const;
  Vec apply(const Vec& x, const Shape& in_shape) const;
  // Returns the input of every layer (size L) and writes the final output.
  std::vector<Vec> forward_activations(const Vec& x, const Shape& in_shape, Vec& out) const;
  Vec adjoint(const Vec& u, const Shape& in_shape) const;
  // Accumulates d<signal, W x>/dK_l for every layer given the forward activations of x.
  void weight_grads(const Vec& signal, const std::vector<Vec>& activations, const Shape& in_shape,
                    std::vector<Vec>& grads) const;
};

// Largest singular value of the stack by power iteration on W^T W, from a
// fixed-seed start vector.
double spectral_norm_estimate(const ConvStack& stack, const Shape& in_shape, int iters,
                              std::uint64_t seed = 0x5eed);

// Divides the composite operator by its estimated spectral norm, spreading
// the scale evenly over the layers. A zero operator is returned unchanged.
ConvStack spectral_normalize(const ConvStack& stack, const Shape& in_shape, int iters);

// Subtracts the mean of every [out][in] kernel slice.
Vec zero_mean_kernels(const Vec& weights, int out_channels, int in_channels, int kernel);

}  // namespace bilevel
