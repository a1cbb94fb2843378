#pragma once

#include "dud/nn/graph.hpp"

namespace dud::nn {

/// 2-D convolution with zero "same" padding (k/2). Weight [k,k,Cin,Cout], bias [1,1,1,Cout].
Var conv2d(Graph& g, Var x, Var weight, Var bias, int stride);
Var relu(Graph& g, Var x);
Var add(Graph& g, Var a, Var b);
/// Channel concatenation.
Var concat(Graph& g, Var a, Var b);
/// Channels [begin, end).
Var slice_channels(Graph& g, Var x, int begin, int end);
/// Nearest-neighbour 2x upsampling.
Var upsample2x(Graph& g, Var x);
/// Elementwise clamp; gradient is zero where the input was clipped.
Var clamp(Graph& g, Var x, float lo, float hi);
/// z = mu + exp(0.5 * logvar) * eps, with eps a fixed constant tensor.
Var reparameterize(Graph& g, Var mu, Var logvar, const Tensor& eps);
Var scale(Graph& g, Var x, float factor);

// Scalar-valued losses ([1,1,1,1] results).

/// Mean over all elements of -log N(target_i | pred_i, sigma^2).
Var gaussian_nll_mean(Graph& g, Var pred, const Tensor& target, double sigma);
/// Sum over elements of KL(N(mu, exp(logvar)) || N(0, 1)) divided by `normalizer`.
Var kl_standard_normal(Graph& g, Var mu, Var logvar, double normalizer);
/// Mean absolute error against a constant target; subgradient 0 at equality.
Var l1_mean(Graph& g, Var pred, const Tensor& target);
/// Mean squared error against a constant target.
Var l2_mean(Graph& g, Var pred, const Tensor& target);

}  // namespace dud::nn
