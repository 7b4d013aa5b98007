// SPDX-License-Identifier: Apache-2.0
#pragma once

// Differentiable primitives over Var.
//
// Binary elementwise ops accept equal shapes or a size-1 right operand
// (scalar broadcast); nothing else broadcasts. Shape errors throw
// std::invalid_argument naming the op and both shapes.
//
// Gradient conventions at non-differentiable points: sign has zero gradient
// everywhere, clamp passes the gradient only strictly inside (lo, hi), relu
// only for strictly positive inputs.

#include <cstddef>
#include <span>
#include <vector>

#include "dwf/autograd.hpp"

namespace dwf::ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);
Var clamp(const Var& a, double lo, double hi);
Var sign(const Var& a);
Var relu(const Var& a);

/// [m,k]·[k,n] -> [m,n]
Var matmul(const Var& a, const Var& b);

/// input [N,C,H,W], kernel [F,C,kH,kW], zero padding. Output spatial size is
/// floor((H + 2·padding − kH)/stride) + 1; trailing rows/columns that the
/// stride skips receive zero gradient.
Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding);

/// Adds bias[C] along axis 1 of x [N,C,...].
Var bias_add(const Var& x, const Var& bias);

/// (x_c − mean_c)/std_c along axis 1 of x [N,C,...]; mean and std are constants.
Var normalize_channels(const Var& x, std::span<const double> mean, std::span<const double> std);

Var sum(const Var& a);
Var sum(const Var& a, std::size_t axis);
Var mean(const Var& a);
Var mean(const Var& a, std::size_t axis);

/// Index of the largest value along axis (lowest index wins ties); the
/// reduced axis is removed. Not differentiable.
Tensor argmax(const Tensor& a, std::size_t axis);
/// Row-wise argmax of a [N,K] matrix.
std::vector<std::size_t> argmax_rows(const Tensor& a);

Var reshape(const Var& a, Shape shape);

/// Average pooling with a square window and equal stride; window 0 pools the
/// whole spatial extent to [N,C,1,1].
Var avg_pool2d(const Var& x, std::size_t window);

/// Row-wise softmax of [N,K], max-subtracted.
Var softmax_rows(const Var& logits);

/// Mean over the batch of −log softmax(logits)[label]. labels in [0,K).
Var softmax_cross_entropy(const Var& logits, std::span<const int> labels);

/// out[n,:] = Σ_i weights[n,i]·experts[i][n,:] for experts of shape [N,K] and
/// weights [N,E] whose rows are convex (non-negative, summing to 1). Terms are summed in sorted order, so the result does not
/// depend on expert order, and it is kept inside the experts' elementwise hull.
Var weighted_sum(std::span<const Var> experts, const Var& weights);

}  // namespace dwf::ops
