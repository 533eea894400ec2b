#pragma once

#include <cstddef>
#include <vector>

#include "meshseq/tensor.hpp"

namespace meshseq {

enum class Activation { ReLU, GELU, Identity };

Activation activation_from_string(const std::string& name);
std::string to_string(Activation a);

// Elementwise; shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// `b` broadcasts over the leading axes of `x`: b.shape() must equal the
// trailing suffix of x.shape().
Tensor add_bias(const Tensor& x, const Tensor& b);
Tensor mul_bias(const Tensor& x, const Tensor& b);

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor square(const Tensor& x);
// Natural log; every input must be positive.
Tensor log(const Tensor& x);
Tensor exp(const Tensor& x);
// Elementwise max(x, floor); gradient is zero where the floor is active.
Tensor clamp_min(const Tensor& x, double floor);

Tensor relu(const Tensor& x);
// tanh approximation
Tensor gelu(const Tensor& x);
Tensor activate(const Tensor& x, Activation a);

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched [b x m x k] * [b x k x n]; either operand may carry batch 1 (or be
// rank 2) and is then shared across the batch.
Tensor bmm(const Tensor& a, const Tensor& b);
// x[..., in] * w[in x out] + bias[out]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Reductions drop `axis`; a rank-1 input reduces to shape [1].
Tensor sum_axis(const Tensor& x, std::size_t axis);
Tensor mean_axis(const Tensor& x, std::size_t axis);
// Population variance along `axis`.
Tensor variance_axis(const Tensor& x, std::size_t axis);

// Max-subtracted softmax / log-softmax along `axis`.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);

// Normalizes over the last axis, then applies gain and bias (both [last]).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// sqrt(sum_k x[..., k]^2 + eps) over the last axis.
Tensor row_norm(const Tensor& x, double eps = 1e-12);

Tensor mse(const Tensor& a, const Tensor& b);

// Scaled dot-product attention softmax(Q K^T / sqrt(d)) V.
// query [b x Lq x d] (or [Lq x d]), key [b' x Lk x d], value [b' x Lk x dv]
// with b' == b or b' == 1. With heads > 1, d and dv are split into equal
// slices that attend independently and are concatenated.
Tensor attention(const Tensor& query, const Tensor& key, const Tensor& value,
                 std::size_t heads = 1);

// Convolution over (T, H, W) of x laid out [B x T x C x H x W] with weight
// [Cout x Cin x kT x kH x kW] (odd kernel extents, zero "same" padding) and
// optional bias [Cout]. Output is [B x T x Cout x H x W].
Tensor conv3d(const Tensor& x, const Tensor& weight, const Tensor& bias);

}  // namespace meshseq
