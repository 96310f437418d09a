#pragma once

#include <span>

#include "tosuda/tensor.hpp"

// Differentiable tensor operations. Every op computes its result eagerly
// and, while a TapeScope is active and an input requires a gradient,
// records a backward step on the current tape. A backward step only
// touches gradients of inputs that require them.
namespace tosuda {

// ---- elementwise / scalar ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Hadamard product.
Tensor mul(const Tensor& a, const Tensor& b);
/// a * x + b with scalar coefficients.
Tensor scale_shift(const Tensor& x, double a, double b);
inline Tensor scale(const Tensor& x, double a) { return scale_shift(x, a, 0.0); }

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
/// NumericDomainError for inputs <= 0.
Tensor log(const Tensor& x);
Tensor cos(const Tensor& x);
/// Inputs are clamped to [-1 + 1e-7, 1 - 1e-7] before evaluation and
/// differentiation; inputs beyond |1 + 1e-6| raise NumericDomainError.
Tensor arccos(const Tensor& x);

// ---- reductions ----

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// ---- linear algebra ----

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);

// ---- shape ----

Tensor reshape(const Tensor& x, Shape shape);
/// [B x d1 x ... x dk] -> [B x (d1*...*dk)].
Tensor flatten_batch(const Tensor& x);
/// Column range [c0, c1) of a [B x D] tensor.
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
/// Horizontal concatenation of [B x Di] tensors.
Tensor concat_cols(std::span<const Tensor> parts);
/// Repeat a [1 x ...] tensor along the batch axis.
Tensor expand_batch(const Tensor& x, std::size_t batch);

// ---- broadcasts ----

/// x[B x D] + b[D], rows.
Tensor add_rowvec(const Tensor& x, const Tensor& b);
/// x[B x C x H x W] + b[C], per channel.
Tensor add_channel_bias(const Tensor& x, const Tensor& b);
/// x[B x C x H x W] * s[B x C], per sample and channel.
Tensor mul_channel(const Tensor& x, const Tensor& s);
/// x[B x C x H x W] + t[B x C], per sample and channel.
Tensor add_channel(const Tensor& x, const Tensor& t);

// ---- spatial ----

/// Valid cross-correlation of x[B x C x H x W] with w[F x C x kh x kw],
/// extended by `pad` zeros on each border. H' = (H + 2 pad - kh)/stride + 1.
Tensor conv2d(const Tensor& x, const Tensor& w, int stride = 1, int pad = 0);

/// Window maxima over k x k blocks; H, W must be divisible by k. The
/// gradient routes to the first (row-major) maximal element of a window.
Tensor maxpool2d(const Tensor& x, int k);

/// Window means over k x k blocks; H, W must be divisible by k.
Tensor avgpool2d(const Tensor& x, int k);

/// Samples x[B x C x H x W] at coords[B x Ho x Wo x 2]; coords hold
/// (u, v) normalized to [-1, 1] with align-corners convention (-1 is
/// pixel 0, +1 is pixel W-1 / H-1). Out-of-range taps read zero.
/// Differentiable in both x and coords.
Tensor bilinear_sample(const Tensor& x, const Tensor& coords);

}  // namespace tosuda
