#pragma once

#include <random>
#include <vector>

#include "aanc/tensor.hpp"

namespace aanc {

enum class PoolKind { max, avg };

// ---------------------------------------------------------------------------
// Elementwise / broadcast arithmetic. Binary ops broadcast NumPy-style
// (shapes aligned right, each dim equal or 1).
// ---------------------------------------------------------------------------
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);   // exact erf form
Tensor sigmoid(const Tensor& x);

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

/// Batched matrix product [...,M,K] x [...,K,N] -> [...,M,N]. Leading dims
/// must match exactly, or `b` may be rank-2 (shared across the batch).
Tensor matmul(const Tensor& a, const Tensor& b);

// ---------------------------------------------------------------------------
// Convolution (cross-correlation convention), NCHW
// ---------------------------------------------------------------------------
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int stride = 1, int padding = 0);
/// w has shape [C,1,k,k]; output channel c depends only on input channel c.
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride = 1, int padding = 0);

// ---------------------------------------------------------------------------
// Normalization / attention pieces
// ---------------------------------------------------------------------------
Tensor softmax(const Tensor& x, int axis);

/// Normalizes to zero mean / unit variance over the given axes (biased
/// variance, eps inside the sqrt). Affine transforms are composed on top
/// with broadcast ops.
Tensor normalize_over(const Tensor& x, std::vector<int> axes, double eps);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------
Tensor pool2d(const Tensor& x, PoolKind kind, int k, int stride);
Tensor global_pool(const Tensor& x, PoolKind kind);  // [B,C,H,W] -> [B,C,1,1]

/// align-corners=false bilinear upsampling by exactly 2x.
Tensor upsample_bilinear2x(const Tensor& x);

// ---------------------------------------------------------------------------
// Regularization
// ---------------------------------------------------------------------------

/// Inverted dropout: survivors scaled by 1/(1-p) at train time; identity
/// when training=false or p=0; p=1 is defined as the zero map.
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor reshape(const Tensor& x, Shape shape);
Tensor transpose(const Tensor& x, std::vector<int> perm);

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------
Tensor reduce_sum(const Tensor& x, int axis, bool keepdim);
Tensor reduce_mean(const Tensor& x, int axis, bool keepdim);
Tensor reduce_max(const Tensor& x, int axis, bool keepdim);
Tensor sum_all(const Tensor& x);   // scalar
Tensor mean_all(const Tensor& x);  // scalar

// Deterministic uniform in [0,1) from the top 53 bits; used everywhere a
// random draw feeds numerics so results don't depend on libstdc++ internals.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace aanc
