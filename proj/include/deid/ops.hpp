#pragma once

#include <cstdint>
#include <vector>

#include "deid/tensor.hpp"

namespace deid::ops {

// Elementwise and scalar.
template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c);
template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& a, std::vector<int> shape);

// Reductions (64-bit accumulation).
template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> mean_all(const Tensor<Real>& a);
template <typename Real>
Tensor<Real> mse_loss(const Tensor<Real>& a, const Tensor<Real>& b);

// Linear algebra. a:[M,K] b:[K,N] -> [M,N].
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b);

/// Adds b[C] over axis 1 of x[N,C,...].
template <typename Real>
Tensor<Real> add_bias(const Tensor<Real>& x, const Tensor<Real>& b);

/// Adds v[N,C] over the spatial axes of x[N,C,...].
template <typename Real>
Tensor<Real> add_channel_vec(const Tensor<Real>& x, const Tensor<Real>& v);

/// Concatenates along axis 1.
template <typename Real>
Tensor<Real> concat_channels(const Tensor<Real>& a, const Tensor<Real>& b);

// Convolutions. Shapes follow the kernel layer; k odd for conv3d/conv2d.
template <typename Real>
Tensor<Real> conv3d(const Tensor<Real>& x, const Tensor<Real>& w, int stride, int pad);
template <typename Real>
Tensor<Real> conv_transpose3d(const Tensor<Real>& x, const Tensor<Real>& w, int stride,
                              int pad, int out_pad);
template <typename Real>
Tensor<Real> conv2d(const Tensor<Real>& x, const Tensor<Real>& w, int stride, int pad);

/// Group normalization over x[N,C,spatial...] with per-channel affine.
template <typename Real>
Tensor<Real> group_norm(const Tensor<Real>& x, const Tensor<Real>& gamma,
                        const Tensor<Real>& beta, int groups, Real eps = Real(1e-5));

/// Gathers rows of table[V,E] at integer codes and lays them out as
/// [N,E,D,H,W]. codes has N*D*H*W entries.
template <typename Real>
Tensor<Real> embed_codes(const Tensor<Real>& table, const std::vector<std::uint16_t>& codes,
                         int n, int d, int h, int w);

/// Mean cross-entropy over axis 1 of logits[N,V,spatial...] against integer
/// targets (one per site).
template <typename Real>
Tensor<Real> softmax_cross_entropy(const Tensor<Real>& logits,
                                   const std::vector<std::uint16_t>& targets);

/// Rows of x[M,K] scaled to unit Euclidean norm.
template <typename Real>
Tensor<Real> l2_normalize_rows(const Tensor<Real>& x, Real eps = Real(1e-12));

/// Mean over rows of max(0, ||a-p|| - ||a-n|| + margin).
template <typename Real>
Tensor<Real> triplet_margin_loss(const Tensor<Real>& a, const Tensor<Real>& p,
                                 const Tensor<Real>& n, Real margin);

// Graph-free helpers.
template <typename Real>
void softmax_inplace(std::vector<Real>& logits);

}  // namespace deid::ops
