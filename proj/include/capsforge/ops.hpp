#pragma once

#include <vector>

#include "capsforge/tensor.hpp"

namespace capsforge {

// ---- elementwise -----------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T>
Tensor<T> add_scalar(const Tensor<T>& a, T c);
template <class T>
Tensor<T> mul_scalar(const Tensor<T>& a, T c);
template <class T>
Tensor<T> relu(const Tensor<T>& x);
template <class T>
Tensor<T> sigmoid(const Tensor<T>& x);

// ---- shape -----------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape target);

// ---- reductions ------------------------------------------------------------

template <class T>
Tensor<T> sum_all(const Tensor<T>& x);  // -> shape [1]

// ---- neural-net building blocks -------------------------------------------

/// Valid cross-correlation, no padding. input [N,C,H,W], kernel [F,C,kh,kw],
/// bias [F]. Per output element the window is accumulated in (c, kh, kw)
/// order starting from zero, bias added last; this order is part of the
/// contract (matched bit-exactly by the naive reference loop).
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, std::size_t stride);

/// Per-window max; gradient routes to the first (row-major) argmax on ties.
template <class T>
Tensor<T> maxpool2d(const Tensor<T>& input, std::size_t window, std::size_t stride);

/// x [N,I] * weight [I,O] + bias [O], bias broadcast per row.
template <class T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Max-subtracted softmax along `axis`.
template <class T>
Tensor<T> softmax_axis(const Tensor<T>& x, std::size_t axis);

// ---- capsule primitives ----------------------------------------------------

/// Norm-wise squash over the last axis: v = (|s|^2 / (1+|s|^2)) * s/|s| with
/// |s| = sqrt(sum s^2 + eps), so the zero vector maps to itself.
template <class T>
Tensor<T> squash(const Tensor<T>& s, T eps = T(1e-9));

/// Euclidean norm over the last axis (same eps guard as squash).
template <class T>
Tensor<T> norm_last_axis(const Tensor<T>& x, T eps = T(1e-9));

/// Prediction vectors: u [N,I,Din] (row vectors), W [I,J,Din,Dout];
/// out[n,i,j] = u[n,i] * W[i,j]  -> [N,I,J,Dout].
template <class T>
Tensor<T> predict_vectors(const Tensor<T>& u, const Tensor<T>& W);

/// s[n,j,:] = sum_i c[n,i,j] * uhat[n,i,j,:]  (c [N,I,J], uhat [N,I,J,D]).
template <class T>
Tensor<T> coupling_mix(const Tensor<T>& c, const Tensor<T>& uhat);

/// a[n,i,j] = uhat[n,i,j,:] . v[n,j,:].
template <class T>
Tensor<T> agreement(const Tensor<T>& uhat, const Tensor<T>& v);

/// Slice a conv volume [N, types*dim, H, W] into capsule vectors
/// [N, types*H*W, dim]; capsule order is (type, row, col) major and each
/// vector is the `dim` consecutive channels of one type.
template <class T>
Tensor<T> group_capsules(const Tensor<T>& x, std::size_t types, std::size_t dim);

/// Concatenate the per-class capsule vectors [N,J,D] -> [N, J*D], zeroing
/// every class section except selected[n]. selected values must be in [0,J).
template <class T>
Tensor<T> mask_rows(const Tensor<T>& caps, const std::vector<int>& selected);

// ---- losses ----------------------------------------------------------------

/// Mean over the batch of -log softmax(logits)[label], max-subtracted.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels);

// ---- non-graph helpers -----------------------------------------------------

/// Row-wise argmax with first-index tie rule.
template <class T>
std::vector<int> argmax_rows(const Tensor<T>& x);

template <class T>
Tensor<T> one_hot(const std::vector<int>& labels, std::size_t classes, T on = T(1), T off = T(0));

/// C[M,N] += A[M,K] * B[K,N], row-major; each output element accumulates in
/// ascending k (the order the naive loops use). Exposed for reuse by tests.
template <class T>
void gemm_accum(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c);

}  // namespace capsforge
