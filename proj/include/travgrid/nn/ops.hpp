#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "travgrid/nn/var.hpp"

namespace travgrid::nn {

inline constexpr double kLayerNormEps = 1e-5;

template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
// a + b for equal shapes, or a [m x n] + b [1 x n] broadcast over rows.
template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> transpose(const Var<T>& a);
// Column-wise concatenation of equal-row inputs.
template <typename T> Var<T> concat_cols(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_cols(const Var<T>& a, int begin, int count);
// Row-wise normalization with affine gamma/beta of shape [1 x n].
template <typename T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta,
                  T eps = static_cast<T>(kLayerNormEps));
template <typename T> Var<T> softmax_rows(const Var<T>& x);
template <typename T> Var<T> gelu(const Var<T>& x);
template <typename T> Var<T> l2_normalize_rows(const Var<T>& x);

// Mean over rows of -sum_j target_j * log(max(p_j, 1e-12)). `targets` has
// the shape of `probs`; rows with zero weight are skipped in the sum but still
// count in the mean denominator.
template <typename T>
Var<T> cross_entropy_rows(const Var<T>& probs, std::span<const T> targets);

// Per-row supervised contrastive loss against a fixed key queue, averaged over
// rows. queue is [n x d] row-major, queue_labels[n] its labels, anchors[i] the
// label of row i. Rows whose positive set is empty contribute 0.
template <typename T>
Var<T> contrastive_rows(const Var<T>& z, std::span<const T> queue,
                        std::span<const std::int32_t> queue_labels,
                        std::span<const std::int32_t> anchors, T temperature);

// Forward-only evaluation of the contrastive loss for one embedding.
template <typename T>
T contrastive_value(std::span<const T> z, std::span<const T> queue,
                    std::span<const std::int32_t> queue_labels, std::int32_t anchor,
                    T temperature);

}  // namespace travgrid::nn
