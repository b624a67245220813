#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stemm/tensor.hpp"

namespace stemm {

// Dense linear algebra ------------------------------------------------------

/// [m×k]·[k×n] -> [m×n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// [m×k]·[n×k]ᵀ -> [m×n]; used for tied output projections.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// Elementwise ----------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);
/// Adds bias[d] to every row of x[n×d].
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);
template <typename T>
Tensor<T> relu(const Tensor<T>& x);
/// Exact (erf) GELU.
template <typename T>
Tensor<T> gelu(const Tensor<T>& x);
template <typename T>
Tensor<T> exp(const Tensor<T>& x);
template <typename T>
Tensor<T> log(const Tensor<T>& x);

// Reductions -----------------------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& x);
template <typename T>
Tensor<T> mean(const Tensor<T>& x);

// Normalization --------------------------------------------------------------

/// Max-subtracted softmax along `axis`.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
/// log(softmax(x)) along the last axis.
template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x);
/// Normalizes each row of x over the last axis, then applies gain and bias.
/// Rows with zero variance map to `bias`.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, T eps = T(1e-5));

// Row plumbing ---------------------------------------------------------------

/// Gathers table rows; throws IndexError for ids outside the table.
template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids);

/// Reference to row `row` of source tensor `source`; source < 0 is a zero row.
struct RowRef {
  int source = -1;
  std::size_t row = 0;
};

/// Builds a matrix whose rows are picked from several same-width sources.
template <typename T>
Tensor<T> gather_rows(std::span<const Tensor<T>> sources,
                      std::span<const RowRef> refs);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> concat_rows(std::span<const Tensor<T>> parts);

// Convolution ----------------------------------------------------------------

std::size_t conv_out_len(std::size_t len, std::size_t kernel,
                         std::size_t stride, std::size_t padding);

/// Batched 1-D convolution layout. Example b occupies rows
/// [b·in_len, (b+1)·in_len) of the input; rows at or past lengths[b] read as
/// zero.
struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_len = 0;
  std::size_t kernel = 5;
  std::size_t stride = 2;
  std::size_t padding = 2;
  std::vector<std::size_t> lengths;

  std::size_t out_len() const {
    return conv_out_len(in_len, kernel, stride, padding);
  }
  std::vector<std::size_t> out_lengths() const;
};

/// im2col: [batch·in_len × c] -> [batch·out_len × kernel·c]. Output rows past
/// an example's own output length are zero.
template <typename T>
Tensor<T> unfold1d(const Tensor<T>& x, const ConvGeometry& geom);

// Attention ------------------------------------------------------------------

struct AttentionGeometry {
  std::size_t batch = 1;
  std::size_t q_len = 0;
  std::size_t k_len = 0;
  std::size_t heads = 1;
  bool causal = false;
};

/**
 * Scaled dot-product multi-head attention over flat batches.
 *
 * q is [batch·q_len × d], k and v are [batch·k_len × d]; head h uses columns
 * [h·d/heads, (h+1)·d/heads). key_pad has batch·k_len entries, nonzero marking
 * padding keys; an empty span means no padding. With causal set, query i only
 * sees keys j <= i.
 */
template <typename T>
Tensor<T> attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                    const AttentionGeometry& geom,
                    std::span<const std::uint8_t> key_pad);

// Regularization -------------------------------------------------------------

/// Inverted dropout with a mask derived from `seed` only.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::uint64_t seed);

// Losses ---------------------------------------------------------------------

/**
 * Label-smoothed negative log-likelihood summed over rows with target >= 0.
 * Row loss is -sum_k q_k log p_k with q = (1-eps)·onehot(target) + eps/V.
 */
template <typename T>
Tensor<T> smoothed_nll(const Tensor<T>& log_probs, std::span<const int> targets,
                       T eps);

/// Jensen-Shannon divergence between row distributions given as log
/// probabilities, summed over rows with row_mask != 0 (empty mask = all rows).
template <typename T>
Tensor<T> jsd(const Tensor<T>& log_p, const Tensor<T>& log_q,
              std::span<const std::uint8_t> row_mask);

}  // namespace stemm
