#pragma once

#include <span>

#include "stemm/tensor.hpp"

namespace stemm {

/**
 * Label-smoothed cross-entropy of logits [N × V] against targets (N entries,
 * -1 for padding), averaged over non-padding rows. The smoothed target puts
 * 1 - eps on the gold token and spreads eps uniformly over the vocabulary.
 * Throws std::invalid_argument when no row carries a target.
 */
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        double label_smoothing);

/// Summed Jensen-Shannon divergence between two sets of predicted
/// distributions (given as logits), over rows whose target is not padding.
/// Gradients reach both inputs.
template <typename T>
Tensor<T> jsd_loss(const Tensor<T>& logits_p, const Tensor<T>& logits_q,
                   std::span<const int> targets);

}  // namespace stemm
