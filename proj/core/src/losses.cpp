#include "stemm/losses.hpp"

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "stemm/errors.hpp"
#include "stemm/ops.hpp"

namespace stemm {

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                        double label_smoothing) {
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) {
    throw std::invalid_argument("label smoothing must be in [0, 1)");
  }
  std::size_t count = 0;
  for (int t : targets) count += t >= 0;
  if (count == 0) throw std::invalid_argument("cross_entropy: empty target");
  auto nll = smoothed_nll(log_softmax(logits), targets, static_cast<T>(label_smoothing));
  return scale(nll, T(1) / static_cast<T>(count));
}

template <typename T>
Tensor<T> jsd_loss(const Tensor<T>& logits_p, const Tensor<T>& logits_q,
                   std::span<const int> targets) {
  if (logits_p.shape() != logits_q.shape()) {
    throw DimensionError("jsd_loss: vocabulary mismatch " +
                         shape_string(logits_p.shape()) + " vs " +
                         shape_string(logits_q.shape()));
  }
  std::vector<std::uint8_t> mask(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) mask[i] = targets[i] >= 0;
  return jsd(log_softmax(logits_p), log_softmax(logits_q), mask);
}

template Tensor<float> cross_entropy(const Tensor<float>&, std::span<const int>, double);
template Tensor<double> cross_entropy(const Tensor<double>&, std::span<const int>, double);
template Tensor<float> jsd_loss(const Tensor<float>&, const Tensor<float>&, std::span<const int>);
template Tensor<double> jsd_loss(const Tensor<double>&, const Tensor<double>&, std::span<const int>);

}  // namespace stemm
