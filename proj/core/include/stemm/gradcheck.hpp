#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "stemm/tensor.hpp"

namespace stemm {

struct GradCheckOptions {
  double step = 1e-5;
  /// Elements checked per parameter; 0 checks every element. Larger tensors
  /// are sampled at an even stride.
  std::size_t max_per_param = 0;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/**
 * Compares reverse-mode gradients of a scalar computation against central
 * differences, in double precision.
 *
 * The error for one element is |analytic - numeric| / max(|analytic|,
 * |numeric|, 1e-8). `loss` is re-evaluated for every perturbation and must be
 * deterministic. Throws NumericalError if any evaluation is non-finite.
 */
GradCheckReport check_gradients(const std::function<Tensor<double>()>& loss,
                                std::span<Tensor<double>> params,
                                const GradCheckOptions& options = {});

}  // namespace stemm
