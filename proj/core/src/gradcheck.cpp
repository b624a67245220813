#include "stemm/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "stemm/errors.hpp"

namespace stemm {

namespace {

double evaluate(const std::function<Tensor<double>()>& loss) {
  NoGradGuard guard;
  const double v = loss().item();
  if (!std::isfinite(v)) {
    throw NumericalError("gradient check: loss evaluated to " + std::to_string(v));
  }
  return v;
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor<double>()>& loss,
                                std::span<Tensor<double>> params,
                                const GradCheckOptions& options) {
  for (auto& p : params) p.zero_grad();
  Tensor<double> value = loss();
  if (!std::isfinite(value.item())) {
    throw NumericalError("gradient check: loss evaluated to " +
                         std::to_string(value.item()));
  }
  value.backward();
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  value = Tensor<double>();

  GradCheckReport report;
  const double h = options.step;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto data = params[pi].mutable_data();
    const std::size_t n = data.size();
    std::size_t stride = 1;
    if (options.max_per_param > 0 && n > options.max_per_param) {
      stride = (n + options.max_per_param - 1) / options.max_per_param;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = data[i];
      data[i] = saved + h;
      const double up = evaluate(loss);
      data[i] = saved - h;
      const double down = evaluate(loss);
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double err = std::abs(a - numeric) / denom;
      ++report.checked;
      if (err > report.max_relative_error || report.checked == 1) {
        report.max_relative_error = err;
        report.worst_param = pi;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

}  // namespace stemm
