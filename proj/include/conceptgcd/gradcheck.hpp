#pragma once
// Central finite-difference gradient checking. The analytic gradients of
// every loss in this codebase are validated against this oracle in the test
// suite; keep it dumb and obviously correct.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "conceptgcd/errors.hpp"
#include "conceptgcd/matrix.hpp"

namespace conceptgcd {

struct LossEval {
  double loss = 0.0;
  std::vector<Matrix> grads;  // one per checked parameter, same order
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t entries_checked = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// `params` are the tensors the closure reads; `eval` must return the loss and
// one gradient per parameter (matching shapes). Each entry is perturbed by
// +/- eps and the centered difference is compared with the analytic value as
//   |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport finite_diff_check(const std::function<LossEval()>& eval,
                                         const std::vector<std::pair<std::string, Matrix*>>& params,
                                         double eps = 1e-5) {
  if (!(eps > 0.0)) throw ParameterError("finite_diff_check: eps must be positive");
  LossEval base = eval();
  if (!std::isfinite(base.loss)) throw NumericError("finite_diff_check: loss is not finite");
  if (base.grads.size() != params.size())
    throw DimensionError("finite_diff_check: expected " + std::to_string(params.size()) +
                         " gradients, got " + std::to_string(base.grads.size()));
  GradCheckReport report;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix* tensor = params[p].second;
    const Matrix& analytic = base.grads[p];
    if (!analytic.same_shape(*tensor))
      throw DimensionError("finite_diff_check: gradient for " + params[p].first + " has shape " +
                           analytic.shape_str() + ", parameter is " + tensor->shape_str());
    for (std::size_t i = 0; i < tensor->size(); ++i) {
      const double saved = tensor->data()[i];
      tensor->data()[i] = saved + eps;
      const double up = eval().loss;
      tensor->data()[i] = saved - eps;
      const double down = eval().loss;
      tensor->data()[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("finite_diff_check: perturbed loss is not finite at " +
                           params[p].first + "[" + std::to_string(i) + "]");
      const double numeric = (up - down) / (2.0 * eps);
      const double rel = std::abs(analytic.data()[i] - numeric) /
                         std::max(1.0, std::abs(numeric));
      ++report.entries_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = params[p].first;
        report.worst_index = i;
      }
    }
  }
  return report;
}

}  // namespace conceptgcd
