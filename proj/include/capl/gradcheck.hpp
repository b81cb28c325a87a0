#pragma once

#include <functional>
#include <string>
#include <vector>

#include "capl/tensor.hpp"

namespace capl {

// Central-difference gradient estimate, (f(p+h) - f(p-h)) / 2h per
// coordinate. Evaluates f through the plain forward path only, so it stays
// independent of the tape's backward pass.
std::vector<Tensor> finite_diff(const std::function<double(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> params, double step);

struct GradMismatch {
  std::size_t param_index{0};
  std::size_t flat_index{0};
  double analytic{0.0};
  double estimate{0.0};
  double rel_error{0.0};
};

struct GradCompareResult {
  double max_rel_error{0.0};
  std::size_t coords_checked{0};
  std::vector<GradMismatch> failures;
  bool ok() const { return failures.empty(); }
};

// Relative comparison with an absolute floor for near-zero coordinates, where
// the central-difference estimate is dominated by roundoff.
GradCompareResult compare_gradients(const std::vector<Tensor>& analytic,
                                    const std::vector<Tensor>& estimate, double rel_tol,
                                    double abs_floor = 1e-8);

}  // namespace capl
