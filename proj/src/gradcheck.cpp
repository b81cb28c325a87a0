#include "capl/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace capl {

std::vector<Tensor> finite_diff(const std::function<double(const std::vector<Tensor>&)>& f,
                                std::vector<Tensor> params, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("finite_diff: step must be positive");
  std::vector<Tensor> grads;
  grads.reserve(params.size());
  for (const Tensor& p : params) grads.push_back(Tensor::zeros(p.shape));
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t i = 0; i < params[pi].numel(); ++i) {
      const double saved = params[pi].data[i];
      params[pi].data[i] = saved + step;
      const double up = f(params);
      params[pi].data[i] = saved - step;
      const double down = f(params);
      params[pi].data[i] = saved;
      grads[pi].data[i] = (up - down) / (2.0 * step);
    }
  }
  return grads;
}

GradCompareResult compare_gradients(const std::vector<Tensor>& analytic,
                                    const std::vector<Tensor>& estimate, double rel_tol,
                                    double abs_floor) {
  if (analytic.size() != estimate.size()) {
    throw std::invalid_argument("compare_gradients: parameter counts differ");
  }
  GradCompareResult res;
  for (std::size_t pi = 0; pi < analytic.size(); ++pi) {
    const Tensor& a = analytic[pi];
    const Tensor& e = estimate[pi];
    if (!a.same_shape(e)) throw std::invalid_argument("compare_gradients: shape mismatch");
    for (std::size_t i = 0; i < a.numel(); ++i) {
      const double diff = std::abs(a.data[i] - e.data[i]);
      const double denom = std::max(std::abs(a.data[i]), std::abs(e.data[i]));
      const double rel = denom > 0.0 ? diff / denom : 0.0;
      ++res.coords_checked;
      if (diff <= abs_floor) continue;
      res.max_rel_error = std::max(res.max_rel_error, rel);
      if (rel > rel_tol) {
        res.failures.push_back({pi, i, a.data[i], e.data[i], rel});
      }
    }
  }
  return res;
}

}  // namespace capl
