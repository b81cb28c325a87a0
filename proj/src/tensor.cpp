#include "capl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace capl {

namespace {
std::size_t product(const std::vector<std::size_t>& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}
}  // namespace

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  data.assign(product(shape), 0.0);
}

Tensor Tensor::full(std::vector<std::size_t> s, double v) {
  Tensor t(std::move(s));
  for (double& x : t.data) x = v;
  return t;
}

Tensor Tensor::scalar(double v) {
  Tensor t({1});
  t.data[0] = v;
  return t;
}

Tensor Tensor::matrix(std::size_t r, std::size_t c, std::vector<double> values) {
  if (values.size() != r * c) throw std::invalid_argument("tensor: matrix data size mismatch");
  Tensor t;
  t.shape = {r, c};
  t.data = std::move(values);
  return t;
}

Tensor Tensor::vector(std::vector<double> values) {
  Tensor t;
  t.shape = {values.size()};
  t.data = std::move(values);
  return t;
}

std::size_t Tensor::rows() const {
  if (ndim() != 2) throw std::logic_error("tensor: rows() on non-matrix " + shape_str());
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (ndim() != 2) throw std::logic_error("tensor: cols() on non-matrix " + shape_str());
  return shape[1];
}

bool Tensor::all_finite() const {
  for (double v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

void check_matmul_shapes(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw std::invalid_argument("matmul: expects matrices, got " + a.shape_str() + " and " +
                                b.shape_str());
  }
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dimensions disagree, " + a.shape_str() + " vs " +
                                b.shape_str());
  }
}

Tensor matmul_plain(const Tensor& a, const Tensor& b) {
  check_matmul_shapes(a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.row_ptr(i);
    double* orow = out.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b.row_ptr(p);
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose_plain(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose: expects a matrix");
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

}  // namespace capl
