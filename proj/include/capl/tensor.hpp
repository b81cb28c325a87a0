#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace capl {

// Dense row-major f64 tensor. Rank 1 and 2 are all the model needs.
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s);

  static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<std::size_t> s, double v);
  static Tensor scalar(double v);
  static Tensor matrix(std::size_t r, std::size_t c, std::vector<double> values);
  static Tensor vector(std::vector<double> values);

  std::size_t numel() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }
  bool is_scalar() const { return numel() == 1; }

  std::size_t rows() const;
  std::size_t cols() const;

  double& at(std::size_t i, std::size_t j) { return data[i * cols_cached() + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * cols_cached() + j]; }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  double* row_ptr(std::size_t i) { return data.data() + i * cols_cached(); }
  const double* row_ptr(std::size_t i) const { return data.data() + i * cols_cached(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::size_t cols_cached() const { return shape.back(); }
};

// Plain (untaped) kernels; the tape ops reuse these for their forward pass.
Tensor matmul_plain(const Tensor& a, const Tensor& b);
Tensor transpose_plain(const Tensor& a);

void check_matmul_shapes(const Tensor& a, const Tensor& b);

}  // namespace capl
