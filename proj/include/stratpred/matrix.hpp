#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace stratpred {

class Rng;

/// Row-major dense matrix of doubles. A vector is a 1 x n matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> flat() { return data_; }
  std::span<const double> flat() const { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  void fill(double v);
  void resize(std::size_t rows, std::size_t cols, double fill = 0.0);

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Products below accumulate into `out` when `accumulate` is true, otherwise
// overwrite it. Shapes are asserted, not checked at runtime.

/// out (m x n) = a (m x k) * b (k x n)
void matmul(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
/// out (m x n) = a (m x k) * b^T, b is (n x k)
void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);
/// out (k x n) = a^T * b, a is (m x k), b is (m x n)
void matmul_at(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate = false);

/// Adds `bias` (1 x n) to every row.
void add_row_bias(Matrix& m, const Matrix& bias);
/// Accumulates the column sums of `m` into `out` (1 x n).
void add_column_sums(const Matrix& m, Matrix& out);

/// Row-wise softmax in place (max-shifted).
void softmax_rows(Matrix& m);

/// Uniform(-scale, scale) initialisation.
void init_uniform(Matrix& m, Rng& rng, double scale);

/// A trainable tensor with its gradient and adaptive-moment state.
struct Param {
  std::string name;
  Matrix value;
  Matrix grad;
  Matrix m1;
  Matrix m2;

  Param() = default;
  Param(std::string n, std::size_t rows, std::size_t cols)
      : name(std::move(n)), value(rows, cols), grad(rows, cols), m1(rows, cols), m2(rows, cols) {}
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 0.0;  ///< global gradient-norm clip; 0 disables
};

/// One adaptive-moment update over every parameter; `step` is 1-based.
void adam_step(std::span<Param*> params, const AdamConfig& cfg, long step);

/// Plain gradient descent update.
void sgd_step(std::span<Param*> params, double learning_rate);

void zero_grads(std::span<Param*> params);

}  // namespace stratpred
