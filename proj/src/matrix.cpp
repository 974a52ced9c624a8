#include "stratpred/matrix.hpp"

#include <algorithm>
#include <cmath>

#include "stratpred/kernels.hpp"
#include "stratpred/rng.hpp"

namespace stratpred {

void Matrix::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Matrix::resize(std::size_t rows, std::size_t cols, double fill) {
  rows_ = rows;
  cols_ = cols;
  data_.assign(rows * cols, fill);
}

void matmul(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  assert(a.cols() == b.rows());
  if (!accumulate) out.resize(a.rows(), b.cols());
  assert(out.rows() == a.rows() && out.cols() == b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      const double s = a(i, p);
      if (s != 0.0) kernels::axpy(s, b.row(p), dst);
    }
  }
}

void matmul_bt(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  assert(a.cols() == b.cols());
  if (!accumulate) out.resize(a.rows(), b.rows());
  assert(out.rows() == a.rows() && out.cols() == b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) += kernels::dot(ar, b.row(j));
  }
}

void matmul_at(const Matrix& a, const Matrix& b, Matrix& out, bool accumulate) {
  assert(a.rows() == b.rows());
  if (!accumulate) out.resize(a.cols(), b.cols());
  assert(out.rows() == a.cols() && out.cols() == b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto br = b.row(r);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double s = a(r, i);
      if (s != 0.0) kernels::axpy(s, br, out.row(i));
    }
  }
}

void add_row_bias(Matrix& m, const Matrix& bias) {
  assert(bias.size() == m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) kernels::axpy(1.0, bias.flat(), m.row(i));
}

void add_column_sums(const Matrix& m, Matrix& out) {
  assert(out.size() == m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) kernels::axpy(1.0, m.row(i), out.flat());
}

void softmax_rows(Matrix& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    const double mx = *std::max_element(r.begin(), r.end());
    double total = 0.0;
    for (double& v : r) {
      v = std::exp(v - mx);
      total += v;
    }
    kernels::scale(1.0 / total, r);
  }
}

void init_uniform(Matrix& m, Rng& rng, double scale) {
  for (double& v : m.flat()) v = rng.uniform(-scale, scale);
}

void zero_grads(std::span<Param*> params) {
  for (Param* p : params) p->grad.fill(0.0);
}

void adam_step(std::span<Param*> params, const AdamConfig& cfg, long step) {
  double clip = 1.0;
  if (cfg.clip_norm > 0.0) {
    double sq = 0.0;
    for (const Param* p : params) sq += kernels::dot(p->grad.flat(), p->grad.flat());
    const double norm = std::sqrt(sq);
    if (norm > cfg.clip_norm) clip = cfg.clip_norm / norm;
  }
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  for (Param* p : params) {
    auto w = p->value.flat();
    auto g = p->grad.flat();
    auto m = p->m1.flat();
    auto v = p->m2.flat();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i] * clip;
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      w[i] -= cfg.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.epsilon);
    }
  }
}

void sgd_step(std::span<Param*> params, double learning_rate) {
  for (Param* p : params) kernels::axpy(-learning_rate, p->grad.flat(), p->value.flat());
}

}  // namespace stratpred
