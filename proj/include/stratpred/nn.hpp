#pragma once

// Layer building blocks with explicit forward caches and backward passes,
// shared by the CFA attention model and the strategy predictor.

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "stratpred/matrix.hpp"

namespace stratpred {

class Rng;

/// y = x W + b with W (in x out) and b (1 x out).
struct Linear {
  Param w;
  Param b;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out);
  void init(Rng& rng);
  void forward(const Matrix& x, Matrix& y) const;
  /// Accumulates parameter gradients; writes (or adds to) dx when non-null.
  void backward(const Matrix& x, const Matrix& dy, Matrix* dx, bool accumulate_dx = false);
  void collect(std::vector<Param*>& out) { out.push_back(&w); out.push_back(&b); }
};

struct LayerNorm {
  Param gamma;
  Param beta;
  double eps = 1e-5;

  struct Cache {
    Matrix xhat;
    std::vector<double> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim);
  void forward(const Matrix& x, Matrix& y, Cache& cache) const;
  void backward(const Matrix& dy, const Cache& cache, Matrix& dx);
  void collect(std::vector<Param*>& out) { out.push_back(&gamma); out.push_back(&beta); }
};

/// Multi-head scaled dot-product attention, softmax(Q K^T / sqrt(d_k)) V.
struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 1;

  struct Cache {
    Matrix xq, xkv, qm, km, vm, concat;
    std::vector<Matrix> weights;  ///< per head, rows = queries, cols = keys
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t dim, int heads);
  void init(Rng& rng);
  /// `causal` masks keys after the query position.
  void forward(const Matrix& xq, const Matrix& xkv, bool causal, Matrix& y, Cache& cache) const;
  /// Adds into dxq and dxkv (both must be sized like the inputs).
  void backward(const Matrix& dy, const Cache& cache, Matrix& dxq, Matrix& dxkv);
  void collect(std::vector<Param*>& out);
};

/// Inverted dropout mask; an empty mask means identity.
struct Dropout {
  std::vector<double> mask;

  void sample(std::size_t n, double rate, Rng& rng);
  void apply(Matrix& x) const;
};

/// Logistic function that stays finite for large |x|.
double sigmoid(double x);

/// JSON-friendly dump/load of a named parameter list (name, shape, values).
nlohmann::json params_to_json(const std::vector<Param*>& params);
/// Throws DataError on a missing tensor or shape mismatch.
void params_from_json(const nlohmann::json& tensors, const std::vector<Param*>& params);

}  // namespace stratpred
