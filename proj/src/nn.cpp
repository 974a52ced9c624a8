#include "stratpred/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "stratpred/error.hpp"
#include "stratpred/kernels.hpp"
#include "stratpred/rng.hpp"

namespace stratpred {

Linear::Linear(const std::string& name, std::size_t in, std::size_t out)
    : w(name + ".w", in, out), b(name + ".b", 1, out) {}

void Linear::init(Rng& rng) {
  init_uniform(w.value, rng, std::sqrt(6.0 / static_cast<double>(w.value.rows() + w.value.cols())));
  b.value.fill(0.0);
}

void Linear::forward(const Matrix& x, Matrix& y) const {
  matmul(x, w.value, y);
  add_row_bias(y, b.value);
}

void Linear::backward(const Matrix& x, const Matrix& dy, Matrix* dx, bool accumulate_dx) {
  matmul_at(x, dy, w.grad, true);
  add_column_sums(dy, b.grad);
  if (dx) matmul_bt(dy, w.value, *dx, accumulate_dx);
}

LayerNorm::LayerNorm(const std::string& name, std::size_t dim)
    : gamma(name + ".gamma", 1, dim), beta(name + ".beta", 1, dim) {
  gamma.value.fill(1.0);
}

void LayerNorm::forward(const Matrix& x, Matrix& y, Cache& cache) const {
  const std::size_t n = x.rows(), d = x.cols();
  y.resize(n, d);
  cache.xhat.resize(n, d);
  cache.inv_std.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = x.row(i);
    const double mean = kernels::sum(r) / static_cast<double>(d);
    double var = 0.0;
    for (double v : r) var += (v - mean) * (v - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    cache.inv_std[i] = inv;
    for (std::size_t c = 0; c < d; ++c) {
      const double h = (r[c] - mean) * inv;
      cache.xhat(i, c) = h;
      y(i, c) = gamma.value(0, c) * h + beta.value(0, c);
    }
  }
}

void LayerNorm::backward(const Matrix& dy, const Cache& cache, Matrix& dx) {
  const std::size_t n = dy.rows(), d = dy.cols();
  dx.resize(n, d);
  std::vector<double> g(d);
  for (std::size_t i = 0; i < n; ++i) {
    double mean_g = 0.0, mean_gx = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      gamma.grad(0, c) += dy(i, c) * cache.xhat(i, c);
      beta.grad(0, c) += dy(i, c);
      g[c] = dy(i, c) * gamma.value(0, c);
      mean_g += g[c];
      mean_gx += g[c] * cache.xhat(i, c);
    }
    mean_g /= static_cast<double>(d);
    mean_gx /= static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      dx(i, c) = cache.inv_std[i] * (g[c] - mean_g - cache.xhat(i, c) * mean_gx);
    }
  }
}

MultiHeadAttention::MultiHeadAttention(const std::string& name, std::size_t dim, int h)
    : q(name + ".q", dim, dim), k(name + ".k", dim, dim), v(name + ".v", dim, dim), o(name + ".o", dim, dim),
      heads(h) {
  if (h < 1 || dim % static_cast<std::size_t>(h) != 0) {
    throw ConfigError("model dimension must be divisible by the number of heads");
  }
}

void MultiHeadAttention::init(Rng& rng) {
  q.init(rng);
  k.init(rng);
  v.init(rng);
  o.init(rng);
}

void MultiHeadAttention::collect(std::vector<Param*>& out) {
  q.collect(out);
  k.collect(out);
  v.collect(out);
  o.collect(out);
}

void MultiHeadAttention::forward(const Matrix& xq, const Matrix& xkv, bool causal, Matrix& y,
                                 Cache& c) const {
  c.xq = xq;
  c.xkv = xkv;
  q.forward(xq, c.qm);
  k.forward(xkv, c.km);
  v.forward(xkv, c.vm);
  const std::size_t nq = xq.rows(), nk = xkv.rows(), dim = xq.cols();
  const std::size_t dk = dim / static_cast<std::size_t>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  c.concat.resize(nq, dim);
  c.weights.assign(heads, Matrix(nq, nk));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dk;
    Matrix& a = c.weights[h];
    for (std::size_t i = 0; i < nq; ++i) {
      const auto qi = c.qm.row(i).subspan(off, dk);
      const std::size_t visible = causal ? std::min(i + 1, nk) : nk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        a(i, j) = kernels::dot(qi, c.km.row(j).subspan(off, dk)) * scale;
        mx = std::max(mx, a(i, j));
      }
      double total = 0.0;
      for (std::size_t j = 0; j < visible; ++j) {
        a(i, j) = std::exp(a(i, j) - mx);
        total += a(i, j);
      }
      auto out = c.concat.row(i).subspan(off, dk);
      for (std::size_t j = 0; j < visible; ++j) {
        a(i, j) /= total;
        kernels::axpy(a(i, j), c.vm.row(j).subspan(off, dk), out);
      }
    }
  }
  o.forward(c.concat, y);
}

void MultiHeadAttention::backward(const Matrix& dy, const Cache& c, Matrix& dxq, Matrix& dxkv) {
  const std::size_t nq = c.xq.rows(), nk = c.xkv.rows(), dim = c.xq.cols();
  const std::size_t dk = dim / static_cast<std::size_t>(heads);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  Matrix dconcat;
  o.backward(c.concat, dy, &dconcat);
  Matrix dq(nq, dim), dkm(nk, dim), dv(nk, dim);
  std::vector<double> da(nk);
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dk;
    const Matrix& a = c.weights[h];
    for (std::size_t i = 0; i < nq; ++i) {
      const auto g = dconcat.row(i).subspan(off, dk);
      double weighted = 0.0;
      for (std::size_t j = 0; j < nk; ++j) {
        if (a(i, j) == 0.0) {
          da[j] = 0.0;
          continue;
        }
        da[j] = kernels::dot(g, c.vm.row(j).subspan(off, dk));
        kernels::axpy(a(i, j), g, dv.row(j).subspan(off, dk));
        weighted += a(i, j) * da[j];
      }
      for (std::size_t j = 0; j < nk; ++j) {
        if (a(i, j) == 0.0) continue;
        const double ds = a(i, j) * (da[j] - weighted) * scale;
        kernels::axpy(ds, c.km.row(j).subspan(off, dk), dq.row(i).subspan(off, dk));
        kernels::axpy(ds, c.qm.row(i).subspan(off, dk), dkm.row(j).subspan(off, dk));
      }
    }
  }
  q.backward(c.xq, dq, &dxq, true);
  k.backward(c.xkv, dkm, &dxkv, true);
  v.backward(c.xkv, dv, &dxkv, true);
}

void Dropout::sample(std::size_t n, double rate, Rng& rng) {
  mask.clear();
  if (rate <= 0.0) return;
  mask.resize(n);
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.bernoulli(rate) ? 0.0 : keep;
}

void Dropout::apply(Matrix& x) const {
  if (mask.empty()) return;
  auto f = x.flat();
  for (std::size_t i = 0; i < f.size(); ++i) f[i] *= mask[i];
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

nlohmann::json params_to_json(const std::vector<Param*>& params) {
  nlohmann::json out = nlohmann::json::object();
  for (const Param* p : params) {
    const auto f = p->value.flat();
    out[p->name] = {{"shape", {p->value.rows(), p->value.cols()}},
                    {"data", std::vector<double>(f.begin(), f.end())}};
  }
  return out;
}

void params_from_json(const nlohmann::json& tensors, const std::vector<Param*>& params) {
  for (Param* p : params) {
    if (!tensors.contains(p->name)) throw DataError("checkpoint lacks tensor '" + p->name + "'");
    const auto& t = tensors.at(p->name);
    const auto shape = t.at("shape").get<std::vector<std::size_t>>();
    const auto data = t.at("data").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] != p->value.rows() || shape[1] != p->value.cols() ||
        data.size() != p->value.size()) {
      throw DataError("checkpoint tensor '" + p->name + "' has the wrong shape");
    }
    std::copy(data.begin(), data.end(), p->value.flat().begin());
  }
}

}  // namespace stratpred
