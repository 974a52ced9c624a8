#include "stratpred/symmetry.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_set>

#include "stratpred/error.hpp"
#include "stratpred/kernels.hpp"
#include "stratpred/parallel.hpp"
#include "stratpred/rng.hpp"

namespace stratpred {

std::vector<double> positional_encoding(std::size_t position, std::size_t d) {
  if (d == 0 || d % 2 != 0) {
    throw DataError("dimension error: positional encoding needs an even, positive d (got " +
                    std::to_string(d) + ")");
  }
  std::vector<double> out(d);
  const double pos = static_cast<double>(position);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double angle = pos / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d));
    out[2 * i] = std::sin(angle);
    out[2 * i + 1] = std::cos(angle);
  }
  return out;
}

Matrix positional_embed(const KcSequence& kcs, const EmbeddingTable& embeddings) {
  const std::size_t d = embeddings.dim();
  Matrix out(kcs.size(), d);
  for (std::size_t i = 0; i < kcs.size(); ++i) {
    const auto e = embeddings.get(NodeType::Kc, kcs[i]);
    const auto p = positional_encoding(i, d);
    auto row = out.row(i);
    for (std::size_t c = 0; c < d; ++c) row[c] = e[c] + p[c];
  }
  return out;
}

double step_similarity(std::span<const double> a, std::span<const double> b) {
  return std::clamp(kernels::cosine(a, b), 0.0, 1.0);
}

namespace {

Matrix similarities(const Matrix& a, const Matrix& b) {
  Matrix s(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) s(i, j) = step_similarity(a.row(i), b.row(j));
  }
  return s;
}

Matrix fill_scores(const Matrix& s) {
  const std::size_t n = s.rows();
  const std::size_t m = s.cols();
  Matrix h(n + 1, m + 1, 0.0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      h(i, j) = std::max({0.0, h(i - 1, j - 1) + s(i - 1, j - 1), h(i - 1, j), h(i, j - 1)});
    }
  }
  return h;
}

}  // namespace

Matrix alignment_scores(const Matrix& a, const Matrix& b) { return fill_scores(similarities(a, b)); }

AlignmentResult align(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || b.rows() == 0) throw DataError("align: both sequences must be non-empty");
  if (a.cols() != b.cols()) throw DataError("align: vector dimensions differ");
  const Matrix s = similarities(a, b);
  const Matrix h = fill_scores(s);
  AlignmentResult result;
  result.n = a.rows();
  result.m = b.rows();

  std::size_t bi = 0, bj = 0;
  double best = 0.0;
  for (std::size_t i = 1; i <= result.n; ++i) {
    for (std::size_t j = 1; j <= result.m; ++j) {
      if (h(i, j) > best) {
        best = h(i, j);
        bi = i;
        bj = j;
      }
    }
  }
  result.score = best;

  std::size_t i = bi, j = bj;
  while (i > 0 && j > 0 && h(i, j) > 0.0) {
    const double sij = s(i - 1, j - 1);
    if (sij > 0.0 && h(i, j) == h(i - 1, j - 1) + sij) {
      result.pairs.emplace_back(i - 1, j - 1);
      --i;
      --j;
    } else if (h(i, j) == h(i - 1, j)) {
      --i;
    } else {
      --j;
    }
  }
  std::reverse(result.pairs.begin(), result.pairs.end());
  return result;
}

double symmetry_score(const Matrix& a, const Matrix& b) {
  const AlignmentResult al = align(a, b);
  const Matrix s = similarities(a, b);
  double total = 0.0;
  for (const auto& [i, j] : al.pairs) total += s(i, j);
  return std::clamp(total / static_cast<double>(std::max(al.n, al.m)), 0.0, 1.0);
}

double symmetry_score(const KcSequence& a, const KcSequence& b, const EmbeddingTable& embeddings) {
  return symmetry_score(positional_embed(a, embeddings), positional_embed(b, embeddings));
}

namespace {

// Unordered pair number k (ordering (0,1), (0,2), ..., (1,2), ...) over n items.
std::pair<std::size_t, std::size_t> pair_at(std::size_t k, std::size_t n) {
  std::size_t lo = 0, hi = n - 1;
  auto offset = [n](std::size_t a) { return a * (2 * n - a - 1) / 2; };
  while (lo + 1 < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (offset(mid) <= k) lo = mid;
    else hi = mid;
  }
  const std::size_t a = offset(hi) <= k ? hi : lo;
  return {a, a + 1 + (k - offset(a))};
}

// Floyd's algorithm: `count` distinct values from [0, total), sorted.
std::vector<std::size_t> sample_distinct(std::size_t total, std::size_t count, Rng& rng) {
  std::unordered_set<std::size_t> chosen;
  chosen.reserve(count * 2);
  for (std::size_t j = total - count; j < total; ++j) {
    const std::size_t t = rng.index(j + 1);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::size_t> out(chosen.begin(), chosen.end());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

CoherenceReport coherence(const std::vector<std::vector<KcSequence>>& clusters,
                          const EmbeddingTable& embeddings, const CoherenceOptions& options) {
  CoherenceReport report;
  if (clusters.empty()) return report;

  // Identical KC sequences embed identically, so r is evaluated once per
  // distinct (sequence, sequence) pair.
  std::map<KcSequence, std::size_t> distinct;
  std::vector<std::vector<std::size_t>> ids(clusters.size());
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    for (const auto& seq : clusters[c]) ids[c].push_back(distinct.try_emplace(seq, distinct.size()).first->second);
  }
  std::vector<Matrix> embedded(distinct.size());
  for (const auto& [seq, id] : distinct) embedded[id] = positional_embed(seq, embeddings);

  Rng rng(options.seed);
  std::vector<std::vector<std::pair<std::size_t, std::size_t>>> cluster_pairs(clusters.size());
  std::set<std::pair<std::size_t, std::size_t>> needed;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    const std::size_t n = ids[c].size();
    if (n <= 1) continue;
    const std::size_t total = n * (n - 1) / 2;
    auto add = [&](std::size_t a, std::size_t b) {
      std::size_t u = ids[c][a], v = ids[c][b];
      if (u > v) std::swap(u, v);
      cluster_pairs[c].emplace_back(u, v);
      needed.emplace(u, v);
    };
    if (options.pair_cap == kExhaustivePairs || total <= options.pair_cap) {
      for (std::size_t a = 0; a < n; ++a) {
        for (std::size_t b = a + 1; b < n; ++b) add(a, b);
      }
    } else {
      for (std::size_t k : sample_distinct(total, options.pair_cap, rng)) {
        const auto [a, b] = pair_at(k, n);
        add(a, b);
      }
    }
  }

  const std::vector<std::pair<std::size_t, std::size_t>> work(needed.begin(), needed.end());
  std::vector<double> values(work.size());
  parallel_for(work.size(), [&](std::size_t w) {
    values[w] = symmetry_score(embedded[work[w].first], embedded[work[w].second]);
  });
  std::map<std::pair<std::size_t, std::size_t>, double> r;
  for (std::size_t w = 0; w < work.size(); ++w) r.emplace(work[w], values[w]);

  double total = 0.0;
  for (std::size_t c = 0; c < clusters.size(); ++c) {
    double value = 1.0;
    if (!cluster_pairs[c].empty()) {
      double sum = 0.0;
      for (const auto& p : cluster_pairs[c]) sum += r.at(p);
      value = sum / static_cast<double>(cluster_pairs[c].size());
    }
    report.per_cluster.push_back(value);
    report.cluster_sizes.push_back(clusters[c].size());
    total += value;
  }
  report.overall = total / static_cast<double>(clusters.size());
  return report;
}

}  // namespace stratpred
