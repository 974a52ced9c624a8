#pragma once

// Approximate strategy symmetry: steps are embedded as KC vector + sinusoidal
// position, aligned with a zero-gap Smith-Waterman pass, and scored by the
// similarity mass of the alignment.

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "stratpred/embedding_table.hpp"
#include "stratpred/matrix.hpp"

namespace stratpred {

using KcSequence = std::vector<std::string>;

/// Sinusoidal position vector; component 2i = sin(pos / 10000^(2i/d)),
/// 2i+1 = cos(same). Throws DataError for odd or zero d.
std::vector<double> positional_encoding(std::size_t position, std::size_t d);

/// One row per step: KC embedding plus the position vector of that step.
/// Throws LookupError naming the first KC without an embedding.
Matrix positional_embed(const KcSequence& kcs, const EmbeddingTable& embeddings);

/// Step similarity used by the alignment: max(0, cosine).
double step_similarity(std::span<const double> a, std::span<const double> b);

struct AlignmentResult {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;  ///< strictly increasing in both
  double score = 0.0;
  std::size_t n = 0;
  std::size_t m = 0;
};

/// Zero-gap local alignment of two vector sequences (rows). O(n m) time.
/// Traceback starts at the first global maximum of the scoring matrix and
/// prefers diagonal, then up, then left moves.
AlignmentResult align(const Matrix& a, const Matrix& b);

/// Scoring matrix H, (n+1) x (m+1); exposed for property tests.
Matrix alignment_scores(const Matrix& a, const Matrix& b);

/// r = (sum of aligned similarities) / max(n, m), in [0, 1].
double symmetry_score(const Matrix& a, const Matrix& b);
double symmetry_score(const KcSequence& a, const KcSequence& b, const EmbeddingTable& embeddings);

inline constexpr std::size_t kExhaustivePairs = std::numeric_limits<std::size_t>::max();

struct CoherenceOptions {
  std::size_t pair_cap = 2000;  ///< pairs per cluster; kExhaustivePairs for all pairs
  std::uint64_t seed = 1;
};

struct CoherenceReport {
  std::vector<double> per_cluster;
  std::vector<std::size_t> cluster_sizes;
  double overall = 1.0;
};

/// Mean over clusters of the average pairwise r inside each cluster. Clusters
/// holding at most one strategy score 1; an empty cluster list scores 1.
CoherenceReport coherence(const std::vector<std::vector<KcSequence>>& clusters,
                          const EmbeddingTable& embeddings, const CoherenceOptions& options = {});

}  // namespace stratpred
