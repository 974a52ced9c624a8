#pragma once

// Joint student/problem clustering with the hard-assignment HDP variant of
// DP-means, and the coarse-to-fine loop that lowers the global penalty while
// tracking strategy coherence.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "stratpred/corpus.hpp"
#include "stratpred/embedding_table.hpp"
#include "stratpred/matrix.hpp"
#include "stratpred/symmetry.hpp"

namespace stratpred {

inline constexpr int kStudentView = 0;
inline constexpr int kProblemView = 1;

/// Optional rescaling applied to embeddings before clustering: each vector is
/// projected onto the sphere of the given radius (zero vectors stay zero).
struct PointOptions {
  bool normalize = true;
  double radius = 3.0;
};

/// Points of both views; rows of x[view] align with ids[view].
struct ClusterPoints {
  std::array<std::vector<std::string>, 2> ids;
  std::array<Matrix, 2> x;

  std::size_t dim() const { return x[0].cols(); }
  std::size_t total() const { return x[0].rows() + x[1].rows(); }

  /// Every student and problem of the table, in identifier order.
  static ClusterPoints from_embeddings(const EmbeddingTable& table, const PointOptions& options = {});
};

struct ClusterState {
  std::array<std::vector<int>, 2> z;  ///< point -> local cluster, per view
  std::array<std::vector<int>, 2> v;  ///< local cluster -> global cluster, per view
  Matrix mu;                          ///< one global mean per row
  double lambda_local = 0.0;
  double lambda_global = 0.0;

  std::size_t k1() const { return v[0].size(); }
  std::size_t k2() const { return v[1].size(); }
  std::size_t k() const { return k1() + k2(); }
  std::size_t g() const { return mu.rows(); }

  int global_of(int view, std::size_t point) const { return v[view][z[view][point]]; }

  /// Throws DataError when an invariant does not hold (unassigned point, empty
  /// cluster, dangling association).
  void check(const ClusterPoints& points) const;
};

/// Sum of squared distances of every point to its global mean.
double distortion(const ClusterState& state, const ClusterPoints& points);

/// distortion + lambda_local * k + symmetry_penalty * g.
double objective(const ClusterState& state, const ClusterPoints& points, double symmetry_penalty);

/// distortion + lambda_local * k + lambda_global * g (the quantity the sweep decreases).
double penalized_distortion(const ClusterState& state, const ClusterPoints& points);

/// Starting state when no initial state is given. GlobalMean puts every point
/// in one cluster at the overall mean; Sequential streams the points once
/// through the point step starting from no clusters at all.
enum class HdpInit { Sequential, GlobalMean };

struct HdpOptions {
  double lambda_local = 7.0;
  double lambda_global = 9.0;
  int max_sweeps = 100;
  HdpInit init = HdpInit::Sequential;
};

struct HdpResult {
  ClusterState state;
  std::vector<double> objective_trace;  ///< penalized distortion after each sweep
  int sweeps = 0;
  bool converged = false;
};

/// Hard HDP sweeps until the assignments stop changing. Starts from one global
/// cluster at the overall mean unless `initial` is given. Throws DataError on
/// non-finite or mismatched input.
HdpResult hdp_fit(const ClusterPoints& points, const HdpOptions& options,
                  const std::optional<ClusterState>& initial = std::nullopt);

/// Instances whose student and problem both associate to global cluster `p`.
std::vector<Instance> instances_of(const ClusterState& state, int p, const ClusterPoints& points,
                                   const std::vector<Instance>& corpus);

/// Strategy sets T(l_p) for every global cluster.
std::vector<std::vector<KcSequence>> cluster_strategies(const ClusterState& state,
                                                        const ClusterPoints& points,
                                                        const StrategyMap& strategies);

struct RefinementConfig {
  double lambda_local = 7.0;
  double lambda_global_init = 9.0;
  double epsilon = 0.5;
  int max_iters = 10;
  double tolerance = 1e-3;
  std::size_t pair_cap = 2000;
  std::uint64_t seed = 1;
  int max_sweeps = 100;

  void validate() const;
};

struct RefinementStep {
  int iter = 0;
  double lambda_global = 0.0;
  std::size_t g = 0;
  std::size_t k1 = 0;
  std::size_t k2 = 0;
  double coherence = 0.0;
  double objective = 0.0;
};

struct RefinementResult {
  ClusterState state;  ///< highest-coherence state seen
  int best_iter = 0;
  CoherenceReport best_coherence;
  std::vector<RefinementStep> trace;
};

RefinementResult refine(const ClusterPoints& points, const StrategyMap& strategies,
                        const EmbeddingTable& embeddings, const RefinementConfig& config);

/// Adjusted Rand index between two labelings of the same items.
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

/// TSV `view\tentity_id\tlocal_cluster\tglobal_cluster`.
void write_clusters_tsv(std::ostream& out, const ClusterState& state, const ClusterPoints& points);
/// Rebuilds assignments from the TSV; means are recomputed from `points`.
ClusterState read_clusters_tsv(std::istream& in, const ClusterPoints& points);

/// JSON list of {iter, lambda_g, g, k1, k2, coherence, objective}.
std::string refinement_trace_json(const std::vector<RefinementStep>& trace);

}  // namespace stratpred
