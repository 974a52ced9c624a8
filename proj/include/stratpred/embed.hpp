#pragma once

// Mastery-weighted <student, KC, problem> walks and skip-gram embeddings.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "stratpred/corpus.hpp"
#include "stratpred/embedding_table.hpp"
#include "stratpred/mastery.hpp"

namespace stratpred {

class Rng;

inline constexpr double kWalkSmoothing = 1e-6;

/// Sampling law Q(S) Q(K|S) Q(P|K,S) over graph indices.
struct WalkDistribution {
  std::vector<std::size_t> students;  ///< support of the uniform Q(S)
  /// kc_given_student[s] = (kc, probability) over s's KCs
  std::map<std::size_t, std::vector<std::pair<std::size_t, double>>> kc_given_student;
  /// problem_given[(s, k)] = (problem, probability) over s's problems using k
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::pair<std::size_t, double>>> problem_given;
  std::size_t excluded_students = 0;  ///< students without any KC
};

/// Q(K|S) ~ (1/n_SK) sum_P alpha(S,P,K) + eps and Q(P|K,S) ~ alpha(S,P,K) + eps,
/// each normalised over the student's support in the graph. Missing alpha
/// entries count as 0; a missing n falls back to the graph multiplicity.
WalkDistribution walk_distributions(const MasteryTable& mastery, const RelationalGraph& graph,
                                    double smoothing = kWalkSmoothing);

struct Walk {
  std::size_t student = 0;
  std::size_t kc = 0;
  std::size_t problem = 0;
  auto operator<=>(const Walk&) const = default;
};

/// Exactly `count` walks, deterministic for a seed regardless of thread count.
std::vector<Walk> sample_walks(const RelationalGraph& graph, const WalkDistribution& dist, std::size_t count,
                               std::uint64_t seed);

/// TSV `student\tkc\tproblem` with identifiers.
void write_walks_tsv(std::ostream& out, const std::vector<Walk>& walks, const Vocabulary& vocabulary);

/// Which skip-gram vectors become the published embedding.
enum class EmbeddingSide { Input, Sum };

struct SkipGramParams {
  std::size_t dim = 64;
  /// Sum = input + output vector, which also places first-order neighbours
  /// (a student and the problems it works on) close together.
  EmbeddingSide side = EmbeddingSide::Sum;
  bool exact_softmax = true;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.025;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Skip-gram over 3-token sentences: every token predicts the other two.
/// Node index layout: students, then problems, then KCs (vocabulary order).
class SkipGram {
 public:
  SkipGram(const Vocabulary& vocabulary, const SkipGramParams& params);

  std::size_t node_count() const { return input_.rows(); }
  std::size_t node_of(NodeType type, std::size_t index) const;

  Matrix& input() { return input_; }
  Matrix& output() { return output_; }
  const Matrix& input() const { return input_; }

  /// Exact-softmax loss of one walk, -sum log P(context | center). Adds the
  /// gradient into d_input / d_output when they are non-null.
  double walk_loss(const Walk& walk, Matrix* d_input = nullptr, Matrix* d_output = nullptr) const;

  /// P(. | center) over all nodes.
  std::vector<double> conditional(std::size_t center) const;

  /// Learning-rate schedule length and negative-sampling noise law (unigram^0.75).
  void prepare(const std::vector<Walk>& walks);

  /// One pass over the walks with linearly decayed learning rate. Returns the
  /// mean loss per walk (negative-sampling loss in that mode).
  double train_epoch(const std::vector<Walk>& walks, int epoch, Rng& rng);

  EmbeddingTable table() const;

 private:
  std::array<std::size_t, 3> nodes(const Walk& w) const;
  double exact_center(std::size_t center, const std::array<std::size_t, 2>& context, double lr);
  double negative_pair(std::size_t center, std::size_t context, double lr, Rng& rng);

  Vocabulary vocabulary_;
  SkipGramParams params_;
  Matrix input_;
  Matrix output_;
  std::vector<double> noise_cdf_;
  long long processed_ = 0;
  long long total_ = 0;
};

struct SkipGramReport {
  std::vector<double> epoch_loss;
};

/// Throws TrainingError on a non-finite loss, DataError on empty walks.
EmbeddingTable train_skipgram(const std::vector<Walk>& walks, const Vocabulary& vocabulary,
                              const SkipGramParams& params, SkipGramReport* report = nullptr);

}  // namespace stratpred
