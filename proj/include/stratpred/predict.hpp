#pragma once

// Training-instance sampling (AS / GS / RS), the one-to-many LSTM strategy
// predictor, and accuracy / fairness evaluation.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "stratpred/cluster.hpp"
#include "stratpred/corpus.hpp"
#include "stratpred/embedding_table.hpp"
#include "stratpred/matrix.hpp"

namespace stratpred {

class Rng;

// ---------------------------------------------------------------------------
// Train / test split

struct Split {
  std::vector<Instance> train;
  std::vector<Instance> test;
};

/// Per student, about `test_fraction` of the instances go to test while every
/// student keeps at least one training instance; a test instance whose problem
/// has no training instance is moved back to train. Deterministic for a seed.
Split split_instances(const std::vector<Instance>& instances, double test_fraction, std::uint64_t seed);

/// TSV `student\tproblem\tpart` with part in {train, test}.
void write_split_tsv(std::ostream& out, const Split& split);
Split read_split_tsv(std::istream& in);

/// Records whose (student, problem) is in `keep`.
std::vector<InteractionRecord> records_of(const std::vector<InteractionRecord>& records,
                                          const std::vector<Instance>& keep);

// ---------------------------------------------------------------------------
// Sampling

enum class SampleMethod { AS, GS, RS };

std::string_view method_name(SampleMethod m);
/// Accepts "AS", "GS", "RS" (any case); throws ConfigError otherwise.
SampleMethod parse_method(std::string_view s);

struct SamplePlan {
  SampleMethod method = SampleMethod::AS;
  std::size_t budget = 0;
  std::uint64_t seed = 1;
};

struct SampleResult {
  std::vector<Instance> instances;
  std::size_t available = 0;  ///< instances the method could draw from
  bool capped = false;        ///< budget exceeded what was available
};

/// AS: round-robin over global clusters, uniform without replacement inside
/// each cluster's instance list, exhausted clusters skipped. GS: a student drawn
/// proportionally to its instance count, then one of its instances uniformly
/// (draws are with replacement). RS: uniform without replacement. AS needs
/// `state` and `points`.
SampleResult sample_training(const ClusterState* state, const ClusterPoints* points,
                             const std::vector<Instance>& corpus, const SamplePlan& plan);

// ---------------------------------------------------------------------------
// Predictor

struct PredictorParams {
  int latent_dim = 64;
  int token_dim = 16;
  int epochs = 60;
  int batch_size = 30;
  double learning_rate = 0.01;
  double dropout = 0.1;
  int max_output_len = 12;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Step input is [e_student; e_problem; embedding of the previous token];
/// each step emits a softmax over the KC vocabulary plus the stop symbol.
class StrategyPredictor {
 public:
  StrategyPredictor(const PredictorParams& params, std::vector<std::string> kcs, std::size_t entity_dim);
  ~StrategyPredictor();
  StrategyPredictor(StrategyPredictor&&) noexcept;
  StrategyPredictor& operator=(StrategyPredictor&&) noexcept;

  const PredictorParams& params() const;
  const std::vector<std::string>& kcs() const;
  std::size_t entity_dim() const;
  /// Index of the stop symbol in the output distribution (= number of KCs).
  std::size_t stop_index() const;

  void initialize();

  /// Teacher-forced cross-entropy summed over the KCs and the stop symbol.
  /// Adds the gradient of grad_scale * loss when grad_scale != 0.
  double loss(std::span<const double> input, const std::vector<std::string>& target, double grad_scale = 0.0,
              Rng* dropout_rng = nullptr);

  /// Greedy decoding until stop or max_output_len. `distributions`, when
  /// given, receives the output distribution of every step.
  std::vector<std::string> predict(std::span<const double> input,
                                   std::vector<std::vector<double>>* distributions = nullptr) const;

  std::vector<Param*> parameters();
  nlohmann::json to_json() const;
  static StrategyPredictor from_json(const nlohmann::json& j);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// [e_student; e_problem]. Throws LookupError for unknown entities.
std::vector<double> predictor_input(const EmbeddingTable& embeddings, const Instance& instance);

struct PredictorTrainingReport {
  std::vector<double> epoch_loss;  ///< mean per-instance loss
  double seconds = 0.0;
};

/// Throws DataError naming an instance without strategy or embedding, and
/// TrainingError on a non-finite loss.
StrategyPredictor train_lstm(const std::vector<Instance>& instances, const StrategyMap& strategies,
                             const EmbeddingTable& embeddings, const std::vector<std::string>& kcs,
                             const PredictorParams& params, PredictorTrainingReport* report = nullptr);

std::vector<std::string> predict_strategy(const StrategyPredictor& model, const std::string& student_id,
                                          const std::string& problem_id, const EmbeddingTable& embeddings);

// ---------------------------------------------------------------------------
// Evaluation

/// Matching positions up to the true length, divided by the true length.
double token_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& truth);

struct PredictionRow {
  Instance instance;
  std::vector<std::string> predicted;
  std::vector<std::string> truth;
  double token_accuracy = 0.0;
};

struct Evaluation {
  double token_accuracy = 0.0;
  double exact_match = 0.0;
  std::vector<PredictionRow> rows;
};

Evaluation evaluate(const StrategyPredictor& model, const std::vector<Instance>& test,
                    const StrategyMap& strategies, const EmbeddingTable& embeddings);

/// Metrics from already decoded rows.
Evaluation score_rows(std::vector<PredictionRow> rows);

/// Group label -> mean over the group's students of their mean token accuracy.
/// Groups come from `records` (the test-period records); empty groups are absent.
std::map<std::string, double> fairness_report(const std::vector<PredictionRow>& rows,
                                              const std::vector<InteractionRecord>& records,
                                              const std::vector<double>& boundaries = kDefaultGroupBoundaries);

/// max - min over the reported groups (0 for fewer than two groups).
double group_spread(const std::map<std::string, double>& per_group);

/// TSV `student\tproblem\tpredicted_kcs\ttrue_kcs`, KC lists comma-joined.
void write_predictions_tsv(std::ostream& out, const std::vector<PredictionRow>& rows);

}  // namespace stratpred
