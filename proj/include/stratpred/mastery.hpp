#pragma once

// Encoder-decoder attention model over KC opportunity sequences. The decoder
// emits one correct-first-attempt probability per step; encoder-decoder
// attention of the last decoder layer is distilled into mastery scores.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "stratpred/corpus.hpp"
#include "stratpred/matrix.hpp"

namespace stratpred {

class Rng;

struct AttentionModelParams {
  int model_dim = 32;
  int num_layers = 1;
  int num_heads = 2;
  int key_dim = 16;
  int ffn_dim = 64;
  int max_seq_len = 150;
  double dropout = 0.1;
  double learning_rate = 1e-3;
  int epochs = 30;
  int batch_size = 16;
  std::uint64_t seed = 1;

  /// Throws ConfigError (e.g. key_dim * num_heads != model_dim).
  void validate() const;
};

struct OpportunityToken {
  std::string kc_id;
  std::string problem_id;
  int step_index = 0;
};

struct OpportunitySequence {
  std::string student_id;
  std::string unit_id;
  std::vector<OpportunityToken> tokens;
  std::vector<int> targets;  ///< CFA per token
};

/// Training sequences: per (student, unit), the first problem the student
/// worked in each section, concatenated chronologically and windowed at
/// max_seq_len.
std::vector<OpportunitySequence> build_opportunity_sequences(const std::vector<InteractionRecord>& records,
                                                             const AttentionModelParams& params);

/// Scoring sequences: every first-attempt step of every problem, per
/// (student, unit), windowed the same way.
std::vector<OpportunitySequence> build_scoring_sequences(const std::vector<InteractionRecord>& records,
                                                         const AttentionModelParams& params);

struct CfaPrediction {
  std::vector<double> probabilities;
  std::vector<int> predictions;  ///< probability >= 0.5
  /// attention[layer][head]: decoder steps x encoder steps, encoder-decoder attention.
  std::vector<std::vector<Matrix>> attention;
};

class AttentionModel {
 public:
  AttentionModel(const AttentionModelParams& params, std::vector<std::string> kcs);
  ~AttentionModel();
  AttentionModel(AttentionModel&&) noexcept;
  AttentionModel& operator=(AttentionModel&&) noexcept;

  const AttentionModelParams& params() const;
  const std::vector<std::string>& kcs() const;

  /// Random initialisation from params().seed.
  void initialize();

  /// Sum of per-token cross-entropy under teacher forcing. When `grad_scale`
  /// is non-zero the gradient of grad_scale * loss is added to the parameter
  /// gradients. `dropout_rng` enables dropout (training mode).
  double loss(const OpportunitySequence& seq, double grad_scale = 0.0, Rng* dropout_rng = nullptr);

  /// Autoregressive greedy decoding (each step sees its own earlier predictions).
  /// Throws DataError when the sequence exceeds max_seq_len.
  CfaPrediction predict(const OpportunitySequence& seq) const;

  std::vector<Param*> parameters();

  /// Self-describing checkpoint: params, KC vocabulary hash and named tensors.
  nlohmann::json to_json() const;
  static AttentionModel from_json(const nlohmann::json& j);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct CfaTrainingReport {
  double initial_loss = 0.0;              ///< mean per-token loss of the untrained model
  std::vector<double> epoch_loss;         ///< mean per-token loss while training
  double final_loss = 0.0;                ///< mean per-token loss after training, no dropout
};

/// Adam training on mean token cross-entropy. Throws TrainingError on a
/// non-finite loss.
AttentionModel train_cfa_model(const std::vector<OpportunitySequence>& sequences,
                               const std::vector<std::string>& kcs, const AttentionModelParams& params,
                               CfaTrainingReport* report = nullptr);

/// Mean per-token loss without dropout.
double mean_loss(AttentionModel& model, const std::vector<OpportunitySequence>& sequences);

/// Fraction of tokens whose greedy prediction equals the target.
double cfa_accuracy(const AttentionModel& model, const std::vector<OpportunitySequence>& sequences);

struct MasteryTable {
  /// (student, problem, kc) -> alpha
  std::map<std::tuple<std::string, std::string, std::string>, double> alpha;
  /// (student, kc) -> number of opportunities
  std::map<std::pair<std::string, std::string>, int> opportunities;

  /// TSV `student\tproblem\tkc\talpha\tn`.
  void write_tsv(std::ostream& out) const;
  static MasteryTable read_tsv(std::istream& in);
};

/// Attention mass on K's predicted-correct positions within P over the total
/// mass on K's positions within P, summed over decoder steps and averaged over
/// heads of the last decoder layer. Sequences may belong to several students.
MasteryTable mastery_score(const AttentionModel& model, const std::vector<OpportunitySequence>& sequences);

}  // namespace stratpred
