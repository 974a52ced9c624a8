#pragma once

// In-memory end-to-end run: split, mastery, walks, embeddings, clusters, then
// one sampled training set per (method, budget) and its evaluation.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stratpred/cluster.hpp"
#include "stratpred/corpus.hpp"
#include "stratpred/embed.hpp"
#include "stratpred/mastery.hpp"
#include "stratpred/predict.hpp"

namespace stratpred {

struct PipelineConfig {
  double test_fraction = 0.2;
  std::uint64_t split_seed = 1;
  AttentionModelParams mastery;
  std::size_t walks = 50000;
  std::uint64_t walk_seed = 1;
  SkipGramParams embed;
  PointOptions points;
  RefinementConfig cluster;
  PredictorParams predict;
  std::uint64_t sample_seed = 1;

  /// Re-derives every stage seed from one global seed.
  void set_seed(std::uint64_t seed);
};

/// Everything upstream of sampling, fitted on the training split only.
struct Prepared {
  Split split;
  std::vector<InteractionRecord> train_records;
  std::vector<InteractionRecord> test_records;
  StrategyMap strategies;
  std::vector<std::string> kcs;
  MasteryTable mastery;
  EmbeddingTable embeddings;
  ClusterPoints points;
  RefinementResult clusters;
};

Prepared prepare(const std::vector<InteractionRecord>& records, const PipelineConfig& config);

struct BudgetRun {
  SampleMethod method = SampleMethod::AS;
  double fraction = 0.0;
  std::size_t budget = 0;
  bool capped = false;
  Evaluation evaluation;
  std::map<std::string, double> per_group;
  double train_seconds = 0.0;
};

/// Budget = round(fraction * training instances).
std::size_t budget_for(double fraction, std::size_t train_instances);

BudgetRun run_budget(const Prepared& prepared, const PipelineConfig& config, SampleMethod method, double fraction);

}  // namespace stratpred
