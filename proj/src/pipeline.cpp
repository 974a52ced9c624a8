#include "stratpred/pipeline.hpp"

#include <cmath>

#include "stratpred/error.hpp"
#include "stratpred/rng.hpp"

namespace stratpred {

void PipelineConfig::set_seed(std::uint64_t seed) {
  split_seed = derive_seed(seed, "split");
  mastery.seed = derive_seed(seed, "mastery");
  walk_seed = derive_seed(seed, "walks");
  embed.seed = derive_seed(seed, "embed");
  cluster.seed = derive_seed(seed, "cluster");
  predict.seed = derive_seed(seed, "train");
  sample_seed = derive_seed(seed, "sample");
}

Prepared prepare(const std::vector<InteractionRecord>& records, const PipelineConfig& config) {
  Prepared out;
  out.split = split_instances(instances_in(records), config.test_fraction, config.split_seed);
  out.train_records = records_of(records, out.split.train);
  out.test_records = records_of(records, out.split.test);
  out.strategies = extract_strategies(records);

  const RelationalGraph graph = build_graph(out.train_records);
  out.kcs = Vocabulary::from_records(records).kcs.ids();
  const auto sequences = build_opportunity_sequences(out.train_records, config.mastery);
  const AttentionModel model = train_cfa_model(sequences, graph.vocabulary.kcs.ids(), config.mastery);
  out.mastery = mastery_score(model, build_scoring_sequences(out.train_records, config.mastery));

  const auto dist = walk_distributions(out.mastery, graph);
  const auto walks = sample_walks(graph, dist, config.walks, config.walk_seed);
  out.embeddings = train_skipgram(walks, graph.vocabulary, config.embed);

  out.points = ClusterPoints::from_embeddings(out.embeddings, config.points);
  StrategyMap train_strategies;
  for (const auto& inst : out.split.train) train_strategies.emplace(inst, out.strategies.at(inst));
  out.clusters = refine(out.points, train_strategies, out.embeddings, config.cluster);
  return out;
}

std::size_t budget_for(double fraction, std::size_t train_instances) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("budget fraction must lie in (0, 1]");
  return static_cast<std::size_t>(std::llround(fraction * static_cast<double>(train_instances)));
}

BudgetRun run_budget(const Prepared& prepared, const PipelineConfig& config, SampleMethod method, double fraction) {
  BudgetRun run;
  run.method = method;
  run.fraction = fraction;
  run.budget = budget_for(fraction, prepared.split.train.size());
  SamplePlan plan{method, run.budget, config.sample_seed};
  const auto sample = sample_training(&prepared.clusters.state, &prepared.points, prepared.split.train, plan);
  run.capped = sample.capped;
  PredictorTrainingReport report;
  const auto model = train_lstm(sample.instances, prepared.strategies, prepared.embeddings, prepared.kcs,
                                config.predict, &report);
  run.train_seconds = report.seconds;
  run.evaluation = evaluate(model, prepared.split.test, prepared.strategies, prepared.embeddings);
  run.per_group = fairness_report(run.evaluation.rows, prepared.test_records);
  return run;
}

}  // namespace stratpred
