#include "stratpred/stages.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "stratpred/cluster.hpp"
#include "stratpred/embed.hpp"
#include "stratpred/error.hpp"
#include "stratpred/mastery.hpp"
#include "stratpred/parallel.hpp"
#include "stratpred/predict.hpp"
#include "stratpred/text.hpp"

namespace stratpred {

namespace fs = std::filesystem;

std::string_view stage_name(Stage s) {
  switch (s) {
    case Stage::Ingest: return "ingest";
    case Stage::Synth: return "synth";
    case Stage::Mastery: return "mastery";
    case Stage::Embed: return "embed";
    case Stage::Cluster: return "cluster";
    case Stage::Sample: return "sample";
    case Stage::Train: return "train";
    case Stage::Evaluate: return "evaluate";
    case Stage::Report: return "report";
  }
  return "?";
}

Stage parse_stage(std::string_view s) {
  for (Stage st : {Stage::Ingest, Stage::Synth, Stage::Mastery, Stage::Embed, Stage::Cluster, Stage::Sample,
                   Stage::Train, Stage::Evaluate, Stage::Report}) {
    if (stage_name(st) == s) return st;
  }
  throw ConfigError("unknown stage '" + std::string(s) + "'");
}

nlohmann::json StageManifest::to_json() const {
  return {{"stage", stage}, {"inputs", inputs}, {"outputs", outputs}, {"seconds", seconds}, {"config", config}};
}

StageManifest StageManifest::from_json(const nlohmann::json& j) {
  try {
    StageManifest m;
    m.stage = j.at("stage");
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.seconds = j.at("seconds");
    m.config = j.at("config");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed stage manifest: ") + e.what());
  }
}

std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw DataError("sha256 computation failed");
  }
  std::string out;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    out += buf;
  }
  return out;
}

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::string sha256_file(const fs::path& path) { return sha256_hex(read_file(path)); }

void write_atomic(const fs::path& path, std::string_view contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp." + std::to_string(::getpid());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    out.flush();
    if (!out) {
      out.close();
      fs::remove(tmp);
      throw DataError("short write to '" + tmp.string() + "'");
    }
  }
  fs::rename(tmp, path);
}

RunLock::RunLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw ConfigError("run directory '" + dir.string() + "' is locked by another run (remove " + path_.string() +
                      " if it is stale)");
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

RunLock::~RunLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

std::string run_tag(SampleMethod method, double fraction) {
  return std::string(method_name(method)) + "_" + text::format_double(fraction);
}

namespace {

void note(Stage s, const std::string& msg) { std::cerr << "[" << stage_name(s) << "] " << msg << "\n"; }

struct Corpus {
  std::vector<InteractionRecord> records;
  Split split;
  StrategyMap strategies;
  std::vector<std::string> kcs;

  std::vector<InteractionRecord> train_records() const { return records_of(records, split.train); }
  std::vector<InteractionRecord> test_records() const { return records_of(records, split.test); }
};

// One stage execution: hashes what it reads and writes into its manifest.
class StageRun {
 public:
  StageRun(Stage stage, const RunConfig& config, fs::path dir) : stage_(stage), config_(config), dir_(std::move(dir)) {
    manifest_.stage = std::string(stage_name(stage));
    manifest_.config = config.snapshot();
    start_ = std::chrono::steady_clock::now();
  }

  const RunConfig& config() const { return config_; }
  const fs::path& dir() const { return dir_; }
  Stage stage() const { return stage_; }

  // Contents of an upstream artifact, verified against its producer's manifest.
  std::string read(const std::string& rel, std::initializer_list<Stage> producers) {
    const Stage first = *producers.begin();
    const fs::path path = dir_ / rel;
    if (!fs::exists(path)) {
      throw DependencyError(std::string(stage_name(first)),
                            "missing " + rel + "; run stage '" + std::string(stage_name(first)) + "' first");
    }
    const StageManifest* producer = nullptr;
    StageManifest loaded;
    for (Stage p : producers) {
      const fs::path mpath = dir_ / "manifests" / (std::string(stage_name(p)) + ".json");
      if (!fs::exists(mpath)) continue;
      try {
        loaded = StageManifest::from_json(nlohmann::json::parse(read_file(mpath)));
      } catch (const nlohmann::json::exception& e) {
        throw DataError("corrupt manifest " + mpath.string() + ": " + e.what());
      }
      if (loaded.outputs.count(rel)) {
        producer = &loaded;
        break;
      }
    }
    if (!producer) {
      throw DependencyError(std::string(stage_name(first)),
                            "no manifest records " + rel + "; run stage '" + std::string(stage_name(first)) + "' first");
    }
    std::string data = read_file(path);
    const std::string hash = sha256_hex(data);
    if (hash != producer->outputs.at(rel)) {
      throw DataError("corruption: " + rel + " does not match the hash recorded by stage '" + producer->stage + "'");
    }
    manifest_.inputs[rel] = hash;
    return data;
  }

  nlohmann::json read_json(const std::string& rel, std::initializer_list<Stage> producers) {
    const std::string data = read(rel, producers);
    try {
      return nlohmann::json::parse(data);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed " + rel + ": " + e.what());
    }
  }

  void write(const std::string& rel, const std::string& contents) {
    write_atomic(dir_ / rel, contents);
    manifest_.outputs[rel] = sha256_hex(contents);
  }

  void write_json(const std::string& rel, const nlohmann::json& j) { write(rel, j.dump(2) + "\n"); }

  StageManifest finish() {
    manifest_.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const nlohmann::json j = manifest_.to_json();
    write_atomic(dir_ / "manifests" / (manifest_.stage + ".json"), j.dump(2) + "\n");
    std::ofstream log(dir_ / "run_log.jsonl", std::ios::app);
    log << j.dump() << "\n";
    return manifest_;
  }

  Corpus corpus() {
    Corpus c;
    std::istringstream corpus_in(read("corpus.tsv", {Stage::Ingest, Stage::Synth}));
    auto parsed = parse_interactions(corpus_in);
    if (!parsed.row_errors.empty()) throw DataError("corpus.tsv has malformed rows");
    c.records = std::move(parsed.records);
    c.kcs = parsed.vocabulary.kcs.ids();
    std::istringstream split_in(read("split.tsv", {Stage::Ingest, Stage::Synth}));
    c.split = read_split_tsv(split_in);
    c.strategies = extract_strategies(c.records);
    return c;
  }

  EmbeddingTable embeddings() {
    std::istringstream in(read("embeddings.tsv", {Stage::Embed}));
    return EmbeddingTable::read_tsv(in);
  }

 private:
  Stage stage_;
  const RunConfig& config_;
  fs::path dir_;
  StageManifest manifest_;
  std::chrono::steady_clock::time_point start_;
};

template <class F>
std::string to_text(F&& write) {
  std::ostringstream out;
  write(out);
  return out.str();
}

void write_corpus_outputs(StageRun& run, const std::vector<InteractionRecord>& records) {
  if (records.empty()) throw DataError("corpus has no records");
  const Split split = split_instances(instances_in(records), run.config().pipeline.test_fraction,
                                      run.config().pipeline.split_seed);
  if (split.test.empty()) throw DataError("corpus too small for a test split");
  run.write("corpus.tsv", to_text([&](std::ostream& o) { write_corpus_tsv(o, records); }));
  run.write("split.tsv", to_text([&](std::ostream& o) { write_split_tsv(o, split); }));
  note(run.stage(), std::to_string(records.size()) + " records, " + std::to_string(split.train.size()) +
                        " train / " + std::to_string(split.test.size()) + " test instances");
  // Only one corpus stage may own corpus.tsv at a time.
  const Stage other = run.stage() == Stage::Ingest ? Stage::Synth : Stage::Ingest;
  std::error_code ec;
  fs::remove(run.dir() / "manifests" / (std::string(stage_name(other)) + ".json"), ec);
  fs::remove(run.dir() / "ground_truth.json", ec);
}

void stage_ingest(StageRun& run) {
  const RunConfig& c = run.config();
  if (c.corpus_path.empty()) throw ConfigError("ingest needs corpus.path in the config");
  const Schema schema = c.schema_path.empty() ? Schema{} : Schema::from_config_file(c.schema_path);
  std::ifstream in(c.corpus_path);
  if (!in) throw DataError("cannot open corpus '" + c.corpus_path + "'");
  auto parsed = parse_interactions(in, schema);
  for (const auto& e : parsed.row_errors) {
    note(Stage::Ingest, "warning: line " + std::to_string(e.line) + ": " + e.message);
  }
  write_corpus_outputs(run, parsed.records);
}

void stage_synth(StageRun& run) {
  const auto corpus = generate_synthetic(run.config().synth);
  write_corpus_outputs(run, corpus.records);
  run.write("ground_truth.json", to_text([&](std::ostream& o) { write_ground_truth(o, corpus.truth); }));
}

void stage_mastery(StageRun& run) {
  const Corpus c = run.corpus();
  const auto& params = run.config().pipeline.mastery;
  const auto train = c.train_records();
  const RelationalGraph graph = build_graph(train);
  CfaTrainingReport report;
  const AttentionModel model =
      train_cfa_model(build_opportunity_sequences(train, params), graph.vocabulary.kcs.ids(), params, &report);
  const auto scoring = build_scoring_sequences(train, params);
  const MasteryTable table = mastery_score(model, scoring);
  note(Stage::Mastery, "loss " + text::format_double(report.initial_loss) + " -> " +
                           text::format_double(report.final_loss) + ", CFA accuracy " +
                           text::format_double(cfa_accuracy(model, scoring)));
  run.write_json("mastery_model.json", model.to_json());
  run.write("mastery.tsv", to_text([&](std::ostream& o) { table.write_tsv(o); }));
}

void stage_embed(StageRun& run) {
  const Corpus c = run.corpus();
  std::istringstream mastery_in(run.read("mastery.tsv", {Stage::Mastery}));
  const MasteryTable mastery = MasteryTable::read_tsv(mastery_in);
  const auto& p = run.config().pipeline;
  const RelationalGraph graph = build_graph(c.train_records());
  const auto dist = walk_distributions(mastery, graph);
  if (dist.excluded_students > 0) {
    note(Stage::Embed, "warning: " + std::to_string(dist.excluded_students) + " students have no KC and get no walks");
  }
  const auto walks = sample_walks(graph, dist, p.walks, p.walk_seed);
  SkipGramReport report;
  const EmbeddingTable table = train_skipgram(walks, graph.vocabulary, p.embed, &report);
  note(Stage::Embed, std::to_string(walks.size()) + " walks, loss " + text::format_double(report.epoch_loss.front()) +
                         " -> " + text::format_double(report.epoch_loss.back()));
  run.write("walks.tsv", to_text([&](std::ostream& o) { write_walks_tsv(o, walks, graph.vocabulary); }));
  run.write("embeddings.tsv", to_text([&](std::ostream& o) { table.write_tsv(o); }));
}

StrategyMap train_strategies(const Corpus& c) {
  StrategyMap out;
  for (const auto& inst : c.split.train) out.emplace(inst, c.strategies.at(inst));
  return out;
}

void stage_cluster(StageRun& run) {
  const Corpus c = run.corpus();
  const EmbeddingTable emb = run.embeddings();
  const auto& p = run.config().pipeline;
  const ClusterPoints points = ClusterPoints::from_embeddings(emb, p.points);
  const RefinementResult res = refine(points, train_strategies(c), emb, p.cluster);
  note(Stage::Cluster, std::to_string(res.trace.size()) + " refinement levels, best level " +
                           std::to_string(res.best_iter) + " with " + std::to_string(res.state.g()) +
                           " global clusters");
  run.write("clusters.tsv", to_text([&](std::ostream& o) { write_clusters_tsv(o, res.state, points); }));
  run.write("refinement.json", refinement_trace_json(res.trace) + "\n");
}

void stage_sample(StageRun& run) {
  const RunConfig& cfg = run.config();
  const Corpus c = run.corpus();
  std::optional<ClusterState> state;
  std::optional<ClusterPoints> points;
  if (cfg.method == SampleMethod::AS) {
    const EmbeddingTable emb = run.embeddings();
    points = ClusterPoints::from_embeddings(emb, cfg.pipeline.points);
    std::istringstream in(run.read("clusters.tsv", {Stage::Cluster}));
    state = read_clusters_tsv(in, *points);
  }
  nlohmann::json index = nlohmann::json::array();
  for (double fraction : cfg.fractions) {
    const std::string tag = run_tag(cfg.method, fraction);
    SamplePlan plan{cfg.method, budget_for(fraction, c.split.train.size()), cfg.pipeline.sample_seed};
    const auto res = sample_training(state ? &*state : nullptr, points ? &*points : nullptr, c.split.train, plan);
    if (res.capped) {
      note(Stage::Sample, "warning: " + tag + " budget " + std::to_string(plan.budget) + " capped at " +
                              std::to_string(res.available) + " available instances");
    }
    run.write("samples/" + tag + ".tsv", to_text([&](std::ostream& o) {
                o << "student\tproblem\n";
                for (const auto& i : res.instances) o << i.student_id << '\t' << i.problem_id << '\n';
              }));
    index.push_back({{"tag", tag},
                     {"method", std::string(method_name(cfg.method))},
                     {"fraction", fraction},
                     {"budget", plan.budget},
                     {"drawn", res.instances.size()},
                     {"capped", res.capped}});
  }
  run.write_json("samples/index.json", index);
}

std::vector<Instance> read_instances(const std::string& data, const std::string& what) {
  std::istringstream in(data);
  std::string line;
  std::getline(in, line);
  std::vector<Instance> out;
  while (std::getline(in, line)) {
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, "\t");
    if (f.size() != 2) throw DataError(what + ": expected student and problem columns");
    out.push_back({f[0], f[1]});
  }
  return out;
}

void stage_train(StageRun& run) {
  const Corpus c = run.corpus();
  const EmbeddingTable emb = run.embeddings();
  const nlohmann::json index = run.read_json("samples/index.json", {Stage::Sample});
  for (const auto& entry : index) {
    const std::string tag = entry.at("tag");
    const auto instances = read_instances(run.read("samples/" + tag + ".tsv", {Stage::Sample}), tag);
    PredictorTrainingReport report;
    const auto model = train_lstm(instances, c.strategies, emb, c.kcs, run.config().pipeline.predict, &report);
    note(Stage::Train, tag + ": " + std::to_string(instances.size()) + " instances, loss " +
                           text::format_double(report.epoch_loss.empty() ? 0.0 : report.epoch_loss.front()) + " -> " +
                           text::format_double(report.epoch_loss.empty() ? 0.0 : report.epoch_loss.back()));
    run.write_json("models/" + tag + ".json", model.to_json());
    run.write_json("train/" + tag + ".json",
                   {{"tag", tag}, {"train_seconds", report.seconds}, {"epoch_loss", report.epoch_loss}});
  }
}

void stage_evaluate(StageRun& run) {
  const Corpus c = run.corpus();
  const EmbeddingTable emb = run.embeddings();
  const nlohmann::json index = run.read_json("samples/index.json", {Stage::Sample});
  const auto test_records = c.test_records();
  for (const auto& entry : index) {
    const std::string tag = entry.at("tag");
    const auto model = StrategyPredictor::from_json(run.read_json("models/" + tag + ".json", {Stage::Train}));
    const Evaluation ev = evaluate(model, c.split.test, c.strategies, emb);
    const auto per_group = fairness_report(ev.rows, test_records);
    note(Stage::Evaluate, tag + ": token accuracy " + text::format_double(ev.token_accuracy) + ", exact match " +
                              text::format_double(ev.exact_match));
    run.write("predictions/" + tag + ".tsv", to_text([&](std::ostream& o) { write_predictions_tsv(o, ev.rows); }));
    run.write_json("metrics/" + tag + ".json", {{"tag", tag},
                                                {"method", entry.at("method")},
                                                {"fraction", entry.at("fraction")},
                                                {"budget", entry.at("budget")},
                                                {"test_instances", ev.rows.size()},
                                                {"token_accuracy", ev.token_accuracy},
                                                {"exact_match", ev.exact_match},
                                                {"per_group", per_group}});
  }
}

std::string pad(const std::string& s, std::size_t w) { return s.size() >= w ? s : s + std::string(w - s.size(), ' '); }

void stage_report(StageRun& run) {
  const nlohmann::json index = run.read_json("samples/index.json", {Stage::Sample});
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& entry : index) {
    const std::string tag = entry.at("tag");
    const auto metrics = run.read_json("metrics/" + tag + ".json", {Stage::Evaluate});
    const auto train = run.read_json("train/" + tag + ".json", {Stage::Train});
    rows.push_back({{"tag", tag},
                    {"method", metrics.at("method")},
                    {"budget", metrics.at("budget")},
                    {"fraction", metrics.at("fraction")},
                    {"token_accuracy", metrics.at("token_accuracy")},
                    {"exact_match", metrics.at("exact_match")},
                    {"train_seconds", train.at("train_seconds")},
                    {"per_group", metrics.at("per_group")}});
  }
  std::stable_sort(rows.begin(), rows.end(), [](const nlohmann::json& a, const nlohmann::json& b) {
    return a.at("budget").get<std::size_t>() < b.at("budget").get<std::size_t>();
  });
  const nlohmann::json trace = run.read_json("refinement.json", {Stage::Cluster});
  run.write_json("report.json", {{"runs", rows}, {"refinement_trace", trace}});

  std::ostringstream t;
  t << pad("method", 8) << pad("budget", 8) << pad("fraction", 10) << pad("token_acc", 11) << pad("exact", 9)
    << pad("train_s", 9) << "per_group\n";
  for (const auto& r : rows) {
    std::string groups;
    for (const auto& [label, v] : r.at("per_group").items()) {
      if (!groups.empty()) groups += " ";
      char buf[64];
      std::snprintf(buf, sizeof buf, "%s=%.4f", label.c_str(), v.get<double>());
      groups += buf;
    }
    char line[256];
    std::snprintf(line, sizeof line, "%-8s%-8zu%-10s%-11.4f%-9.4f%-9.2f", r.at("method").get<std::string>().c_str(),
                  r.at("budget").get<std::size_t>(), text::format_double(r.at("fraction").get<double>()).c_str(),
                  r.at("token_accuracy").get<double>(), r.at("exact_match").get<double>(),
                  r.at("train_seconds").get<double>());
    t << line << groups << "\n";
  }
  t << "\nrefinement trace\n" << pad("iter", 6) << pad("lambda_g", 10) << pad("g", 5) << pad("k1", 5) << pad("k2", 5)
    << "coherence\n";
  for (const auto& s : trace) {
    char line[128];
    std::snprintf(line, sizeof line, "%-6d%-10.3f%-5d%-5d%-5d%.4f\n", s.at("iter").get<int>(),
                  s.at("lambda_g").get<double>(), s.at("g").get<int>(), s.at("k1").get<int>(), s.at("k2").get<int>(),
                  s.at("coherence").get<double>());
    t << line;
  }
  run.write("report.txt", t.str());
  std::cout << t.str();
}

}  // namespace

StageManifest run_stage(Stage stage, const RunConfig& config, const fs::path& dir) {
  config.validate();
  if (config.threads > 0) set_thread_count(config.threads);
  fs::create_directories(dir);
  StageRun run(stage, config, dir);
  switch (stage) {
    case Stage::Ingest: stage_ingest(run); break;
    case Stage::Synth: stage_synth(run); break;
    case Stage::Mastery: stage_mastery(run); break;
    case Stage::Embed: stage_embed(run); break;
    case Stage::Cluster: stage_cluster(run); break;
    case Stage::Sample: stage_sample(run); break;
    case Stage::Train: stage_train(run); break;
    case Stage::Evaluate: stage_evaluate(run); break;
    case Stage::Report: stage_report(run); break;
  }
  return run.finish();
}

std::vector<StageManifest> run_pipeline(const RunConfig& config, const fs::path& dir) {
  std::vector<StageManifest> out;
  out.push_back(run_stage(config.corpus_path.empty() ? Stage::Synth : Stage::Ingest, config, dir));
  for (Stage s : {Stage::Mastery, Stage::Embed, Stage::Cluster, Stage::Sample, Stage::Train, Stage::Evaluate,
                  Stage::Report}) {
    out.push_back(run_stage(s, config, dir));
  }
  return out;
}

}  // namespace stratpred
