#include "stratpred/config.hpp"

#include <fstream>
#include <functional>
#include <map>

#include "stratpred/error.hpp"
#include "stratpred/parallel.hpp"
#include "stratpred/rng.hpp"
#include "stratpred/text.hpp"

namespace stratpred {

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;
using Getter = std::function<nlohmann::json(const RunConfig&)>;

struct Key {
  Setter set;
  Getter get;
};

template <class T>
Key int_key(T RunConfig::*field, std::string name) {
  return {[field, name](RunConfig& c, const std::string& v) { c.*field = static_cast<T>(text::parse_int(v, name)); },
          [field](const RunConfig& c) { return nlohmann::json(c.*field); }};
}

// Integer field inside a nested block, addressed by a projection.
template <class F>
Key nested_int(F project, std::string name) {
  return {[project, name](RunConfig& c, const std::string& v) {
            auto& f = project(c);
            const long long n = text::parse_int(v, name);
            if (n < 0) throw ConfigError(name + " must be non-negative");
            f = static_cast<std::remove_reference_t<decltype(f)>>(n);
          },
          [project](const RunConfig& c) { return nlohmann::json(project(const_cast<RunConfig&>(c))); }};
}

template <class F>
Key nested_double(F project, std::string name) {
  return {[project, name](RunConfig& c, const std::string& v) { project(c) = text::parse_double(v, name); },
          [project](const RunConfig& c) { return nlohmann::json(project(const_cast<RunConfig&>(c))); }};
}

template <class F>
Key nested_bool(F project, std::string name) {
  return {[project, name](RunConfig& c, const std::string& v) { project(c) = text::parse_bool(v, name); },
          [project](const RunConfig& c) { return nlohmann::json(project(const_cast<RunConfig&>(c))); }};
}

#define FIELD(expr) [](RunConfig& c) -> auto& { return c.expr; }

const std::map<std::string, Key>& keys() {
  static const std::map<std::string, Key> table = [] {
    std::map<std::string, Key> k;
    k["seed"] = {[](RunConfig& c, const std::string& v) {
                   const long long s = text::parse_int(v, "seed");
                   if (s < 0) throw ConfigError("seed must be non-negative");
                   c.seed = static_cast<std::uint64_t>(s);
                 },
                 [](const RunConfig& c) { return nlohmann::json(c.seed); }};
    k["threads"] = int_key(&RunConfig::threads, "threads");
    k["corpus.path"] = {[](RunConfig& c, const std::string& v) { c.corpus_path = v; },
                        [](const RunConfig& c) { return nlohmann::json(c.corpus_path); }};
    k["corpus.schema"] = {[](RunConfig& c, const std::string& v) { c.schema_path = v; },
                          [](const RunConfig& c) { return nlohmann::json(c.schema_path); }};

    k["synth.num_students"] = nested_int(FIELD(synth.num_students), "synth.num_students");
    k["synth.num_problems"] = nested_int(FIELD(synth.num_problems), "synth.num_problems");
    k["synth.num_kcs"] = nested_int(FIELD(synth.num_kcs), "synth.num_kcs");
    k["synth.num_groups"] = nested_int(FIELD(synth.num_strategy_groups), "synth.num_groups");
    k["synth.noise"] = nested_double(FIELD(synth.mastery_noise), "synth.noise");
    k["synth.problems_per_student"] = nested_int(FIELD(synth.problems_per_student), "synth.problems_per_student");
    k["synth.num_units"] = nested_int(FIELD(synth.num_units), "synth.num_units");
    k["synth.sections_per_unit"] = nested_int(FIELD(synth.sections_per_unit), "synth.sections_per_unit");
    k["synth.min_strategy_length"] = nested_int(FIELD(synth.min_strategy_length), "synth.min_strategy_length");
    k["synth.max_strategy_length"] = nested_int(FIELD(synth.max_strategy_length), "synth.max_strategy_length");
    k["synth.group_skew"] = nested_double(FIELD(synth.group_skew), "synth.group_skew");
    k["synth.cross_group_rate"] = nested_double(FIELD(synth.cross_group_rate), "synth.cross_group_rate");
    k["synth.seed"] = {[](RunConfig& c, const std::string& v) {
                         c.synth.seed = static_cast<std::uint64_t>(text::parse_int(v, "synth.seed"));
                         c.synth_seed_set = true;
                       },
                       [](const RunConfig& c) { return nlohmann::json(c.synth.seed); }};

    k["split.test_fraction"] = nested_double(FIELD(pipeline.test_fraction), "split.test_fraction");

    k["mastery.model_dim"] = nested_int(FIELD(pipeline.mastery.model_dim), "mastery.model_dim");
    k["mastery.num_layers"] = nested_int(FIELD(pipeline.mastery.num_layers), "mastery.num_layers");
    k["mastery.num_heads"] = nested_int(FIELD(pipeline.mastery.num_heads), "mastery.num_heads");
    k["mastery.key_dim"] = nested_int(FIELD(pipeline.mastery.key_dim), "mastery.key_dim");
    k["mastery.ffn_dim"] = nested_int(FIELD(pipeline.mastery.ffn_dim), "mastery.ffn_dim");
    k["mastery.max_seq_len"] = nested_int(FIELD(pipeline.mastery.max_seq_len), "mastery.max_seq_len");
    k["mastery.dropout"] = nested_double(FIELD(pipeline.mastery.dropout), "mastery.dropout");
    k["mastery.learning_rate"] = nested_double(FIELD(pipeline.mastery.learning_rate), "mastery.learning_rate");
    k["mastery.epochs"] = nested_int(FIELD(pipeline.mastery.epochs), "mastery.epochs");
    k["mastery.batch_size"] = nested_int(FIELD(pipeline.mastery.batch_size), "mastery.batch_size");

    k["embed.walks"] = nested_int(FIELD(pipeline.walks), "embed.walks");
    k["embed.dim"] = nested_int(FIELD(pipeline.embed.dim), "embed.dim");
    k["embed.side"] = {[](RunConfig& c, const std::string& v) {
                         if (v == "input") {
                           c.pipeline.embed.side = EmbeddingSide::Input;
                         } else if (v == "sum") {
                           c.pipeline.embed.side = EmbeddingSide::Sum;
                         } else {
                           throw ConfigError("embed.side must be 'input' or 'sum'");
                         }
                       },
                       [](const RunConfig& c) {
                         return nlohmann::json(c.pipeline.embed.side == EmbeddingSide::Input ? "input" : "sum");
                       }};
    k["embed.exact_softmax"] = nested_bool(FIELD(pipeline.embed.exact_softmax), "embed.exact_softmax");
    k["embed.negatives"] = nested_int(FIELD(pipeline.embed.negatives), "embed.negatives");
    k["embed.epochs"] = nested_int(FIELD(pipeline.embed.epochs), "embed.epochs");
    k["embed.learning_rate"] = nested_double(FIELD(pipeline.embed.learning_rate), "embed.learning_rate");

    k["cluster.normalize"] = nested_bool(FIELD(pipeline.points.normalize), "cluster.normalize");
    k["cluster.radius"] = nested_double(FIELD(pipeline.points.radius), "cluster.radius");
    k["cluster.lambda_local"] = nested_double(FIELD(pipeline.cluster.lambda_local), "cluster.lambda_local");
    k["cluster.lambda_global"] = nested_double(FIELD(pipeline.cluster.lambda_global_init), "cluster.lambda_global");
    k["cluster.epsilon"] = nested_double(FIELD(pipeline.cluster.epsilon), "cluster.epsilon");
    k["cluster.max_iters"] = nested_int(FIELD(pipeline.cluster.max_iters), "cluster.max_iters");
    k["cluster.tolerance"] = nested_double(FIELD(pipeline.cluster.tolerance), "cluster.tolerance");
    k["cluster.pair_cap"] = nested_int(FIELD(pipeline.cluster.pair_cap), "cluster.pair_cap");
    k["cluster.max_sweeps"] = nested_int(FIELD(pipeline.cluster.max_sweeps), "cluster.max_sweeps");

    k["sample.method"] = {[](RunConfig& c, const std::string& v) { c.method = parse_method(v); },
                          [](const RunConfig& c) { return nlohmann::json(std::string(method_name(c.method))); }};
    k["sample.fractions"] = {[](RunConfig& c, const std::string& v) {
                               c.fractions.clear();
                               for (const auto& part : text::split(v, ",")) {
                                 c.fractions.push_back(text::parse_double(text::trim(part), "sample.fractions"));
                               }
                             },
                             [](const RunConfig& c) { return nlohmann::json(c.fractions); }};

    k["predict.latent_dim"] = nested_int(FIELD(pipeline.predict.latent_dim), "predict.latent_dim");
    k["predict.token_dim"] = nested_int(FIELD(pipeline.predict.token_dim), "predict.token_dim");
    k["predict.epochs"] = nested_int(FIELD(pipeline.predict.epochs), "predict.epochs");
    k["predict.batch_size"] = nested_int(FIELD(pipeline.predict.batch_size), "predict.batch_size");
    k["predict.learning_rate"] = nested_double(FIELD(pipeline.predict.learning_rate), "predict.learning_rate");
    k["predict.dropout"] = nested_double(FIELD(pipeline.predict.dropout), "predict.dropout");
    k["predict.max_output_len"] = nested_int(FIELD(pipeline.predict.max_output_len), "predict.max_output_len");
    return k;
  }();
  return table;
}

#undef FIELD

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  const auto& table = keys();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second.set(*this, std::string(text::trim(value)));
}

void RunConfig::finalize() {
  pipeline.set_seed(seed);
  if (!synth_seed_set) synth.seed = derive_seed(seed, "synth");
}

void RunConfig::validate() const {
  if (threads < 0) throw ConfigError("threads must be >= 0");
  if (corpus_path.empty()) stratpred::validate(synth);
  if (!(pipeline.test_fraction > 0.0 && pipeline.test_fraction < 1.0)) {
    throw ConfigError("split.test_fraction must lie in (0, 1)");
  }
  pipeline.mastery.validate();
  if (pipeline.walks == 0) throw ConfigError("embed.walks must be positive");
  pipeline.embed.validate();
  if (!(pipeline.points.radius > 0.0)) throw ConfigError("cluster.radius must be positive");
  pipeline.cluster.validate();
  pipeline.predict.validate();
  if (fractions.empty()) throw ConfigError("sample.fractions must list at least one budget");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("sample.fractions entries must lie in (0, 1]");
  }
}

RunConfig RunConfig::from_stream(std::istream& in) {
  RunConfig c;
  for (const auto& kv : text::read_key_values(in)) {
    try {
      c.set(kv.key, kv.value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  return from_stream(in);
}

nlohmann::json RunConfig::snapshot() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [name, key] : keys()) {
    if (name == "threads") continue;  // does not affect results
    j[name] = key.get(*this);
  }
  return j;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [name, key] : keys()) out.push_back(name);
  return out;
}

}  // namespace stratpred
