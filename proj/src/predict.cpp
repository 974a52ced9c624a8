#include "stratpred/predict.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>
#include <unordered_map>

#include "stratpred/error.hpp"
#include "stratpred/kernels.hpp"
#include "stratpred/nn.hpp"
#include "stratpred/parallel.hpp"
#include "stratpred/rng.hpp"
#include "stratpred/text.hpp"

namespace stratpred {

// ---------------------------------------------------------------------------
// Split

Split split_instances(const std::vector<Instance>& instances, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ConfigError("test fraction must lie in [0, 1)");
  std::map<std::string, std::vector<Instance>> by_student;
  for (const auto& inst : std::set<Instance>(instances.begin(), instances.end())) {
    by_student[inst.student_id].push_back(inst);
  }
  Rng rng(derive_seed(seed, "split"));
  Split out;
  for (auto& [student, list] : by_student) {
    rng.shuffle(list);
    const std::size_t n = list.size();
    std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
    n_test = std::min(n_test, n - 1);
    out.test.insert(out.test.end(), list.begin(), list.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train.insert(out.train.end(), list.begin() + static_cast<std::ptrdiff_t>(n_test), list.end());
  }
  std::set<std::string> trained;
  for (const auto& inst : out.train) trained.insert(inst.problem_id);
  std::vector<Instance> kept;
  for (const auto& inst : out.test) {
    if (trained.insert(inst.problem_id).second) {
      out.train.push_back(inst);
    } else {
      kept.push_back(inst);
    }
  }
  out.test = std::move(kept);
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

void write_split_tsv(std::ostream& out, const Split& split) {
  out << "student\tproblem\tpart\n";
  for (const auto& i : split.train) out << i.student_id << '\t' << i.problem_id << "\ttrain\n";
  for (const auto& i : split.test) out << i.student_id << '\t' << i.problem_id << "\ttest\n";
}

Split read_split_tsv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "student\tproblem\tpart") {
    throw DataError("split file lacks the header student/problem/part");
  }
  Split out;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (text::trim(line).empty()) continue;
    const auto f = text::split(line, "\t");
    if (f.size() != 3) throw DataError("split line " + std::to_string(n) + ": expected 3 fields");
    Instance inst{f[0], f[1]};
    if (f[2] == "train") {
      out.train.push_back(inst);
    } else if (f[2] == "test") {
      out.test.push_back(inst);
    } else {
      throw DataError("split line " + std::to_string(n) + ": unknown part '" + f[2] + "'");
    }
  }
  return out;
}

std::vector<InteractionRecord> records_of(const std::vector<InteractionRecord>& records,
                                          const std::vector<Instance>& keep) {
  const std::set<Instance> wanted(keep.begin(), keep.end());
  std::vector<InteractionRecord> out;
  for (const auto& r : records) {
    if (wanted.count(Instance{r.student_id, r.problem_id})) out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling

std::string_view method_name(SampleMethod m) {
  switch (m) {
    case SampleMethod::AS: return "AS";
    case SampleMethod::GS: return "GS";
    case SampleMethod::RS: return "RS";
  }
  return "?";
}

SampleMethod parse_method(std::string_view s) {
  std::string u(s);
  for (char& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "AS") return SampleMethod::AS;
  if (u == "GS") return SampleMethod::GS;
  if (u == "RS") return SampleMethod::RS;
  throw ConfigError("unknown sampling method '" + std::string(s) + "' (expected AS, GS or RS)");
}

SampleResult sample_training(const ClusterState* state, const ClusterPoints* points,
                             const std::vector<Instance>& corpus, const SamplePlan& plan) {
  SampleResult out;
  switch (plan.method) {
    case SampleMethod::AS: {
      if (!state || !points) throw ConfigError("AS sampling needs a cluster state");
      Rng rng(derive_seed(plan.seed, "sample.as"));
      std::vector<std::vector<Instance>> pools;
      for (std::size_t p = 0; p < state->g(); ++p) {
        auto pool = instances_of(*state, static_cast<int>(p), *points, corpus);
        rng.shuffle(pool);
        out.available += pool.size();
        pools.push_back(std::move(pool));
      }
      const std::size_t take = std::min(plan.budget, out.available);
      std::vector<std::size_t> next(pools.size(), 0);
      while (out.instances.size() < take) {
        for (std::size_t p = 0; p < pools.size() && out.instances.size() < take; ++p) {
          if (next[p] < pools[p].size()) out.instances.push_back(pools[p][next[p]++]);
        }
      }
      break;
    }
    case SampleMethod::GS: {
      Rng rng(derive_seed(plan.seed, "sample.gs"));
      std::map<std::string, std::vector<Instance>> by_student;
      for (const auto& inst : corpus) by_student[inst.student_id].push_back(inst);
      std::vector<const std::vector<Instance>*> lists;
      std::vector<double> weights;
      for (const auto& [s, list] : by_student) {
        lists.push_back(&list);
        weights.push_back(static_cast<double>(list.size()));
      }
      out.available = corpus.size();
      const std::size_t take = std::min(plan.budget, out.available);
      for (std::size_t i = 0; i < take; ++i) {
        const auto& list = *lists[rng.categorical(weights)];
        out.instances.push_back(list[rng.index(list.size())]);
      }
      break;
    }
    case SampleMethod::RS: {
      Rng rng(derive_seed(plan.seed, "sample.rs"));
      std::vector<Instance> pool = corpus;
      rng.shuffle(pool);
      out.available = pool.size();
      pool.resize(std::min(plan.budget, pool.size()));
      out.instances = std::move(pool);
      break;
    }
  }
  out.capped = plan.budget > out.available;
  return out;
}

// ---------------------------------------------------------------------------
// Predictor

void PredictorParams::validate() const {
  if (latent_dim < 1) throw ConfigError("predict.latent_dim must be >= 1");
  if (token_dim < 1) throw ConfigError("predict.token_dim must be >= 1");
  if (epochs < 0) throw ConfigError("predict.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("predict.batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("predict.learning_rate must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("predict.dropout must lie in [0, 1)");
  if (max_output_len < 1) throw ConfigError("predict.max_output_len must be >= 1");
}

struct StrategyPredictor::Impl {
  PredictorParams p;
  std::vector<std::string> kcs;
  std::unordered_map<std::string, std::size_t> kc_index;
  std::size_t entity_dim = 0;
  std::size_t H = 0;
  std::size_t V = 0;  // KCs; output V + 1 (stop), input tokens V + 2 (start)

  Param w_entity;  // 2d x 4H
  Param w_token;   // T x 4H
  Param w_hidden;  // H x 4H
  Param bias;      // 1 x 4H
  Param tokens;    // (V + 2) x T
  Param w_out;     // H x (V + 1)
  Param b_out;     // 1 x (V + 1)

  // One decoder step; gate order i, f, g, o.
  struct Step {
    std::size_t prev = 0;
    std::vector<double> gates;  // activated
    std::vector<double> c, h, tanh_c, mask, probs;
  };

  std::vector<Param*> params() {
    return {&w_entity, &w_token, &w_hidden, &bias, &tokens, &w_out, &b_out};
  }

  std::size_t start_token() const { return V + 1; }

  void forward_step(const std::vector<double>& ze, std::size_t prev, const std::vector<double>& h_prev,
                    const std::vector<double>& c_prev, Step& s) const {
    const std::size_t G = 4 * H;
    std::vector<double> z = ze;
    const auto tok = tokens.value.row(prev);
    for (std::size_t j = 0; j < tok.size(); ++j) kernels::axpy(tok[j], w_token.value.row(j), z);
    for (std::size_t j = 0; j < H; ++j) {
      if (h_prev[j] != 0.0) kernels::axpy(h_prev[j], w_hidden.value.row(j), z);
    }
    s.prev = prev;
    s.gates.resize(G);
    for (std::size_t j = 0; j < H; ++j) {
      s.gates[j] = sigmoid(z[j]);
      s.gates[H + j] = sigmoid(z[H + j]);
      s.gates[2 * H + j] = std::tanh(z[2 * H + j]);
      s.gates[3 * H + j] = sigmoid(z[3 * H + j]);
    }
    s.c.resize(H);
    s.h.resize(H);
    s.tanh_c.resize(H);
    for (std::size_t j = 0; j < H; ++j) {
      s.c[j] = s.gates[H + j] * c_prev[j] + s.gates[j] * s.gates[2 * H + j];
      s.tanh_c[j] = std::tanh(s.c[j]);
      s.h[j] = s.gates[3 * H + j] * s.tanh_c[j];
    }
    std::vector<double> hd = s.h;
    if (!s.mask.empty()) {
      for (std::size_t j = 0; j < H; ++j) hd[j] *= s.mask[j];
    }
    const std::size_t O = V + 1;
    s.probs.assign(b_out.value.flat().begin(), b_out.value.flat().end());
    for (std::size_t j = 0; j < H; ++j) {
      if (hd[j] != 0.0) kernels::axpy(hd[j], w_out.value.row(j), s.probs);
    }
    double mx = s.probs[0];
    for (std::size_t o = 1; o < O; ++o) mx = std::max(mx, s.probs[o]);
    double total = 0.0;
    for (double& v : s.probs) {
      v = std::exp(v - mx);
      total += v;
    }
    for (double& v : s.probs) v /= total;
  }

  std::vector<double> entity_term(std::span<const double> input) const {
    if (input.size() != 2 * entity_dim) {
      throw DataError("predictor input has " + std::to_string(input.size()) + " values, expected " +
                      std::to_string(2 * entity_dim));
    }
    std::vector<double> ze(bias.value.flat().begin(), bias.value.flat().end());
    for (std::size_t j = 0; j < input.size(); ++j) kernels::axpy(input[j], w_entity.value.row(j), ze);
    return ze;
  }
};

StrategyPredictor::StrategyPredictor(const PredictorParams& params, std::vector<std::string> kcs,
                                     std::size_t entity_dim)
    : impl_(std::make_unique<Impl>()) {
  params.validate();
  if (kcs.empty()) throw DataError("strategy predictor needs a non-empty KC vocabulary");
  if (entity_dim == 0) throw DataError("strategy predictor needs a positive embedding dimension");
  Impl& m = *impl_;
  m.p = params;
  m.kcs = std::move(kcs);
  for (std::size_t i = 0; i < m.kcs.size(); ++i) {
    if (!m.kc_index.emplace(m.kcs[i], i).second) throw DataError("duplicate KC '" + m.kcs[i] + "'");
  }
  m.entity_dim = entity_dim;
  m.H = static_cast<std::size_t>(params.latent_dim);
  m.V = m.kcs.size();
  const std::size_t G = 4 * m.H, T = static_cast<std::size_t>(params.token_dim);
  m.w_entity = Param("lstm.w_entity", 2 * entity_dim, G);
  m.w_token = Param("lstm.w_token", T, G);
  m.w_hidden = Param("lstm.w_hidden", m.H, G);
  m.bias = Param("lstm.bias", 1, G);
  m.tokens = Param("lstm.tokens", m.V + 2, T);
  m.w_out = Param("out.w", m.H, m.V + 1);
  m.b_out = Param("out.b", 1, m.V + 1);
}

StrategyPredictor::~StrategyPredictor() = default;
StrategyPredictor::StrategyPredictor(StrategyPredictor&&) noexcept = default;
StrategyPredictor& StrategyPredictor::operator=(StrategyPredictor&&) noexcept = default;

const PredictorParams& StrategyPredictor::params() const { return impl_->p; }
const std::vector<std::string>& StrategyPredictor::kcs() const { return impl_->kcs; }
std::size_t StrategyPredictor::entity_dim() const { return impl_->entity_dim; }
std::size_t StrategyPredictor::stop_index() const { return impl_->V; }
std::vector<Param*> StrategyPredictor::parameters() { return impl_->params(); }

void StrategyPredictor::initialize() {
  Impl& m = *impl_;
  Rng rng(derive_seed(m.p.seed, "predict.init"));
  const double in = static_cast<double>(2 * m.entity_dim + static_cast<std::size_t>(m.p.token_dim) + m.H);
  const double g = std::sqrt(6.0 / (in + 4.0 * static_cast<double>(m.H)));
  init_uniform(m.w_entity.value, rng, g);
  init_uniform(m.w_token.value, rng, g);
  init_uniform(m.w_hidden.value, rng, g);
  m.bias.value.fill(0.0);
  for (std::size_t j = 0; j < m.H; ++j) m.bias.value(0, m.H + j) = 1.0;  // forget gate
  init_uniform(m.tokens.value, rng, 0.1);
  init_uniform(m.w_out.value, rng, std::sqrt(6.0 / static_cast<double>(m.H + m.V + 1)));
  m.b_out.value.fill(0.0);
}

double StrategyPredictor::loss(std::span<const double> input, const std::vector<std::string>& target,
                               double grad_scale, Rng* dropout_rng) {
  Impl& m = *impl_;
  const std::size_t H = m.H, G = 4 * H, T = static_cast<std::size_t>(m.p.token_dim);
  std::vector<std::size_t> labels;
  for (const auto& k : target) {
    const auto it = m.kc_index.find(k);
    if (it == m.kc_index.end()) throw LookupError("KC '" + k + "' is not in the predictor vocabulary");
    labels.push_back(it->second);
  }
  labels.push_back(m.V);
  const std::size_t n = labels.size();

  const std::vector<double> ze = m.entity_term(input);
  std::vector<Impl::Step> steps(n);
  std::vector<double> h(H, 0.0), c(H, 0.0);
  double total = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    if (dropout_rng && m.p.dropout > 0.0) {
      Dropout d;
      d.sample(H, m.p.dropout, *dropout_rng);
      steps[t].mask = std::move(d.mask);
    }
    const std::size_t prev = t == 0 ? m.start_token() : labels[t - 1];
    m.forward_step(ze, prev, h, c, steps[t]);
    total -= std::log(std::max(steps[t].probs[labels[t]], 1e-300));
    h = steps[t].h;
    c = steps[t].c;
  }
  if (grad_scale == 0.0) return total;

  std::vector<double> dh_next(H, 0.0), dc_next(H, 0.0), dze(G, 0.0), dz(G), dlogit(m.V + 1), dh(H);
  const std::vector<double> zeros(H, 0.0);
  for (std::size_t t = n; t-- > 0;) {
    const Impl::Step& s = steps[t];
    for (std::size_t o = 0; o <= m.V; ++o) dlogit[o] = grad_scale * s.probs[o];
    dlogit[labels[t]] -= grad_scale;
    kernels::axpy(1.0, dlogit, m.b_out.grad.flat());
    for (std::size_t j = 0; j < H; ++j) {
      const double keep = s.mask.empty() ? 1.0 : s.mask[j];
      const double hd = s.h[j] * keep;
      if (hd != 0.0) kernels::axpy(hd, dlogit, m.w_out.grad.row(j));
      dh[j] = dh_next[j] + (keep != 0.0 ? keep * kernels::dot(dlogit, m.w_out.value.row(j)) : 0.0);
    }
    const std::vector<double>& c_prev = t == 0 ? zeros : steps[t - 1].c;
    const std::vector<double>& h_prev = t == 0 ? zeros : steps[t - 1].h;
    for (std::size_t j = 0; j < H; ++j) {
      const double ig = s.gates[j], fg = s.gates[H + j], gg = s.gates[2 * H + j], og = s.gates[3 * H + j];
      const double tc = s.tanh_c[j];
      const double dc = dc_next[j] + dh[j] * og * (1.0 - tc * tc);
      dz[j] = dc * gg * ig * (1.0 - ig);
      dz[H + j] = dc * c_prev[j] * fg * (1.0 - fg);
      dz[2 * H + j] = dc * ig * (1.0 - gg * gg);
      dz[3 * H + j] = dh[j] * tc * og * (1.0 - og);
      dc_next[j] = dc * fg;
    }
    for (std::size_t j = 0; j < H; ++j) {
      if (h_prev[j] != 0.0) kernels::axpy(h_prev[j], dz, m.w_hidden.grad.row(j));
      dh_next[j] = kernels::dot(dz, m.w_hidden.value.row(j));
    }
    const auto tok = m.tokens.value.row(s.prev);
    auto dtok = m.tokens.grad.row(s.prev);
    for (std::size_t j = 0; j < T; ++j) {
      kernels::axpy(tok[j], dz, m.w_token.grad.row(j));
      dtok[j] += kernels::dot(dz, m.w_token.value.row(j));
    }
    kernels::axpy(1.0, dz, dze);
  }
  kernels::axpy(1.0, dze, m.bias.grad.flat());
  for (std::size_t j = 0; j < input.size(); ++j) {
    if (input[j] != 0.0) kernels::axpy(input[j], dze, m.w_entity.grad.row(j));
  }
  return total;
}

std::vector<std::string> StrategyPredictor::predict(std::span<const double> input,
                                                    std::vector<std::vector<double>>* distributions) const {
  const Impl& m = *impl_;
  const std::vector<double> ze = m.entity_term(input);
  std::vector<double> h(m.H, 0.0), c(m.H, 0.0);
  std::vector<std::string> out;
  std::size_t prev = m.start_token();
  Impl::Step s;
  for (int t = 0; t < m.p.max_output_len; ++t) {
    m.forward_step(ze, prev, h, c, s);
    if (distributions) distributions->push_back(s.probs);
    const std::size_t best =
        static_cast<std::size_t>(std::max_element(s.probs.begin(), s.probs.end()) - s.probs.begin());
    if (best == m.V) break;
    out.push_back(m.kcs[best]);
    prev = best;
    h = s.h;
    c = s.c;
  }
  return out;
}

nlohmann::json StrategyPredictor::to_json() const {
  const PredictorParams& p = impl_->p;
  nlohmann::json j;
  j["format"] = "stratpred-strategy-model";
  j["version"] = 1;
  j["params"] = {{"latent_dim", p.latent_dim}, {"token_dim", p.token_dim},
                 {"epochs", p.epochs},         {"batch_size", p.batch_size},
                 {"learning_rate", p.learning_rate}, {"dropout", p.dropout},
                 {"max_output_len", p.max_output_len}, {"seed", p.seed}};
  j["kcs"] = impl_->kcs;
  j["entity_dim"] = impl_->entity_dim;
  j["tensors"] = params_to_json(impl_->params());
  return j;
}

StrategyPredictor StrategyPredictor::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "stratpred-strategy-model") throw DataError("not a strategy model checkpoint");
    const auto& q = j.at("params");
    PredictorParams p;
    p.latent_dim = q.at("latent_dim");
    p.token_dim = q.at("token_dim");
    p.epochs = q.at("epochs");
    p.batch_size = q.at("batch_size");
    p.learning_rate = q.at("learning_rate");
    p.dropout = q.at("dropout");
    p.max_output_len = q.at("max_output_len");
    p.seed = q.at("seed");
    StrategyPredictor model(p, j.at("kcs").get<std::vector<std::string>>(), j.at("entity_dim").get<std::size_t>());
    params_from_json(j.at("tensors"), model.parameters());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed strategy checkpoint: ") + e.what());
  }
}

std::vector<double> predictor_input(const EmbeddingTable& embeddings, const Instance& instance) {
  const auto s = embeddings.get(NodeType::Student, instance.student_id);
  const auto p = embeddings.get(NodeType::Problem, instance.problem_id);
  std::vector<double> x(s.begin(), s.end());
  x.insert(x.end(), p.begin(), p.end());
  return x;
}

StrategyPredictor train_lstm(const std::vector<Instance>& instances, const StrategyMap& strategies,
                             const EmbeddingTable& embeddings, const std::vector<std::string>& kcs,
                             const PredictorParams& params, PredictorTrainingReport* report) {
  const auto t0 = std::chrono::steady_clock::now();
  if (instances.empty()) throw DataError("strategy predictor needs at least one training instance");
  std::vector<std::vector<double>> inputs;
  std::vector<const std::vector<std::string>*> targets;
  for (const auto& inst : instances) {
    const auto it = strategies.find(inst);
    if (it == strategies.end()) {
      throw DataError("no strategy for instance (" + inst.student_id + ", " + inst.problem_id + ")");
    }
    inputs.push_back(predictor_input(embeddings, inst));
    targets.push_back(&it->second.kcs);
  }
  StrategyPredictor model(params, kcs, embeddings.dim());
  model.initialize();
  auto ps = model.parameters();
  Rng order_rng(derive_seed(params.seed, "predict.order"));
  Rng dropout_rng(derive_seed(params.seed, "predict.dropout"));
  std::vector<std::size_t> order(instances.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  AdamConfig adam;
  adam.learning_rate = params.learning_rate;
  adam.clip_norm = 5.0;
  long step = 0;
  const std::size_t batch = static_cast<std::size_t>(params.batch_size);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_total = 0.0;
    for (std::size_t b0 = 0, b = 0; b0 < order.size(); b0 += batch, ++b) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      const double scale = 1.0 / static_cast<double>(b1 - b0);
      zero_grads(ps);
      double batch_total = 0.0;
      for (std::size_t i = b0; i < b1; ++i) {
        batch_total += model.loss(inputs[order[i]], *targets[order[i]], scale, &dropout_rng);
      }
      if (!std::isfinite(batch_total)) throw TrainingError("strategy predictor", epoch, static_cast<int>(b));
      adam_step(ps, adam, ++step);
      epoch_total += batch_total;
    }
    if (report) report->epoch_loss.push_back(epoch_total / static_cast<double>(order.size()));
  }
  if (report) {
    report->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  return model;
}

std::vector<std::string> predict_strategy(const StrategyPredictor& model, const std::string& student_id,
                                          const std::string& problem_id, const EmbeddingTable& embeddings) {
  return model.predict(predictor_input(embeddings, Instance{student_id, problem_id}));
}

// ---------------------------------------------------------------------------
// Evaluation

double token_accuracy(const std::vector<std::string>& predicted, const std::vector<std::string>& truth) {
  if (truth.empty()) return predicted.empty() ? 1.0 : 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size() && i < predicted.size(); ++i) hits += predicted[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

Evaluation score_rows(std::vector<PredictionRow> rows) {
  Evaluation e;
  double acc = 0.0;
  std::size_t exact = 0;
  for (auto& r : rows) {
    r.token_accuracy = token_accuracy(r.predicted, r.truth);
    acc += r.token_accuracy;
    exact += r.predicted == r.truth;
  }
  if (!rows.empty()) {
    e.token_accuracy = acc / static_cast<double>(rows.size());
    e.exact_match = static_cast<double>(exact) / static_cast<double>(rows.size());
  }
  e.rows = std::move(rows);
  return e;
}

Evaluation evaluate(const StrategyPredictor& model, const std::vector<Instance>& test,
                    const StrategyMap& strategies, const EmbeddingTable& embeddings) {
  std::vector<PredictionRow> rows(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto it = strategies.find(test[i]);
    if (it == strategies.end()) {
      throw DataError("no strategy for test instance (" + test[i].student_id + ", " + test[i].problem_id + ")");
    }
    rows[i].instance = test[i];
    rows[i].truth = it->second.kcs;
    predictor_input(embeddings, test[i]);  // surfaces lookup errors before the parallel section
  }
  parallel_for(rows.size(), [&](std::size_t i) {
    rows[i].predicted = model.predict(predictor_input(embeddings, rows[i].instance));
  });
  return score_rows(std::move(rows));
}

std::map<std::string, double> fairness_report(const std::vector<PredictionRow>& rows,
                                              const std::vector<InteractionRecord>& records,
                                              const std::vector<double>& boundaries) {
  const auto groups = performance_groups(records, boundaries);
  std::map<std::string, std::pair<double, std::size_t>> per_student;
  for (const auto& r : rows) {
    auto& acc = per_student[r.instance.student_id];
    acc.first += r.token_accuracy;
    ++acc.second;
  }
  std::map<std::string, std::pair<double, std::size_t>> per_group;
  for (const auto& [student, acc] : per_student) {
    const auto it = groups.find(student);
    if (it == groups.end()) continue;
    auto& g = per_group[it->second.label()];
    g.first += acc.first / static_cast<double>(acc.second);
    ++g.second;
  }
  std::map<std::string, double> out;
  for (const auto& [label, g] : per_group) out[label] = g.first / static_cast<double>(g.second);
  return out;
}

double group_spread(const std::map<std::string, double>& per_group) {
  if (per_group.size() < 2) return 0.0;
  double lo = per_group.begin()->second, hi = lo;
  for (const auto& [label, v] : per_group) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return hi - lo;
}

void write_predictions_tsv(std::ostream& out, const std::vector<PredictionRow>& rows) {
  out << "student\tproblem\tpredicted_kcs\ttrue_kcs\n";
  for (const auto& r : rows) {
    out << r.instance.student_id << '\t' << r.instance.problem_id << '\t' << text::join(r.predicted, ",") << '\t'
        << text::join(r.truth, ",") << '\n';
  }
}

}  // namespace stratpred
