#include "stratpred/mastery.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <set>
#include <unordered_map>

#include "stratpred/error.hpp"
#include "stratpred/kernels.hpp"
#include "stratpred/nn.hpp"
#include "stratpred/parallel.hpp"
#include "stratpred/rng.hpp"
#include "stratpred/symmetry.hpp"
#include "stratpred/text.hpp"

namespace stratpred {

void AttentionModelParams::validate() const {
  if (model_dim < 2 || model_dim % 2 != 0) throw ConfigError("mastery.model_dim must be even and >= 2");
  if (num_layers < 1) throw ConfigError("mastery.num_layers must be >= 1");
  if (num_heads < 1 || model_dim % num_heads != 0) {
    throw ConfigError("mastery.model_dim must be divisible by mastery.num_heads");
  }
  if (key_dim * num_heads != model_dim) throw ConfigError("mastery.key_dim * mastery.num_heads must equal model_dim");
  if (ffn_dim < 1) throw ConfigError("mastery.ffn_dim must be >= 1");
  if (max_seq_len < 1) throw ConfigError("mastery.max_seq_len must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("mastery.dropout must lie in [0, 1)");
  if (!(learning_rate > 0.0)) throw ConfigError("mastery.learning_rate must be positive");
  if (epochs < 0) throw ConfigError("mastery.epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("mastery.batch_size must be >= 1");
}

namespace {

using Unit = std::pair<std::string, std::string>;  // (student, unit)

void append_windows(std::vector<OpportunitySequence>& out, const std::string& student, const std::string& unit,
                    const std::vector<const InteractionRecord*>& steps, int max_len) {
  for (std::size_t start = 0; start < steps.size(); start += static_cast<std::size_t>(max_len)) {
    OpportunitySequence seq;
    seq.student_id = student;
    seq.unit_id = unit;
    const std::size_t end = std::min(steps.size(), start + static_cast<std::size_t>(max_len));
    for (std::size_t i = start; i < end; ++i) {
      seq.tokens.push_back({steps[i]->kc_id, steps[i]->problem_id, steps[i]->step_index});
      seq.targets.push_back(steps[i]->cfa);
    }
    out.push_back(std::move(seq));
  }
}

// First-attempt records grouped per (student, unit), chronological, with units
// in order of first appearance.
std::vector<std::pair<Unit, std::vector<const InteractionRecord*>>> by_unit(
    const std::vector<InteractionRecord>& records) {
  std::vector<const InteractionRecord*> sorted;
  for (const auto& r : records) {
    if (r.attempt == 0) sorted.push_back(&r);
  }
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto* a, const auto* b) {
    if (a->student_id != b->student_id) return a->student_id < b->student_id;
    return a->sequence_ordinal < b->sequence_ordinal;
  });
  std::vector<std::pair<Unit, std::vector<const InteractionRecord*>>> out;
  std::map<Unit, std::size_t> slot;
  for (const auto* r : sorted) {
    const Unit key{r->student_id, r->unit_id};
    auto [it, fresh] = slot.try_emplace(key, out.size());
    if (fresh) out.push_back({key, {}});
    out[it->second].second.push_back(r);
  }
  return out;
}

}  // namespace

std::vector<OpportunitySequence> build_opportunity_sequences(const std::vector<InteractionRecord>& records,
                                                             const AttentionModelParams& params) {
  std::vector<OpportunitySequence> out;
  for (const auto& [key, steps] : by_unit(records)) {
    std::map<std::string, std::string> first_problem;  // section -> problem
    for (const auto* r : steps) first_problem.try_emplace(r->section_id, r->problem_id);
    std::vector<const InteractionRecord*> kept;
    for (const auto* r : steps) {
      if (first_problem.at(r->section_id) == r->problem_id) kept.push_back(r);
    }
    append_windows(out, key.first, key.second, kept, params.max_seq_len);
  }
  return out;
}

std::vector<OpportunitySequence> build_scoring_sequences(const std::vector<InteractionRecord>& records,
                                                         const AttentionModelParams& params) {
  std::vector<OpportunitySequence> out;
  for (const auto& [key, steps] : by_unit(records)) append_windows(out, key.first, key.second, steps, params.max_seq_len);
  return out;
}

namespace {

enum DecoderToken : std::size_t { kStart = 0, kWrong = 1, kRight = 2 };

struct EncoderLayer {
  MultiHeadAttention att;
  LayerNorm ln1, ln2;
  Linear f1, f2;

  EncoderLayer(const std::string& n, const AttentionModelParams& p)
      : att(n + ".self", p.model_dim, p.num_heads), ln1(n + ".ln1", p.model_dim), ln2(n + ".ln2", p.model_dim),
        f1(n + ".ffn1", p.model_dim, p.ffn_dim), f2(n + ".ffn2", p.ffn_dim, p.model_dim) {}
  void collect(std::vector<Param*>& out) {
    att.collect(out);
    ln1.collect(out);
    ln2.collect(out);
    f1.collect(out);
    f2.collect(out);
  }
};

struct DecoderLayer {
  MultiHeadAttention self, cross;
  LayerNorm ln1, ln2, ln3;
  Linear f1, f2;

  DecoderLayer(const std::string& n, const AttentionModelParams& p)
      : self(n + ".self", p.model_dim, p.num_heads), cross(n + ".cross", p.model_dim, p.num_heads),
        ln1(n + ".ln1", p.model_dim), ln2(n + ".ln2", p.model_dim), ln3(n + ".ln3", p.model_dim),
        f1(n + ".ffn1", p.model_dim, p.ffn_dim), f2(n + ".ffn2", p.ffn_dim, p.model_dim) {}
  void collect(std::vector<Param*>& out) {
    self.collect(out);
    cross.collect(out);
    ln1.collect(out);
    ln2.collect(out);
    ln3.collect(out);
    f1.collect(out);
    f2.collect(out);
  }
};

struct FfnCache {
  Matrix pre, act;
};

struct EncoderCache {
  MultiHeadAttention::Cache att;
  Dropout d1, d2;
  LayerNorm::Cache ln1, ln2;
  Matrix h;
  FfnCache ffn;
};

struct DecoderCache {
  MultiHeadAttention::Cache self, cross;
  Dropout d1, d2, d3;
  LayerNorm::Cache ln1, ln2, ln3;
  Matrix h1, h2;
  FfnCache ffn;
};

void add_into(Matrix& a, const Matrix& b) { kernels::axpy(1.0, b.flat(), a.flat()); }

void ffn_forward(const Linear& f1, const Linear& f2, const Matrix& x, Matrix& y, FfnCache& c) {
  f1.forward(x, c.pre);
  c.act = c.pre;
  for (double& v : c.act.flat()) v = std::max(v, 0.0);
  f2.forward(c.act, y);
}

// Adds the input gradient into dx.
void ffn_backward(Linear& f1, Linear& f2, const Matrix& x, const Matrix& dy, const FfnCache& c, Matrix& dx) {
  Matrix dact;
  f2.backward(c.act, dy, &dact);
  auto d = dact.flat();
  const auto pre = c.pre.flat();
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (pre[i] <= 0.0) d[i] = 0.0;
  }
  f1.backward(x, dact, &dx, true);
}

void sample_mask(Dropout& d, std::size_t n, double rate, Rng* rng) {
  if (rng) d.sample(n, rate, *rng);
  else d.mask.clear();
}

}  // namespace

struct AttentionModel::Impl {
  AttentionModelParams p;
  std::vector<std::string> kcs;
  std::unordered_map<std::string, std::size_t> kc_index;
  Param kc_embed, step_embed, cfa_embed;
  std::vector<EncoderLayer> enc;
  std::vector<DecoderLayer> dec;
  Linear out;
  Matrix positions;

  Impl(const AttentionModelParams& params, std::vector<std::string> vocab)
      : p(params), kcs(std::move(vocab)) {
    p.validate();
    if (kcs.empty()) throw DataError("cfa model needs a non-empty KC vocabulary");
    for (std::size_t i = 0; i < kcs.size(); ++i) {
      if (!kc_index.emplace(kcs[i], i).second) throw DataError("duplicate KC '" + kcs[i] + "' in vocabulary");
    }
    const std::size_t d = static_cast<std::size_t>(p.model_dim);
    kc_embed = Param("encoder.kc_embedding", kcs.size(), d);
    step_embed = Param("decoder.kc_embedding", kcs.size(), d);
    cfa_embed = Param("decoder.cfa_embedding", 3, d);
    enc.reserve(p.num_layers);
    dec.reserve(p.num_layers);
    for (int l = 0; l < p.num_layers; ++l) {
      enc.emplace_back("encoder." + std::to_string(l), p);
      dec.emplace_back("decoder." + std::to_string(l), p);
    }
    out = Linear("output", d, 1);
    positions.resize(static_cast<std::size_t>(p.max_seq_len), d);
    for (std::size_t i = 0; i < positions.rows(); ++i) {
      const auto pe = positional_encoding(i, d);
      std::copy(pe.begin(), pe.end(), positions.row(i).begin());
    }
  }

  std::vector<Param*> params() {
    std::vector<Param*> v{&kc_embed, &step_embed, &cfa_embed};
    for (auto& l : enc) l.collect(v);
    for (auto& l : dec) l.collect(v);
    out.collect(v);
    return v;
  }

  std::vector<std::size_t> kc_ids(const OpportunitySequence& seq) const {
    if (seq.tokens.empty()) throw DataError("empty opportunity sequence");
    if (seq.tokens.size() > static_cast<std::size_t>(p.max_seq_len)) {
      throw DataError("length error: sequence of " + std::to_string(seq.tokens.size()) +
                      " steps exceeds max_seq_len " + std::to_string(p.max_seq_len));
    }
    std::vector<std::size_t> ids;
    for (const auto& t : seq.tokens) {
      const auto it = kc_index.find(t.kc_id);
      if (it == kc_index.end()) throw LookupError("kc '" + t.kc_id + "' is not in the model vocabulary");
      ids.push_back(it->second);
    }
    return ids;
  }

  void encode(const std::vector<std::size_t>& ids, Matrix& x_out, Dropout& d_in, std::vector<EncoderCache>& caches,
              Rng* rng) const {
    const std::size_t n = ids.size(), d = static_cast<std::size_t>(p.model_dim);
    Matrix x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = x.row(i);
      kernels::axpy(1.0, kc_embed.value.row(ids[i]), r);
      kernels::axpy(1.0, positions.row(i), r);
    }
    sample_mask(d_in, x.size(), p.dropout, rng);
    d_in.apply(x);
    caches.resize(enc.size());
    for (std::size_t l = 0; l < enc.size(); ++l) {
      const EncoderLayer& L = enc[l];
      EncoderCache& c = caches[l];
      Matrix a;
      L.att.forward(x, x, false, a, c.att);
      sample_mask(c.d1, a.size(), p.dropout, rng);
      c.d1.apply(a);
      add_into(a, x);
      L.ln1.forward(a, c.h, c.ln1);
      Matrix f;
      ffn_forward(L.f1, L.f2, c.h, f, c.ffn);
      sample_mask(c.d2, f.size(), p.dropout, rng);
      c.d2.apply(f);
      add_into(f, c.h);
      L.ln2.forward(f, x, c.ln2);
    }
    x_out = std::move(x);
  }

  void decode(const std::vector<std::size_t>& ids, const std::vector<std::size_t>& tokens, const Matrix& memory,
              Matrix& y_out, Dropout& d_in, std::vector<DecoderCache>& caches, Rng* rng) const {
    const std::size_t n = tokens.size(), d = static_cast<std::size_t>(p.model_dim);
    Matrix y(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      auto r = y.row(i);
      kernels::axpy(1.0, cfa_embed.value.row(tokens[i]), r);
      kernels::axpy(1.0, step_embed.value.row(ids[i]), r);
      kernels::axpy(1.0, positions.row(i), r);
    }
    sample_mask(d_in, y.size(), p.dropout, rng);
    d_in.apply(y);
    caches.resize(dec.size());
    for (std::size_t l = 0; l < dec.size(); ++l) {
      const DecoderLayer& L = dec[l];
      DecoderCache& c = caches[l];
      Matrix s;
      L.self.forward(y, y, true, s, c.self);
      sample_mask(c.d1, s.size(), p.dropout, rng);
      c.d1.apply(s);
      add_into(s, y);
      L.ln1.forward(s, c.h1, c.ln1);
      Matrix a;
      L.cross.forward(c.h1, memory, false, a, c.cross);
      sample_mask(c.d2, a.size(), p.dropout, rng);
      c.d2.apply(a);
      add_into(a, c.h1);
      L.ln2.forward(a, c.h2, c.ln2);
      Matrix f;
      ffn_forward(L.f1, L.f2, c.h2, f, c.ffn);
      sample_mask(c.d3, f.size(), p.dropout, rng);
      c.d3.apply(f);
      add_into(f, c.h2);
      L.ln3.forward(f, y, c.ln3);
    }
    y_out = std::move(y);
  }
};

AttentionModel::AttentionModel(const AttentionModelParams& params, std::vector<std::string> kcs)
    : impl_(std::make_unique<Impl>(params, std::move(kcs))) {}
AttentionModel::~AttentionModel() = default;
AttentionModel::AttentionModel(AttentionModel&&) noexcept = default;
AttentionModel& AttentionModel::operator=(AttentionModel&&) noexcept = default;

const AttentionModelParams& AttentionModel::params() const { return impl_->p; }
const std::vector<std::string>& AttentionModel::kcs() const { return impl_->kcs; }
std::vector<Param*> AttentionModel::parameters() { return impl_->params(); }

void AttentionModel::initialize() {
  Impl& m = *impl_;
  Rng rng(derive_seed(m.p.seed, "mastery.init"));
  const double emb_scale = 1.0 / std::sqrt(static_cast<double>(m.p.model_dim));
  init_uniform(m.kc_embed.value, rng, emb_scale);
  init_uniform(m.step_embed.value, rng, emb_scale);
  init_uniform(m.cfa_embed.value, rng, emb_scale);
  for (auto& l : m.enc) {
    l.att.init(rng);
    l.f1.init(rng);
    l.f2.init(rng);
  }
  for (auto& l : m.dec) {
    l.self.init(rng);
    l.cross.init(rng);
    l.f1.init(rng);
    l.f2.init(rng);
  }
  m.out.init(rng);
}

double AttentionModel::loss(const OpportunitySequence& seq, double grad_scale, Rng* dropout_rng) {
  Impl& m = *impl_;
  if (seq.targets.size() != seq.tokens.size()) throw DataError("sequence targets and tokens differ in length");
  const auto ids = m.kc_ids(seq);
  const std::size_t n = ids.size(), d = static_cast<std::size_t>(m.p.model_dim);
  std::vector<std::size_t> tokens(n, kStart);
  for (std::size_t i = 1; i < n; ++i) tokens[i] = seq.targets[i - 1] ? kRight : kWrong;

  Dropout enc_in, dec_in;
  std::vector<EncoderCache> ec;
  std::vector<DecoderCache> dc;
  Matrix memory, hidden, logits;
  m.encode(ids, memory, enc_in, ec, dropout_rng);
  m.decode(ids, tokens, memory, hidden, dec_in, dc, dropout_rng);
  m.out.forward(hidden, logits);

  double total = 0.0;
  Matrix dlogits(n, 1);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = logits(i, 0);
    const double t = seq.targets[i];
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    dlogits(i, 0) = (sigmoid(z) - t) * grad_scale;
  }
  if (grad_scale == 0.0) return total;

  Matrix dy;
  m.out.backward(hidden, dlogits, &dy);
  Matrix dmemory(n, d);
  for (std::size_t l = m.dec.size(); l-- > 0;) {
    DecoderLayer& L = m.dec[l];
    const DecoderCache& c = dc[l];
    Matrix dr3;
    L.ln3.backward(dy, c.ln3, dr3);
    Matrix dh2 = dr3;
    c.d3.apply(dr3);
    ffn_backward(L.f1, L.f2, c.h2, dr3, c.ffn, dh2);
    Matrix dr2;
    L.ln2.backward(dh2, c.ln2, dr2);
    Matrix dh1 = dr2;
    c.d2.apply(dr2);
    L.cross.backward(dr2, c.cross, dh1, dmemory);
    Matrix dr1;
    L.ln1.backward(dh1, c.ln1, dr1);
    dy = dr1;
    c.d1.apply(dr1);
    L.self.backward(dr1, c.self, dy, dy);
  }
  dec_in.apply(dy);
  for (std::size_t i = 0; i < n; ++i) {
    kernels::axpy(1.0, dy.row(i), m.cfa_embed.grad.row(tokens[i]));
    kernels::axpy(1.0, dy.row(i), m.step_embed.grad.row(ids[i]));
  }

  Matrix dx = std::move(dmemory);
  for (std::size_t l = m.enc.size(); l-- > 0;) {
    EncoderLayer& L = m.enc[l];
    const EncoderCache& c = ec[l];
    Matrix dr2;
    L.ln2.backward(dx, c.ln2, dr2);
    Matrix dh = dr2;
    c.d2.apply(dr2);
    ffn_backward(L.f1, L.f2, c.h, dr2, c.ffn, dh);
    Matrix dr1;
    L.ln1.backward(dh, c.ln1, dr1);
    dx = dr1;
    c.d1.apply(dr1);
    L.att.backward(dr1, c.att, dx, dx);
  }
  enc_in.apply(dx);
  for (std::size_t i = 0; i < n; ++i) kernels::axpy(1.0, dx.row(i), m.kc_embed.grad.row(ids[i]));
  return total;
}

CfaPrediction AttentionModel::predict(const OpportunitySequence& seq) const {
  const Impl& m = *impl_;
  const auto ids = m.kc_ids(seq);
  const std::size_t n = ids.size();
  Dropout enc_in, dec_in;
  std::vector<EncoderCache> ec;
  std::vector<DecoderCache> dc;
  Matrix memory, hidden, logits;
  m.encode(ids, memory, enc_in, ec, nullptr);

  CfaPrediction out;
  std::vector<std::size_t> tokens{kStart};
  for (std::size_t i = 0; i < n; ++i) {
    const std::vector<std::size_t> prefix(ids.begin(), ids.begin() + static_cast<long>(i + 1));
    m.decode(prefix, tokens, memory, hidden, dec_in, dc, nullptr);
    const double z = kernels::dot(hidden.row(i), m.out.w.value.flat()) + m.out.b.value(0, 0);
    const double prob = sigmoid(z);
    out.probabilities.push_back(prob);
    out.predictions.push_back(prob >= 0.5 ? 1 : 0);
    if (i + 1 < n) tokens.push_back(prob >= 0.5 ? kRight : kWrong);
  }
  // Causal masking makes every row of the final full pass equal to the
  // incremental step that produced it.
  for (const auto& c : dc) out.attention.push_back(c.cross.weights);
  return out;
}

namespace {

std::string vocabulary_hash(const std::vector<std::string>& kcs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& k : kcs) {
    for (char ch : k) {
      h ^= static_cast<unsigned char>(ch);
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

nlohmann::json AttentionModel::to_json() const {
  const AttentionModelParams& p = impl_->p;
  nlohmann::json j;
  j["format"] = "stratpred-cfa-model";
  j["version"] = 1;
  j["params"] = {{"model_dim", p.model_dim},   {"num_layers", p.num_layers}, {"num_heads", p.num_heads},
                 {"key_dim", p.key_dim},       {"ffn_dim", p.ffn_dim},       {"max_seq_len", p.max_seq_len},
                 {"dropout", p.dropout},       {"learning_rate", p.learning_rate},
                 {"epochs", p.epochs},         {"batch_size", p.batch_size}, {"seed", p.seed}};
  j["kcs"] = impl_->kcs;
  j["vocabulary_hash"] = vocabulary_hash(impl_->kcs);
  j["tensors"] = params_to_json(impl_->params());
  return j;
}

AttentionModel AttentionModel::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format") != "stratpred-cfa-model") throw DataError("not a cfa model checkpoint");
    const auto& q = j.at("params");
    AttentionModelParams p;
    p.model_dim = q.at("model_dim");
    p.num_layers = q.at("num_layers");
    p.num_heads = q.at("num_heads");
    p.key_dim = q.at("key_dim");
    p.ffn_dim = q.at("ffn_dim");
    p.max_seq_len = q.at("max_seq_len");
    p.dropout = q.at("dropout");
    p.learning_rate = q.at("learning_rate");
    p.epochs = q.at("epochs");
    p.batch_size = q.at("batch_size");
    p.seed = q.at("seed");
    auto kcs = j.at("kcs").get<std::vector<std::string>>();
    if (j.at("vocabulary_hash") != vocabulary_hash(kcs)) throw DataError("cfa checkpoint vocabulary hash mismatch");
    AttentionModel model(p, std::move(kcs));
    params_from_json(j.at("tensors"), model.parameters());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed cfa checkpoint: ") + e.what());
  }
}

double mean_loss(AttentionModel& model, const std::vector<OpportunitySequence>& sequences) {
  double total = 0.0;
  std::size_t tokens = 0;
  for (const auto& s : sequences) {
    total += model.loss(s);
    tokens += s.tokens.size();
  }
  return tokens ? total / static_cast<double>(tokens) : 0.0;
}

double cfa_accuracy(const AttentionModel& model, const std::vector<OpportunitySequence>& sequences) {
  std::vector<std::size_t> hits(sequences.size(), 0);
  parallel_for(sequences.size(), [&](std::size_t i) {
    const auto pred = model.predict(sequences[i]);
    for (std::size_t t = 0; t < pred.predictions.size(); ++t) hits[i] += pred.predictions[t] == sequences[i].targets[t];
  });
  std::size_t total = 0, correct = 0;
  for (std::size_t i = 0; i < sequences.size(); ++i) {
    total += sequences[i].tokens.size();
    correct += hits[i];
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

AttentionModel train_cfa_model(const std::vector<OpportunitySequence>& sequences,
                               const std::vector<std::string>& kcs, const AttentionModelParams& params,
                               CfaTrainingReport* report) {
  params.validate();
  if (sequences.empty()) throw DataError("cfa model needs at least one training sequence");
  AttentionModel model(params, kcs);
  model.initialize();
  auto ps = model.parameters();
  if (report) report->initial_loss = mean_loss(model, sequences);

  Rng order_rng(derive_seed(params.seed, "mastery.order"));
  Rng dropout_rng(derive_seed(params.seed, "mastery.dropout"));
  std::vector<std::size_t> order(sequences.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  AdamConfig adam;
  adam.learning_rate = params.learning_rate;
  adam.clip_norm = 5.0;
  long step = 0;
  const std::size_t batch = static_cast<std::size_t>(params.batch_size);
  for (int epoch = 0; epoch < params.epochs; ++epoch) {
    order_rng.shuffle(order);
    double epoch_total = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b0 = 0, b = 0; b0 < order.size(); b0 += batch, ++b) {
      const std::size_t b1 = std::min(order.size(), b0 + batch);
      std::size_t tokens = 0;
      for (std::size_t i = b0; i < b1; ++i) tokens += sequences[order[i]].tokens.size();
      zero_grads(ps);
      double batch_total = 0.0;
      for (std::size_t i = b0; i < b1; ++i) {
        batch_total += model.loss(sequences[order[i]], 1.0 / static_cast<double>(tokens), &dropout_rng);
      }
      if (!std::isfinite(batch_total)) throw TrainingError("cfa model", epoch, static_cast<int>(b));
      adam_step(ps, adam, ++step);
      epoch_total += batch_total;
      epoch_tokens += tokens;
    }
    if (report) report->epoch_loss.push_back(epoch_total / static_cast<double>(epoch_tokens));
  }
  if (report) report->final_loss = mean_loss(model, sequences);
  return model;
}

MasteryTable mastery_score(const AttentionModel& model, const std::vector<OpportunitySequence>& sequences) {
  struct Mass {
    double right = 0.0;
    double total = 0.0;
  };
  using Key = std::tuple<std::string, std::string, std::string>;
  std::vector<std::map<Key, Mass>> partial(sequences.size());
  parallel_for(sequences.size(), [&](std::size_t s) {
    const auto& seq = sequences[s];
    const auto pred = model.predict(seq);
    const auto& heads = pred.attention.back();
    const std::size_t n = seq.tokens.size();
    std::vector<double> received(n, 0.0);
    for (const Matrix& a : heads) {
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) received[j] += a(i, j);
      }
    }
    for (double& r : received) r /= static_cast<double>(heads.size());
    for (std::size_t j = 0; j < n; ++j) {
      Mass& m = partial[s][{seq.student_id, seq.tokens[j].problem_id, seq.tokens[j].kc_id}];
      m.total += received[j];
      if (pred.predictions[j] == 1) m.right += received[j];
    }
  });
  std::map<Key, Mass> mass;
  MasteryTable table;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    for (const auto& [key, m] : partial[s]) {
      mass[key].right += m.right;
      mass[key].total += m.total;
    }
    for (const auto& t : sequences[s].tokens) ++table.opportunities[{sequences[s].student_id, t.kc_id}];
  }
  for (const auto& [key, m] : mass) {
    table.alpha[key] = m.total > 0.0 ? std::clamp(m.right / m.total, 0.0, 1.0) : 0.0;
  }
  return table;
}

void MasteryTable::write_tsv(std::ostream& out) const {
  out << "student\tproblem\tkc\talpha\tn\n";
  for (const auto& [key, a] : alpha) {
    const auto& [s, p, k] = key;
    const auto it = opportunities.find({s, k});
    out << s << '\t' << p << '\t' << k << '\t' << text::format_double(a) << '\t'
        << (it == opportunities.end() ? 0 : it->second) << '\n';
  }
}

MasteryTable MasteryTable::read_tsv(std::istream& in) {
  MasteryTable t;
  std::string line;
  if (!std::getline(in, line) || text::trim(line) != "student\tproblem\tkc\talpha\tn") {
    throw DataError("mastery table: unexpected header");
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto c = text::split(line, "\t");
    if (c.size() != 5) throw DataError("mastery table line " + std::to_string(line_no) + ": expected 5 cells");
    try {
      const double a = text::parse_double(c[3], "alpha");
      const long long n = text::parse_int(c[4], "n");
      if (!(a >= 0.0 && a <= 1.0) || n < 1) throw DataError("out of range");
      t.alpha[{c[0], c[1], c[2]}] = a;
      t.opportunities[{c[0], c[2]}] = static_cast<int>(n);
    } catch (const Error& e) {
      throw DataError("mastery table line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return t;
}

}  // namespace stratpred
