#include "stratpred/embed.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "stratpred/error.hpp"
#include "stratpred/kernels.hpp"
#include "stratpred/nn.hpp"
#include "stratpred/parallel.hpp"
#include "stratpred/rng.hpp"

namespace stratpred {

namespace {

void normalize(std::vector<std::pair<std::size_t, double>>& v) {
  double total = 0.0;
  for (const auto& [k, w] : v) total += w;
  for (auto& [k, w] : v) w /= total;
}

}  // namespace

WalkDistribution walk_distributions(const MasteryTable& mastery, const RelationalGraph& graph, double smoothing) {
  const Vocabulary& voc = graph.vocabulary;
  // Sum of alpha per (student, kc) and the alpha of every graph triple.
  std::map<std::pair<std::size_t, std::size_t>, double> alpha_sum;
  std::map<RelationalGraph::Triple, double> alpha_of;
  for (const auto& [t, count] : graph.triples) {
    const auto it = mastery.alpha.find({voc.students.id(t.student), voc.problems.id(t.problem), voc.kcs.id(t.kc)});
    const double a = it == mastery.alpha.end() ? 0.0 : it->second;
    alpha_of[t] = a;
    alpha_sum[{t.student, t.kc}] += a;
  }

  WalkDistribution dist;
  for (const auto& [sk, multiplicity] : graph.student_kc) {
    const auto [s, k] = sk;
    const auto n_it = mastery.opportunities.find({voc.students.id(s), voc.kcs.id(k)});
    const double n = n_it == mastery.opportunities.end() ? static_cast<double>(multiplicity)
                                                         : static_cast<double>(n_it->second);
    dist.kc_given_student[s].emplace_back(k, alpha_sum[sk] / n + smoothing);
  }
  for (const auto& [t, a] : alpha_of) dist.problem_given[{t.student, t.kc}].emplace_back(t.problem, a + smoothing);
  for (auto& [s, v] : dist.kc_given_student) normalize(v);
  for (auto& [sk, v] : dist.problem_given) normalize(v);
  for (std::size_t s = 0; s < voc.students.size(); ++s) {
    if (dist.kc_given_student.count(s)) dist.students.push_back(s);
    else ++dist.excluded_students;
  }
  return dist;
}

std::vector<Walk> sample_walks(const RelationalGraph&, const WalkDistribution& dist, std::size_t count,
                               std::uint64_t seed) {
  if (dist.students.empty()) throw DataError("walk sampling: no student has a KC");
  // Cumulative tables once, then fixed-size chunks with their own streams so
  // the output does not depend on the worker count.
  auto cdf_of = [](const std::vector<std::pair<std::size_t, double>>& v) {
    std::vector<double> c;
    double run = 0.0;
    for (const auto& [k, w] : v) c.push_back(run += w);
    return c;
  };
  std::map<std::size_t, std::vector<double>> kc_cdf;
  for (const auto& [s, v] : dist.kc_given_student) kc_cdf[s] = cdf_of(v);
  std::map<std::pair<std::size_t, std::size_t>, std::vector<double>> problem_cdf;
  for (const auto& [sk, v] : dist.problem_given) problem_cdf[sk] = cdf_of(v);

  constexpr std::size_t kChunk = 4096;
  const std::size_t chunks = (count + kChunk - 1) / kChunk;
  std::vector<Walk> walks(count);
  parallel_for(chunks, [&](std::size_t c) {
    Rng rng(derive_seed(seed, "walks." + std::to_string(c)));
    const std::size_t end = std::min(count, (c + 1) * kChunk);
    for (std::size_t i = c * kChunk; i < end; ++i) {
      Walk& w = walks[i];
      w.student = dist.students[rng.index(dist.students.size())];
      const auto& kcs = dist.kc_given_student.at(w.student);
      w.kc = kcs[rng.categorical_cdf(kc_cdf.at(w.student))].first;
      const auto& problems = dist.problem_given.at({w.student, w.kc});
      w.problem = problems[rng.categorical_cdf(problem_cdf.at({w.student, w.kc}))].first;
    }
  });
  return walks;
}

void write_walks_tsv(std::ostream& out, const std::vector<Walk>& walks, const Vocabulary& voc) {
  out << "student\tkc\tproblem\n";
  for (const auto& w : walks) {
    out << voc.students.id(w.student) << '\t' << voc.kcs.id(w.kc) << '\t' << voc.problems.id(w.problem) << '\n';
  }
}

void SkipGramParams::validate() const {
  if (dim < 2) throw ConfigError("embed.dim must be >= 2");
  if (negatives < 1) throw ConfigError("embed.negatives must be >= 1");
  if (epochs < 1) throw ConfigError("embed.epochs must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("embed.learning_rate must be positive");
}

SkipGram::SkipGram(const Vocabulary& vocabulary, const SkipGramParams& params)
    : vocabulary_(vocabulary), params_(params) {
  params_.validate();
  const std::size_t n = vocabulary.students.size() + vocabulary.problems.size() + vocabulary.kcs.size();
  input_.resize(n, params.dim);
  output_.resize(n, params.dim);
  Rng rng(derive_seed(params.seed, "embed.init"));
  init_uniform(input_, rng, 0.5 / static_cast<double>(params.dim));
}

std::size_t SkipGram::node_of(NodeType type, std::size_t index) const {
  switch (type) {
    case NodeType::Student: return index;
    case NodeType::Problem: return vocabulary_.students.size() + index;
    case NodeType::Kc: return vocabulary_.students.size() + vocabulary_.problems.size() + index;
  }
  return 0;
}

std::array<std::size_t, 3> SkipGram::nodes(const Walk& w) const {
  return {node_of(NodeType::Student, w.student), node_of(NodeType::Kc, w.kc), node_of(NodeType::Problem, w.problem)};
}

std::vector<double> SkipGram::conditional(std::size_t center) const {
  Matrix scores;
  Matrix u(1, input_.cols());
  std::copy(input_.row(center).begin(), input_.row(center).end(), u.row(0).begin());
  matmul_bt(u, output_, scores);
  softmax_rows(scores);
  const auto r = scores.row(0);
  return {r.begin(), r.end()};
}

namespace {

// Loss of both contexts given `center`; fills the score gradient ds (one per
// node) and the center-vector gradient g.
double center_gradient(const Matrix& input, const Matrix& output, std::size_t center,
                       const std::array<std::size_t, 2>& context, std::vector<double>& ds, std::vector<double>& g) {
  const std::size_t n = output.rows();
  const auto u = input.row(center);
  ds.resize(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t v = 0; v < n; ++v) {
    ds[v] = kernels::dot(output.row(v), u);
    mx = std::max(mx, ds[v]);
  }
  double total = 0.0;
  for (double& s : ds) total += (s = std::exp(s - mx));
  const double log_total = std::log(total) + mx;
  double loss = 0.0;
  for (std::size_t c : context) loss += log_total - (std::log(ds[c]) + mx);
  for (double& s : ds) s = 2.0 * s / total;
  for (std::size_t c : context) ds[c] -= 1.0;
  g.assign(u.size(), 0.0);
  for (std::size_t v = 0; v < n; ++v) kernels::axpy(ds[v], output.row(v), g);
  return loss;
}

}  // namespace

double SkipGram::walk_loss(const Walk& walk, Matrix* d_input, Matrix* d_output) const {
  const auto t = nodes(walk);
  std::vector<double> ds, g;
  double loss = 0.0;
  for (int c = 0; c < 3; ++c) {
    const std::array<std::size_t, 2> ctx{t[(c + 1) % 3], t[(c + 2) % 3]};
    loss += center_gradient(input_, output_, t[c], ctx, ds, g);
    if (d_input) kernels::axpy(1.0, g, d_input->row(t[c]));
    if (d_output) {
      for (std::size_t v = 0; v < output_.rows(); ++v) kernels::axpy(ds[v], input_.row(t[c]), d_output->row(v));
    }
  }
  return loss;
}

double SkipGram::exact_center(std::size_t center, const std::array<std::size_t, 2>& context, double lr) {
  std::vector<double> ds, g;
  const double loss = center_gradient(input_, output_, center, context, ds, g);
  const auto u = input_.row(center);
  for (std::size_t v = 0; v < output_.rows(); ++v) kernels::axpy(-lr * ds[v], u, output_.row(v));
  kernels::axpy(-lr, g, u);
  return loss;
}

double SkipGram::negative_pair(std::size_t center, std::size_t context, double lr, Rng& rng) {
  auto u = input_.row(center);
  std::vector<double> g(u.size(), 0.0);
  double loss = 0.0;
  for (int i = 0; i <= params_.negatives; ++i) {
    std::size_t target = context;
    double label = 1.0;
    if (i > 0) {
      target = rng.categorical_cdf(noise_cdf_);
      if (target == context) continue;
      label = 0.0;
    }
    auto o = output_.row(target);
    const double z = kernels::dot(u, o);
    const double p = sigmoid(z);
    loss += label > 0.0 ? -std::log(std::max(p, 1e-300)) : -std::log(std::max(1.0 - p, 1e-300));
    const double coeff = p - label;
    kernels::axpy(coeff, o, g);
    kernels::axpy(-lr * coeff, u, o);
  }
  kernels::axpy(-lr, g, u);
  return loss;
}

void SkipGram::prepare(const std::vector<Walk>& walks) {
  total_ = static_cast<long long>(walks.size()) * params_.epochs;
  processed_ = 0;
  std::vector<double> freq(node_count(), 0.0);
  for (const auto& w : walks) {
    for (std::size_t v : nodes(w)) freq[v] += 1.0;
  }
  noise_cdf_.assign(freq.size(), 0.0);
  double run = 0.0;
  for (std::size_t v = 0; v < freq.size(); ++v) noise_cdf_[v] = run += std::pow(freq[v], 0.75);
}

double SkipGram::train_epoch(const std::vector<Walk>& walks, int epoch, Rng& rng) {
  if (total_ == 0) prepare(walks);
  std::vector<std::size_t> order(walks.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  double total = 0.0;
  constexpr std::size_t kBatch = 1024;
  double batch_loss = 0.0;
  for (std::size_t i = 0; i < order.size(); ++i) {
    const double progress = static_cast<double>(processed_++) / static_cast<double>(std::max(total_, 1LL));
    const double lr = params_.learning_rate * std::max(1e-4, 1.0 - progress);
    const auto t = nodes(walks[order[i]]);
    double loss = 0.0;
    for (int c = 0; c < 3; ++c) {
      const std::size_t a = t[(c + 1) % 3], b = t[(c + 2) % 3];
      if (params_.exact_softmax) {
        loss += exact_center(t[c], {a, b}, lr);
      } else {
        loss += negative_pair(t[c], a, lr, rng);
        loss += negative_pair(t[c], b, lr, rng);
      }
    }
    batch_loss += loss;
    if ((i + 1) % kBatch == 0 || i + 1 == order.size()) {
      if (!std::isfinite(batch_loss)) throw TrainingError("skip-gram", epoch, static_cast<int>(i / kBatch));
      total += batch_loss;
      batch_loss = 0.0;
    }
  }
  return total / static_cast<double>(std::max<std::size_t>(walks.size(), 1));
}

EmbeddingTable SkipGram::table() const {
  EmbeddingTable t(params_.dim);
  auto put = [&](NodeType type, const IdMap& ids) {
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t v = node_of(type, i);
      const auto r = input_.row(v);
      std::vector<double> vec(r.begin(), r.end());
      if (params_.side == EmbeddingSide::Sum) kernels::axpy(1.0, output_.row(v), vec);
      t.set(type, ids.id(i), std::move(vec));
    }
  };
  put(NodeType::Student, vocabulary_.students);
  put(NodeType::Problem, vocabulary_.problems);
  put(NodeType::Kc, vocabulary_.kcs);
  return t;
}

EmbeddingTable train_skipgram(const std::vector<Walk>& walks, const Vocabulary& vocabulary,
                              const SkipGramParams& params, SkipGramReport* report) {
  if (walks.empty()) throw DataError("skip-gram needs at least one walk");
  SkipGram model(vocabulary, params);
  model.prepare(walks);
  Rng rng(derive_seed(params.seed, "embed.train"));
  for (int e = 0; e < params.epochs; ++e) {
    const double loss = model.train_epoch(walks, e, rng);
    if (report) report->epoch_loss.push_back(loss);
  }
  return model.table();
}

}  // namespace stratpred
