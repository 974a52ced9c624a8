#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "stratpred/cluster.hpp"
#include "stratpred/error.hpp"
#include "stratpred/kernels.hpp"
#include "stratpred/rng.hpp"

using namespace stratpred;

namespace {

ClusterPoints make_points(const std::vector<std::vector<double>>& students,
                          const std::vector<std::vector<double>>& problems) {
  ClusterPoints pts;
  const std::size_t d = students.empty() ? problems[0].size() : students[0].size();
  for (int view = 0; view < 2; ++view) {
    const auto& src = view == 0 ? students : problems;
    pts.x[view].resize(src.size(), d);
    for (std::size_t i = 0; i < src.size(); ++i) {
      pts.ids[view].push_back((view == 0 ? "s" : "p") + std::to_string(i));
      std::copy(src[i].begin(), src[i].end(), pts.x[view].row(i).begin());
    }
  }
  return pts;
}

ClusterPoints random_points(Rng& rng, std::size_t ns, std::size_t np, std::size_t d, double scale) {
  std::vector<std::vector<double>> s(ns, std::vector<double>(d)), p(np, std::vector<double>(d));
  for (auto* set : {&s, &p}) {
    for (auto& v : *set) {
      for (double& x : v) x = scale * rng.normal();
    }
  }
  return make_points(s, p);
}

// Arithmetic-mean check of every global mean.
void check_means(const ClusterState& st, const ClusterPoints& pts) {
  Matrix sum(st.g(), pts.dim());
  std::vector<int> count(st.g());
  for (int view = 0; view < 2; ++view) {
    for (std::size_t i = 0; i < pts.x[view].rows(); ++i) {
      const int g = st.global_of(view, i);
      kernels::axpy(1.0, pts.x[view].row(i), sum.row(g));
      ++count[g];
    }
  }
  for (std::size_t g = 0; g < st.g(); ++g) {
    CHECK(count[g] > 0);
    for (std::size_t c = 0; c < pts.dim(); ++c) CHECK(std::fabs(sum(g, c) / count[g] - st.mu(g, c)) < 1e-9);
  }
}

double choose2(double n) { return n * (n - 1) / 2; }

double ari_oracle(const std::vector<int>& a, const std::vector<int>& b) {
  std::map<std::pair<int, int>, double> table;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    table[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  double index = 0, sa = 0, sb = 0;
  for (auto& [k, n] : table) index += choose2(n);
  for (auto& [k, n] : ra) sa += choose2(n);
  for (auto& [k, n] : rb) sb += choose2(n);
  const double expected = sa * sb / choose2(static_cast<double>(a.size()));
  const double max = 0.5 * (sa + sb);
  if (max == expected) return 1.0;
  return (index - expected) / (max - expected);
}

}  // namespace

TEST_SUITE("cluster") {

TEST_CASE("objective at the origin") {
  auto pts = make_points({{0, 0}, {0, 0}}, {{0, 0}});
  ClusterState st;
  st.z = {std::vector<int>{0, 0}, std::vector<int>{0}};
  st.v = {std::vector<int>{0}, std::vector<int>{0}};
  st.mu = Matrix(1, 2);
  st.lambda_local = 7;
  st.lambda_global = 9;
  CHECK(distortion(st, pts) == 0.0);
  CHECK(objective(st, pts, 0.4) == doctest::Approx(7 * 2 + 0.4));
  CHECK(penalized_distortion(st, pts) == doctest::Approx(7 * 2 + 9));
}

TEST_CASE("objective on a hand-built fixture") {
  // Students (0,0), (2,0); problems (10,10), (10,12). Global 0 holds the
  // students, global 1 the problems; means (1,0) and (10,11).
  auto pts = make_points({{0, 0}, {2, 0}}, {{10, 10}, {10, 12}});
  ClusterState st;
  st.z = {std::vector<int>{0, 0}, std::vector<int>{0, 0}};
  st.v = {std::vector<int>{0}, std::vector<int>{1}};
  st.mu = Matrix(2, 2);
  st.mu(0, 0) = 1;
  st.mu(1, 0) = 10;
  st.mu(1, 1) = 11;
  st.lambda_local = 2.5;
  st.lambda_global = 4;
  CHECK_NOTHROW(st.check(pts));
  CHECK(std::fabs(distortion(st, pts) - 4.0) < 1e-9);
  CHECK(std::fabs(objective(st, pts, 0.75) - (4.0 + 2.5 * 2 + 0.75 * 2)) < 1e-9);

  // Splitting the student local into two locals of global 0 adds one lambda_local.
  auto split = st;
  split.z[0] = {0, 1};
  split.v[0] = {0, 0};
  CHECK(std::fabs(objective(split, pts, 0.75) - objective(st, pts, 0.75) - 2.5) < 1e-12);

  auto broken = st;
  broken.v[1] = {5};
  CHECK_THROWS_AS(broken.check(pts), DataError);
}

TEST_CASE("identical points form one global") {
  std::vector<double> x{0.3, -1.2, 2.0};
  auto pts = make_points({x, x, x, x}, {x, x, x});
  for (auto init : {HdpInit::Sequential, HdpInit::GlobalMean}) {
    HdpOptions opt;
    opt.init = init;
    auto r = hdp_fit(pts, opt);
    CHECK(r.converged);
    CHECK(r.state.g() == 1);
    CHECK(r.state.k1() == 1);
    CHECK(r.state.k2() == 1);
    for (std::size_t c = 0; c < 3; ++c) CHECK(r.state.mu(0, c) == doctest::Approx(x[c]));
  }
}

TEST_CASE("two separated blobs form two globals") {
  Rng rng(6);
  std::vector<std::vector<double>> s, p;
  for (int i = 0; i < 20; ++i) {
    const double off = i % 2 ? 50.0 : 0.0;
    s.push_back({off + 0.1 * rng.normal(), 0.1 * rng.normal()});
    p.push_back({off + 0.1 * rng.normal(), 0.1 * rng.normal()});
  }
  auto pts = make_points(s, p);
  auto r = hdp_fit(pts, {});
  REQUIRE(r.state.g() == 2);
  CHECK(r.state.k1() == 2);
  CHECK(r.state.k2() == 2);
  CHECK(r.state.v[0][0] != r.state.v[0][1]);
  CHECK(r.state.v[1][0] != r.state.v[1][1]);
  for (int view = 0; view < 2; ++view) {
    for (std::size_t i = 0; i < 20; ++i) CHECK(r.state.global_of(view, i) == r.state.global_of(0, i % 2));
  }
  check_means(r.state, pts);
}

TEST_CASE("with prohibitive penalties the sweep is Lloyd's algorithm") {
  const std::vector<std::vector<double>> s{{0, 0}, {1, 0.5}, {4, 4}, {5, 5}, {2.4, 2.6}};
  const std::vector<std::vector<double>> p{{0.5, 0}, {4.5, 5}, {6, 4}, {2.6, 2.4}, {-1, 1}};
  auto pts = make_points(s, p);
  Matrix init(2, 2);
  init(0, 0) = 1;
  init(0, 1) = 0;
  init(1, 0) = 3;
  init(1, 1) = 2;

  // Reference Lloyd iteration over all ten points.
  std::vector<std::vector<double>> all = s;
  all.insert(all.end(), p.begin(), p.end());
  Matrix mu = init;
  std::vector<int> label(all.size(), -1);
  for (int it = 0; it < 100; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < all.size(); ++i) {
      const int best = kernels::squared_distance(all[i], mu.row(0)) <= kernels::squared_distance(all[i], mu.row(1)) ? 0 : 1;
      changed = changed || best != label[i];
      label[i] = best;
    }
    Matrix sum(2, 2);
    std::vector<int> n(2);
    for (std::size_t i = 0; i < all.size(); ++i) {
      kernels::axpy(1.0, all[i], sum.row(label[i]));
      ++n[label[i]];
    }
    for (int g = 0; g < 2; ++g) {
      for (int c = 0; c < 2; ++c) mu(g, c) = sum(g, c) / n[g];
    }
    if (!changed) break;
  }

  ClusterState start;
  start.mu = init;
  for (int view = 0; view < 2; ++view) {
    start.v[view] = {0, 1};
    for (std::size_t i = 0; i < pts.x[view].rows(); ++i) {
      const auto x = pts.x[view].row(i);
      start.z[view].push_back(kernels::squared_distance(x, init.row(0)) <= kernels::squared_distance(x, init.row(1)) ? 0 : 1);
    }
  }
  HdpOptions opt;
  opt.lambda_local = 1e9;
  opt.lambda_global = 1e9;
  auto r = hdp_fit(pts, opt, start);
  REQUIRE(r.state.g() == 2);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int view = i < s.size() ? 0 : 1;
    const std::size_t idx = view == 0 ? i : i - s.size();
    CHECK(r.state.global_of(view, idx) == label[i]);
  }
  for (int g = 0; g < 2; ++g) {
    for (int c = 0; c < 2; ++c) CHECK(r.state.mu(g, c) == doctest::Approx(mu(g, c)));
  }
}

TEST_CASE("penalised distortion never increases across sweeps") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    auto pts = random_points(rng, 5 + rng.index(40), 5 + rng.index(40), 1 + rng.index(8), 2.0);
    HdpOptions opt;
    opt.lambda_local = rng.uniform(0.5, 10);
    opt.lambda_global = rng.uniform(0.5, 10);
    opt.init = trial % 2 ? HdpInit::GlobalMean : HdpInit::Sequential;
    auto r = hdp_fit(pts, opt);
    for (std::size_t i = 1; i < r.objective_trace.size(); ++i) {
      CHECK(r.objective_trace[i] <= r.objective_trace[i - 1] + 1e-9);
    }
    CHECK_NOTHROW(r.state.check(pts));
    check_means(r.state, pts);
  }
}

TEST_CASE("penalty extremes and determinism") {
  Rng rng(2);
  auto pts = random_points(rng, 12, 9, 3, 1.0);
  HdpOptions huge;
  huge.lambda_local = 1e12;
  huge.lambda_global = 1e12;
  auto one = hdp_fit(pts, huge);
  CHECK(one.state.g() == 1);

  HdpOptions tiny;
  tiny.lambda_local = 1e-9;
  tiny.lambda_global = 1e-9;
  auto many = hdp_fit(pts, tiny);
  CHECK(many.state.k1() == 12);
  CHECK(many.state.k2() == 9);

  auto a = hdp_fit(pts, {});
  auto b = hdp_fit(pts, {});
  CHECK(a.state.z == b.state.z);
  CHECK(a.state.v == b.state.v);
  CHECK(std::equal(a.state.mu.flat().begin(), a.state.mu.flat().end(), b.state.mu.flat().begin()));

  auto bad = pts;
  bad.x[0](0, 0) = NAN;
  CHECK_THROWS_AS(hdp_fit(bad, {}), DataError);
}

TEST_CASE("point normalisation") {
  EmbeddingTable t(2);
  t.set(NodeType::Student, "a", {3, 4});
  t.set(NodeType::Student, "b", {0, 0});
  t.set(NodeType::Problem, "p", {0, -2});
  t.set(NodeType::Kc, "k", {1, 1});
  auto pts = ClusterPoints::from_embeddings(t, {true, 3.0});
  CHECK(pts.ids[0] == std::vector<std::string>{"a", "b"});
  CHECK(pts.total() == 3);
  CHECK(pts.x[0](0, 0) == doctest::Approx(1.8));
  CHECK(pts.x[0](0, 1) == doctest::Approx(2.4));
  CHECK(pts.x[0](1, 0) == 0.0);
  CHECK(pts.x[1](0, 1) == doctest::Approx(-3.0));
  auto raw = ClusterPoints::from_embeddings(t, {false, 3.0});
  CHECK(raw.x[0](0, 1) == 4.0);
}

TEST_CASE("instances of a global cluster") {
  auto pts = make_points({{0, 0}, {0, 1}, {5, 5}}, {{0, 0}, {5, 5}, {9, 9}});
  ClusterState st;
  st.z = {std::vector<int>{0, 0, 1}, std::vector<int>{0, 1, 2}};
  st.v = {std::vector<int>{0, 1}, std::vector<int>{0, 1, 2}};
  st.mu = Matrix(3, 2);
  const std::vector<Instance> corpus{{"s0", "p0"}, {"s0", "p1"}, {"s1", "p0"}, {"s2", "p1"}, {"s2", "p2"}, {"s1", "p2"}};
  CHECK(instances_of(st, 0, pts, corpus) == std::vector<Instance>{{"s0", "p0"}, {"s1", "p0"}});
  CHECK(instances_of(st, 1, pts, corpus) == std::vector<Instance>{{"s2", "p1"}});
  CHECK(instances_of(st, 2, pts, corpus).empty());  // problem locals only

  ClusterState single;
  single.z = {std::vector<int>{0, 0, 0}, std::vector<int>{0, 0, 0}};
  single.v = {std::vector<int>{0}, std::vector<int>{0}};
  single.mu = Matrix(1, 2);
  auto all = instances_of(single, 0, pts, corpus);
  std::sort(all.begin(), all.end());
  auto sorted = corpus;
  std::sort(sorted.begin(), sorted.end());
  CHECK(all == sorted);

  StrategyMap strategies;
  strategies[{"s0", "p0"}] = {"s0", "p0", {"a"}};
  strategies[{"s2", "p1"}] = {"s2", "p1", {"b", "c"}};
  auto sets = cluster_strategies(st, pts, strategies);
  REQUIRE(sets.size() == 3);
  CHECK(sets[0] == std::vector<KcSequence>{{"a"}});
  CHECK(sets[1] == std::vector<KcSequence>{{"b", "c"}});
  CHECK(sets[2].empty());
}

TEST_CASE("adjusted Rand index") {
  CHECK(adjusted_rand_index({0, 0, 1, 1}, {5, 5, 2, 2}) == doctest::Approx(1.0));
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> a(50), b(50);
    for (auto& x : a) x = static_cast<int>(rng.index(4));
    for (std::size_t i = 0; i < 50; ++i) b[i] = rng.bernoulli(0.6) ? a[i] : static_cast<int>(rng.index(5));
    CHECK(adjusted_rand_index(a, b) == doctest::Approx(ari_oracle(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("refinement") {
  Rng rng(4);
  std::vector<std::vector<double>> s, p;
  for (int i = 0; i < 12; ++i) {
    const double off = 3.0 * (i % 3);
    s.push_back({off + 0.2 * rng.normal(), 0.2 * rng.normal()});
    p.push_back({off + 0.2 * rng.normal(), 0.2 * rng.normal()});
  }
  auto pts = make_points(s, p);
  EmbeddingTable emb(4);
  for (int k = 0; k < 3; ++k) {
    std::vector<double> v(4, 0.0);
    v[k] = 3.0;
    emb.set(NodeType::Kc, "k" + std::to_string(k), v);
  }
  StrategyMap strategies;
  for (int i = 0; i < 12; ++i) {
    for (int j = 0; j < 12; j += 2) {
      const Instance inst{"s" + std::to_string(i), "p" + std::to_string(j)};
      strategies[inst] = {inst.student_id, inst.problem_id,
                          {"k" + std::to_string(i % 3), "k" + std::to_string(j % 3), "k" + std::to_string((i + j) % 3)}};
    }
  }

  RefinementConfig one;
  one.max_iters = 1;
  auto r1 = refine(pts, strategies, emb, one);
  HdpOptions opt{one.lambda_local, one.lambda_global_init, one.max_sweeps};
  auto direct = hdp_fit(pts, opt);
  CHECK(r1.trace.size() == 1);
  CHECK(r1.state.z == direct.state.z);
  CHECK(r1.state.v == direct.state.v);

  RefinementConfig cfg;
  cfg.lambda_local = 1.0;
  cfg.lambda_global_init = 4.0;
  cfg.epsilon = 0.75;
  cfg.tolerance = 0.0;
  cfg.max_iters = 6;
  auto r = refine(pts, strategies, emb, cfg);
  CHECK(r.trace.size() >= 2);
  CHECK(r.trace.size() <= 5);  // 4.0 - 4 * 0.75 is the last positive value
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    CHECK(r.trace[i].iter == static_cast<int>(i) + 1);
    CHECK(r.trace[i].lambda_global == doctest::Approx(4.0 - 0.75 * static_cast<double>(i)));
  }
  double best = 0.0;
  for (auto& t : r.trace) best = std::max(best, t.coherence);
  CHECK(r.best_coherence.overall == doctest::Approx(best));
  CHECK(r.best_coherence.overall >= r.trace.front().coherence);

  const auto j = nlohmann::json::parse(refinement_trace_json(r.trace));
  REQUIRE(j.size() == r.trace.size());
  CHECK(j[0].contains("lambda_g"));
  CHECK(j[0].contains("objective"));

  std::stringstream buf;
  write_clusters_tsv(buf, r.state, pts);
  auto back = read_clusters_tsv(buf, pts);
  CHECK(back.z == r.state.z);
  CHECK(back.v == r.state.v);
  for (std::size_t i = 0; i < back.mu.size(); ++i) CHECK(back.mu.flat()[i] == doctest::Approx(r.state.mu.flat()[i]));
}

}
