#include "stratpred/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <unordered_map>

#include "json.hpp"

#include "stratpred/error.hpp"
#include "stratpred/kernels.hpp"
#include "stratpred/text.hpp"

namespace stratpred {

ClusterPoints ClusterPoints::from_embeddings(const EmbeddingTable& table, const PointOptions& options) {
  if (options.normalize && !(options.radius > 0.0)) throw ConfigError("cluster.radius must be positive");
  ClusterPoints points;
  const NodeType types[2] = {NodeType::Student, NodeType::Problem};
  for (int view = 0; view < 2; ++view) {
    const auto& nodes = table.nodes(types[view]);
    points.x[view].resize(nodes.size(), table.dim());
    std::size_t i = 0;
    for (const auto& [id, vec] : nodes) {
      points.ids[view].push_back(id);
      auto row = points.x[view].row(i++);
      std::copy(vec.begin(), vec.end(), row.begin());
      const double norm = std::sqrt(kernels::dot(row, row));
      if (options.normalize && norm > 0.0) kernels::scale(options.radius / norm, row);
    }
  }
  return points;
}

void ClusterState::check(const ClusterPoints& points) const {
  std::vector<std::size_t> global_members(g(), 0);
  for (int view = 0; view < 2; ++view) {
    if (z[view].size() != points.x[view].rows()) throw DataError("cluster state: point count mismatch");
    std::vector<std::size_t> local_members(v[view].size(), 0);
    for (int c : z[view]) {
      if (c < 0 || static_cast<std::size_t>(c) >= v[view].size()) {
        throw DataError("cluster state: point assigned to missing local cluster");
      }
      ++local_members[c];
    }
    for (std::size_t c = 0; c < v[view].size(); ++c) {
      if (local_members[c] == 0) throw DataError("cluster state: empty local cluster");
      if (v[view][c] < 0 || static_cast<std::size_t>(v[view][c]) >= g()) {
        throw DataError("cluster state: local cluster without global association");
      }
      global_members[v[view][c]] += local_members[c];
    }
  }
  for (std::size_t p = 0; p < g(); ++p) {
    if (global_members[p] == 0) throw DataError("cluster state: empty global cluster");
  }
}

double distortion(const ClusterState& state, const ClusterPoints& points) {
  double total = 0.0;
  for (int view = 0; view < 2; ++view) {
    for (std::size_t i = 0; i < points.x[view].rows(); ++i) {
      total += kernels::squared_distance(points.x[view].row(i), state.mu.row(state.global_of(view, i)));
    }
  }
  return total;
}

double objective(const ClusterState& state, const ClusterPoints& points, double symmetry_penalty) {
  return distortion(state, points) + state.lambda_local * static_cast<double>(state.k()) +
         symmetry_penalty * static_cast<double>(state.g());
}

double penalized_distortion(const ClusterState& state, const ClusterPoints& points) {
  return objective(state, points, state.lambda_global);
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Mutable sweep state. Clusters are only appended or marked empty while a
// sweep runs; compact() renumbers at the end of each sweep.
struct Work {
  std::size_t dim = 0;
  std::vector<std::vector<double>> mu;
  std::vector<std::size_t> gcount;
  std::array<std::vector<int>, 2> z;
  std::array<std::vector<int>, 2> v;
  std::array<std::vector<std::size_t>, 2> count;

  bool alive(int p) const { return gcount[p] > 0; }

  int add_global(std::span<const double> mean) {
    mu.emplace_back(mean.begin(), mean.end());
    gcount.push_back(0);
    return static_cast<int>(mu.size()) - 1;
  }
  int add_local(int view, int p) {
    v[view].push_back(p);
    count[view].push_back(0);
    return static_cast<int>(v[view].size()) - 1;
  }
  void attach(int view, std::size_t i, int c) {
    z[view][i] = c;
    ++count[view][c];
    ++gcount[v[view][c]];
  }
  void detach(int view, std::size_t i) {
    const int c = z[view][i];
    --count[view][c];
    --gcount[v[view][c]];
  }
};

Work from_state(const ClusterState& s, const ClusterPoints& points) {
  Work w;
  w.dim = points.dim();
  for (std::size_t p = 0; p < s.g(); ++p) w.add_global(s.mu.row(p));
  for (int view = 0; view < 2; ++view) {
    w.z[view].assign(points.x[view].rows(), 0);
    for (int p : s.v[view]) w.add_local(view, p);
    for (std::size_t i = 0; i < points.x[view].rows(); ++i) w.attach(view, i, s.z[view][i]);
  }
  return w;
}

void update_means(Work& w, const ClusterPoints& points) {
  std::vector<std::vector<double>> sums(w.mu.size(), std::vector<double>(w.dim, 0.0));
  for (int view = 0; view < 2; ++view) {
    for (std::size_t i = 0; i < points.x[view].rows(); ++i) {
      kernels::axpy(1.0, points.x[view].row(i), sums[w.v[view][w.z[view][i]]]);
    }
  }
  for (std::size_t p = 0; p < w.mu.size(); ++p) {
    if (w.gcount[p] == 0) continue;
    kernels::scale(1.0 / static_cast<double>(w.gcount[p]), sums[p]);
    w.mu[p] = std::move(sums[p]);
  }
}

ClusterState compact(const Work& w, double lambda_local, double lambda_global) {
  ClusterState s;
  s.lambda_local = lambda_local;
  s.lambda_global = lambda_global;
  std::vector<int> gmap(w.mu.size(), -1);
  int g = 0;
  for (std::size_t p = 0; p < w.mu.size(); ++p) {
    if (w.gcount[p] > 0) gmap[p] = g++;
  }
  s.mu.resize(static_cast<std::size_t>(g), w.dim);
  for (std::size_t p = 0; p < w.mu.size(); ++p) {
    if (gmap[p] >= 0) std::copy(w.mu[p].begin(), w.mu[p].end(), s.mu.row(gmap[p]).begin());
  }
  for (int view = 0; view < 2; ++view) {
    std::vector<int> lmap(w.v[view].size(), -1);
    for (std::size_t c = 0; c < w.v[view].size(); ++c) {
      if (w.count[view][c] > 0) {
        lmap[c] = static_cast<int>(s.v[view].size());
        s.v[view].push_back(gmap[w.v[view][c]]);
      }
    }
    s.z[view].resize(w.z[view].size());
    for (std::size_t i = 0; i < w.z[view].size(); ++i) s.z[view][i] = lmap[w.z[view][i]];
  }
  return s;
}

void check_points(const ClusterPoints& points) {
  if (points.x[0].rows() == 0 || points.x[1].rows() == 0) {
    throw DataError("input error: clustering needs at least one point per view");
  }
  if (points.x[0].cols() != points.x[1].cols()) throw DataError("input error: view dimensions differ");
  for (int view = 0; view < 2; ++view) {
    if (points.ids[view].size() != points.x[view].rows()) throw DataError("input error: id count mismatch");
    for (double x : points.x[view].flat()) {
      if (!std::isfinite(x)) throw DataError("input error: non-finite coordinate");
    }
  }
}

// Point step for one point; returns true when its assignment changed.
bool assign_point(Work& w, int view, std::size_t i, std::span<const double> x, double ll, double lg) {
  // c_old < 0: the point has no assignment yet (sequential start).
  const int c_old = w.z[view][i];
  const int p_old = c_old >= 0 ? w.v[view][c_old] : -1;
  if (c_old >= 0) w.detach(view, i);

  // A global is "represented" in this view through a non-empty local cluster;
  // the point's own cluster wins ties so it does not hop between siblings.
  std::vector<int> rep(w.mu.size(), -1);
  for (std::size_t c = 0; c < w.v[view].size(); ++c) {
    const int p = w.v[view][c];
    if (w.count[view][c] > 0 && (rep[p] < 0 || static_cast<int>(c) == c_old)) rep[p] = static_cast<int>(c);
  }

  enum class Kind { Join, NewLocal, NewGlobal };
  Kind kind = Kind::NewGlobal;
  int best_p = -1;
  double best = kInf;
  // Incumbent: the current assignment, so ties keep the point where it is.
  if (p_old >= 0 && w.alive(p_old)) {
    const double d = kernels::squared_distance(x, w.mu[p_old]);
    if (w.count[view][c_old] > 0) {
      best = d;
      kind = Kind::Join;
    } else {
      best = d + ll;
      kind = Kind::NewLocal;
    }
    best_p = p_old;
  }
  for (std::size_t p = 0; p < w.mu.size(); ++p) {
    if (!w.alive(static_cast<int>(p)) || static_cast<int>(p) == p_old) continue;
    const double d = kernels::squared_distance(x, w.mu[p]);
    const double cost = rep[p] >= 0 ? d : d + ll;
    if (cost < best) {
      best = cost;
      best_p = static_cast<int>(p);
      kind = rep[p] >= 0 ? Kind::Join : Kind::NewLocal;
    }
  }
  if (best > ll + lg) kind = Kind::NewGlobal;

  switch (kind) {
    case Kind::Join: {
      const int c = best_p == p_old && c_old >= 0 && w.count[view][c_old] > 0 ? c_old : rep[best_p];
      w.attach(view, i, c);
      return c != c_old;
    }
    case Kind::NewLocal: {
      if (c_old >= 0 && w.count[view][c_old] == 0 && w.v[view][c_old] == best_p) {
        w.attach(view, i, c_old);
        return false;
      }
      w.attach(view, i, w.add_local(view, best_p));
      return true;
    }
    case Kind::NewGlobal: {
      const int p = w.add_global(x);
      int c;
      if (c_old >= 0 && w.count[view][c_old] == 0) {
        w.v[view][c_old] = p;
        c = c_old;
      } else {
        c = w.add_local(view, p);
      }
      w.attach(view, i, c);
      return true;
    }
  }
  return false;
}

// Local-cluster step; returns true when any association changed.
bool reassign_locals(Work& w, const ClusterPoints& points, double lg) {
  bool changed = false;
  for (int view = 0; view < 2; ++view) {
    const Matrix& x = points.x[view];
    std::vector<std::vector<std::size_t>> members(w.v[view].size());
    for (std::size_t i = 0; i < x.rows(); ++i) members[w.z[view][i]].push_back(i);
    for (std::size_t c = 0; c < members.size(); ++c) {
      if (members[c].empty()) continue;
      const double n = static_cast<double>(members[c].size());
      std::vector<double> mean(w.dim, 0.0);
      for (std::size_t i : members[c]) kernels::axpy(1.0, x.row(i), mean);
      kernels::scale(1.0 / n, mean);
      double own = 0.0;
      for (std::size_t i : members[c]) own += kernels::squared_distance(x.row(i), mean);

      const int p_cur = w.v[view][c];
      w.gcount[p_cur] -= members[c].size();
      // Sum of squared distances to mu_p = own + n * |mean - mu_p|^2.
      double best = kInf;
      int best_p = -1;
      if (w.alive(p_cur)) {
        best = own + n * kernels::squared_distance(mean, w.mu[p_cur]);
        best_p = p_cur;
      }
      for (std::size_t p = 0; p < w.mu.size(); ++p) {
        if (!w.alive(static_cast<int>(p)) || static_cast<int>(p) == p_cur) continue;
        const double cost = own + n * kernels::squared_distance(mean, w.mu[p]);
        if (cost < best) {
          best = cost;
          best_p = static_cast<int>(p);
        }
      }
      if (best > lg + own) {
        // A global that only held this local is reopened in place.
        if (w.alive(p_cur)) {
          best_p = w.add_global(mean);
        } else {
          w.mu[p_cur] = mean;
          best_p = p_cur;
        }
      }
      w.v[view][c] = best_p;
      w.gcount[best_p] += members[c].size();
      changed = changed || best_p != p_cur;
    }
  }
  return changed;
}

}  // namespace

HdpResult hdp_fit(const ClusterPoints& points, const HdpOptions& options,
                  const std::optional<ClusterState>& initial) {
  check_points(points);
  ClusterState start;
  if (initial) {
    start = *initial;
    start.check(points);
    if (start.mu.cols() != points.dim()) throw DataError("input error: initial means have wrong dimension");
  } else if (options.init == HdpInit::Sequential) {
    Work w;
    w.dim = points.dim();
    for (int view = 0; view < 2; ++view) w.z[view].assign(points.x[view].rows(), -1);
    for (int view = 0; view < 2; ++view) {
      for (std::size_t i = 0; i < points.x[view].rows(); ++i) {
        assign_point(w, view, i, points.x[view].row(i), options.lambda_local, options.lambda_global);
      }
    }
    update_means(w, points);
    start = compact(w, options.lambda_local, options.lambda_global);
  } else {
    start.mu.resize(1, points.dim());
    for (int view = 0; view < 2; ++view) {
      start.z[view].assign(points.x[view].rows(), 0);
      start.v[view] = {0};
      for (std::size_t i = 0; i < points.x[view].rows(); ++i) {
        kernels::axpy(1.0, points.x[view].row(i), start.mu.row(0));
      }
    }
    kernels::scale(1.0 / static_cast<double>(points.total()), start.mu.row(0));
  }
  start.lambda_local = options.lambda_local;
  start.lambda_global = options.lambda_global;

  HdpResult result;
  ClusterState state = start;
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    Work w = from_state(state, points);
    bool changed = false;
    for (int view = 0; view < 2; ++view) {
      for (std::size_t i = 0; i < points.x[view].rows(); ++i) {
        changed = assign_point(w, view, i, points.x[view].row(i), options.lambda_local,
                               options.lambda_global) ||
                  changed;
      }
    }
    update_means(w, points);
    changed = reassign_locals(w, points, options.lambda_global) || changed;
    update_means(w, points);
    state = compact(w, options.lambda_local, options.lambda_global);
    result.objective_trace.push_back(penalized_distortion(state, points));
    result.sweeps = sweep + 1;
    if (!changed) {
      result.converged = true;
      break;
    }
  }
  result.state = std::move(state);
  return result;
}

namespace {

std::array<std::unordered_map<std::string, std::size_t>, 2> index_points(const ClusterPoints& points) {
  std::array<std::unordered_map<std::string, std::size_t>, 2> idx;
  for (int view = 0; view < 2; ++view) {
    for (std::size_t i = 0; i < points.ids[view].size(); ++i) idx[view].emplace(points.ids[view][i], i);
  }
  return idx;
}

}  // namespace

std::vector<Instance> instances_of(const ClusterState& state, int p, const ClusterPoints& points,
                                   const std::vector<Instance>& corpus) {
  const auto idx = index_points(points);
  std::vector<Instance> out;
  for (const auto& inst : corpus) {
    const auto s = idx[kStudentView].find(inst.student_id);
    const auto q = idx[kProblemView].find(inst.problem_id);
    if (s == idx[kStudentView].end() || q == idx[kProblemView].end()) continue;
    if (state.global_of(kStudentView, s->second) == p && state.global_of(kProblemView, q->second) == p) {
      out.push_back(inst);
    }
  }
  return out;
}

std::vector<std::vector<KcSequence>> cluster_strategies(const ClusterState& state,
                                                        const ClusterPoints& points,
                                                        const StrategyMap& strategies) {
  const auto idx = index_points(points);
  std::vector<std::vector<KcSequence>> out(state.g());
  for (const auto& [inst, strategy] : strategies) {
    const auto s = idx[kStudentView].find(inst.student_id);
    const auto q = idx[kProblemView].find(inst.problem_id);
    if (s == idx[kStudentView].end() || q == idx[kProblemView].end()) continue;
    const int ps = state.global_of(kStudentView, s->second);
    if (ps == state.global_of(kProblemView, q->second)) out[ps].push_back(strategy.kcs);
  }
  return out;
}

void RefinementConfig::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("refinement epsilon must be positive");
  if (!(lambda_global_init > epsilon)) throw ConfigError("lambda_global_init must exceed epsilon");
  if (!(lambda_local >= 0.0)) throw ConfigError("lambda_local must be non-negative");
  if (max_iters < 1) throw ConfigError("max_iters must be >= 1");
  if (!(tolerance >= 0.0)) throw ConfigError("coherence tolerance must be non-negative");
  if (pair_cap < 1) throw ConfigError("pair_cap must be >= 1");
}

RefinementResult refine(const ClusterPoints& points, const StrategyMap& strategies,
                        const EmbeddingTable& embeddings, const RefinementConfig& config) {
  config.validate();
  RefinementResult result;
  double lambda_g = config.lambda_global_init;
  double previous = 0.0;
  double best = -kInf;
  for (int iter = 1; iter <= config.max_iters; ++iter) {
    HdpOptions opts{config.lambda_local, lambda_g, config.max_sweeps};
    HdpResult fit = hdp_fit(points, opts);
    CoherenceReport coh = coherence(cluster_strategies(fit.state, points, strategies), embeddings,
                                    {config.pair_cap, config.seed});
    RefinementStep step;
    step.iter = iter;
    step.lambda_global = lambda_g;
    step.g = fit.state.g();
    step.k1 = fit.state.k1();
    step.k2 = fit.state.k2();
    step.coherence = coh.overall;
    step.objective = objective(fit.state, points, coh.overall);
    result.trace.push_back(step);
    if (coh.overall > best) {
      best = coh.overall;
      result.state = std::move(fit.state);
      result.best_iter = iter;
      result.best_coherence = std::move(coh);
    }
    if (iter > 1 && step.coherence >= previous && step.coherence - previous <= config.tolerance) break;
    if (lambda_g - config.epsilon <= 0.0) break;
    previous = step.coherence;
    lambda_g -= config.epsilon;
  }
  return result;
}

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw DataError("adjusted_rand_index: label vectors differ in length");
  const double n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1.0;
    ra[a[i]] += 1.0;
    rb[b[i]] += 1.0;
  }
  auto choose2 = [](double x) { return x * (x - 1.0) / 2.0; };
  double sum_joint = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [k, c] : joint) sum_joint += choose2(c);
  for (const auto& [k, c] : ra) sum_a += choose2(c);
  for (const auto& [k, c] : rb) sum_b += choose2(c);
  const double expected = sum_a * sum_b / choose2(n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (sum_joint - expected) / (max_index - expected);
}

void write_clusters_tsv(std::ostream& out, const ClusterState& state, const ClusterPoints& points) {
  out << "view\tentity_id\tlocal_cluster\tglobal_cluster\n";
  const char* names[2] = {"student", "problem"};
  for (int view = 0; view < 2; ++view) {
    for (std::size_t i = 0; i < points.ids[view].size(); ++i) {
      out << names[view] << '\t' << points.ids[view][i] << '\t' << state.z[view][i] << '\t'
          << state.global_of(view, i) << '\n';
    }
  }
}

ClusterState read_clusters_tsv(std::istream& in, const ClusterPoints& points) {
  const auto idx = index_points(points);
  ClusterState s;
  for (int view = 0; view < 2; ++view) s.z[view].assign(points.ids[view].size(), -1);
  std::string line;
  std::getline(in, line);
  std::size_t line_no = 1;
  int g = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, "\t");
    if (cells.size() != 4) throw DataError("clusters line " + std::to_string(line_no) + ": expected 4 cells");
    const int view = cells[0] == "student" ? kStudentView : cells[0] == "problem" ? kProblemView : -1;
    if (view < 0) throw DataError("clusters line " + std::to_string(line_no) + ": bad view");
    const auto it = idx[view].find(cells[1]);
    if (it == idx[view].end()) throw LookupError("clustered entity '" + cells[1] + "' has no embedding");
    int local = 0, global = 0;
    try {
      local = static_cast<int>(text::parse_int(cells[2], "local_cluster"));
      global = static_cast<int>(text::parse_int(cells[3], "global_cluster"));
    } catch (const ConfigError& e) {
      throw DataError(e.what());
    }
    if (local < 0 || global < 0) throw DataError("negative cluster index");
    s.z[view][it->second] = local;
    if (s.v[view].size() <= static_cast<std::size_t>(local)) s.v[view].resize(local + 1, -1);
    if (s.v[view][local] >= 0 && s.v[view][local] != global) {
      throw DataError("local cluster mapped to two global clusters");
    }
    s.v[view][local] = global;
    g = std::max(g, global + 1);
  }
  for (int view = 0; view < 2; ++view) {
    for (int c : s.z[view]) {
      if (c < 0) throw DataError("clusters file misses an entity");
    }
  }
  s.mu.resize(static_cast<std::size_t>(g), points.dim());
  std::vector<double> counts(g, 0.0);
  for (int view = 0; view < 2; ++view) {
    for (std::size_t i = 0; i < s.z[view].size(); ++i) {
      const int p = s.global_of(view, i);
      kernels::axpy(1.0, points.x[view].row(i), s.mu.row(p));
      counts[p] += 1.0;
    }
  }
  for (int p = 0; p < g; ++p) {
    if (counts[p] > 0) kernels::scale(1.0 / counts[p], s.mu.row(p));
  }
  s.check(points);
  return s;
}

std::string refinement_trace_json(const std::vector<RefinementStep>& trace) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : trace) {
    j.push_back({{"iter", s.iter},
                 {"lambda_g", s.lambda_global},
                 {"g", s.g},
                 {"k1", s.k1},
                 {"k2", s.k2},
                 {"coherence", s.coherence},
                 {"objective", s.objective}});
  }
  return j.dump(2);
}

}  // namespace stratpred
