#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <set>

#include "json.hpp"

#include "stratpred/corpus.hpp"
#include "stratpred/error.hpp"
#include "stratpred/rng.hpp"

namespace stratpred {
namespace {

std::string padded(char prefix, int value, int count) {
  const int width = std::max(2, static_cast<int>(std::to_string(std::max(count - 1, 0)).size()));
  std::string digits = std::to_string(value);
  return std::string(1, prefix) + std::string(width - static_cast<int>(digits.size()), '0') + digits;
}

}  // namespace

void validate(const SynthConfig& c) {
  const int g = c.num_strategy_groups;
  if (g < 1) throw ConfigError("num_strategy_groups must be >= 1");
  if (c.num_students < g || c.num_problems < g || c.num_kcs < g) {
    throw ConfigError("num_students, num_problems and num_kcs must each be >= num_strategy_groups");
  }
  if (!(c.mastery_noise >= 0.0 && c.mastery_noise <= 1.0)) {
    throw ConfigError("mastery_noise must lie in [0, 1]");
  }
  if (c.problems_per_student < 1) throw ConfigError("problems_per_student must be >= 1");
  if (c.num_units < 1 || c.sections_per_unit < 1) throw ConfigError("units and sections must be >= 1");
  if (c.min_strategy_length < 1 || c.max_strategy_length < c.min_strategy_length) {
    throw ConfigError("strategy length range is empty");
  }
  if (!(c.group_skew > 0.0)) throw ConfigError("group_skew must be positive");
  if (!(c.cross_group_rate >= 0.0 && c.cross_group_rate <= 1.0)) {
    throw ConfigError("cross_group_rate must lie in [0, 1]");
  }
}

SyntheticCorpus generate_synthetic(const SynthConfig& c) {
  validate(c);
  Rng rng(c.seed);
  const int G = c.num_strategy_groups;
  SyntheticCorpus out;
  GroundTruth& truth = out.truth;

  std::vector<std::string> kcs(c.num_kcs);
  std::map<std::string, int> kc_index;
  for (int k = 0; k < c.num_kcs; ++k) {
    kcs[k] = padded('k', k, c.num_kcs);
    kc_index[kcs[k]] = k;
  }

  // Nested mastery: group g masters the first ceil(K (g+1) / G) KCs of a
  // shuffled order, so higher groups answer more steps correctly.
  std::vector<int> kc_order(c.num_kcs);
  for (int k = 0; k < c.num_kcs; ++k) kc_order[k] = k;
  rng.shuffle(kc_order);
  std::vector<std::vector<bool>> mastered(G, std::vector<bool>(c.num_kcs, false));
  truth.mastered.assign(G, {});
  for (int g = 0; g < G; ++g) {
    const int count = (c.num_kcs * (g + 1) + G - 1) / G;
    for (int i = 0; i < count; ++i) {
      mastered[g][kc_order[i]] = true;
      truth.mastered[g].push_back(kcs[kc_order[i]]);
    }
    std::sort(truth.mastered[g].begin(), truth.mastered[g].end());
  }

  // Canonical strategies: at least one step, and about half of them, on KCs
  // the student group has mastered. Distinct across all (problem, student) cells
  // whenever the KC alphabet allows it.
  auto draw_strategy = [&](int g) {
    const int len = c.min_strategy_length +
                    static_cast<int>(rng.index(c.max_strategy_length - c.min_strategy_length + 1));
    std::vector<int> own;
    for (int k = 0; k < c.num_kcs; ++k) {
      if (mastered[g][k]) own.push_back(k);
    }
    std::vector<std::string> seq;
    bool has_own = false;
    for (int i = 0; i < len; ++i) {
      int k;
      if (rng.bernoulli(0.5)) {
        k = own[rng.index(own.size())];
      } else {
        k = static_cast<int>(rng.index(c.num_kcs));
      }
      has_own = has_own || mastered[g][k];
      seq.push_back(kcs[k]);
    }
    if (!has_own) seq[rng.index(seq.size())] = kcs[own[rng.index(own.size())]];
    return seq;
  };
  truth.canonical.assign(G, std::vector<std::vector<std::string>>(G));
  std::set<std::vector<std::string>> used;
  for (int q = 0; q < G; ++q) {
    for (int g = 0; g < G; ++g) {
      std::vector<std::string> seq = draw_strategy(g);
      for (int attempt = 0; attempt < 200 && used.count(seq); ++attempt) seq = draw_strategy(g);
      used.insert(seq);
      truth.canonical[q][g] = std::move(seq);
    }
  }

  // Problem groups are balanced; sections interleave problem indices so every
  // section holds problems of every group.
  std::vector<int> problem_group(c.num_problems);
  for (int p = 0; p < c.num_problems; ++p) problem_group[p] = p % G;
  rng.shuffle(problem_group);
  const int sections = c.num_units * c.sections_per_unit;
  std::vector<std::vector<int>> problems_of_group(G);
  std::vector<std::string> problem_ids(c.num_problems);
  for (int p = 0; p < c.num_problems; ++p) {
    problem_ids[p] = padded('p', p, c.num_problems);
    truth.problem_group[problem_ids[p]] = problem_group[p];
    problems_of_group[problem_group[p]].push_back(p);
  }
  auto section_of = [&](int p) { return p % sections; };

  // Student groups: every group non-empty, the rest weighted by skew^g.
  std::vector<double> weights(G);
  for (int g = 0; g < G; ++g) weights[g] = std::pow(c.group_skew, g);
  std::vector<int> student_group(c.num_students);
  for (int s = 0; s < c.num_students; ++s) {
    student_group[s] = s < G ? s : static_cast<int>(rng.categorical(weights));
  }
  rng.shuffle(student_group);

  std::int64_t ordinal = 0;
  for (int s = 0; s < c.num_students; ++s) {
    const int g = student_group[s];
    const std::string sid = padded('s', s, c.num_students);
    truth.student_group[sid] = g;

    std::set<int> chosen;
    const int budget = std::min(c.problems_per_student, c.num_problems);
    int guard = 0;
    while (static_cast<int>(chosen.size()) < budget && guard++ < 100 * budget) {
      int q = g;
      if (G > 1 && rng.bernoulli(c.cross_group_rate)) {
        q = static_cast<int>(rng.index(G - 1));
        if (q >= g) ++q;
      }
      const auto& pool = problems_of_group[q];
      chosen.insert(pool[rng.index(pool.size())]);
      bool own_exhausted = true;
      for (int p : problems_of_group[g]) own_exhausted = own_exhausted && chosen.count(p);
      if (own_exhausted && c.cross_group_rate == 0.0) break;
    }
    std::vector<int> order(chosen.begin(), chosen.end());
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (section_of(a) != section_of(b)) return section_of(a) < section_of(b);
      return a < b;
    });

    for (int p : order) {
      std::vector<std::string> seq = truth.canonical[problem_group[p]][g];
      if (rng.bernoulli(c.mastery_noise)) {
        if (seq.size() > 1 && rng.bernoulli(0.5)) {
          seq.erase(seq.begin() + static_cast<long>(rng.index(seq.size())));
        } else {
          const auto& m = truth.mastered[g];
          seq.insert(seq.begin() + static_cast<long>(rng.index(seq.size() + 1)),
                     m[rng.index(m.size())]);
        }
      }
      const int sec = section_of(p);
      const int unit = sec / c.sections_per_unit;
      for (std::size_t i = 0; i < seq.size(); ++i) {
        InteractionRecord r;
        r.student_id = sid;
        r.unit_id = "u" + std::to_string(unit);
        r.section_id = "u" + std::to_string(unit) + "s" + std::to_string(sec % c.sections_per_unit);
        r.problem_id = problem_ids[p];
        r.step_index = static_cast<int>(i);
        r.kc_id = seq[i];
        const bool m = mastered[g][kc_index.at(seq[i])];
        const double p_correct = m ? 1.0 - c.mastery_noise : c.mastery_noise;
        r.cfa = rng.bernoulli(p_correct) ? 1 : 0;
        r.sequence_ordinal = ordinal++;
        out.records.push_back(std::move(r));
      }
      truth.planted[{sid, problem_ids[p]}] = std::move(seq);
    }
  }
  normalize_records(out.records);
  return out;
}

void write_ground_truth(std::ostream& out, const GroundTruth& truth) {
  nlohmann::json j;
  j["student_group"] = truth.student_group;
  j["problem_group"] = truth.problem_group;
  nlohmann::json canon = nlohmann::json::array();
  for (std::size_t q = 0; q < truth.canonical.size(); ++q) {
    for (std::size_t g = 0; g < truth.canonical[q].size(); ++g) {
      canon.push_back({{"problem_group", q}, {"student_group", g}, {"kcs", truth.canonical[q][g]}});
    }
  }
  j["canonical_strategies"] = std::move(canon);
  j["mastered_kcs"] = truth.mastered;
  out << j.dump(2) << '\n';
}

GroundTruth read_ground_truth(std::istream& in) {
  GroundTruth truth;
  nlohmann::json j;
  try {
    in >> j;
    truth.student_group = j.at("student_group").get<std::map<std::string, int>>();
    truth.problem_group = j.at("problem_group").get<std::map<std::string, int>>();
    std::size_t groups = 0;
    for (const auto& c : j.at("canonical_strategies")) {
      groups = std::max(groups, c.at("problem_group").get<std::size_t>() + 1);
      groups = std::max(groups, c.at("student_group").get<std::size_t>() + 1);
    }
    truth.canonical.assign(groups, std::vector<std::vector<std::string>>(groups));
    for (const auto& c : j.at("canonical_strategies")) {
      truth.canonical[c.at("problem_group").get<std::size_t>()][c.at("student_group").get<std::size_t>()] =
          c.at("kcs").get<std::vector<std::string>>();
    }
    if (j.contains("mastered_kcs")) truth.mastered = j["mastered_kcs"].get<decltype(truth.mastered)>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed ground truth: ") + e.what());
  }
  return truth;
}

}  // namespace stratpred
