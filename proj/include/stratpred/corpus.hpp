#pragma once

// Interaction logs, strategies and the student/KC/problem relational graph.

#include <compare>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace stratpred {

/// One student step with a single knowledge component.
struct InteractionRecord {
  std::string student_id;
  std::string unit_id;
  std::string section_id;
  std::string problem_id;
  int step_index = 0;  ///< 0-based within one attempt of the problem
  std::string kc_id;
  int cfa = 0;                     ///< correct on first attempt
  std::int64_t sequence_ordinal = 0;  ///< chronological position in the student's stream
  int attempt = 0;                 ///< 0 for the first attempt at this problem

  bool operator==(const InteractionRecord&) const = default;
};

/// A (student, problem) pair present in the corpus.
struct Instance {
  std::string student_id;
  std::string problem_id;

  auto operator<=>(const Instance&) const = default;
};

/// Ordered KC sequence one student used on one problem.
struct Strategy {
  std::string student_id;
  std::string problem_id;
  std::vector<std::string> kcs;

  bool operator==(const Strategy&) const = default;
};

using StrategyMap = std::map<Instance, Strategy>;

/// Bijection between identifiers and dense indices 0..n-1 (sorted identifier order).
class IdMap {
 public:
  IdMap() = default;
  explicit IdMap(std::vector<std::string> ids);

  std::size_t size() const noexcept { return ids_.size(); }
  bool contains(const std::string& id) const { return index_.count(id) != 0; }
  /// Throws LookupError for unknown identifiers.
  std::size_t index(const std::string& id) const;
  const std::string& id(std::size_t i) const { return ids_.at(i); }
  const std::vector<std::string>& ids() const noexcept { return ids_; }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Vocabulary {
  IdMap students;
  IdMap problems;
  IdMap kcs;

  static Vocabulary from_records(const std::vector<InteractionRecord>& records);
};

/// Column mapping for tab-separated interaction logs.
struct Schema {
  std::string student = "student";
  std::string unit = "unit";
  std::string section = "section";
  std::string problem = "problem";
  std::string step = "step";
  std::string kc = "kc";
  std::string cfa = "cfa";
  /// Optional chronological-order column; empty means file row order.
  std::string order;
  std::string kc_separator = "~~";

  /// Reads `key=value` lines (keys: student, unit, section, problem, step, kc,
  /// cfa, order, separator). Unknown keys are a ConfigError.
  static Schema from_config(std::istream& in);
  static Schema from_config_file(const std::string& path);
};

struct RowError {
  std::size_t line = 0;
  std::string message;
};

struct ParseResult {
  std::vector<InteractionRecord> records;
  Vocabulary vocabulary;
  std::vector<RowError> row_errors;
};

/// Parses a TSV stream with a header row. Multi-KC cells are unrolled into one
/// record per KC; output is sorted per student in chronological order.
/// Missing columns throw SchemaError; malformed rows are skipped and reported.
ParseResult parse_interactions(std::istream& in, const Schema& schema = {});

/// Writes the canonical 7-column corpus (rows in the given order).
void write_corpus_tsv(std::ostream& out, const std::vector<InteractionRecord>& records);

/// Orders records per student chronologically and assigns ordinals, attempts
/// and contiguous step indices. Used by the parser and the generator.
void normalize_records(std::vector<InteractionRecord>& records);

/// First-attempt KC sequence of every (student, problem) pair.
StrategyMap extract_strategies(const std::vector<InteractionRecord>& records);

std::vector<Instance> instances_in(const std::vector<InteractionRecord>& records);

/// Tripartite student -> KC -> problem graph with edge multiplicities, plus the
/// (student, KC, problem) co-occurrence counts that walk sampling needs.
struct RelationalGraph {
  Vocabulary vocabulary;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> student_kc;  ///< (student, kc)
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> kc_problem;  ///< (kc, problem)
  struct Triple {
    std::size_t student;
    std::size_t kc;
    std::size_t problem;
    auto operator<=>(const Triple&) const = default;
  };
  std::map<Triple, std::size_t> triples;

  std::size_t node_count() const {
    return vocabulary.students.size() + vocabulary.problems.size() + vocabulary.kcs.size();
  }
};

RelationalGraph build_graph(const std::vector<InteractionRecord>& records);

/// Band of first-attempt correctness percentages, [lo, hi) except the top band.
struct PerformanceGroup {
  int index = 0;
  double lo = 0.0;
  double hi = 100.0;
  std::string label() const;
  auto operator<=>(const PerformanceGroup&) const = default;
};

inline const std::vector<double> kDefaultGroupBoundaries{30.0, 50.0, 70.0, 90.0};

/// Throws LookupError when the student has no records.
PerformanceGroup performance_group(const std::string& student_id,
                                   const std::vector<InteractionRecord>& records,
                                   const std::vector<double>& boundaries = kDefaultGroupBoundaries);

/// Group of a raw percentage under the given boundaries.
PerformanceGroup group_for_percentage(double percent, const std::vector<double>& boundaries);

/// All students at once.
std::map<std::string, PerformanceGroup> performance_groups(
    const std::vector<InteractionRecord>& records,
    const std::vector<double>& boundaries = kDefaultGroupBoundaries);

// ---------------------------------------------------------------------------
// Synthetic corpora with planted strategy groups.

struct SynthConfig {
  int num_students = 300;
  int num_problems = 150;
  int num_kcs = 8;
  int num_strategy_groups = 3;
  double mastery_noise = 0.0;
  std::uint64_t seed = 1;

  int problems_per_student = 20;
  int num_units = 3;
  int sections_per_unit = 4;
  int min_strategy_length = 3;
  int max_strategy_length = 6;
  /// Weight ratio between consecutive student groups (1 = equal sizes).
  double group_skew = 1.0;
  /// Probability that a student's problem comes from another problem group.
  double cross_group_rate = 0.0;
};

struct GroundTruth {
  std::map<std::string, int> student_group;
  std::map<std::string, int> problem_group;
  /// canonical[problem_group][student_group]
  std::vector<std::vector<std::vector<std::string>>> canonical;
  /// mastered[student_group] = KCs the group has mastered
  std::vector<std::vector<std::string>> mastered;
  /// Strategy actually planted for each instance (after symmetric variation).
  std::map<Instance, std::vector<std::string>> planted;
};

struct SyntheticCorpus {
  std::vector<InteractionRecord> records;
  GroundTruth truth;
};

/// Deterministic for a given config. Throws ConfigError on inconsistent counts.
SyntheticCorpus generate_synthetic(const SynthConfig& config);

void validate(const SynthConfig& config);

/// Sidecar JSON with keys student_group, problem_group, canonical_strategies.
void write_ground_truth(std::ostream& out, const GroundTruth& truth);
GroundTruth read_ground_truth(std::istream& in);

}  // namespace stratpred
