#include "stratpred/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <set>

#include "stratpred/error.hpp"
#include "stratpred/text.hpp"

namespace stratpred {

IdMap::IdMap(std::vector<std::string> ids) : ids_(std::move(ids)) {
  std::sort(ids_.begin(), ids_.end());
  ids_.erase(std::unique(ids_.begin(), ids_.end()), ids_.end());
  index_.reserve(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) index_.emplace(ids_[i], i);
}

std::size_t IdMap::index(const std::string& id) const {
  const auto it = index_.find(id);
  if (it == index_.end()) throw LookupError("unknown identifier '" + id + "'");
  return it->second;
}

Vocabulary Vocabulary::from_records(const std::vector<InteractionRecord>& records) {
  std::vector<std::string> s, p, k;
  s.reserve(records.size());
  p.reserve(records.size());
  k.reserve(records.size());
  for (const auto& r : records) {
    s.push_back(r.student_id);
    p.push_back(r.problem_id);
    k.push_back(r.kc_id);
  }
  return {IdMap(std::move(s)), IdMap(std::move(p)), IdMap(std::move(k))};
}

Schema Schema::from_config(std::istream& in) {
  Schema schema;
  for (const auto& kv : text::read_key_values(in)) {
    if (kv.key == "student") schema.student = kv.value;
    else if (kv.key == "unit") schema.unit = kv.value;
    else if (kv.key == "section") schema.section = kv.value;
    else if (kv.key == "problem") schema.problem = kv.value;
    else if (kv.key == "step") schema.step = kv.value;
    else if (kv.key == "kc") schema.kc = kv.value;
    else if (kv.key == "cfa") schema.cfa = kv.value;
    else if (kv.key == "order") schema.order = kv.value;
    else if (kv.key == "separator") schema.kc_separator = kv.value;
    else throw ConfigError("schema line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
  }
  return schema;
}

Schema Schema::from_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open schema file '" + path + "'");
  return from_config(in);
}

namespace {

// Sort key inside one student's stream plus the position of the step within
// its attempt. `step` and `sub` order unrolled KCs of the same source row.
struct StepKey {
  long long step;
  int sub;
  auto operator<=>(const StepKey&) const = default;
};

// Records must already be grouped per student in chronological order.
void assign_attempts(std::vector<InteractionRecord>& records, const std::vector<StepKey>& keys) {
  std::map<std::pair<std::string, std::string>, int> runs;
  std::size_t i = 0;
  while (i < records.size()) {
    const std::string& student = records[i].student_id;
    std::int64_t ordinal = 0;
    const InteractionRecord* prev = nullptr;
    StepKey prev_key{};
    int step = 0;
    for (; i < records.size() && records[i].student_id == student; ++i) {
      auto& r = records[i];
      r.sequence_ordinal = ordinal++;
      const bool new_run =
          prev == nullptr || prev->problem_id != r.problem_id || !(prev_key < keys[i]);
      if (new_run) {
        r.attempt = runs[{r.student_id, r.problem_id}]++;
        step = 0;
      } else {
        r.attempt = prev->attempt;
      }
      r.step_index = step++;
      prev = &r;
      prev_key = keys[i];
    }
  }
}

}  // namespace

void normalize_records(std::vector<InteractionRecord>& records) {
  std::stable_sort(records.begin(), records.end(), [](const auto& a, const auto& b) {
    if (a.student_id != b.student_id) return a.student_id < b.student_id;
    return a.sequence_ordinal < b.sequence_ordinal;
  });
  std::vector<StepKey> keys(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) keys[i] = {records[i].step_index, 0};
  assign_attempts(records, keys);
}

ParseResult parse_interactions(std::istream& in, const Schema& schema) {
  ParseResult result;
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(schema.student);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = text::split(line, "\t");
  auto column = [&](const std::string& name) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw SchemaError(name);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_student = column(schema.student);
  const std::size_t c_unit = column(schema.unit);
  const std::size_t c_section = column(schema.section);
  const std::size_t c_problem = column(schema.problem);
  const std::size_t c_step = column(schema.step);
  const std::size_t c_kc = column(schema.kc);
  const std::size_t c_cfa = column(schema.cfa);
  const bool has_order = !schema.order.empty();
  const std::size_t c_order = has_order ? column(schema.order) : 0;

  struct Row {
    InteractionRecord record;
    double order;
    std::size_t row;
    StepKey key;
  };
  std::vector<Row> rows;
  std::size_t line_no = 1;
  std::size_t row_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    const auto cells = text::split(line, "\t");
    if (cells.size() < header.size()) {
      result.row_errors.push_back({line_no, "expected " + std::to_string(header.size()) +
                                                " cells, found " + std::to_string(cells.size())});
      continue;
    }
    const auto cfa = text::trim(cells[c_cfa]);
    if (cfa != "0" && cfa != "1") {
      result.row_errors.push_back({line_no, "non-binary cfa '" + std::string(cfa) + "'"});
      continue;
    }
    long long step = 0;
    double order = static_cast<double>(row_no);
    try {
      step = text::parse_int(cells[c_step], "step");
      if (step < 0) throw ConfigError("negative step");
      if (has_order) order = text::parse_double(cells[c_order], "order");
    } catch (const ConfigError& e) {
      result.row_errors.push_back({line_no, e.what()});
      continue;
    }
    std::vector<std::string> kcs;
    for (auto& kc : text::split(cells[c_kc], schema.kc_separator)) {
      const auto t = text::trim(kc);
      if (!t.empty()) kcs.emplace_back(t);
    }
    if (kcs.empty()) {
      result.row_errors.push_back({line_no, "empty kc cell"});
      continue;
    }
    for (std::size_t k = 0; k < kcs.size(); ++k) {
      InteractionRecord r;
      r.student_id = std::string(text::trim(cells[c_student]));
      r.unit_id = std::string(text::trim(cells[c_unit]));
      r.section_id = std::string(text::trim(cells[c_section]));
      r.problem_id = std::string(text::trim(cells[c_problem]));
      r.kc_id = kcs[k];
      r.cfa = cfa == "1" ? 1 : 0;
      rows.push_back({std::move(r), order, row_no, {step, static_cast<int>(k)}});
    }
    ++row_no;
  }

  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
    if (a.record.student_id != b.record.student_id) return a.record.student_id < b.record.student_id;
    if (a.order != b.order) return a.order < b.order;
    if (a.row != b.row) return a.row < b.row;
    return a.key.sub < b.key.sub;
  });
  std::vector<StepKey> keys;
  keys.reserve(rows.size());
  result.records.reserve(rows.size());
  for (auto& r : rows) {
    keys.push_back(r.key);
    result.records.push_back(std::move(r.record));
  }
  assign_attempts(result.records, keys);
  result.vocabulary = Vocabulary::from_records(result.records);
  return result;
}

void write_corpus_tsv(std::ostream& out, const std::vector<InteractionRecord>& records) {
  out << "student\tunit\tsection\tproblem\tstep\tkc\tcfa\n";
  for (const auto& r : records) {
    out << r.student_id << '\t' << r.unit_id << '\t' << r.section_id << '\t' << r.problem_id << '\t'
        << r.step_index << '\t' << r.kc_id << '\t' << r.cfa << '\n';
  }
}

StrategyMap extract_strategies(const std::vector<InteractionRecord>& records) {
  StrategyMap out;
  for (const auto& r : records) {
    if (r.attempt != 0) continue;
    auto [it, inserted] = out.try_emplace(Instance{r.student_id, r.problem_id});
    if (inserted) {
      it->second.student_id = r.student_id;
      it->second.problem_id = r.problem_id;
    }
    auto& kcs = it->second.kcs;
    if (static_cast<std::size_t>(r.step_index) >= kcs.size()) kcs.resize(r.step_index + 1);
    kcs[r.step_index] = r.kc_id;
  }
  return out;
}

std::vector<Instance> instances_in(const std::vector<InteractionRecord>& records) {
  std::set<Instance> seen;
  for (const auto& r : records) seen.insert({r.student_id, r.problem_id});
  return {seen.begin(), seen.end()};
}

RelationalGraph build_graph(const std::vector<InteractionRecord>& records) {
  RelationalGraph g;
  g.vocabulary = Vocabulary::from_records(records);
  const auto& v = g.vocabulary;
  for (const auto& r : records) {
    const std::size_t s = v.students.index(r.student_id);
    const std::size_t k = v.kcs.index(r.kc_id);
    const std::size_t p = v.problems.index(r.problem_id);
    ++g.student_kc[{s, k}];
    ++g.kc_problem[{k, p}];
    ++g.triples[{s, k, p}];
  }
  return g;
}

std::string PerformanceGroup::label() const {
  auto fmt = [](double x) {
    std::string s = text::format_double(x);
    return s;
  };
  return fmt(lo) + "-" + fmt(hi);
}

PerformanceGroup group_for_percentage(double percent, const std::vector<double>& boundaries) {
  PerformanceGroup g;
  g.lo = 0.0;
  g.index = 0;
  for (double b : boundaries) {
    if (percent < b) {
      g.hi = b;
      return g;
    }
    g.lo = b;
    ++g.index;
  }
  g.hi = 100.0;
  return g;
}

namespace {

void check_boundaries(const std::vector<double>& boundaries) {
  double prev = 0.0;
  for (double b : boundaries) {
    if (!(b > prev) || !(b < 100.0)) {
      throw ConfigError("performance boundaries must be strictly increasing inside (0, 100)");
    }
    prev = b;
  }
}

}  // namespace

PerformanceGroup performance_group(const std::string& student_id,
                                   const std::vector<InteractionRecord>& records,
                                   const std::vector<double>& boundaries) {
  check_boundaries(boundaries);
  std::size_t n = 0;
  std::size_t correct = 0;
  for (const auto& r : records) {
    if (r.student_id != student_id) continue;
    ++n;
    correct += static_cast<std::size_t>(r.cfa);
  }
  if (n == 0) throw LookupError("student '" + student_id + "' has no records");
  return group_for_percentage(100.0 * static_cast<double>(correct) / static_cast<double>(n),
                              boundaries);
}

std::map<std::string, PerformanceGroup> performance_groups(
    const std::vector<InteractionRecord>& records, const std::vector<double>& boundaries) {
  check_boundaries(boundaries);
  std::map<std::string, std::pair<std::size_t, std::size_t>> tally;
  for (const auto& r : records) {
    auto& t = tally[r.student_id];
    ++t.first;
    t.second += static_cast<std::size_t>(r.cfa);
  }
  std::map<std::string, PerformanceGroup> out;
  for (const auto& [student, t] : tally) {
    out[student] = group_for_percentage(
        100.0 * static_cast<double>(t.second) / static_cast<double>(t.first), boundaries);
  }
  return out;
}

}  // namespace stratpred
