#include <algorithm>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include "doctest.h"

#include "stratpred/corpus.hpp"
#include "stratpred/error.hpp"
#include "stratpred/rng.hpp"

using namespace stratpred;

namespace {

const char* kHeader = "student\tunit\tsection\tproblem\tstep\tkc\tcfa\n";

ParseResult parse(const std::string& body, const Schema& schema = {}) {
  std::istringstream in(body);
  return parse_interactions(in, schema);
}

InteractionRecord rec(std::string s, std::string p, std::string k, int cfa = 1) {
  InteractionRecord r;
  r.student_id = std::move(s);
  r.unit_id = "u";
  r.section_id = "x";
  r.problem_id = std::move(p);
  r.kc_id = std::move(k);
  r.cfa = cfa;
  return r;
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("single row") {
  auto r = parse(std::string(kHeader) + "S1\tU1\tX1\tP1\t0\tKA\t1\n");
  REQUIRE(r.records.size() == 1);
  CHECK(r.records[0].cfa == 1);
  CHECK(r.records[0].kc_id == "KA");
  CHECK(r.row_errors.empty());
}

TEST_CASE("multi-KC cell is unrolled in order") {
  auto r = parse(std::string(kHeader) + "S1\tU1\tX1\tP1\t0\tA~~B\t0\n");
  REQUIRE(r.records.size() == 2);
  CHECK(r.records[0].kc_id == "A");
  CHECK(r.records[1].kc_id == "B");
  CHECK(r.records[0].step_index == 0);
  CHECK(r.records[1].step_index == 1);
  CHECK(r.records[0].problem_id == r.records[1].problem_id);

  Schema s;
  s.kc_separator = "|";
  auto q = parse(std::string(kHeader) + "S1\tU1\tX1\tP1\t0\tA|B|C\t0\n", s);
  CHECK(q.records.size() == 3);
}

TEST_CASE("unroll preserves the total KC count") {
  std::string body = kHeader;
  body += "S1\tU\tX\tP1\t0\tA~~B~~C\t1\n";
  body += "S1\tU\tX\tP1\t1\tD\t1\n";
  body += "S2\tU\tX\tP1\t0\tA~~D\t0\n";
  CHECK(parse(body).records.size() == 6);
}

TEST_CASE("shuffled rows are sorted per student chronologically") {
  Schema schema;
  schema.order = "t";
  const std::string header = "student\tunit\tsection\tproblem\tstep\tkc\tcfa\tt\n";
  // (student, problem, step, kc, t); the oracle is the hand-sorted order below.
  std::vector<std::tuple<std::string, std::string, int, std::string, int>> rows{
      {"S2", "P2", 1, "K4", 9}, {"S1", "P1", 0, "K1", 1}, {"S1", "P2", 1, "K3", 5},
      {"S2", "P1", 0, "K1", 2}, {"S1", "P1", 1, "K2", 2}, {"S2", "P2", 0, "K2", 7},
      {"S1", "P2", 0, "K1", 4}, {"S2", "P1", 1, "K3", 3}, {"S1", "P3", 0, "K2", 8},
      {"S2", "P3", 0, "K1", 10}};
  std::string body = header;
  for (auto& [s, p, step, k, t] : rows) {
    body += s + "\tU\tX\t" + p + "\t" + std::to_string(step) + "\t" + k + "\t1\t" + std::to_string(t) + "\n";
  }
  auto r = parse(body, schema);
  const std::vector<std::string> expect{"S1 P1 K1", "S1 P1 K2", "S1 P2 K1", "S1 P2 K3", "S1 P3 K2",
                                        "S2 P1 K1", "S2 P1 K3", "S2 P2 K2", "S2 P2 K4", "S2 P3 K1"};
  REQUIRE(r.records.size() == expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) {
    const auto& x = r.records[i];
    CHECK(x.student_id + " " + x.problem_id + " " + x.kc_id == expect[i]);
  }
  for (std::size_t i = 1; i < r.records.size(); ++i) {
    if (r.records[i].student_id == r.records[i - 1].student_id) {
      CHECK(r.records[i].sequence_ordinal > r.records[i - 1].sequence_ordinal);
    }
  }
}

TEST_CASE("schema and row errors") {
  std::istringstream missing("student\tunit\tsection\tproblem\tstep\tcfa\nS\tU\tX\tP\t0\t1\n");
  try {
    parse_interactions(missing);
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(e.column() == "kc");
  }

  auto r = parse(std::string(kHeader) + "S1\tU\tX\tP\t0\tK\t1\nS1\tU\tX\tP\t1\tK\tyes\nS1\tU\tX\tP\t2\tK\t0\n");
  CHECK(r.records.size() == 2);
  REQUIRE(r.row_errors.size() == 1);
  CHECK(r.row_errors[0].line == 3);
  CHECK(r.row_errors[0].message.find("cfa") != std::string::npos);

  std::istringstream cfg("student=sid\nkc=skill\nseparator=;\n");
  auto s = Schema::from_config(cfg);
  CHECK(s.student == "sid");
  CHECK(s.kc == "skill");
  CHECK(s.kc_separator == ";");
  std::istringstream bad("colour=red\n");
  CHECK_THROWS_AS(Schema::from_config(bad), ConfigError);
}

TEST_CASE("write and parse round trip") {
  SynthConfig c;
  c.num_students = 12;
  c.num_problems = 9;
  c.problems_per_student = 5;
  c.mastery_noise = 0.2;
  auto corpus = generate_synthetic(c);
  std::stringstream buf;
  write_corpus_tsv(buf, corpus.records);
  auto back = parse_interactions(buf);
  REQUIRE(back.records.size() == corpus.records.size());
  CHECK(extract_strategies(back.records) == extract_strategies(corpus.records));
  for (std::size_t i = 0; i < back.records.size(); ++i) {
    CHECK(back.records[i].cfa == corpus.records[i].cfa);
    CHECK(back.records[i].kc_id == corpus.records[i].kc_id);
  }
}

TEST_CASE("strategy extraction") {
  std::vector<InteractionRecord> rs{rec("S1", "P1", "KA"), rec("S1", "P1", "KB")};
  rs[1].step_index = 1;
  normalize_records(rs);
  auto m = extract_strategies(rs);
  REQUIRE(m.size() == 1);
  CHECK(m.begin()->second == Strategy{"S1", "P1", {"KA", "KB"}});

  // A worked problem written in order: the sequence is exactly the written steps.
  std::vector<InteractionRecord> fig;
  for (auto k : {"distribute", "combine-like-terms", "subtract-both-sides", "divide-both-sides"}) {
    fig.push_back(rec("S", "3(x+2)=12", k));
    fig.back().step_index = static_cast<int>(fig.size()) - 1;
  }
  normalize_records(fig);
  CHECK(extract_strategies(fig).begin()->second.kcs ==
        std::vector<std::string>{"distribute", "combine-like-terms", "subtract-both-sides", "divide-both-sides"});

  CHECK(extract_strategies({}).empty());
}

TEST_CASE("repeated attempts keep the first") {
  std::vector<InteractionRecord> rs{rec("S1", "P1", "KA"), rec("S1", "P1", "KB"), rec("S1", "P2", "KC"),
                                    rec("S1", "P1", "KC"), rec("S1", "P1", "KD"), rec("S1", "P1", "KE")};
  for (std::size_t i = 0; i < rs.size(); ++i) rs[i].sequence_ordinal = static_cast<std::int64_t>(i);
  rs[0].step_index = 0;
  rs[1].step_index = 1;
  rs[3].step_index = 0;
  rs[4].step_index = 1;
  rs[5].step_index = 2;
  normalize_records(rs);
  auto m = extract_strategies(rs);
  CHECK(m.at({"S1", "P1"}).kcs == std::vector<std::string>{"KA", "KB"});
}

TEST_CASE("extraction recovers the planted strategies") {
  SynthConfig c;
  c.num_students = 10;
  c.num_problems = 30;
  c.problems_per_student = 5;
  auto corpus = generate_synthetic(c);
  auto m = extract_strategies(corpus.records);
  CHECK(m.size() == 50);
  REQUIRE(m.size() == corpus.truth.planted.size());
  for (const auto& [inst, kcs] : corpus.truth.planted) CHECK(m.at(inst).kcs == kcs);
}

TEST_CASE("graph: single record") {
  auto g = build_graph({rec("S1", "P1", "K1")});
  CHECK(g.node_count() == 3);
  CHECK(g.student_kc.size() == 1);
  CHECK(g.kc_problem.size() == 1);
  CHECK(g.student_kc.begin()->second == 1);
  CHECK(g.kc_problem.begin()->second == 1);
}

TEST_CASE("graph: three students, problems and KCs") {
  std::vector<InteractionRecord> rs{rec("S1", "P1", "K1"), rec("S1", "P1", "K2"), rec("S2", "P2", "K2"),
                                    rec("S2", "P3", "K3"), rec("S3", "P3", "K3"), rec("S3", "P1", "K1")};
  auto g = build_graph(rs);
  auto& v = g.vocabulary;
  auto sk = [&](const char* s, const char* k) { return std::pair{v.students.index(s), v.kcs.index(k)}; };
  auto kp = [&](const char* k, const char* p) { return std::pair{v.kcs.index(k), v.problems.index(p)}; };
  std::set<std::pair<std::size_t, std::size_t>> want_sk{sk("S1", "K1"), sk("S1", "K2"), sk("S2", "K2"),
                                                        sk("S2", "K3"), sk("S3", "K3"), sk("S3", "K1")};
  std::set<std::pair<std::size_t, std::size_t>> want_kp{kp("K1", "P1"), kp("K2", "P1"), kp("K2", "P2"),
                                                        kp("K3", "P3")};
  std::set<std::pair<std::size_t, std::size_t>> got_sk, got_kp;
  for (auto& [e, n] : g.student_kc) got_sk.insert(e);
  for (auto& [e, n] : g.kc_problem) got_kp.insert(e);
  CHECK(got_sk == want_sk);
  CHECK(got_kp == want_kp);
  CHECK(g.kc_problem.at(kp("K1", "P1")) == 2);
  CHECK(g.kc_problem.at(kp("K3", "P3")) == 2);
  CHECK(g.node_count() == 9);
}

TEST_CASE("graph multiplicities equal an independent tally") {
  Rng rng(3);
  std::vector<InteractionRecord> rs;
  for (int i = 0; i < 200; ++i) {
    rs.push_back(rec("S" + std::to_string(rng.index(7)), "P" + std::to_string(rng.index(9)),
                     "K" + std::to_string(rng.index(5))));
  }
  std::map<std::pair<std::string, std::string>, std::size_t> sk, kp;
  for (auto& r : rs) {
    ++sk[{r.student_id, r.kc_id}];
    ++kp[{r.kc_id, r.problem_id}];
  }
  auto g = build_graph(rs);
  const auto& v = g.vocabulary;
  CHECK(g.student_kc.size() == sk.size());
  CHECK(g.kc_problem.size() == kp.size());
  for (auto& [e, n] : sk) CHECK(g.student_kc.at({v.students.index(e.first), v.kcs.index(e.second)}) == n);
  for (auto& [e, n] : kp) CHECK(g.kc_problem.at({v.kcs.index(e.first), v.problems.index(e.second)}) == n);
  std::size_t total = 0;
  for (auto& [t, n] : g.triples) total += n;
  CHECK(total == rs.size());
}

TEST_CASE("performance groups") {
  std::vector<InteractionRecord> rs;
  for (int i = 0; i < 4; ++i) rs.push_back(rec("A", "P", "K", 1));
  for (int i = 0; i < 5; ++i) rs.push_back(rec("B", "P", "K", i < 2 ? 1 : 0));
  CHECK(performance_group("A", rs).label() == "90-100");
  CHECK(performance_group("B", rs).label() == "30-50");
  CHECK_THROWS_AS(performance_group("Z", rs), LookupError);

  CHECK(group_for_percentage(30.0, kDefaultGroupBoundaries).index == 1);
  CHECK(group_for_percentage(29.999, kDefaultGroupBoundaries).index == 0);
  CHECK(group_for_percentage(100.0, kDefaultGroupBoundaries).index == 4);
  CHECK(group_for_percentage(0.0, kDefaultGroupBoundaries).index == 0);
}

TEST_CASE("performance groups of 100 students match a direct computation") {
  SynthConfig c;
  c.num_students = 100;
  c.num_problems = 30;
  c.problems_per_student = 6;
  c.mastery_noise = 0.3;
  auto corpus = generate_synthetic(c);
  std::map<std::string, std::pair<int, int>> tally;
  for (auto& r : corpus.records) {
    tally[r.student_id].first += r.cfa;
    tally[r.student_id].second += 1;
  }
  std::map<int, int> want;
  for (auto& [s, t] : tally) {
    const double pct = 100.0 * t.first / t.second;
    const int g = pct < 30 ? 0 : pct < 50 ? 1 : pct < 70 ? 2 : pct < 90 ? 3 : 4;
    ++want[g];
  }
  std::map<int, int> got;
  auto groups = performance_groups(corpus.records);
  CHECK(groups.size() == 100);
  for (auto& [s, g] : groups) ++got[g.index];
  CHECK(got == want);
}

TEST_CASE("synthetic generator") {
  SynthConfig one;
  one.num_students = 8;
  one.num_problems = 6;
  one.num_strategy_groups = 1;
  one.problems_per_student = 4;
  one.min_strategy_length = one.max_strategy_length = 4;
  auto corpus = generate_synthetic(one);
  bool all_correct = true;
  for (auto& r : corpus.records) all_correct = all_correct && r.cfa == 1;
  CHECK(all_correct);
  std::set<std::vector<std::string>> distinct;
  for (auto& [i, s] : extract_strategies(corpus.records)) distinct.insert(s.kcs);
  CHECK(distinct.size() == 1);

  SynthConfig c;
  c.num_students = 30;
  c.num_problems = 20;
  c.mastery_noise = 0.2;
  std::ostringstream a, b;
  write_corpus_tsv(a, generate_synthetic(c).records);
  write_corpus_tsv(b, generate_synthetic(c).records);
  CHECK(a.str() == b.str());

  SynthConfig bad;
  bad.num_strategy_groups = 4;
  bad.num_kcs = 3;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
  bad = {};
  bad.mastery_noise = 1.5;
  CHECK_THROWS_AS(generate_synthetic(bad), ConfigError);
}

TEST_CASE("ground truth sidecar round trip") {
  SynthConfig c;
  c.num_students = 9;
  c.num_problems = 9;
  auto corpus = generate_synthetic(c);
  std::stringstream buf;
  write_ground_truth(buf, corpus.truth);
  auto back = read_ground_truth(buf);
  CHECK(back.student_group == corpus.truth.student_group);
  CHECK(back.problem_group == corpus.truth.problem_group);
  CHECK(back.canonical == corpus.truth.canonical);
}

}
