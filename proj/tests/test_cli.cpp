#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "json.hpp"

#include "stratpred/config.hpp"
#include "stratpred/error.hpp"
#include "stratpred/stages.hpp"

using namespace stratpred;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / ("stratpred-" + name + "-" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

RunConfig small_config() {
  std::istringstream in(
      "# tiny corpus\n"
      "synth.num_students=20\n"
      "synth.num_problems=30\n"
      "synth.problems_per_student=10\n"
      "synth.noise=0.1\n"
      "mastery.epochs=3\n"
      "embed.walks=3000\n"
      "embed.epochs=2\n"
      "predict.epochs=5\n"
      "sample.fractions=0.5,0.25\n");
  auto c = RunConfig::from_stream(in);
  c.finalize();
  c.validate();
  return c;
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("configuration parsing") {
  std::istringstream in("seed = 7\n\n# comment\nembed.dim=16\nsample.method=rs\nsample.fractions=0.1, 0.3\n");
  auto c = RunConfig::from_stream(in);
  c.finalize();
  CHECK(c.seed == 7);
  CHECK(c.pipeline.embed.dim == 16);
  CHECK(c.method == SampleMethod::RS);
  CHECK(c.fractions == std::vector<double>{0.1, 0.3});

  std::istringstream unknown("seed=1\nembed.dimension=3\n");
  try {
    RunConfig::from_stream(unknown);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    CHECK(std::string(e.what()).find("embed.dimension") != std::string::npos);
  }
  RunConfig r;
  CHECK_THROWS_AS(r.set("predict.epochs", "-3"), ConfigError);
  CHECK_THROWS_AS(r.set("cluster.radius", "abc"), ConfigError);
  r.fractions = {1.5};
  CHECK_THROWS_AS(r.validate(), ConfigError);

  const auto keys = config_keys();
  CHECK(std::is_sorted(keys.begin(), keys.end()));
  CHECK(std::find(keys.begin(), keys.end(), "cluster.lambda_local") != keys.end());
  RunConfig a, b;
  a.threads = 1;
  b.threads = 8;
  CHECK(a.snapshot() == b.snapshot());
  CHECK(a.snapshot().contains("embed.side"));
}

TEST_CASE("hashing, atomic writes and the run lock") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  TempDir dir("io");
  const auto file = dir.path / "a.txt";
  write_atomic(file, "first");
  write_atomic(file, "second");
  std::ifstream in(file);
  std::string text((std::istreambuf_iterator<char>(in)), {});
  CHECK(text == "second");
  CHECK(sha256_file(file) == sha256_hex("second"));
  int entries = 0;
  for ([[maybe_unused]] auto& e : fs::directory_iterator(dir.path)) ++entries;
  CHECK(entries == 1);
  CHECK_THROWS_AS(sha256_file(dir.path / "missing"), DataError);

  {
    RunLock lock(dir.path);
    CHECK_THROWS_AS(RunLock(dir.path), ConfigError);
  }
  CHECK_NOTHROW(RunLock(dir.path));

  CHECK(parse_stage("train") == Stage::Train);
  CHECK(stage_name(Stage::Evaluate) == "evaluate");
  CHECK_THROWS_AS(parse_stage("fit"), ConfigError);
  CHECK(run_tag(SampleMethod::GS, 0.15) == "GS_0.15");
}

TEST_CASE("stages: dependencies, corruption and the report") {
  TempDir dir("stages");
  const auto cfg = small_config();

  try {
    run_stage(Stage::Mastery, cfg, dir.path);
    FAIL("expected DependencyError");
  } catch (const DependencyError& e) {
    CHECK((e.stage() == "ingest" || e.stage() == "synth"));
  }

  for (Stage s : {Stage::Synth, Stage::Mastery, Stage::Embed, Stage::Cluster, Stage::Sample}) {
    run_stage(s, cfg, dir.path);
  }
  try {
    run_stage(Stage::Evaluate, cfg, dir.path);
    FAIL("expected DependencyError");
  } catch (const DependencyError& e) {
    CHECK(e.stage() == "train");
    CHECK(std::string(e.what()).find("train") != std::string::npos);
  }
  run_stage(Stage::Train, cfg, dir.path);
  run_stage(Stage::Evaluate, cfg, dir.path);
  const auto manifest = run_stage(Stage::Report, cfg, dir.path);
  CHECK(manifest.stage == "report");
  CHECK(fs::exists(dir.path / "manifests" / "report.json"));

  const auto report = read_json(dir.path / "report.json");
  const auto& runs = report.at("runs");
  REQUIRE(runs.size() == 2);
  CHECK(runs[0].at("budget").get<int>() < runs[1].at("budget").get<int>());
  for (const auto& run : runs) {
    const auto metrics = read_json(dir.path / "metrics" / (run.at("tag").get<std::string>() + ".json"));
    CHECK(metrics.at("token_accuracy") == run.at("token_accuracy"));
    CHECK(metrics.at("per_group") == run.at("per_group"));
  }
  CHECK(!report.at("refinement_trace").empty());

  // Tampering with an upstream artifact is detected downstream.
  {
    std::ofstream out(dir.path / "embeddings.tsv", std::ios::app);
    out << "student\tintruder";
    for (int i = 0; i < 64; ++i) out << "\t0";
    out << "\n";
  }
  try {
    run_stage(Stage::Cluster, cfg, dir.path);
    FAIL("expected DataError");
  } catch (const DependencyError&) {
    FAIL("wrong error class");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("corruption") != std::string::npos);
    CHECK(e.exit_code() == 4);
  }
}

TEST_CASE("pipeline output is reproducible") {
  TempDir a("rep-a"), b("rep-b");
  auto cfg = small_config();
  cfg.fractions = {0.5};
  run_pipeline(cfg, a.path);
  cfg.threads = 3;
  run_pipeline(cfg, b.path);
  for (auto rel : {"corpus.tsv", "split.tsv", "embeddings.tsv", "clusters.tsv", "metrics/AS_0.5.json",
                   "predictions/AS_0.5.tsv"}) {
    CAPTURE(rel);
    CHECK(sha256_file(a.path / rel) == sha256_file(b.path / rel));
  }
}

}
