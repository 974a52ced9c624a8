#pragma once

// Persistent pipeline stages over a run directory: atomic artifact writes,
// per-stage manifests with SHA-256 hashes, and a run lock.

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "stratpred/config.hpp"

namespace stratpred {

enum class Stage { Ingest, Synth, Mastery, Embed, Cluster, Sample, Train, Evaluate, Report };

std::string_view stage_name(Stage s);
/// Throws ConfigError for unknown names.
Stage parse_stage(std::string_view s);

struct StageManifest {
  std::string stage;
  std::map<std::string, std::string> inputs;   ///< run-relative path -> sha256
  std::map<std::string, std::string> outputs;  ///< run-relative path -> sha256
  double seconds = 0.0;
  nlohmann::json config;

  nlohmann::json to_json() const;
  static StageManifest from_json(const nlohmann::json& j);
};

std::string sha256_hex(std::string_view data);
/// Throws DataError when the file cannot be read.
std::string sha256_file(const std::filesystem::path& path);

/// Writes to a temporary sibling and renames it over `path`.
void write_atomic(const std::filesystem::path& path, std::string_view contents);

/// Exclusive `.lock` file in a run directory, removed on destruction.
class RunLock {
 public:
  explicit RunLock(const std::filesystem::path& dir);
  ~RunLock();
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

/// Sample / model / metrics file stem for one budget, e.g. "AS_0.15".
std::string run_tag(SampleMethod method, double fraction);

/// Runs one stage against `dir` (created if needed). Missing upstream
/// artifacts raise DependencyError naming the stage to run first; an upstream
/// artifact whose hash differs from its manifest raises DataError.
StageManifest run_stage(Stage stage, const RunConfig& config, const std::filesystem::path& dir);

/// Corpus stage (ingest when corpus.path is set, synth otherwise), then every
/// downstream stage in order.
std::vector<StageManifest> run_pipeline(const RunConfig& config, const std::filesystem::path& dir);

}  // namespace stratpred
