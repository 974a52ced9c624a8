#pragma once

// Flat key=value run configuration with section prefixes (mastery.epochs=10).

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "stratpred/corpus.hpp"
#include "stratpred/pipeline.hpp"
#include "stratpred/predict.hpp"

namespace stratpred {

struct RunConfig {
  std::uint64_t seed = 1;
  int threads = 0;  ///< 0 = hardware concurrency

  std::string corpus_path;  ///< empty: the pipeline synthesises a corpus
  std::string schema_path;
  SynthConfig synth;
  bool synth_seed_set = false;

  PipelineConfig pipeline;
  SampleMethod method = SampleMethod::AS;
  std::vector<double> fractions{0.15};

  /// Applies one key; throws ConfigError for unknown keys or bad values.
  void set(const std::string& key, const std::string& value);
  /// Re-derives stage seeds from `seed`; call after the last set().
  void finalize();
  void validate() const;

  static RunConfig from_stream(std::istream& in);
  static RunConfig from_file(const std::string& path);

  /// Every key with its current value, in a stable order.
  nlohmann::json snapshot() const;
};

/// Known configuration keys, sorted.
std::vector<std::string> config_keys();

}  // namespace stratpred
