// stratpred command line: one subcommand per pipeline stage plus `pipeline`.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "stratpred/config.hpp"
#include "stratpred/error.hpp"
#include "stratpred/kernels.hpp"
#include "stratpred/stages.hpp"

namespace {

struct Options {
  std::string config_path;
  std::optional<long long> seed;
  std::string out = "run";
  std::optional<int> threads;
};

stratpred::RunConfig load(const Options& o) {
  stratpred::RunConfig c = o.config_path.empty() ? stratpred::RunConfig{}
                                                 : stratpred::RunConfig::from_file(o.config_path);
  if (o.seed) {
    if (*o.seed < 0) throw stratpred::ConfigError("--seed must be non-negative");
    c.seed = static_cast<std::uint64_t>(*o.seed);
  }
  if (o.threads) c.threads = *o.threads;
  c.finalize();
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Strategy prediction pipeline: mastery, embeddings, clustering, sampling, LSTM."};
  app.require_subcommand(1);
  Options opts;
  app.add_option("--config", opts.config_path, "flat key=value config file")->check(CLI::ExistingFile);
  app.add_option("--seed", opts.seed, "global seed (stage seeds are derived from it)");
  app.add_option("--out", opts.out, "run directory")->capture_default_str();
  app.add_option("--threads", opts.threads, "worker threads; 1 forces the sequential path")
      ->check(CLI::NonNegativeNumber);

  for (const char* name :
       {"ingest", "synth", "mastery", "embed", "cluster", "sample", "train", "evaluate", "report"}) {
    app.add_subcommand(name, std::string("run the ") + name + " stage")->fallthrough();
  }
  app.add_subcommand("pipeline", "run every stage in order")->fallthrough();
  app.add_subcommand("keys", "list configuration keys")->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(stratpred::ErrorKind::Config);
  }

  const std::string cmd = app.get_subcommands().front()->get_name();
  try {
    if (cmd == "keys") {
      for (const auto& k : stratpred::config_keys()) std::cout << k << "\n";
      return 0;
    }
    const stratpred::RunConfig config = load(opts);
    std::cerr << "[stratpred] kernels: " << stratpred::kernels::isa_name(stratpred::kernels::active_isa())
              << ", out: " << opts.out << "\n";
    stratpred::RunLock lock(opts.out);
    if (cmd == "pipeline") {
      stratpred::run_pipeline(config, opts.out);
    } else {
      stratpred::run_stage(stratpred::parse_stage(cmd), config, opts.out);
    }
    return 0;
  } catch (const stratpred::DependencyError& e) {
    std::cerr << "dependency error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const stratpred::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON artifact: " << e.what() << "\n";
    return static_cast<int>(stratpred::ErrorKind::Data);
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(stratpred::ErrorKind::Data);
  }
}
