#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "automoe/corpus.hpp"

namespace automoe::cli {

enum ExitCode { kOk = 0, kConfigError = 2, kRuntimeError = 3, kInfeasible = 4 };

/// Expands `--config file.json` into flag tokens placed before the user's own
/// flags. Keys are flag names without dashes. A key whose flag also appears on
/// the command line is dropped, so command-line values always win. Booleans
/// become bare flags (false drops them); arrays repeat the flag.
std::vector<std::string> expand_config(const std::vector<std::string>& args);

struct DatasetSpec {
  std::string task;  // synthetic task name; empty when using corpus files
  int vocab = 64;
  int len = 12;
  std::size_t count = 20000;
  std::string src_path, tgt_path;
  std::string vocab_file;  // reuse an existing vocabulary for corpus files
  int max_len = 64;
  int min_freq = 1;
  std::size_t holdout = 1000;
  std::uint64_t seed = 1;
};

struct Dataset {
  ParallelCorpus train;
  ParallelCorpus valid;
};

/// Exactly one of task / (src, tgt) must be given; throws ConfigError otherwise.
Dataset load_dataset(const DatasetSpec& spec);

/// --out if given, else $AUTOMOE_OUTPUT_ROOT (default "runs") / <command>.
std::string resolve_output_dir(const std::optional<std::string>& out, const std::string& command);

struct Manifest {
  std::string command;
  nlohmann::ordered_json config;
  std::uint64_t seed = 0;
  std::vector<std::string> artifacts;
  bool contains_latency = false;
};

/// Writes manifest.json with the config hash and component versions.
void write_manifest(const std::string& out_dir, const Manifest& m);

}  // namespace automoe::cli
