#include "run_config.hpp"

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "automoe/errors.hpp"
#include "automoe/real.hpp"

namespace automoe::cli {

namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string scalar_text(const nlohmann::json& v, const std::string& key) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number()) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v.get<double>();
    return ss.str();
  }
  throw ConfigError("config key '" + key + "' must be a string, number, boolean or array of those");
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  // args[0] is the subcommand; the rest are its flags.
  std::optional<std::string> config;
  std::vector<std::string> user;
  std::set<std::string> given;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a == "--config") {
      if (i + 1 >= args.size()) throw ConfigError("--config needs a file");
      config = args[++i];
      continue;
    }
    if (a.rfind("--config=", 0) == 0) {
      config = a.substr(9);
      continue;
    }
    if (a.rfind("--", 0) == 0) given.insert(a.substr(2, a.find('=') == std::string::npos ? std::string::npos : a.find('=') - 2));
    user.push_back(a);
  }
  std::vector<std::string> out{args.empty() ? std::string() : args[0]};
  if (config) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(read_file(*config));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("config " + *config + ": " + e.what(), e.byte);
    }
    if (!j.is_object()) throw ConfigError("config file must hold a JSON object");
    for (const auto& [key, value] : j.items()) {
      if (key == "command" || given.count(key)) continue;
      const std::string flag = "--" + key;
      if (value.is_boolean()) {
        if (value.get<bool>()) out.push_back(flag);
      } else if (value.is_array()) {
        for (const auto& v : value) {
          out.push_back(flag);
          out.push_back(scalar_text(v, key));
        }
      } else {
        out.push_back(flag);
        out.push_back(scalar_text(value, key));
      }
    }
  }
  out.insert(out.end(), user.begin(), user.end());
  return out;
}

Dataset load_dataset(const DatasetSpec& spec) {
  const bool synthetic = !spec.task.empty();
  const bool files = !spec.src_path.empty() || !spec.tgt_path.empty();
  if (synthetic == files) throw ConfigError("give exactly one dataset: --task or --src/--tgt");
  ParallelCorpus full;
  if (synthetic) {
    full = make_synthetic(parse_task(spec.task), spec.vocab, spec.len, spec.count, spec.seed);
  } else {
    if (spec.src_path.empty() || spec.tgt_path.empty()) throw ConfigError("--src and --tgt must be given together");
    VocabPolicy policy{spec.min_freq, spec.max_len};
    std::optional<Vocabulary> vocab;
    if (!spec.vocab_file.empty()) vocab = Vocabulary::parse(read_file(spec.vocab_file));
    full = load_corpus(spec.src_path, spec.tgt_path, policy, vocab ? &*vocab : nullptr);
    if (full.truncated) std::cerr << "truncated " << full.truncated << " lines to " << spec.max_len << " tokens\n";
  }
  if (spec.holdout == 0) return {full, full};
  auto [train, valid] = split_corpus(full, spec.holdout, spec.seed);
  return {std::move(train), std::move(valid)};
}

std::string resolve_output_dir(const std::optional<std::string>& out, const std::string& command) {
  fs::path dir;
  if (out) {
    dir = *out;
  } else {
    const char* root = std::getenv("AUTOMOE_OUTPUT_ROOT");
    dir = fs::path(root && *root ? root : "runs") / command;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".write_probe";
  {
    std::ofstream p(probe);
    if (!p) throw ConfigError("output directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
  return dir.string();
}

void write_manifest(const std::string& out_dir, const Manifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["config"] = m.config;
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(fnv1a(m.config.dump())));
  j["config_hash"] = hex;
  j["seed"] = m.seed;
  j["components"] = {{"automoe", "0.1.0"},
                     {"precision", sizeof(Real) == 8 ? "f64" : "f32"},
                     {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                           std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                     {"CLI11", CLI11_VERSION},
                     {"compiler", __VERSION__}};
  j["artifacts"] = m.artifacts;
  j["deterministic"] = !m.contains_latency;
  if (m.contains_latency) j["note"] = "latency measurements are wall-clock and exempt from re-run identity";
  std::ofstream out(fs::path(out_dir) / "manifest.json");
  if (!out) throw ConfigError("cannot write manifest in " + out_dir);
  out << j.dump(2) << "\n";
}

}  // namespace automoe::cli
