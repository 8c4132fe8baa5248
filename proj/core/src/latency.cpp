#include "automoe/latency.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <nlohmann/json.hpp>
#include <thread>

#include "automoe/errors.hpp"
#include "automoe/moe_model.hpp"
#include "internal.hpp"

namespace automoe {
namespace {

std::atomic<int> g_active_workers{0};

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start, Clock::time_point end) {
  return std::chrono::duration<double, std::milli>(end - start).count();
}

}  // namespace

void validate_latency_spec(const LatencySpec& s) {
  if (s.passes < 10) throw ConfigError("latency passes must be >= 10");
  if (!(s.trim_fraction >= 0.0 && s.trim_fraction < 0.5)) throw ConfigError("trim fraction must lie in [0, 0.5)");
  if (s.src_len < 1 || s.tgt_len < 1 || s.batch_size < 1) throw ConfigError("latency lengths and batch must be >= 1");
  if (s.warmup < 0) throw ConfigError("warmup passes must be >= 0");
  if (s.beam < 1) throw ConfigError("beam width must be >= 1");
}

double truncated_mean(std::span<const double> samples, double trim) {
  if (samples.empty()) throw ConfigError("truncated mean of no samples");
  if (!(trim >= 0.0 && trim < 0.5)) throw ConfigError("trim fraction must lie in [0, 0.5)");
  const std::size_t n = samples.size();
  if (trim > 0.0 && static_cast<double>(n) < 1.0 / trim - 1e-9) {
    throw ConfigError("truncated mean needs at least " + std::to_string(static_cast<int>(std::ceil(1.0 / trim))) +
                      " samples, got " + std::to_string(n));
  }
  std::vector<double> v(samples.begin(), samples.end());
  std::sort(v.begin(), v.end());
  const auto drop = static_cast<std::size_t>(std::floor(static_cast<double>(n) * trim));
  double sum = 0;
  for (std::size_t i = drop; i < n - drop; ++i) sum += v[i];
  return sum / static_cast<double>(n - 2 * drop);
}

bool satisfies(double measured_ms, double constraint_ms) { return measured_ms <= constraint_ms; }

std::string host_descriptor() {
  std::string model = "unknown-cpu";
  std::ifstream in("/proc/cpuinfo");
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) model = line.substr(colon + 2);
      break;
    }
  }
  return model + "; logical_cpus=" + std::to_string(std::thread::hardware_concurrency()) + "; threads=1";
}

WorkerGuard::WorkerGuard() { ++g_active_workers; }
WorkerGuard::~WorkerGuard() { --g_active_workers; }
int active_workers() { return g_active_workers.load(); }

LatencyResult measure(const Gene& gene, const ParamStore& store, const std::vector<ParamSpec>& slices,
                      const ModelDims& dims, const LatencySpec& spec, std::uint64_t seed) {
  validate_latency_spec(spec);
  if (active_workers() > 0) throw std::runtime_error("latency measurement refused: framework workers are active");
  if (spec.src_len > dims.max_positions || spec.tgt_len > dims.max_positions) {
    throw ConfigError("latency lengths exceed the model's positional table (" + std::to_string(dims.max_positions) + ")");
  }
  if (dims.vocab <= tokens::kFirstRegular) throw ConfigError("vocab too small for latency probes");

  Rng rng(seed);
  std::uniform_int_distribution<int> tok(tokens::kFirstRegular, dims.vocab - 1);
  std::vector<std::vector<int>> sources(static_cast<std::size_t>(spec.batch_size));
  for (auto& s : sources) {
    s.resize(static_cast<std::size_t>(spec.src_len));
    for (auto& t : s) t = tok(rng);
  }

  Tape tape(false);
  const BoundWeights w = bind_weights(tape, store, slices);
  const std::size_t mark = tape.size();

  auto one_pass = [&](double& encoder_ms) {
    const auto start = Clock::now();
    double enc = 0;
    for (const auto& src : sources) {
      const auto t0 = Clock::now();
      const std::size_t len[1] = {src.size()};
      EncoderResult er = encode(tape, w, gene, src, len);
      DecoderState st = start_decoding(tape, w, gene, er);
      enc += ms_since(t0, Clock::now());
      if (spec.beam == 1) {
        int token = tokens::kBos;
        for (int i = 0; i < spec.tgt_len; ++i) {
          const Tensor& logits = tape.value(decode_step(tape, w, gene, st, token));
          token = static_cast<int>(std::max_element(logits.data(), logits.data() + logits.cols()) - logits.data());
        }
      } else {
        // Beam search may stop early on eos; it is timed as-is.
        beam_decode(tape, w, gene, src, static_cast<std::size_t>(spec.tgt_len), static_cast<std::size_t>(spec.beam));
      }
      tape.truncate(mark);
    }
    encoder_ms = enc;
    return ms_since(start, Clock::now());
  };

  LatencyResult r;
  double ignored = 0;
  for (int i = 0; i < spec.warmup; ++i) one_pass(ignored);
  r.warmup_passes = spec.warmup;
  for (int i = 0; i < spec.passes; ++i) {
    double enc = 0;
    r.samples.push_back(one_pass(enc));
    r.encoder_samples.push_back(enc);
  }
  r.total_ms = truncated_mean(r.samples, spec.trim_fraction);
  r.encoder_ms = truncated_mean(r.encoder_samples, spec.trim_fraction);
  r.host = host_descriptor();
  return r;
}

void append_latency_log(const std::string& path, const Gene& gene, const LatencySpec& spec, const LatencyResult& r) {
  nlohmann::ordered_json j;
  j["gene_hash"] = hex_hash(gene_hash(gene));
  j["spec"] = {{"passes", spec.passes},   {"trim_fraction", spec.trim_fraction}, {"src_len", spec.src_len},
               {"tgt_len", spec.tgt_len}, {"batch_size", spec.batch_size},       {"warmup", spec.warmup},
               {"beam", spec.beam}};
  if (spec.constraint_ms) j["spec"]["constraint_ms"] = *spec.constraint_ms;
  j["samples"] = r.samples;
  j["truncated_mean_ms"] = r.total_ms;
  j["encoder_ms"] = r.encoder_ms;
  j["host"] = r.host;
  j["timestamp"] = static_cast<long long>(std::time(nullptr));
  detail::append_line(path, j.dump());
}

}  // namespace automoe
