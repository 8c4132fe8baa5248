#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "automoe/param_store.hpp"
#include "automoe/search_space.hpp"

namespace automoe {

struct LatencySpec {
  int passes = 300;  // 300 gold, 100 partially gold
  double trim_fraction = 0.10;
  int src_len = 30;
  int tgt_len = 30;
  int batch_size = 1;
  int warmup = 10;
  int beam = 1;  // 1 = greedy
  std::optional<double> constraint_ms;
};

inline constexpr int kGoldPasses = 300;
inline constexpr int kPartiallyGoldPasses = 100;

/// Throws ConfigError on passes < 10, trim outside [0, 0.5), or non-positive lengths.
void validate_latency_spec(const LatencySpec& spec);

/// Drops floor(n·trim) smallest and largest samples and averages the rest.
/// Throws ConfigError when there are no samples, or fewer than 1/trim.
double truncated_mean(std::span<const double> samples, double trim_fraction);

struct LatencyResult {
  double total_ms = 0;    // truncated mean of full translation passes
  double encoder_ms = 0;  // truncated mean of the encoder part of the same passes
  std::vector<double> samples;
  std::vector<double> encoder_samples;
  int warmup_passes = 0;
  std::string host;

  double decoder_share() const noexcept { return total_ms > 0 ? (total_ms - encoder_ms) / total_ms : 0.0; }
};

/// Times `spec.passes` translations (encoder once, then tgt_len greedy
/// incremental decoder steps, never stopping early) after `spec.warmup`
/// untimed passes. Sources are random regular tokens drawn from `seed`.
/// Refuses to run (std::runtime_error) while a WorkerGuard is alive.
LatencyResult measure(const Gene& gene, const ParamStore& store, const std::vector<ParamSpec>& slices,
                      const ModelDims& dims, const LatencySpec& spec, std::uint64_t seed = 0);

/// measured <= constraint (inclusive).
bool satisfies(double measured_ms, double constraint_ms);

/// CPU model, logical core count and the thread count used for measurement.
std::string host_descriptor();

/// Marks a framework worker thread as busy for its lifetime.
class WorkerGuard {
 public:
  WorkerGuard();
  ~WorkerGuard();
  WorkerGuard(const WorkerGuard&) = delete;
  WorkerGuard& operator=(const WorkerGuard&) = delete;
};
int active_workers();

/// Appends {gene_hash, spec, samples, truncated_mean, encoder_ms, host, timestamp}.
void append_latency_log(const std::string& path, const Gene& gene, const LatencySpec& spec, const LatencyResult& r);

}  // namespace automoe
