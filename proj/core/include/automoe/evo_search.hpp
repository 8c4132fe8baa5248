#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "automoe/cost_model.hpp"
#include "automoe/search_space.hpp"

namespace automoe {

struct EvoConfig {
  int num_iterations = 15;
  int num_population = 125;
  int num_parents = 25;
  int num_mutations = 50;
  int num_crossover = 50;
  double mutate_prob = 0.3;
  std::optional<double> latency_limit_ms;
  std::optional<double> flops_limit;
  bool unconstrained = false;
  std::uint64_t seed = 0;
  CostOptions cost;  // lengths used for the FLOPs constraint and reports
};

/// Throws ConfigError when parents exceed the population, the mutation
/// probability is outside [0,1], or no constraint is given without `unconstrained`.
void validate_evo_config(const EvoConfig& cfg);

/// Resamples each searchable position with probability `prob`. A changed
/// layer count truncates or extends the per-layer lists with fresh samples;
/// a changed expert count resamples every width in that layer.
Gene mutate(const Gene& gene, const SearchSpace& space, double prob, Rng& rng);

/// Uniform per-position choice between the parents. A layer's expert count and
/// widths always come together from one parent.
Gene crossover(const Gene& a, const Gene& b, const SearchSpace& space, Rng& rng);

/// Indices of the entries no other entry weakly dominates with at least one
/// strict improvement (both axes minimized). Identical points are all kept.
std::vector<std::size_t> pareto_front(std::span<const std::pair<double, double>> points);

struct Candidate {
  Gene gene;
  double fitness = 0;
  double flops = 0;
  std::optional<double> latency_ms;
};

struct IterationRecord {
  int iteration = 0;
  std::vector<Candidate> population;  // as evaluated at the start of the iteration
  std::vector<std::size_t> parents;   // indices into population
  int mutations_admitted = 0;
  int mutations_rejected = 0;
  int crossovers_admitted = 0;
  int crossovers_rejected = 0;
  double best_fitness = 0;
};

struct EvoResult {
  Candidate best;
  std::vector<Candidate> pareto;  // over every gene evaluated, sorted by FLOPs
  std::vector<IterationRecord> history;
  int seeding_attempts = 0;
};

using FitnessFn = std::function<double(const Gene&)>;
/// Returns measured latency in ms for `passes` timed passes.
using LatencyFn = std::function<double(const Gene&, int passes)>;

/// Constraint-filtered evolution. Fitness (lower is better) is cached per
/// gene. With a latency limit, admission uses partially gold latency and the
/// returned front is re-measured with gold passes. Throws InfeasibleError if
/// seeding exhausts 50 × num_population attempts.
EvoResult evolve(const SearchSpace& space, const EvoConfig& cfg, const FitnessFn& fitness,
                 const LatencyFn& latency = nullptr);

/// One JSON line per iteration.
void write_history_jsonl(const std::string& path, const EvoResult& result);

}  // namespace automoe
