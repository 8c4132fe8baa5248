#include "automoe/evo_search.hpp"

#include <algorithm>
#include <limits>
#include <nlohmann/json.hpp>
#include <unordered_map>

#include "automoe/errors.hpp"
#include "automoe/latency.hpp"
#include "internal.hpp"

namespace automoe {
namespace {

int pick(const std::vector<int>& choices, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, choices.size() - 1);
  return choices[d(rng)];
}

std::vector<int> sample_widths(const SearchSpace& s, int experts, Rng& rng) {
  std::vector<int> w;
  for (int j = 0; j < experts; ++j) w.push_back(pick(s.ffn_dim_choices, rng));
  return w;
}

int sample_experts(const SearchSpace& s, Rng& rng) {
  std::uniform_int_distribution<int> d(1, s.max_experts_per_layer);
  return d(rng);
}

void push_enc_layer(Gene& g, const SearchSpace& s, Rng& rng) {
  g.enc_heads.push_back(pick(s.head_choices, rng));
  const int e = sample_experts(s, rng);
  g.enc_experts.push_back(e);
  g.enc_expert_ffn_dims.push_back(sample_widths(s, e, rng));
}

void push_dec_layer(Gene& g, const SearchSpace& s, Rng& rng) {
  g.dec_self_heads.push_back(pick(s.head_choices, rng));
  g.dec_cross_heads.push_back(pick(s.head_choices, rng));
  g.dec_arbitrary_attn.push_back(pick(s.arbitrary_attn_choices, rng));
  const int e = sample_experts(s, rng);
  g.dec_experts.push_back(e);
  g.dec_expert_ffn_dims.push_back(sample_widths(s, e, rng));
}

void resize_enc(Gene& g, const SearchSpace& s, int n, Rng& rng) {
  const auto un = static_cast<std::size_t>(n);
  if (g.enc_heads.size() > un) {
    g.enc_heads.resize(un);
    g.enc_experts.resize(un);
    g.enc_expert_ffn_dims.resize(un);
  }
  while (g.enc_heads.size() < un) push_enc_layer(g, s, rng);
  g.num_enc_layers = n;
}

void resize_dec(Gene& g, const SearchSpace& s, int n, Rng& rng) {
  const auto un = static_cast<std::size_t>(n);
  if (g.dec_self_heads.size() > un) {
    g.dec_self_heads.resize(un);
    g.dec_cross_heads.resize(un);
    g.dec_arbitrary_attn.resize(un);
    g.dec_experts.resize(un);
    g.dec_expert_ffn_dims.resize(un);
  }
  while (g.dec_self_heads.size() < un) push_dec_layer(g, s, rng);
  g.num_dec_layers = n;
}

void mutate_expert_block(int& experts, std::vector<int>& widths, const SearchSpace& s, std::bernoulli_distribution& coin,
                         Rng& rng) {
  if (coin(rng)) {
    const int e = sample_experts(s, rng);
    if (e != experts) {
      experts = e;
      widths = sample_widths(s, e, rng);
      return;
    }
  }
  for (int& w : widths) {
    if (coin(rng)) w = pick(s.ffn_dim_choices, rng);
  }
}

}  // namespace

void validate_evo_config(const EvoConfig& c) {
  if (c.num_iterations < 1 || c.num_population < 1 || c.num_parents < 1) {
    throw ConfigError("iterations, population and parents must be >= 1");
  }
  if (c.num_parents > c.num_population) throw ConfigError("num_parents must not exceed num_population");
  if (c.num_mutations < 0 || c.num_crossover < 0) throw ConfigError("pool sizes must be >= 0");
  if (!(c.mutate_prob >= 0.0 && c.mutate_prob <= 1.0)) throw ConfigError("mutate_prob must lie in [0, 1]");
  if (!c.unconstrained && !c.latency_limit_ms && !c.flops_limit) {
    throw ConfigError("a latency or FLOPs constraint is required (or mark the search unconstrained)");
  }
}

Gene mutate(const Gene& gene, const SearchSpace& space, double prob, Rng& rng) {
  std::bernoulli_distribution coin(prob);
  Gene g = gene;
  if (coin(rng)) g.embed_dim_enc = pick(space.embed_dim_choices, rng);
  if (coin(rng)) g.embed_dim_dec = pick(space.embed_dim_choices, rng);
  if (coin(rng)) g.qkv_dim = pick(space.qkv_dim_choices, rng);
  if (coin(rng)) resize_enc(g, space, pick(space.encoder_layer_choices, rng), rng);
  if (coin(rng)) resize_dec(g, space, pick(space.decoder_layer_choices, rng), rng);
  for (std::size_t l = 0; l < g.enc_heads.size(); ++l) {
    if (coin(rng)) g.enc_heads[l] = pick(space.head_choices, rng);
    mutate_expert_block(g.enc_experts[l], g.enc_expert_ffn_dims[l], space, coin, rng);
  }
  for (std::size_t l = 0; l < g.dec_self_heads.size(); ++l) {
    if (coin(rng)) g.dec_self_heads[l] = pick(space.head_choices, rng);
    if (coin(rng)) g.dec_cross_heads[l] = pick(space.head_choices, rng);
    if (coin(rng)) g.dec_arbitrary_attn[l] = pick(space.arbitrary_attn_choices, rng);
    mutate_expert_block(g.dec_experts[l], g.dec_expert_ffn_dims[l], space, coin, rng);
  }
  return g;
}

Gene crossover(const Gene& a, const Gene& b, const SearchSpace& space, Rng& rng) {
  if (!validate_gene(space, a).empty() || !validate_gene(space, b).empty()) {
    throw ConfigError("crossover parents must both be valid in the search space");
  }
  std::bernoulli_distribution coin(0.5);
  auto choose = [&]() -> const Gene& { return coin(rng) ? a : b; };
  Gene g;
  g.embed_dim_enc = choose().embed_dim_enc;
  g.embed_dim_dec = choose().embed_dim_dec;
  g.qkv_dim = choose().qkv_dim;

  const Gene& enc_src = choose();
  g.num_enc_layers = enc_src.num_enc_layers;
  for (std::size_t l = 0; l < std::size_t(g.num_enc_layers); ++l) {
    const bool both = l < a.enc_heads.size() && l < b.enc_heads.size();
    const Gene& h = both ? choose() : enc_src;
    const Gene& e = both ? choose() : enc_src;
    g.enc_heads.push_back(h.enc_heads[l]);
    g.enc_experts.push_back(e.enc_experts[l]);
    g.enc_expert_ffn_dims.push_back(e.enc_expert_ffn_dims[l]);
  }

  const Gene& dec_src = choose();
  g.num_dec_layers = dec_src.num_dec_layers;
  for (std::size_t l = 0; l < std::size_t(g.num_dec_layers); ++l) {
    const bool both = l < a.dec_self_heads.size() && l < b.dec_self_heads.size();
    auto from = [&]() -> const Gene& { return both ? choose() : dec_src; };
    g.dec_self_heads.push_back(from().dec_self_heads[l]);
    g.dec_cross_heads.push_back(from().dec_cross_heads[l]);
    g.dec_arbitrary_attn.push_back(from().dec_arbitrary_attn[l]);
    const Gene& e = from();
    g.dec_experts.push_back(e.dec_experts[l]);
    g.dec_expert_ffn_dims.push_back(e.dec_expert_ffn_dims[l]);
  }
  return g;
}

std::vector<std::size_t> pareto_front(std::span<const std::pair<double, double>> pts) {
  std::vector<std::size_t> order(pts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return pts[x] < pts[y]; });
  // In (fitness, cost) order, a point is dominated iff some earlier distinct
  // point has cost <= its cost.
  std::vector<std::size_t> keep;
  double min_cost = std::numeric_limits<double>::infinity();
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && pts[order[j]] == pts[order[i]]) ++j;
    const double c = pts[order[i]].second;
    if (c < min_cost) {
      for (std::size_t k = i; k < j; ++k) keep.push_back(order[k]);
      min_cost = c;
    }
    i = j;
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

EvoResult evolve(const SearchSpace& space, const EvoConfig& cfg, const FitnessFn& fitness, const LatencyFn& latency) {
  validate_evo_config(cfg);
  require_valid_space(space);
  if (cfg.latency_limit_ms && !latency) throw ConfigError("a latency limit needs a latency probe");
  Rng rng(cfg.seed);

  struct Info {
    Candidate cand;
    bool admissible = false;
    bool has_fitness = false;
  };
  std::unordered_map<std::uint64_t, Info> cache;
  std::vector<std::uint64_t> evaluated_order;

  auto info_for = [&](const Gene& g) -> Info& {
    const std::uint64_t h = gene_hash(g);
    auto it = cache.find(h);
    if (it != cache.end()) return it->second;
    Info info;
    info.cand.gene = g;
    info.cand.flops = count_flops(g, cfg.cost).total();
    info.admissible = !cfg.flops_limit || info.cand.flops <= *cfg.flops_limit;
    if (info.admissible && cfg.latency_limit_ms) {
      info.cand.latency_ms = latency(g, kPartiallyGoldPasses);
      info.admissible = satisfies(*info.cand.latency_ms, *cfg.latency_limit_ms);
    }
    return cache.emplace(h, std::move(info)).first->second;
  };
  auto evaluate = [&](const Gene& g) -> const Candidate& {
    Info& info = info_for(g);
    if (!info.has_fitness) {
      info.cand.fitness = fitness(g);
      info.has_fitness = true;
      evaluated_order.push_back(gene_hash(g));
    }
    return info.cand;
  };

  EvoResult result;
  std::vector<Gene> popu;
  const int cap = 50 * cfg.num_population;
  constexpr int kRetries = 50;
  while (static_cast<int>(popu.size()) < cfg.num_population) {
    if (result.seeding_attempts >= cap) {
      throw InfeasibleError("no constraint-satisfying gene found after " + std::to_string(cap) +
                            " sampling attempts (" + std::to_string(popu.size()) + " admitted)");
    }
    ++result.seeding_attempts;
    Gene g = sample_gene(space, rng);
    if (info_for(g).admissible) popu.push_back(std::move(g));
  }

  auto pick_index = [&](std::size_t n) {
    std::uniform_int_distribution<std::size_t> d(0, n - 1);
    return d(rng);
  };

  for (int it = 0; it < cfg.num_iterations; ++it) {
    IterationRecord rec;
    rec.iteration = it;
    for (const auto& g : popu) rec.population.push_back(evaluate(g));
    std::vector<std::size_t> order(popu.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return rec.population[x].fitness < rec.population[y].fitness;
    });
    const std::size_t np = std::min<std::size_t>(static_cast<std::size_t>(cfg.num_parents), order.size());
    rec.parents.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(np));
    rec.best_fitness = rec.population[order.front()].fitness;

    std::vector<Gene> next;
    for (std::size_t i : rec.parents) next.push_back(popu[i]);
    // Each slot retries until a child satisfies the constraints, up to kRetries draws.
    for (int i = 0; i < cfg.num_mutations; ++i) {
      for (int attempt = 0; attempt < kRetries; ++attempt) {
        Gene m = mutate(popu[pick_index(popu.size())], space, cfg.mutate_prob, rng);
        if (info_for(m).admissible) {
          next.push_back(std::move(m));
          ++rec.mutations_admitted;
          break;
        }
        ++rec.mutations_rejected;
      }
    }
    for (int i = 0; i < cfg.num_crossover; ++i) {
      for (int attempt = 0; attempt < kRetries; ++attempt) {
        const Gene& a = popu[pick_index(popu.size())];
        const Gene& b = popu[pick_index(popu.size())];
        Gene c = crossover(a, b, space, rng);
        if (info_for(c).admissible) {
          next.push_back(std::move(c));
          ++rec.crossovers_admitted;
          break;
        }
        ++rec.crossovers_rejected;
      }
    }
    result.history.push_back(std::move(rec));
    popu = std::move(next);
  }

  // Final ranking of the last population.
  const Candidate* best = nullptr;
  for (const auto& g : popu) {
    const Candidate& c = evaluate(g);
    if (!best || c.fitness < best->fitness) best = &c;
  }
  result.best = *best;

  std::vector<std::pair<double, double>> pts;
  for (auto h : evaluated_order) pts.emplace_back(cache.at(h).cand.fitness, cache.at(h).cand.flops);
  for (std::size_t i : pareto_front(pts)) {
    Candidate c = cache.at(evaluated_order[i]).cand;
    if (latency) c.latency_ms = latency(c.gene, kGoldPasses);
    result.pareto.push_back(std::move(c));
  }
  std::stable_sort(result.pareto.begin(), result.pareto.end(),
                   [](const Candidate& x, const Candidate& y) { return x.flops < y.flops; });
  return result;
}

void write_history_jsonl(const std::string& path, const EvoResult& result) {
  std::string out;
  for (const auto& rec : result.history) {
    nlohmann::ordered_json j;
    j["iteration"] = rec.iteration;
    j["best_fitness"] = rec.best_fitness;
    j["mutations_admitted"] = rec.mutations_admitted;
    j["mutations_rejected"] = rec.mutations_rejected;
    j["crossovers_admitted"] = rec.crossovers_admitted;
    j["crossovers_rejected"] = rec.crossovers_rejected;
    auto& pop = j["population"] = nlohmann::json::array();
    for (const auto& c : rec.population) {
      nlohmann::ordered_json e{{"gene_hash", hex_hash(gene_hash(c.gene))}, {"fitness", c.fitness}, {"flops", c.flops}};
      if (c.latency_ms) e["latency_ms"] = *c.latency_ms;
      pop.push_back(e);
    }
    j["parents"] = rec.parents;
    out += j.dump() + "\n";
  }
  detail::write_text_file(path, out);
}

}  // namespace automoe
