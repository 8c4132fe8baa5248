#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "automoe/search_space.hpp"

namespace automoe {

struct CostOptions {
  int src_len = 30;
  int tgt_len = 30;
  /// The vocabulary projection is excluded by default; re-including it needs vocab.
  bool include_output_projection = false;
  int vocab = 0;

  bool operator==(const CostOptions&) const = default;
};

/// Parameter counts exclude token/positional embeddings and the output
/// projection. Active counts take the dense modules plus one expert per MoE
/// layer: the layer's mean expert width (mean) or its widest expert (worst).
struct ParamCounts {
  std::uint64_t total = 0;
  double active_mean = 0;
  std::uint64_t active_worst = 0;
};

/// One multiply-accumulate = 2 FLOPs. Elementwise work is billed at
/// first order: layernorm 8/elem, attention softmax+scale 6/score per head,
/// router softmax 5/logit, relu 1/elem, residual add and gate scale 1/elem.
struct FlopCounts {
  double matmul = 0;
  double elementwise = 0;
  double total() const noexcept { return matmul + elementwise; }
};

struct CostReport {
  std::uint64_t total_params = 0;
  double active_params_mean = 0;
  std::uint64_t active_params_worst = 0;
  double sparsity_pct = 0;
  double flops = 0;
  double matmul_flops = 0;
  double elementwise_flops = 0;
  CostOptions assumptions;
};

ParamCounts count_params(const Gene& gene);
/// 100 · (total − active_mean) / total.
double sparsity(const Gene& gene);

/// Analytical FLOPs for translating one src_len sentence into tgt_len tokens:
/// encoder once, decoder once per generated token with cached keys/values.
/// Each MoE layer bills every token at the layer's mean expert width.
FlopCounts count_flops(const Gene& gene, const CostOptions& opt = {});

/// Exact matmul FLOPs of one pass over a single (src_len, tgt_len) pair when
/// tokens_per_expert[l][j] tokens reached expert j of encoder/decoder layer l.
std::uint64_t routed_matmul_flops(const Gene& gene, std::size_t src_len, std::size_t tgt_len,
                                  const std::vector<std::vector<std::size_t>>& enc_tokens_per_expert,
                                  const std::vector<std::vector<std::size_t>>& dec_tokens_per_expert,
                                  bool include_output_projection, int vocab);

CostReport cost_report(const Gene& gene, const CostOptions& opt = {});

std::string encode_cost_report(const CostReport& report);
CostReport decode_cost_report(std::string_view text);

/// Fixed-width text row: name, params, active (mean/worst), sparsity, GFLOPs.
std::string cost_table_header();
std::string cost_table_row(const std::string& name, const CostReport& report);

}  // namespace automoe
