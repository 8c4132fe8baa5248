#pragma once

#include <optional>
#include <string>
#include <vector>

#include "automoe/cost_model.hpp"
#include "automoe/search_space.hpp"

namespace automoe {

struct AnalyzedGene {
  std::string name;
  Gene gene;
  CostReport cost;
  std::optional<double> latency_ms;  // truncated mean of the full pass
  std::optional<double> encoder_ms;
};

/// Encoder experts / all experts, or nullopt when the gene has no layer with
/// more than one expert.
std::optional<double> encoder_expert_ratio(const Gene& gene);
bool has_moe_layer(const Gene& gene);

struct DecoderDepthRow {
  int decoder_layers = 0;
  std::size_t genes = 0;
  double mean_gflops = 0;
  double min_gflops = 0;
  double max_gflops = 0;
};

struct AnalysisReport {
  std::vector<AnalyzedGene> genes;
  std::vector<DecoderDepthRow> depth_vs_flops;

  /// False when no gene has an MoE layer; the ratios below are then 0.5 by
  /// convention and printed as N/A.
  bool has_moe = false;
  double pooled_encoder_ratio = 0.5;    // sum of encoder experts / sum of all experts
  double mean_encoder_ratio = 0.5;      // mean of per-gene ratios
  std::vector<std::optional<double>> per_gene_ratio;

  /// Index l: share (%) of all encoder (decoder) experts, pooled over genes,
  /// that sit in layer l.
  std::vector<double> enc_layer_pct;
  std::vector<double> dec_layer_pct;

  std::optional<double> decoder_latency_share;  // mean over genes with latency logs
};

/// Throws ConfigError when `genes` is empty.
AnalysisReport analyze(std::vector<AnalyzedGene> genes);

/// Reads every `*.gene.json` in `dir` (non-recursive). A matching
/// `<stem>.cost.json` is used when present, otherwise the cost is computed
/// with default assumptions. Latency comes from `*.jsonl` records carrying
/// gene_hash / truncated_mean_ms / encoder_ms; the last record per gene wins.
/// Throws ConfigError when no gene is found.
AnalysisReport analyze_directory(const std::string& dir);

std::string render_report(const AnalysisReport& report);

/// Writes decoder_layers_vs_flops.svg, expert_placement.svg and, when latency
/// is known, latency_share.svg into `out_dir`. Returns the written paths.
std::vector<std::string> write_report_svgs(const AnalysisReport& report, const std::string& out_dir);

struct BarSeries {
  std::string label;
  std::vector<double> values;
};

/// Grouped vertical bar chart; one group per category.
std::string svg_bar_chart(const std::string& title, const std::vector<std::string>& categories,
                          const std::vector<BarSeries>& series, const std::string& y_label);

}  // namespace automoe
