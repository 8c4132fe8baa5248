#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace automoe {

using Rng = std::mt19937_64;

/// The menu of legal choices for every searchable dimension. Choice lists are
/// shared between encoder and decoder; per-layer dimensions draw from the same
/// list independently for every layer (and every expert, for FFN widths).
struct SearchSpace {
  std::vector<int> embed_dim_choices;
  std::vector<int> encoder_layer_choices;
  std::vector<int> decoder_layer_choices;
  std::vector<int> qkv_dim_choices;
  std::vector<int> head_choices;
  /// -1 attends to the last encoder layer only; k >= 1 to the mean of the last k.
  std::vector<int> arbitrary_attn_choices;
  /// 0 is an identity expert and is only legal with identity_experts_enabled.
  std::vector<int> ffn_dim_choices;
  int max_experts_per_layer = 1;
  bool identity_experts_enabled = false;

  bool operator==(const SearchSpace&) const = default;
};

/// One concrete architecture. Every per-layer list has one entry per layer.
struct Gene {
  int embed_dim_enc = 0;
  int embed_dim_dec = 0;
  int num_enc_layers = 0;
  int num_dec_layers = 0;
  int qkv_dim = 0;
  std::vector<int> enc_heads;
  std::vector<int> dec_self_heads;
  std::vector<int> dec_cross_heads;
  std::vector<int> dec_arbitrary_attn;
  std::vector<int> enc_experts;
  std::vector<int> dec_experts;
  /// [layer][expert] -> FFN intermediate width of that expert.
  std::vector<std::vector<int>> enc_expert_ffn_dims;
  std::vector<std::vector<int>> dec_expert_ffn_dims;

  bool operator==(const Gene&) const = default;
};

/// Table 2 space (embed {512,640}, 6 encoder layers, 1-6 decoder layers, ...)
/// with `max_experts` experts per layer.
SearchSpace table2_space(int max_experts);

/// Returns every violated SearchSpace invariant; empty when the space is valid.
std::vector<std::string> validate_space(const SearchSpace& space);

/// Throws ConfigError listing the violations when the space is invalid.
void require_valid_space(const SearchSpace& space);

Gene sample_gene(const SearchSpace& space, Rng& rng);

/// Every violated Gene invariant against `space`; empty when valid.
std::vector<std::string> validate_gene(const SearchSpace& space, const Gene& gene);

Gene max_gene(const SearchSpace& space);

/// Calls `visit` once for every gene in the space. Intended for small spaces.
void for_each_gene(const SearchSpace& space, const std::function<void(const Gene&)>& visit);

/// Structured (JSON) text with stable field names and per-layer arrays.
std::string encode_gene(const Gene& gene);

/// Accepts the output of encode_gene. `enc_experts`/`dec_experts` may also be
/// hyphen strings ("5-1-1-1-2-1"); the FFN-dims fields accept the bracket
/// notation "[2048-3072]-3072" where a bare width applies to every expert of
/// that layer. Throws ParseError on malformed input.
Gene decode_gene(std::string_view text);

std::string encode_space(const SearchSpace& space);
SearchSpace decode_space(std::string_view text);

/// FNV-1a of the canonical encoding.
std::uint64_t gene_hash(const Gene& gene);
std::uint64_t space_hash(const SearchSpace& space);
std::string hex_hash(std::uint64_t h);

/// Total number of experts over encoder layers / decoder layers.
int total_encoder_experts(const Gene& gene);
int total_decoder_experts(const Gene& gene);

/// "5-1-1-1-2-1"
std::string hyphen_join(const std::vector<int>& values);

Gene read_gene_file(const std::string& path);
void write_gene_file(const std::string& path, const Gene& gene);
SearchSpace read_space_file(const std::string& path);
void write_space_file(const std::string& path, const SearchSpace& space);

}  // namespace automoe
