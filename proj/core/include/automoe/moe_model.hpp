#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "automoe/autodiff.hpp"
#include "automoe/param_store.hpp"
#include "automoe/search_space.hpp"

namespace automoe {

namespace tokens {
inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;
inline constexpr int kFirstRegular = 4;
}  // namespace tokens

/// Plain (tape-free) weights of one MoE FFN sublayer. `router` is [e × d] and
/// may be left empty when there is a single expert; expert j has
/// w_in [h_j × d] and w_out [d × h_j], with h_j = 0 marking an identity expert.
struct MoeLayerWeights {
  Tensor router;
  std::vector<Tensor> w_in;
  std::vector<Tensor> w_out;

  std::size_t num_experts() const noexcept { return w_in.size(); }
};

struct RoutingDecision {
  std::vector<std::size_t> expert;  // per token, argmax with lowest-index ties
  std::vector<Real> gate;           // probability of the chosen expert
  Tensor probs;                     // [t × e] full gate distribution
};

RoutingDecision route_top1(const MoeLayerWeights& weights, const Tensor& tokens);
Tensor moe_ffn_forward(const MoeLayerWeights& weights, const Tensor& tokens, const RoutingDecision& decision);
/// e · Σ_i f_i · P_i.
Real load_balance_loss(const RoutingDecision& decision, int num_experts);
/// k == -1: the last output; k >= 1: elementwise mean of the last k outputs.
Tensor arbitrary_attention_context(const std::vector<Tensor>& encoder_layer_outputs, int k);

// Tape-level building blocks shared by training, evaluation and decoding.

struct MoeVars {
  std::optional<Var> router;
  std::vector<Var> w_in;
  std::vector<Var> w_out;
};

struct MoeResult {
  Var out;
  std::optional<Var> aux;  // absent for single-expert layers
  RoutingDecision decision;
};

MoeVars bind_moe(const BoundWeights& w, const std::string& prefix, std::size_t num_experts);
MoeResult moe_layer(const MoeVars& vars, Var x);

/// Sequences concatenated row-wise; no padding. Decoder input is [bos]+y and
/// labels are y+[eos].
struct Batch {
  std::vector<int> src;
  std::vector<int> tgt_in;
  std::vector<int> labels;
  std::vector<std::size_t> src_len;
  std::vector<std::size_t> tgt_len;

  std::size_t size() const noexcept { return src_len.size(); }
  std::size_t num_target_tokens() const noexcept { return labels.size(); }
};

Batch make_batch(const std::vector<std::vector<int>>& src, const std::vector<std::vector<int>>& tgt);

struct ForwardOptions {
  Real dropout = Real(0);
  Rng* rng = nullptr;
  bool positional = true;
};

struct LayerRouting {
  bool decoder = false;
  int layer = 0;
  RoutingDecision decision;
};

struct EncoderResult {
  std::vector<Var> layer_outputs;  // raw residual stream after each layer
  std::map<int, Var> contexts;     // normalized cross-attention memory keyed by span (-1 folded into 1)
  std::vector<std::size_t> src_len;
  std::vector<LayerRouting> routing;
  std::vector<Var> aux;
};

struct ForwardResult {
  Var logits;  // [Σ tgt_len × vocab]
  Var aux;     // summed load-balance loss over layers with more than one expert
  std::size_t moe_layers = 0;
  std::vector<LayerRouting> routing;
};

EncoderResult encode(Tape& tape, const BoundWeights& w, const Gene& gene, std::span<const int> src,
                     std::span<const std::size_t> src_len, const ForwardOptions& opts = {});

/// Teacher-forced forward over a batch.
ForwardResult forward(Tape& tape, const BoundWeights& w, const Gene& gene, const Batch& batch,
                      const ForwardOptions& opts = {});

/// Label-smoothed cross-entropy plus aux_coeff · load-balance loss.
struct LossTerms {
  Var total;
  Var ce;
  Var aux;
};
LossTerms model_loss(Tape& tape, const ForwardResult& fwd, const Batch& batch, Real label_smoothing, Real aux_coeff);

/// Incremental decoder state for one sequence: cached self-attention keys and
/// values per layer plus the cross-attention keys and values.
struct DecoderState {
  std::vector<Var> self_k, self_v;
  std::vector<Var> cross_k, cross_v;
  std::size_t src_len = 0;
  int position = 0;
};

/// Requires an encoder result for exactly one source sequence.
DecoderState start_decoding(Tape& tape, const BoundWeights& w, const Gene& gene, const EncoderResult& enc);
/// Feeds `token` at the next position and returns logits [1 × vocab].
Var decode_step(Tape& tape, const BoundWeights& w, const Gene& gene, DecoderState& state, int token,
                std::vector<LayerRouting>* routing = nullptr);

/// Greedy decoding of one source sequence; stops at eos (not emitted) or after max_len tokens.
std::vector<int> greedy_decode(Tape& tape, const BoundWeights& w, const Gene& gene, std::span<const int> src,
                               std::size_t max_len);
std::vector<int> beam_decode(Tape& tape, const BoundWeights& w, const Gene& gene, std::span<const int> src,
                             std::size_t max_len, std::size_t beam);

/// One JSON line per (token, MoE layer): {"side","layer","position","token","expert","gate"}.
void write_routing_trace(const std::string& path, const Batch& batch, const std::vector<LayerRouting>& routing);

/// Entropy (nats) of the per-layer expert load distribution, averaged over
/// layers with more than one expert; 0 when there are none.
double routing_entropy(const std::vector<LayerRouting>& routing);

}  // namespace automoe
