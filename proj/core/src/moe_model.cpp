#include "automoe/moe_model.hpp"

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

#include "automoe/errors.hpp"
#include "internal.hpp"

namespace automoe {
namespace {

using Sz = std::size_t;

std::string layer_prefix(bool decoder, int l) {
  return std::string(decoder ? "dec.layers." : "enc.layers.") + std::to_string(l);
}

std::vector<AttentionSegment> self_segments(std::span<const Sz> lens) {
  std::vector<AttentionSegment> segs;
  Sz off = 0;
  for (Sz n : lens) {
    segs.push_back({off, n, off, n});
    off += n;
  }
  return segs;
}

std::vector<AttentionSegment> cross_segments(std::span<const Sz> q_lens, std::span<const Sz> k_lens) {
  std::vector<AttentionSegment> segs;
  Sz qo = 0, ko = 0;
  for (Sz i = 0; i < q_lens.size(); ++i) {
    segs.push_back({qo, q_lens[i], ko, k_lens[i]});
    qo += q_lens[i];
    ko += k_lens[i];
  }
  return segs;
}

std::vector<int> positions_for(std::span<const Sz> lens) {
  std::vector<int> pos;
  for (Sz n : lens) {
    for (Sz i = 0; i < n; ++i) pos.push_back(static_cast<int>(i));
  }
  return pos;
}

Var maybe_dropout(Var x, const ForwardOptions& opts) {
  if (opts.dropout <= Real(0)) return x;
  if (!opts.rng) throw ConfigError("dropout requires a random source");
  return dropout(x, opts.dropout, *opts.rng);
}

Var ln(const BoundWeights& w, const std::string& p, Var x) { return layernorm(x, w(p + ".g"), w(p + ".b")); }

Var proj(const BoundWeights& w, const std::string& p, Var x) {
  Var b = w(p + ".b");
  return linear(x, w(p + ".w"), &b);
}

/// Projects queries from `xq` and keys/values from `xkv`, attends, projects out.
Var attention_block(const BoundWeights& w, const std::string& p, Var xq, Var xkv, int heads,
                    std::span<const AttentionSegment> segs, bool causal) {
  Var q = proj(w, p + ".q", xq);
  Var k = proj(w, p + ".k", xkv);
  Var v = proj(w, p + ".v", xkv);
  return proj(w, p + ".o", attention(q, k, v, static_cast<Sz>(heads), segs, causal));
}

Var embed_tokens(const BoundWeights& w, const std::string& side, std::span<const int> ids, std::span<const int> pos,
                 const ForwardOptions& opts) {
  Var x = embed(w(side + ".embed"), ids);
  if (opts.positional) x = add(x, embed(w(side + ".pos"), pos));
  return maybe_dropout(x, opts);
}

int span_key(int k) { return k == -1 ? 1 : k; }

Tensor ones_column(Sz rows) { return Tensor::matrix(rows, 1, Real(1)); }

std::vector<Sz> argmax_rows(const Tensor& probs) {
  const Sz rows = probs.rows(), e = probs.cols();
  std::vector<Sz> idx(rows, 0);
  for (Sz i = 0; i < rows; ++i) {
    const Real* p = probs.data() + i * e;
    Sz best = 0;
    for (Sz j = 1; j < e; ++j) {
      if (p[j] > p[best]) best = j;  // strict: ties keep the lower index
    }
    idx[i] = best;
  }
  return idx;
}

Var dispatch(const MoeVars& v, Var x, const std::vector<Sz>& expert, Var gate) {
  Tape& t = *x.tape;
  const Sz rows = t.value(x).rows();
  const Sz e = v.w_in.size();
  std::vector<std::vector<Sz>> assigned(e);
  for (Sz i = 0; i < rows; ++i) assigned.at(expert[i]).push_back(i);
  std::optional<Var> acc;
  for (Sz j = 0; j < e; ++j) {
    if (assigned[j].empty()) continue;
    Var xj = gather_rows(x, assigned[j]);
    Var yj = xj;
    if (t.value(v.w_in[j]).rows() != 0) yj = linear(relu(linear(xj, v.w_in[j])), v.w_out[j]);
    yj = scale_rows(yj, gather_rows(gate, assigned[j]));
    Var s = scatter_rows(yj, assigned[j], rows);
    acc = acc ? add(*acc, s) : s;
  }
  if (!acc) return t.constant(Tensor::matrix(rows, t.value(x).cols()));
  return *acc;
}

MoeVars constant_moe(Tape& t, const MoeLayerWeights& weights) {
  const Sz e = weights.num_experts();
  if (e == 0 || weights.w_out.size() != e) throw DimensionError("MoE layer needs matching w_in/w_out lists");
  MoeVars v;
  if (e > 1) {
    if (weights.router.rank() != 2 || weights.router.rows() != e) {
      throw DimensionError("router " + shape_str(weights.router.shape()) + " does not have one row per expert (" +
                           std::to_string(e) + ")");
    }
    v.router = t.constant(weights.router);
  }
  for (Sz j = 0; j < e; ++j) {
    v.w_in.push_back(t.constant(weights.w_in[j]));
    v.w_out.push_back(t.constant(weights.w_out[j]));
  }
  return v;
}

struct Routed {
  RoutingDecision decision;
  Var gate;
  std::optional<Var> probs;
};

Routed route(const MoeVars& v, Var x) {
  Tape& t = *x.tape;
  const Tensor& X = t.value(x);
  const Sz rows = X.rows();
  Routed r;
  if (!v.router) {
    r.decision.expert.assign(rows, 0);
    r.decision.gate.assign(rows, Real(1));
    r.decision.probs = ones_column(rows);
    r.gate = t.constant(ones_column(rows));
    return r;
  }
  if (t.value(*v.router).cols() != X.cols()) {
    throw DimensionError("router " + shape_str(t.value(*v.router).shape()) + " does not match token dim " +
                         std::to_string(X.cols()));
  }
  Var probs = softmax(matmul_nt(x, *v.router), 1);
  r.decision.probs = t.value(probs);
  r.decision.expert = argmax_rows(r.decision.probs);
  r.gate = pick(probs, r.decision.expert);
  r.decision.gate.assign(t.value(r.gate).values().begin(), t.value(r.gate).values().end());
  r.probs = probs;
  return r;
}

}  // namespace

RoutingDecision route_top1(const MoeLayerWeights& weights, const Tensor& tokens) {
  Tape t(false);
  MoeVars v = constant_moe(t, weights);
  return route(v, t.constant(tokens)).decision;
}

Tensor moe_ffn_forward(const MoeLayerWeights& weights, const Tensor& tokens, const RoutingDecision& decision) {
  if (decision.expert.size() != tokens.rows() || decision.gate.size() != tokens.rows()) {
    throw DimensionError("routing decision does not cover every token");
  }
  Tape t(false);
  MoeVars v = constant_moe(t, weights);
  Tensor gate = Tensor::matrix(tokens.rows(), 1);
  std::copy(decision.gate.begin(), decision.gate.end(), gate.data());
  return t.value(dispatch(v, t.constant(tokens), decision.expert, t.constant(std::move(gate))));
}

Real load_balance_loss(const RoutingDecision& decision, int num_experts) {
  if (num_experts < 1) throw DimensionError("load balance needs at least one expert");
  if (decision.probs.cols() != static_cast<Sz>(num_experts)) {
    throw DimensionError("gate distribution has " + std::to_string(decision.probs.cols()) + " columns, expected " +
                         std::to_string(num_experts));
  }
  Tape t(false);
  return t.value(load_balance(t.constant(decision.probs), decision.expert))[0];
}

Tensor arbitrary_attention_context(const std::vector<Tensor>& outputs, int k) {
  if (outputs.empty()) throw DimensionError("no encoder layer outputs");
  if (k == -1) return outputs.back();
  if (k < 1 || static_cast<Sz>(k) > outputs.size()) {
    throw DimensionError("arbitrary attention span " + std::to_string(k) + " outside [1, " +
                         std::to_string(outputs.size()) + "]");
  }
  Tape t(false);
  std::vector<Var> last;
  for (Sz i = outputs.size() - static_cast<Sz>(k); i < outputs.size(); ++i) last.push_back(t.constant(outputs[i]));
  return t.value(mean_of(last));
}

MoeVars bind_moe(const BoundWeights& w, const std::string& prefix, Sz num_experts) {
  MoeVars v;
  if (num_experts > 1) v.router = w(prefix + ".router");
  for (Sz j = 0; j < num_experts; ++j) {
    const std::string p = prefix + ".experts." + std::to_string(j);
    v.w_in.push_back(w(p + ".w_in"));
    v.w_out.push_back(w(p + ".w_out"));
  }
  return v;
}

MoeResult moe_layer(const MoeVars& vars, Var x) {
  if (vars.w_in.empty() || vars.w_in.size() != vars.w_out.size()) throw DimensionError("MoE layer without experts");
  if (vars.w_in.size() > 1 && !vars.router) throw DimensionError("multi-expert MoE layer without a router");
  Routed r = route(vars, x);
  MoeResult out;
  out.out = dispatch(vars, x, r.decision.expert, r.gate);
  if (r.probs) out.aux = load_balance(*r.probs, r.decision.expert);
  out.decision = std::move(r.decision);
  return out;
}

Batch make_batch(const std::vector<std::vector<int>>& src, const std::vector<std::vector<int>>& tgt) {
  if (src.size() != tgt.size()) throw DimensionError("source and target pair counts differ");
  Batch b;
  for (Sz i = 0; i < src.size(); ++i) {
    if (src[i].empty()) throw DimensionError("empty source sequence in batch");
    b.src.insert(b.src.end(), src[i].begin(), src[i].end());
    b.src_len.push_back(src[i].size());
    b.tgt_in.push_back(tokens::kBos);
    b.tgt_in.insert(b.tgt_in.end(), tgt[i].begin(), tgt[i].end());
    b.labels.insert(b.labels.end(), tgt[i].begin(), tgt[i].end());
    b.labels.push_back(tokens::kEos);
    b.tgt_len.push_back(tgt[i].size() + 1);
  }
  return b;
}

EncoderResult encode(Tape& tape, const BoundWeights& w, const Gene& gene, std::span<const int> src,
                     std::span<const Sz> src_len, const ForwardOptions& opts) {
  (void)tape;
  Sz total = 0;
  for (Sz n : src_len) total += n;
  if (total != src.size()) throw DimensionError("source lengths do not sum to the token count");
  EncoderResult enc;
  enc.src_len.assign(src_len.begin(), src_len.end());
  const auto segs = self_segments(src_len);
  const auto pos = positions_for(src_len);
  Var x = embed_tokens(w, "enc", src, pos, opts);
  for (int l = 0; l < gene.num_enc_layers; ++l) {
    const std::string p = layer_prefix(false, l);
    Var h = ln(w, p + ".ln1", x);
    x = add(x, maybe_dropout(attention_block(w, p + ".attn", h, h, gene.enc_heads[Sz(l)], segs, false), opts));
    h = ln(w, p + ".ln2", x);
    MoeResult m = moe_layer(bind_moe(w, p + ".moe", Sz(gene.enc_experts[Sz(l)])), h);
    x = add(x, maybe_dropout(m.out, opts));
    if (m.aux) enc.aux.push_back(*m.aux);
    enc.routing.push_back({false, l, std::move(m.decision)});
    enc.layer_outputs.push_back(x);
  }
  for (int k : gene.dec_arbitrary_attn) {
    const int key = span_key(k);
    if (enc.contexts.count(key)) continue;
    if (key < 1 || key > gene.num_enc_layers) {
      throw DimensionError("arbitrary attention span " + std::to_string(k) + " exceeds encoder depth");
    }
    std::vector<Var> last(enc.layer_outputs.end() - key, enc.layer_outputs.end());
    enc.contexts[key] = ln(w, "enc.ln_final", mean_of(last));
  }
  return enc;
}

ForwardResult forward(Tape& tape, const BoundWeights& w, const Gene& gene, const Batch& batch,
                      const ForwardOptions& opts) {
  EncoderResult enc = encode(tape, w, gene, batch.src, batch.src_len, opts);
  ForwardResult out;
  std::vector<Var> aux = enc.aux;
  out.routing = std::move(enc.routing);

  const auto self_segs = self_segments(batch.tgt_len);
  const auto cross_segs = cross_segments(batch.tgt_len, batch.src_len);
  const auto pos = positions_for(batch.tgt_len);
  Var x = embed_tokens(w, "dec", batch.tgt_in, pos, opts);
  for (int l = 0; l < gene.num_dec_layers; ++l) {
    const std::string p = layer_prefix(true, l);
    Var h = ln(w, p + ".ln1", x);
    x = add(x, maybe_dropout(attention_block(w, p + ".self_attn", h, h, gene.dec_self_heads[Sz(l)], self_segs, true), opts));
    h = ln(w, p + ".ln2", x);
    Var ctx = enc.contexts.at(span_key(gene.dec_arbitrary_attn[Sz(l)]));
    x = add(x, maybe_dropout(attention_block(w, p + ".cross_attn", h, ctx, gene.dec_cross_heads[Sz(l)], cross_segs, false),
                             opts));
    h = ln(w, p + ".ln3", x);
    MoeResult m = moe_layer(bind_moe(w, p + ".moe", Sz(gene.dec_experts[Sz(l)])), h);
    x = add(x, maybe_dropout(m.out, opts));
    if (m.aux) aux.push_back(*m.aux);
    out.routing.push_back({true, l, std::move(m.decision)});
  }
  x = ln(w, "dec.ln_final", x);
  out.logits = linear(x, w("dec.output.w"));
  out.moe_layers = aux.size();
  if (aux.empty()) {
    out.aux = tape.constant(Tensor::scalar(Real(0)));
  } else {
    out.aux = aux[0];
    for (Sz i = 1; i < aux.size(); ++i) out.aux = add(out.aux, aux[i]);
  }
  return out;
}

LossTerms model_loss(Tape& tape, const ForwardResult& fwd, const Batch& batch, Real label_smoothing, Real aux_coeff) {
  (void)tape;
  LossTerms l;
  l.ce = cross_entropy(fwd.logits, batch.labels, label_smoothing);
  l.aux = fwd.aux;
  l.total = aux_coeff != Real(0) && fwd.moe_layers > 0 ? add(l.ce, scale(fwd.aux, aux_coeff)) : l.ce;
  return l;
}

DecoderState start_decoding(Tape& tape, const BoundWeights& w, const Gene& gene, const EncoderResult& enc) {
  (void)tape;
  if (enc.src_len.size() != 1) throw DimensionError("incremental decoding handles one sequence at a time");
  DecoderState s;
  s.src_len = enc.src_len[0];
  const Sz nd = Sz(gene.num_dec_layers);
  s.self_k.resize(nd);
  s.self_v.resize(nd);
  for (Sz l = 0; l < nd; ++l) {
    const std::string p = layer_prefix(true, int(l)) + ".cross_attn";
    Var ctx = enc.contexts.at(span_key(gene.dec_arbitrary_attn[l]));
    s.cross_k.push_back(proj(w, p + ".k", ctx));
    s.cross_v.push_back(proj(w, p + ".v", ctx));
  }
  return s;
}

Var decode_step(Tape& tape, const BoundWeights& w, const Gene& gene, DecoderState& s, int token,
                std::vector<LayerRouting>* routing) {
  (void)tape;
  const int ids[1] = {token};
  const int pos[1] = {s.position};
  Var x = embed_tokens(w, "dec", ids, pos, ForwardOptions{});
  const Sz keys = Sz(s.position) + 1;
  const AttentionSegment self_seg[1] = {{0, 1, 0, keys}};
  const AttentionSegment cross_seg[1] = {{0, 1, 0, s.src_len}};
  for (int l = 0; l < gene.num_dec_layers; ++l) {
    const Sz li = Sz(l);
    const std::string p = layer_prefix(true, l);
    Var h = ln(w, p + ".ln1", x);
    Var q = proj(w, p + ".self_attn.q", h);
    Var k = proj(w, p + ".self_attn.k", h);
    Var v = proj(w, p + ".self_attn.v", h);
    s.self_k[li] = s.position == 0 ? k : concat_rows(s.self_k[li], k);
    s.self_v[li] = s.position == 0 ? v : concat_rows(s.self_v[li], v);
    Var a = attention(q, s.self_k[li], s.self_v[li], Sz(gene.dec_self_heads[li]), self_seg, true);
    x = add(x, proj(w, p + ".self_attn.o", a));
    h = ln(w, p + ".ln2", x);
    Var cq = proj(w, p + ".cross_attn.q", h);
    Var ca = attention(cq, s.cross_k[li], s.cross_v[li], Sz(gene.dec_cross_heads[li]), cross_seg, false);
    x = add(x, proj(w, p + ".cross_attn.o", ca));
    h = ln(w, p + ".ln3", x);
    MoeResult m = moe_layer(bind_moe(w, p + ".moe", Sz(gene.dec_experts[li])), h);
    x = add(x, m.out);
    if (routing) routing->push_back({true, l, std::move(m.decision)});
  }
  ++s.position;
  x = ln(w, "dec.ln_final", x);
  return linear(x, w("dec.output.w"));
}

namespace {

EncoderResult encode_one(Tape& tape, const BoundWeights& w, const Gene& gene, std::span<const int> src) {
  const Sz len[1] = {src.size()};
  return encode(tape, w, gene, src, len);
}

int argmax_token(const Tensor& logits) {
  const Real* p = logits.data();
  return static_cast<int>(std::max_element(p, p + logits.cols()) - p);
}

}  // namespace

std::vector<int> greedy_decode(Tape& tape, const BoundWeights& w, const Gene& gene, std::span<const int> src,
                               Sz max_len) {
  EncoderResult enc = encode_one(tape, w, gene, src);
  DecoderState state = start_decoding(tape, w, gene, enc);
  std::vector<int> out;
  int token = tokens::kBos;
  while (out.size() < max_len) {
    token = argmax_token(tape.value(decode_step(tape, w, gene, state, token)));
    if (token == tokens::kEos) break;
    out.push_back(token);
  }
  return out;
}

std::vector<int> beam_decode(Tape& tape, const BoundWeights& w, const Gene& gene, std::span<const int> src,
                             Sz max_len, Sz beam) {
  if (beam == 0) throw ConfigError("beam width must be positive");
  if (max_len == 0) return {};
  struct Hyp {
    std::vector<int> tokens;
    double score = 0;
    DecoderState state;
    int last = tokens::kBos;
  };
  EncoderResult enc = encode_one(tape, w, gene, src);
  std::vector<Hyp> live{Hyp{{}, 0.0, start_decoding(tape, w, gene, enc), tokens::kBos}};
  std::vector<Hyp> done;
  auto normalized = [](const Hyp& h) { return h.score / static_cast<double>(h.tokens.size() + 1); };

  for (Sz step = 0; step <= max_len && !live.empty(); ++step) {
    struct Cand {
      double score;
      Sz hyp;
      int token;
    };
    std::vector<Cand> cands;
    for (Sz i = 0; i < live.size(); ++i) {
      const Tensor& logits = tape.value(decode_step(tape, w, gene, live[i].state, live[i].last));
      const Real* p = logits.data();
      const Sz V = logits.cols();
      const double mx = *std::max_element(p, p + V);
      double z = 0;
      for (Sz v = 0; v < V; ++v) z += std::exp(double(p[v]) - mx);
      const double logz = std::log(z) + mx;
      for (Sz v = 0; v < V; ++v) cands.push_back({live[i].score + double(p[v]) - logz, i, int(v)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) { return a.score > b.score; });
    // The top `beam` extensions survive; those ending in eos or at max_len are finished.
    std::vector<Hyp> next;
    for (Sz k = 0; k < std::min(beam, cands.size()); ++k) {
      const Cand& c = cands[k];
      Hyp h = live[c.hyp];
      h.score = c.score;
      if (c.token == tokens::kEos) {
        done.push_back(std::move(h));
        continue;
      }
      h.tokens.push_back(c.token);
      h.last = c.token;
      if (h.tokens.size() >= max_len) {
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);
    if (done.size() >= beam) break;
  }
  if (done.empty()) done = std::move(live);
  const auto best = std::max_element(done.begin(), done.end(),
                                     [&](const Hyp& a, const Hyp& b) { return normalized(a) < normalized(b); });
  return best->tokens;
}

void write_routing_trace(const std::string& path, const Batch& batch, const std::vector<LayerRouting>& routing) {
  std::string lines;
  for (const auto& lr : routing) {
    const auto& ids = lr.decoder ? batch.tgt_in : batch.src;
    const auto& lens = lr.decoder ? batch.tgt_len : batch.src_len;
    const auto pos = positions_for(lens);
    for (Sz i = 0; i < lr.decision.expert.size(); ++i) {
      nlohmann::json j{{"side", lr.decoder ? "decoder" : "encoder"},
                       {"layer", lr.layer},
                       {"position", i < pos.size() ? pos[i] : -1},
                       {"token", i < ids.size() ? ids[i] : -1},
                       {"expert", lr.decision.expert[i]},
                       {"gate", lr.decision.gate[i]}};
      lines += j.dump() + "\n";
    }
  }
  detail::write_text_file(path, lines);
}

double routing_entropy(const std::vector<LayerRouting>& routing) {
  double total = 0;
  int layers = 0;
  for (const auto& lr : routing) {
    const Sz e = lr.decision.probs.cols();
    if (e <= 1 || lr.decision.expert.empty()) continue;
    std::vector<double> f(e, 0.0);
    for (Sz j : lr.decision.expert) f[j] += 1.0;
    double h = 0;
    for (double c : f) {
      if (c > 0) {
        const double p = c / static_cast<double>(lr.decision.expert.size());
        h -= p * std::log(p);
      }
    }
    total += h;
    ++layers;
  }
  return layers ? total / layers : 0.0;
}

}  // namespace automoe
