#include "automoe/cost_model.hpp"

#include <algorithm>
#include <cstdio>
#include <functional>
#include <nlohmann/json.hpp>
#include <numeric>
#include <set>

#include "automoe/errors.hpp"

namespace automoe {
namespace {

using U = std::uint64_t;

U ln_params(int d) { return 2ULL * U(d); }
U proj_params(int out, int in) { return U(out) * U(in) + U(out); }

U attn_params(int d_q, int d_kv, int q) { return proj_params(q, d_q) + 2 * proj_params(q, d_kv) + proj_params(d_q, q); }

struct MoeParams {
  U total = 0;
  double active_mean = 0;
  U active_worst = 0;
};

MoeParams moe_params(int d, const std::vector<int>& widths) {
  MoeParams p;
  const U e = widths.size();
  const U router = e > 1 ? e * U(d) : 0;
  U sum = 0;
  int widest = 0;
  for (int h : widths) {
    sum += U(h);
    widest = std::max(widest, h);
  }
  p.total = router + 2ULL * U(d) * sum;
  p.active_mean = static_cast<double>(router) + 2.0 * d * (static_cast<double>(sum) / static_cast<double>(e));
  p.active_worst = router + 2ULL * U(d) * U(widest);
  return p;
}

void check_lengths(long s, long t) {
  if (s < 1 || t < 1) throw ConfigError("source and target lengths must be >= 1");
}

// Matmul FLOPs with the FFN term supplied by the caller (mean or routed widths).
template <class T>
T matmul_flops(const Gene& g, T s, T t, const std::function<T(bool, int)>& ffn, bool output, int vocab) {
  const T q = T(g.qkv_dim), de = T(g.embed_dim_enc), dd = T(g.embed_dim_dec);
  T total = 0;
  for (int l = 0; l < g.num_enc_layers; ++l) {
    total += 8 * s * de * q;  // q, k, v, o projections
    total += 4 * q * s * s;   // scores + context
    const T e = T(g.enc_experts[size_t(l)]);
    if (e > 1) total += 2 * s * de * e;
    total += ffn(false, l);
  }
  for (int l = 0; l < g.num_dec_layers; ++l) {
    total += 8 * t * dd * q;
    total += 4 * q * (t * (t + 1) / 2);
    total += 4 * t * dd * q;  // cross q and o, per generated token
    total += 4 * s * de * q;  // cross k and v, once per sentence
    total += 4 * q * t * s;
    const T e = T(g.dec_experts[size_t(l)]);
    if (e > 1) total += 2 * t * dd * e;
    total += ffn(true, l);
  }
  if (output) total += 2 * t * dd * T(vocab);
  return total;
}

double elementwise_flops(const Gene& g, double s, double t) {
  const double de = g.embed_dim_enc, dd = g.embed_dim_dec;
  double total = 0;
  for (int l = 0; l < g.num_enc_layers; ++l) {
    const auto L = size_t(l);
    total += 2 * 8 * s * de;                 // two layernorms
    total += 6 * g.enc_heads[L] * s * s;     // scale + softmax per score
    total += 2 * s * de;                     // residual adds
    const auto& w = g.enc_expert_ffn_dims[L];
    const double mean_h = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    total += s * mean_h;                     // relu
    if (g.enc_experts[L] > 1) total += s * (5.0 * g.enc_experts[L] + de);
  }
  std::set<int> spans;
  for (int k : g.dec_arbitrary_attn) spans.insert(k == -1 ? 1 : k);
  for (int k : spans) total += (k - 1) * s * de + 8 * s * de;  // layer mean + final layernorm
  for (int l = 0; l < g.num_dec_layers; ++l) {
    const auto L = size_t(l);
    total += 3 * 8 * t * dd;
    total += 6 * g.dec_self_heads[L] * (t * (t + 1) / 2);
    total += 6 * g.dec_cross_heads[L] * t * s;
    total += 3 * t * dd;
    const auto& w = g.dec_expert_ffn_dims[L];
    const double mean_h = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    total += t * mean_h;
    if (g.dec_experts[L] > 1) total += t * (5.0 * g.dec_experts[L] + dd);
  }
  total += 8 * t * dd;  // decoder final layernorm
  return total;
}

}  // namespace

ParamCounts count_params(const Gene& g) {
  ParamCounts c;
  U dense = 0;
  for (int l = 0; l < g.num_enc_layers; ++l) {
    dense += 2 * ln_params(g.embed_dim_enc) + attn_params(g.embed_dim_enc, g.embed_dim_enc, g.qkv_dim);
    const MoeParams m = moe_params(g.embed_dim_enc, g.enc_expert_ffn_dims.at(size_t(l)));
    c.total += m.total;
    c.active_mean += m.active_mean;
    c.active_worst += m.active_worst;
  }
  dense += ln_params(g.embed_dim_enc);
  for (int l = 0; l < g.num_dec_layers; ++l) {
    dense += 3 * ln_params(g.embed_dim_dec) + attn_params(g.embed_dim_dec, g.embed_dim_dec, g.qkv_dim) +
             attn_params(g.embed_dim_dec, g.embed_dim_enc, g.qkv_dim);
    const MoeParams m = moe_params(g.embed_dim_dec, g.dec_expert_ffn_dims.at(size_t(l)));
    c.total += m.total;
    c.active_mean += m.active_mean;
    c.active_worst += m.active_worst;
  }
  dense += ln_params(g.embed_dim_dec);
  c.total += dense;
  c.active_mean += static_cast<double>(dense);
  c.active_worst += dense;
  return c;
}

double sparsity(const Gene& gene) {
  const ParamCounts c = count_params(gene);
  if (c.total == 0) return 0.0;
  return 100.0 * (static_cast<double>(c.total) - c.active_mean) / static_cast<double>(c.total);
}

FlopCounts count_flops(const Gene& g, const CostOptions& opt) {
  check_lengths(opt.src_len, opt.tgt_len);
  if (opt.include_output_projection && opt.vocab <= 0) throw ConfigError("output projection FLOPs need a vocab size");
  const double s = opt.src_len, t = opt.tgt_len;
  std::function<double(bool, int)> ffn = [&](bool dec, int l) {
    const auto& w = (dec ? g.dec_expert_ffn_dims : g.enc_expert_ffn_dims).at(size_t(l));
    const double d = dec ? g.embed_dim_dec : g.embed_dim_enc;
    const double mean_h = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    return 4.0 * d * mean_h * (dec ? t : s);
  };
  FlopCounts f;
  f.matmul = matmul_flops<double>(g, s, t, ffn, opt.include_output_projection, opt.vocab);
  f.elementwise = elementwise_flops(g, s, t);
  return f;
}

std::uint64_t routed_matmul_flops(const Gene& g, std::size_t src_len, std::size_t tgt_len,
                                  const std::vector<std::vector<std::size_t>>& enc_tokens,
                                  const std::vector<std::vector<std::size_t>>& dec_tokens, bool output, int vocab) {
  check_lengths(static_cast<long>(src_len), static_cast<long>(tgt_len));
  if (enc_tokens.size() != size_t(g.num_enc_layers) || dec_tokens.size() != size_t(g.num_dec_layers)) {
    throw DimensionError("routed token counts need one entry per layer");
  }
  std::function<U(bool, int)> ffn = [&](bool dec, int l) {
    const auto& w = (dec ? g.dec_expert_ffn_dims : g.enc_expert_ffn_dims).at(size_t(l));
    const auto& n = (dec ? dec_tokens : enc_tokens).at(size_t(l));
    if (n.size() != w.size()) throw DimensionError("routed token counts need one entry per expert");
    const U d = U(dec ? g.embed_dim_dec : g.embed_dim_enc);
    U total = 0;
    for (size_t j = 0; j < w.size(); ++j) total += 4 * d * U(w[j]) * U(n[j]);
    return total;
  };
  return matmul_flops<U>(g, U(src_len), U(tgt_len), ffn, output, vocab);
}

CostReport cost_report(const Gene& gene, const CostOptions& opt) {
  CostReport r;
  const ParamCounts p = count_params(gene);
  const FlopCounts f = count_flops(gene, opt);
  r.total_params = p.total;
  r.active_params_mean = p.active_mean;
  r.active_params_worst = p.active_worst;
  r.sparsity_pct = sparsity(gene);
  r.matmul_flops = f.matmul;
  r.elementwise_flops = f.elementwise;
  r.flops = f.total();
  r.assumptions = opt;
  return r;
}

std::string encode_cost_report(const CostReport& r) {
  nlohmann::ordered_json j;
  j["total_params"] = r.total_params;
  j["active_params_mean"] = r.active_params_mean;
  j["active_params_worst"] = r.active_params_worst;
  j["sparsity_pct"] = r.sparsity_pct;
  j["flops"] = r.flops;
  j["matmul_flops"] = r.matmul_flops;
  j["elementwise_flops"] = r.elementwise_flops;
  j["assumptions"] = {{"src_len", r.assumptions.src_len},
                      {"tgt_len", r.assumptions.tgt_len},
                      {"include_output_projection", r.assumptions.include_output_projection},
                      {"vocab", r.assumptions.vocab},
                      {"embeddings_excluded", true},
                      {"flop_per_mac", 2}};
  return j.dump(2) + "\n";
}

CostReport decode_cost_report(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("cost report: ") + e.what(), e.byte ? e.byte - 1 : 0);
  }
  try {
    CostReport r;
    r.total_params = j.at("total_params").get<std::uint64_t>();
    r.active_params_mean = j.at("active_params_mean").get<double>();
    r.active_params_worst = j.at("active_params_worst").get<std::uint64_t>();
    r.sparsity_pct = j.at("sparsity_pct").get<double>();
    r.flops = j.at("flops").get<double>();
    r.matmul_flops = j.value("matmul_flops", r.flops);
    r.elementwise_flops = j.value("elementwise_flops", 0.0);
    const auto& a = j.at("assumptions");
    r.assumptions.src_len = a.at("src_len").get<int>();
    r.assumptions.tgt_len = a.at("tgt_len").get<int>();
    r.assumptions.include_output_projection = a.value("include_output_projection", false);
    r.assumptions.vocab = a.value("vocab", 0);
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("cost report: ") + e.what(), ParseError::npos);
  }
}

std::string cost_table_header() {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%-28s %12s %14s %14s %10s %10s", "model", "params(M)", "active_mean(M)",
                "active_max(M)", "sparsity%", "GFLOPs");
  return buf;
}

std::string cost_table_row(const std::string& name, const CostReport& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "%-28s %12.3f %14.3f %14.3f %10.1f %10.3f", name.c_str(), double(r.total_params) / 1e6,
                r.active_params_mean / 1e6, double(r.active_params_worst) / 1e6, r.sparsity_pct, r.flops / 1e9);
  return buf;
}

}  // namespace automoe
