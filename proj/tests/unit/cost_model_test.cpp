#include <gtest/gtest.h>

#include <set>

#include "automoe/cost_model.hpp"
#include "automoe/errors.hpp"
#include "automoe/param_store.hpp"
#include "test_support.hpp"

using namespace automoe;
using namespace automoe::testing;

namespace {

// d = qkv = 4; encoder: one layer, experts of width 2 and 6; decoder: one dense layer of width 8.
Gene tiny_moe() {
  Gene g = uniform_gene(4, 4, 1, 1, 1, 1, 8);
  g.enc_experts = {2};
  g.enc_expert_ffn_dims = {{2, 6}};
  return g;
}

std::string data(const std::string& rel) { return std::string(AUTOMOE_DATA_DIR) + "/" + rel; }

}  // namespace

TEST(CostModel, HandCountedParams) {
  const ParamCounts c = count_params(tiny_moe());
  // enc layer: 2 ln (16) + attention (4 × 20) + router (8) + experts 2·4·(2+6) = 168; ln_final 8
  // dec layer: 3 ln (24) + 2 attentions (160) + expert 2·4·8 = 248; ln_final 8
  EXPECT_EQ(c.total, 432u);
  EXPECT_DOUBLE_EQ(c.active_mean, 400.0);
  EXPECT_EQ(c.active_worst, 416u);
  EXPECT_NEAR(sparsity(tiny_moe()), 100.0 * 32 / 432, 1e-12);
}

TEST(CostModel, DenseGeneIsFullyActive) {
  const Gene g = uniform_gene(16, 8, 2, 2, 2, 1, 12);
  const ParamCounts c = count_params(g);
  EXPECT_DOUBLE_EQ(c.active_mean, double(c.total));
  EXPECT_EQ(c.active_worst, c.total);
  EXPECT_EQ(sparsity(g), 0.0);
}

TEST(CostModel, ParamTotalMatchesLayoutWithoutEmbeddings) {
  const std::set<std::string> excluded{"enc.embed", "enc.pos", "dec.embed", "dec.pos", "dec.output.w"};
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    const Gene g = sample_gene(toy_space(4), rng);
    std::uint64_t n = 0;
    for (const auto& p : parameter_layout(g, {20, 16})) {
      if (!excluded.count(p.name)) n += shape_numel(p.shape);
    }
    EXPECT_EQ(count_params(g).total, n) << encode_gene(g);
  }
}

TEST(CostModel, HandCountedMatmulFlops) {
  CostOptions o;
  o.src_len = 3;
  o.tgt_len = 2;
  // enc: projections 384, attention 144, router 48, ffn at mean width 4: 192
  // dec: projections 256, causal self 48, cross q/o 128, cross k/v 192, cross scores 96, ffn 256
  EXPECT_DOUBLE_EQ(count_flops(tiny_moe(), o).matmul, 1744.0);
  o.include_output_projection = true;
  EXPECT_THROW(count_flops(tiny_moe(), o), ConfigError);
  o.vocab = 10;
  EXPECT_DOUBLE_EQ(count_flops(tiny_moe(), o).matmul, 1744.0 + 2 * 2 * 4 * 10);
}

TEST(CostModel, FfnTermIsLinearInMeanWidth) {
  CostOptions o;
  const Gene moe = tiny_moe();
  const Gene dense = uniform_gene(4, 4, 1, 1, 1, 1, 8);
  Gene dense4 = dense;
  dense4.enc_expert_ffn_dims = {{4}};
  const double router = 2.0 * o.src_len * 4 * 2;
  EXPECT_DOUBLE_EQ(count_flops(moe, o).matmul - router, count_flops(dense4, o).matmul);

  auto with_width = [](int h) { return uniform_gene(8, 8, 2, 2, 2, 1, h); };
  const double f1 = count_flops(with_width(4), o).matmul, f2 = count_flops(with_width(8), o).matmul;
  const double f3 = count_flops(with_width(12), o).matmul;
  EXPECT_DOUBLE_EQ(f3 - f2, f2 - f1);
}

TEST(CostModel, InstrumentedForwardMatchesRoutedCount) {
  const ModelDims dims{20, 16};
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Gene g = sample_gene(toy_space(4), rng);
    const ParamStore store = ParamStore::initialized(parameter_layout(g, dims), 100 + i);
    std::uniform_int_distribution<std::size_t> len(1, 8);
    const auto src = random_tokens(dims.vocab, len(rng), rng), tgt = random_tokens(dims.vocab, len(rng), rng);
    const Batch b = make_batch({src}, {tgt});
    Tape tape(false);
    const BoundWeights w = bind_weights(tape, store, parameter_layout(g, dims));
    std::uint64_t measured = 0;
    ForwardResult fwd;
    {
      FlopCounterScope scope;
      fwd = forward(tape, w, g, b);
      measured = scope.count();
    }
    std::vector<std::vector<std::size_t>> enc(std::size_t(g.num_enc_layers)), dec(std::size_t(g.num_dec_layers));
    for (int l = 0; l < g.num_enc_layers; ++l) {
      enc[l].assign(std::size_t(g.enc_experts[l]), 0);
      enc[l][0] = src.size();
    }
    for (int l = 0; l < g.num_dec_layers; ++l) {
      dec[l].assign(std::size_t(g.dec_experts[l]), 0);
      dec[l][0] = b.tgt_len[0];
    }
    for (const auto& r : fwd.routing) {
      auto& counts = (r.decoder ? dec : enc)[std::size_t(r.layer)];
      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t e : r.decision.expert) ++counts[e];
    }
    EXPECT_EQ(measured, routed_matmul_flops(g, src.size(), b.tgt_len[0], enc, dec, true, dims.vocab))
        << encode_gene(g);
  }
}

TEST(CostModel, RoutedCountValidatesShapes) {
  const Gene g = tiny_moe();
  EXPECT_THROW(routed_matmul_flops(g, 3, 2, {}, {{2}}, false, 0), DimensionError);
  EXPECT_THROW(routed_matmul_flops(g, 3, 2, {{3}}, {{2}}, false, 0), DimensionError);
  EXPECT_THROW(routed_matmul_flops(g, 0, 2, {{3, 0}}, {{2}}, false, 0), ConfigError);
}

TEST(CostModel, SparsityGrowsWithExperts) {
  double last = -1;
  for (int e = 1; e <= 6; ++e) {
    Gene g = uniform_gene(16, 8, 2, 2, 1, 1, 12);
    g.enc_experts[0] = e;
    g.enc_expert_ffn_dims[0].assign(std::size_t(e), 12);
    const double s = sparsity(g);
    EXPECT_GT(s, last);
    last = s;
  }
}

TEST(CostModel, ReferenceGenes) {
  const CostReport big = cost_report(read_gene_file(data("table1/transformer_big.gene.json")));
  const CostReport moe = cost_report(read_gene_file(data("table1/automoe.gene.json")));
  EXPECT_NEAR(big.flops / 1e9, 10.637, 0.01);
  const double ratio = big.flops / moe.flops;
  EXPECT_GT(ratio, 3.7 * 0.85);
  EXPECT_LT(ratio, 3.7 * 1.15);
  EXPECT_GT(moe.sparsity_pct, 0);
}

TEST(CostModel, ReportRoundTrip) {
  CostOptions o;
  o.include_output_projection = true;
  o.vocab = 1000;
  const CostReport r = cost_report(tiny_moe(), o);
  const CostReport back = decode_cost_report(encode_cost_report(r));
  EXPECT_EQ(back.total_params, r.total_params);
  EXPECT_DOUBLE_EQ(back.active_params_mean, r.active_params_mean);
  EXPECT_EQ(back.active_params_worst, r.active_params_worst);
  EXPECT_DOUBLE_EQ(back.flops, r.flops);
  EXPECT_DOUBLE_EQ(back.sparsity_pct, r.sparsity_pct);
  EXPECT_EQ(back.assumptions, o);
  EXPECT_THROW(decode_cost_report("{"), ParseError);
  EXPECT_NE(cost_table_row("x", r).find("x"), std::string::npos);
}
