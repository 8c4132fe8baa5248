#include <benchmark/benchmark.h>

#include <random>

#include "automoe/autodiff.hpp"
#include "automoe/moe_model.hpp"
#include "automoe/param_store.hpp"
#include "automoe/search_space.hpp"

using namespace automoe;

namespace {

Tensor noise(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor t = Tensor::matrix(r, c);
  for (auto& v : t.values()) v = static_cast<Real>(n(rng));
  return t;
}

Gene desk_gene(int experts) {
  Gene g;
  g.embed_dim_enc = g.embed_dim_dec = 64;
  g.num_enc_layers = g.num_dec_layers = 3;
  g.qkv_dim = 64;
  g.enc_heads.assign(3, 4);
  g.dec_self_heads.assign(3, 4);
  g.dec_cross_heads.assign(3, 4);
  g.dec_arbitrary_attn.assign(3, -1);
  g.enc_experts.assign(3, experts);
  g.dec_experts.assign(3, experts);
  g.enc_expert_ffn_dims.assign(3, std::vector<int>(std::size_t(experts), 128));
  g.dec_expert_ffn_dims.assign(3, std::vector<int>(std::size_t(experts), 128));
  return g;
}

}  // namespace

static void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a = noise(n, n, 1), b = noise(n, n, 2);
  Tensor c = Tensor::matrix(n, n);
  for (auto _ : state) {
    kernels::gemm(a.data(), false, b.data(), false, c.data(), n, n, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(2.0 * n * n * n, benchmark::Counter::kIsIterationInvariantRate,
                                                 benchmark::Counter::kIs1000);
}
BENCHMARK(BM_Gemm)->Arg(64)->Arg(128)->Arg(256);

static void BM_Attention(benchmark::State& state) {
  const auto len = static_cast<std::size_t>(state.range(0));
  const Tensor q = noise(len, 64, 3), k = noise(len, 64, 4), v = noise(len, 64, 5);
  const std::vector<AttentionSegment> segs{{0, len, 0, len}};
  for (auto _ : state) {
    Tape t(false);
    benchmark::DoNotOptimize(t.value(attention(t.constant(q), t.constant(k), t.constant(v), 4, segs, true)).data());
  }
}
BENCHMARK(BM_Attention)->Arg(16)->Arg(32)->Arg(64);

static void BM_Forward(benchmark::State& state) {
  const Gene g = desk_gene(static_cast<int>(state.range(0)));
  const ModelDims dims{64, 32};
  const auto layout = parameter_layout(g, dims);
  const ParamStore store = ParamStore::initialized(layout, 1);
  Rng rng(6);
  std::uniform_int_distribution<int> tok(tokens::kFirstRegular, dims.vocab - 1);
  std::vector<std::vector<int>> src(32, std::vector<int>(12)), tgt(32, std::vector<int>(12));
  for (auto& s : src) for (auto& x : s) x = tok(rng);
  for (auto& s : tgt) for (auto& x : s) x = tok(rng);
  const Batch batch = make_batch(src, tgt);
  for (auto _ : state) {
    Tape t(false);
    benchmark::DoNotOptimize(t.value(forward(t, bind_weights(t, store, layout), g, batch).logits).data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch.num_target_tokens()));
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
