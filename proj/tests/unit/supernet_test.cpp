#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>
#include <set>

#include "automoe/errors.hpp"
#include "automoe/supernet.hpp"
#include "test_support.hpp"

using namespace automoe;
using namespace automoe::testing;

namespace {

const ModelDims kDims{16, 12};

Batch toy_batch(std::uint64_t seed) {
  Rng rng(seed);
  return random_batch(kDims.vocab, 4, 6, rng);
}

}  // namespace

TEST(Extraction, RouterFrontBlock) {
  Rng rng(1);
  const Tensor router = random_tensor({4, 640}, rng);
  const Tensor r = extract_router(router, 3, 512);
  ASSERT_EQ(r.shape(), Shape({3, 512}));
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t c = 0; c < 512; ++c) ASSERT_EQ(r.at(i, c), router.at(i, c));
  }
  EXPECT_EQ(extract_router(router, 4, 640), router);
  EXPECT_THROW(extract_router(router, 5, 512), DimensionError);

  const Tensor small = random_tensor({4, 6}, rng);
  const Tensor s = extract_router(small, 2, 3);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(s.at(i, c), small.at(i, c));
  }
}

TEST(Extraction, ExpertFfnFrontBlocks) {
  Rng rng(2);
  const Tensor w_in = random_tensor({3072, 640}, rng), w_out = random_tensor({640, 3072}, rng);
  for (int h : {2048, 1024}) {
    const auto [a, b] = extract_expert_ffn(w_in, w_out, h, 512);
    ASSERT_EQ(a.shape(), Shape({std::size_t(h), 512}));
    ASSERT_EQ(b.shape(), Shape({512, std::size_t(h)}));
    EXPECT_EQ(a, front_block(w_in, h, 512));
    EXPECT_EQ(b, front_block(w_out, 512, h));
  }
  const auto [full_in, full_out] = extract_expert_ffn(w_in, w_out, 3072, 640);
  EXPECT_EQ(full_in, w_in);
  EXPECT_EQ(full_out, w_out);
  const auto [e_in, e_out] = extract_expert_ffn(w_in, w_out, 0, 512);
  EXPECT_EQ(e_in.size(), 0u);
  EXPECT_EQ(e_out.size(), 0u);
}

TEST(Supernet, MaxGeneViewCoversEveryParameterOnce) {
  const Supernet net(toy_space(3), kDims, 1);
  const SubnetView v = extract_subnet(net, net.max());
  std::set<std::string> names;
  for (const auto& s : v.slices) {
    EXPECT_TRUE(names.insert(s.name).second);
    EXPECT_EQ(s.shape, net.params().value(s.name).shape()) << s.name;
  }
  EXPECT_EQ(names.size(), net.params().names().size());
}

TEST(Supernet, SmallerGeneSkipsTrailingExperts) {
  SearchSpace space = toy_space(4);
  const Supernet net(space, kDims, 1);
  Gene g = net.max();
  g.enc_experts[0] = 3;
  g.enc_expert_ffn_dims[0] = {12, 8, 4};
  const SubnetView v = extract_subnet(net, g);
  bool saw_expert3 = false, router_ok = false;
  for (const auto& s : v.slices) {
    if (s.name.rfind("enc.layers.0.moe.experts.3.", 0) == 0) saw_expert3 = true;
    if (s.name == "enc.layers.0.moe.router") router_ok = s.shape == Shape({3, 16});
    if (s.name == "enc.layers.0.moe.experts.1.w_in") EXPECT_EQ(s.shape, Shape({8, 16}));
  }
  EXPECT_FALSE(saw_expert3);
  EXPECT_TRUE(router_ok);
}

TEST(Supernet, CommonLayersShareSlicesAcrossDepths) {
  const Supernet net(toy_space(3), kDims, 1);
  Rng rng(3);
  Gene a = sample_gene(net.space(), rng);
  a.num_dec_layers = 2;
  while (a.dec_experts.size() < 2) {
    a.dec_self_heads.push_back(1);
    a.dec_cross_heads.push_back(1);
    a.dec_arbitrary_attn.push_back(-1);
    a.dec_experts.push_back(1);
    a.dec_expert_ffn_dims.push_back({4});
  }
  Gene b = a;
  b.num_dec_layers = 1;
  b.dec_self_heads.resize(1);
  b.dec_cross_heads.resize(1);
  b.dec_arbitrary_attn.resize(1);
  b.dec_experts.resize(1);
  b.dec_expert_ffn_dims.resize(1);
  const auto va = extract_subnet(net, a), vb = extract_subnet(net, b);
  std::map<std::string, Shape> sa;
  for (const auto& s : va.slices) sa[s.name] = s.shape;
  for (const auto& s : vb.slices) {
    ASSERT_TRUE(sa.count(s.name)) << s.name;
    EXPECT_EQ(sa[s.name], s.shape) << s.name;
  }
  const ParamStore ma = materialize(net, va), mb = materialize(net, vb);
  for (const auto& n : mb.names()) EXPECT_EQ(ma.value(n), mb.value(n)) << n;
}

TEST(Supernet, InvalidGeneIsRejected) {
  const Supernet net(toy_space(3), kDims, 1);
  Gene g = net.max();
  g.embed_dim_enc = 32;
  EXPECT_THROW(extract_subnet(net, g), ConfigError);
}

TEST(Supernet, MaterializeCopiesFrontBlocks) {
  const Supernet net(toy_space(3), kDims, 1);
  Rng rng(4);
  const Gene g = sample_gene(net.space(), rng);
  const SubnetView v = extract_subnet(net, g);
  const ParamStore m = materialize(net, v);
  for (const auto& s : v.slices) {
    const Tensor& full = net.params().value(s.name);
    EXPECT_EQ(m.value(s.name), front_block(full, s.shape[0], s.shape.size() == 2 ? s.shape[1] : 0)) << s.name;
  }
}

TEST(Supernet, ViewForwardEqualsMaterializedForward) {
  const Supernet net(toy_space(3), kDims, 1);
  Rng rng(5);
  const Batch b = toy_batch(6);
  for (int i = 0; i < 5; ++i) {
    const Gene g = sample_gene(net.space(), rng);
    const SubnetView v = extract_subnet(net, g);
    const ParamStore m = materialize(net, v);
    Tape t1(false), t2(false);
    const Tensor a = t1.value(forward(t1, bind_weights(t1, net.params(), v.slices), g, b).logits);
    const Tensor c = t2.value(forward(t2, bind_weights(t2, m, parameter_layout(g, kDims)), g, b).logits);
    EXPECT_EQ(a, c);
  }
}

TEST(Supernet, SposStepLeavesOutsideRegionsUntouched) {
  Supernet net(toy_space(3), kDims, 1);
  Adam adam;
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const ParamStore before = net.params();
    Rng peek = rng;
    const Gene g = sample_gene(net.space(), peek);
    const StepMetrics m = spos_train_step(net, adam, toy_batch(100 + i), {}, rng);
    ASSERT_EQ(m.gene, g);
    std::map<std::string, Shape> slice;
    for (const auto& s : extract_subnet(net, g).slices) slice[s.name] = s.shape;
    for (const auto& name : net.params().names()) {
      const Tensor& a = before.value(name);
      const Tensor& b = net.params().value(name);
      const auto it = slice.find(name);
      const std::size_t rows = it == slice.end() ? 0 : (it->second.size() == 2 ? it->second[0] : 1);
      const std::size_t cols = it == slice.end() ? 0 : it->second.back();
      for (std::size_t r = 0; r < a.rows(); ++r) {
        for (std::size_t c = 0; c < a.cols(); ++c) {
          if (r < rows && c < cols) continue;
          ASSERT_EQ(a.at(r, c), b.at(r, c)) << name << " (" << r << "," << c << ")";
        }
      }
    }
    EXPECT_TRUE(net.params().all_finite());
  }
}

TEST(Supernet, FitnessIsPureAndBounded) {
  const Supernet net(toy_space(3), kDims, 1);
  const std::vector<Batch> valid{toy_batch(8), toy_batch(9)};
  Gene shallow = net.max();
  shallow.num_dec_layers = 1;
  shallow.dec_self_heads.resize(1);
  shallow.dec_cross_heads.resize(1);
  shallow.dec_arbitrary_attn.resize(1);
  shallow.dec_experts.resize(1);
  shallow.dec_expert_ffn_dims.resize(1);
  for (const Gene& g : {net.max(), shallow}) {
    const double a = estimate_fitness(net, g, valid);
    EXPECT_EQ(a, estimate_fitness(net, g, valid));
    EXPECT_GT(a, 0);
    EXPECT_LT(a, std::log(double(kDims.vocab)) + 1.5);
  }
  EXPECT_THROW(estimate_fitness(net, net.max(), {}), DimensionError);
}

TEST(Supernet, SaveLoadRoundTripAndSpaceCheck) {
  Supernet net(toy_space(3), kDims, 11);
  const auto path = (std::filesystem::temp_directory_path() / "automoe_supernet.ckpt").string();
  save_supernet(path, net);
  const Supernet back = load_supernet(path, toy_space(3));
  EXPECT_EQ(back.dims(), kDims);
  for (const auto& n : net.params().names()) EXPECT_EQ(back.params().value(n), net.params().value(n));
  EXPECT_THROW(load_supernet(path, toy_space(2)), ConfigError);
  std::filesystem::remove(path);
}

TEST(Supernet, TrainingReducesLossOnFixedBatch) {
  // Copy task, max gene of a one-point space, 50 plain steps on one batch.
  const SearchSpace space = point_space(2);
  Supernet net(space, kDims, 3);
  const Gene g = net.max();
  const auto slices = extract_subnet(net, g).slices;
  std::vector<std::vector<int>> src;
  Rng rng(12);
  for (int i = 0; i < 8; ++i) src.push_back(random_tokens(kDims.vocab, 5, rng));
  const Batch b = make_batch(src, src);
  Adam adam;
  StepHyper h;
  h.lr = 3e-3;
  const double first = train_step(net.params(), adam, g, slices, b, h, rng).ce;
  double last = first;
  for (int i = 0; i < 50; ++i) last = train_step(net.params(), adam, g, slices, b, h, rng).ce;
  EXPECT_LT(last, first * 0.8);
}
