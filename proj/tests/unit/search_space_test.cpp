#include <gtest/gtest.h>

#include <set>

#include "automoe/errors.hpp"
#include "automoe/search_space.hpp"
#include "test_support.hpp"

using namespace automoe;
using automoe::testing::point_space;
using automoe::testing::toy_space;

TEST(SearchSpace, Table2SpaceIsValid) {
  EXPECT_TRUE(validate_space(table2_space(6)).empty());
  EXPECT_NO_THROW(require_valid_space(table2_space(1)));
}

TEST(SearchSpace, InvalidSpacesAreReported) {
  SearchSpace s = table2_space(2);
  s.head_choices = {3};  // 512 % 3 != 0
  EXPECT_FALSE(validate_space(s).empty());
  EXPECT_THROW(require_valid_space(s), ConfigError);

  s = table2_space(2);
  s.ffn_dim_choices = {3072, 1024};
  EXPECT_FALSE(validate_space(s).empty());

  s = table2_space(0);
  EXPECT_FALSE(validate_space(s).empty());

  s = table2_space(2);
  s.embed_dim_choices.clear();
  EXPECT_FALSE(validate_space(s).empty());
}

TEST(SearchSpace, PointSpaceSamplesItsOnlyGene) {
  SearchSpace s = point_space(1);
  Rng rng(3);
  const Gene g = sample_gene(s, rng);
  EXPECT_EQ(g, max_gene(s));
  for (int i = 0; i < 20; ++i) EXPECT_EQ(sample_gene(s, rng), g);
}

TEST(SearchSpace, SamplingIsDeterministicPerSeed) {
  const SearchSpace s = table2_space(6);
  Rng a(42), b(42);
  const Gene g = sample_gene(s, a);
  EXPECT_EQ(g, sample_gene(s, b));
  EXPECT_TRUE(validate_gene(s, g).empty());
}

TEST(SearchSpace, ExpertCountFrequencyIsUniform) {
  const SearchSpace s = table2_space(2);
  Rng rng(7);
  std::size_t twos = 0, layers = 0;
  for (int i = 0; i < 10000; ++i) {
    const Gene g = sample_gene(s, rng);
    for (int e : g.enc_experts) twos += e == 2, ++layers;
    for (int e : g.dec_experts) twos += e == 2, ++layers;
  }
  const double f = double(twos) / double(layers);
  EXPECT_GE(f, 0.47);
  EXPECT_LE(f, 0.53);
}

TEST(SearchSpace, SampledGenesAreValid) {
  const SearchSpace s = toy_space(3);
  Rng rng(1);
  for (int i = 0; i < 500; ++i) EXPECT_TRUE(validate_gene(s, sample_gene(s, rng)).empty());
}

TEST(SearchSpace, MaxGeneOfTable2) {
  const Gene g = max_gene(table2_space(6));
  EXPECT_EQ(g.embed_dim_enc, 640);
  EXPECT_EQ(g.embed_dim_dec, 640);
  EXPECT_EQ(g.num_enc_layers, 6);
  EXPECT_EQ(g.num_dec_layers, 6);
  EXPECT_EQ(g.qkv_dim, 512);
  for (int h : g.enc_heads) EXPECT_EQ(h, 8);
  for (int h : g.dec_self_heads) EXPECT_EQ(h, 8);
  for (int h : g.dec_cross_heads) EXPECT_EQ(h, 8);
  for (int e : g.enc_experts) EXPECT_EQ(e, 6);
  for (int e : g.dec_experts) EXPECT_EQ(e, 6);
  for (const auto& l : g.enc_expert_ffn_dims) {
    for (int w : l) EXPECT_EQ(w, 3072);
  }
  EXPECT_TRUE(validate_gene(table2_space(6), g).empty());
}

TEST(SearchSpace, MaxGeneWithOneExpertIsDense) {
  const Gene g = max_gene(table2_space(1));
  for (int e : g.enc_experts) EXPECT_EQ(e, 1);
  for (int e : g.dec_experts) EXPECT_EQ(e, 1);
  EXPECT_EQ(total_encoder_experts(g), 6);
}

TEST(SearchSpace, ValidateGeneNamesTheBadLayer) {
  const SearchSpace s = table2_space(6);
  Gene g = max_gene(s);
  g.enc_experts[2] = 7;
  g.enc_expert_ffn_dims[2].assign(7, 3072);
  const auto v = validate_gene(s, g);
  ASSERT_EQ(v.size(), 1u);
  EXPECT_NE(v[0].find("[2]"), std::string::npos) << v[0];

  g = max_gene(s);
  g.dec_expert_ffn_dims[0].pop_back();
  const auto w = validate_gene(s, g);
  ASSERT_EQ(w.size(), 1u);
  EXPECT_NE(w[0].find("dec_expert_ffn_dims[0]"), std::string::npos) << w[0];
}

TEST(SearchSpace, GeneRoundTrip) {
  const Gene g = max_gene(table2_space(6));
  EXPECT_EQ(decode_gene(encode_gene(g)), g);
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    const Gene r = sample_gene(table2_space(4), rng);
    EXPECT_EQ(decode_gene(encode_gene(r)), r);
  }
}

TEST(SearchSpace, Table5RowDecodesAndRoundTrips) {
  const Gene g = read_gene_file(std::string(AUTOMOE_DATA_DIR) + "/table5/wmt14_en_de.gene.json");
  EXPECT_EQ(hyphen_join(g.enc_experts), "5-1-1-1-2-1");
  EXPECT_EQ(hyphen_join(g.dec_experts), "1-1-1-1");
  EXPECT_EQ(g.enc_expert_ffn_dims[4], std::vector<int>({2048, 2048}));
  EXPECT_EQ(g.enc_expert_ffn_dims[0].size(), 5u);
  EXPECT_EQ(decode_gene(encode_gene(g)), g);
}

TEST(SearchSpace, BracketNotationForFractionalExperts) {
  std::string text = R"({"embed_dim_enc":512,"embed_dim_dec":512,"num_enc_layers":2,"num_dec_layers":1,"qkv_dim":512,
    "enc_heads":[8,8],"dec_self_heads":[8],"dec_cross_heads":[8],"dec_arbitrary_attn":[-1],
    "enc_experts":"3-1","dec_experts":"2",
    "enc_expert_ffn_dims":"[2048-3072-2048]-3072","dec_expert_ffn_dims":"[3072-1024]"})";
  const Gene g = decode_gene(text);
  EXPECT_EQ(g.enc_expert_ffn_dims[0], std::vector<int>({2048, 3072, 2048}));
  EXPECT_EQ(g.enc_expert_ffn_dims[1], std::vector<int>({3072}));
  EXPECT_EQ(g.dec_expert_ffn_dims[0], std::vector<int>({3072, 1024}));
}

TEST(SearchSpace, MalformedGeneCarriesOffset) {
  try {
    decode_gene("{");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 1u);
  }
  try {
    decode_gene(R"({"embed_dim_enc": 512})");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), ParseError::npos);
  }
}

TEST(SearchSpace, SpaceRoundTripAndHash) {
  const SearchSpace s = table2_space(6);
  EXPECT_EQ(decode_space(encode_space(s)), s);
  EXPECT_EQ(space_hash(s), space_hash(decode_space(encode_space(s))));
  EXPECT_NE(space_hash(s), space_hash(table2_space(5)));
  const SearchSpace desk = read_space_file(std::string(AUTOMOE_DATA_DIR) + "/spaces/desk.json");
  EXPECT_TRUE(validate_space(desk).empty());
  EXPECT_EQ(read_space_file(std::string(AUTOMOE_DATA_DIR) + "/spaces/table2_m6.json"), s);
}

TEST(SearchSpace, GeneHashSeparatesGenes) {
  Rng rng(5);
  std::set<std::uint64_t> hashes;
  std::set<std::string> texts;
  for (int i = 0; i < 200; ++i) {
    const Gene g = sample_gene(table2_space(6), rng);
    hashes.insert(gene_hash(g));
    texts.insert(encode_gene(g));
  }
  EXPECT_EQ(hashes.size(), texts.size());
}

TEST(SearchSpace, EnumerationVisitsEveryGeneOnce) {
  SearchSpace s = point_space(2);
  s.head_choices = {1, 2};
  s.ffn_dim_choices = {4, 8};
  std::set<std::string> seen;
  std::size_t n = 0;
  for_each_gene(s, [&](const Gene& g) {
    ++n;
    EXPECT_TRUE(validate_gene(s, g).empty());
    seen.insert(encode_gene(g));
  });
  EXPECT_EQ(seen.size(), n);
  // Per layer: heads 2 choices; experts (1 expert: 2 widths) + (2 experts: 4 widths) = 6.
  // enc 2 layers, dec 1 layer with self+cross heads.
  const std::size_t enc_layer = 2 * 6;
  const std::size_t dec_layer = 2 * 2 * 6;
  EXPECT_EQ(n, enc_layer * enc_layer * dec_layer);
}
