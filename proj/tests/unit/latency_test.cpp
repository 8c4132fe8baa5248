#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numeric>

#include "automoe/errors.hpp"
#include "automoe/latency.hpp"
#include "test_support.hpp"

using namespace automoe;
using namespace automoe::testing;

TEST(TruncatedMean, OneToTen) {
  std::vector<double> s(10);
  std::iota(s.begin(), s.end(), 1.0);
  std::shuffle(s.begin(), s.end(), Rng(3));
  EXPECT_DOUBLE_EQ(truncated_mean(s, 0.1), 5.5);
}

TEST(TruncatedMean, ConstantSamples) {
  const std::vector<double> s(37, 4.25);
  EXPECT_DOUBLE_EQ(truncated_mean(s, 0.1), 4.25);
  EXPECT_DOUBLE_EQ(truncated_mean(s, 0.0), 4.25);
}

TEST(TruncatedMean, MatchesSortAndDrop) {
  Rng rng(4);
  std::lognormal_distribution<double> dist(0.0, 0.5);
  std::vector<double> s(300);
  for (auto& v : s) v = dist(rng);
  std::vector<double> sorted = s;
  std::sort(sorted.begin(), sorted.end());
  const double ref = std::accumulate(sorted.begin() + 30, sorted.end() - 30, 0.0) / 240.0;
  EXPECT_NEAR(truncated_mean(s, 0.1), ref, 1e-12);
}

TEST(TruncatedMean, RejectsTooFewSamples) {
  EXPECT_THROW(truncated_mean({}, 0.1), ConfigError);
  const std::vector<double> five{1, 2, 3, 4, 5};
  EXPECT_THROW(truncated_mean(five, 0.1), ConfigError);
  EXPECT_DOUBLE_EQ(truncated_mean(five, 0.0), 3.0);
}

TEST(Latency, SpecValidation) {
  LatencySpec s;
  EXPECT_NO_THROW(validate_latency_spec(s));
  s.passes = 9;
  EXPECT_THROW(validate_latency_spec(s), ConfigError);
  s = {};
  s.trim_fraction = 0.5;
  EXPECT_THROW(validate_latency_spec(s), ConfigError);
  s = {};
  s.src_len = 0;
  EXPECT_THROW(validate_latency_spec(s), ConfigError);
}

TEST(Latency, ConstraintIsInclusive) {
  EXPECT_TRUE(satisfies(585, 600));
  EXPECT_TRUE(satisfies(600, 600));
  EXPECT_FALSE(satisfies(601, 600));
}

TEST(Latency, MeasureSmallModel) {
  const Gene g = max_gene(point_space(2));
  const ModelDims dims{20, 16};
  const auto layout = parameter_layout(g, dims);
  const ParamStore store = ParamStore::initialized(layout, 1);
  LatencySpec spec;
  spec.passes = 10;
  spec.warmup = 1;
  spec.src_len = 6;
  spec.tgt_len = 6;
  const LatencyResult r = measure(g, store, layout, dims, spec);
  EXPECT_EQ(r.samples.size(), 10u);
  EXPECT_EQ(r.encoder_samples.size(), 10u);
  EXPECT_GT(r.total_ms, 0);
  EXPECT_GT(r.encoder_ms, 0);
  EXPECT_LE(r.encoder_ms, r.total_ms);
  EXPECT_GT(r.decoder_share(), 0);
  EXPECT_LT(r.decoder_share(), 1);
  EXPECT_EQ(r.warmup_passes, 1);
  EXPECT_FALSE(r.host.empty());

  const auto path = (std::filesystem::temp_directory_path() / "automoe_latency_test.jsonl").string();
  std::filesystem::remove(path);
  append_latency_log(path, g, spec, r);
  append_latency_log(path, g, spec, r);
  std::ifstream in(path);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("gene_hash").get<std::string>(), hex_hash(gene_hash(g)));
    EXPECT_DOUBLE_EQ(j.at("truncated_mean_ms").get<double>(), r.total_ms);
    EXPECT_EQ(j.at("samples").size(), 10u);
    ++lines;
  }
  EXPECT_EQ(lines, 2);
  std::filesystem::remove(path);
}

TEST(Latency, RefusesWhileWorkersAreBusy) {
  const Gene g = max_gene(point_space(1));
  const ModelDims dims{20, 16};
  const auto layout = parameter_layout(g, dims);
  const ParamStore store = ParamStore::initialized(layout, 1);
  LatencySpec spec;
  spec.passes = 10;
  spec.src_len = spec.tgt_len = 4;
  EXPECT_EQ(active_workers(), 0);
  {
    WorkerGuard busy;
    EXPECT_EQ(active_workers(), 1);
    EXPECT_THROW(measure(g, store, layout, dims, spec), std::runtime_error);
  }
  EXPECT_EQ(active_workers(), 0);
  EXPECT_NO_THROW(measure(g, store, layout, dims, spec));
}
