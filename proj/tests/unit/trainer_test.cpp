#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <set>

#include "automoe/corpus.hpp"
#include "automoe/errors.hpp"
#include "automoe/trainer.hpp"
#include "test_support.hpp"

using namespace automoe;
using namespace automoe::testing;

namespace {

std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("automoe_trainer_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TrainSchedule quick(long steps, int batch_tokens = 128) {
  TrainSchedule s = desk_schedule(steps);
  s.batch_tokens = batch_tokens;
  s.lr_peak = 3e-3;
  return s;
}

}  // namespace

TEST(Schedule, LearningRateShape) {
  const TrainSchedule s = reference_schedule();
  EXPECT_EQ(s.total_steps, 40000);
  EXPECT_EQ(s.warmup_steps, 10000);
  EXPECT_DOUBLE_EQ(lr_at(0, s), 1e-7);
  EXPECT_DOUBLE_EQ(lr_at(10000, s), 1e-3);
  EXPECT_NEAR(lr_at(5000, s), 0.5 * (1e-7 + 1e-3), 1e-15);
  EXPECT_NEAR(lr_at(25000, s), 1e-7 + 0.5 * (1e-3 - 1e-7), 1e-15);
  EXPECT_NEAR(lr_at(40000, s), 1e-7, 1e-15);
  for (long t = 10000; t < 40000; t += 1000) EXPECT_GE(lr_at(t, s), lr_at(t + 1000, s));
  EXPECT_THROW(lr_at(-1, s), ConfigError);
  EXPECT_THROW(lr_at(40001, s), ConfigError);
}

TEST(Schedule, Validation) {
  TrainSchedule s = desk_schedule(100);
  EXPECT_EQ(s.warmup_steps, 25);
  EXPECT_NO_THROW(validate_schedule(s, 64));
  s.warmup_steps = 101;
  EXPECT_THROW(validate_schedule(s, 64), ConfigError);
  s = desk_schedule(100);
  s.lr_min = s.lr_peak;
  EXPECT_THROW(validate_schedule(s, 64), ConfigError);
  s = desk_schedule(100);
  s.batch_tokens = 10;
  EXPECT_THROW(validate_schedule(s, 64), ConfigError);
  EXPECT_EQ(pairs_per_batch(s, 64), 1u);
  s.batch_tokens = 4096;
  EXPECT_EQ(pairs_per_batch(s, 63), 64u);
}

TEST(BatchSampler, EpochCoversCorpusOnce) {
  const ParallelCorpus c = make_synthetic(SyntheticTask::Copy, 20, 4, 12, 1);
  BatchSampler a(c, 4, 9), b(c, 4, 9);
  std::multiset<std::vector<int>> seen;
  for (int i = 0; i < 3; ++i) {
    const Batch x = a.next();
    EXPECT_EQ(x.size(), 4u);
    EXPECT_EQ(x.src, b.next().src);
    for (std::size_t p = 0; p < 4; ++p) seen.insert(std::vector<int>(x.src.begin() + p * 4, x.src.begin() + p * 4 + 4));
  }
  EXPECT_EQ(seen, std::multiset<std::vector<int>>(c.src.begin(), c.src.end()));
}

TEST(Trainer, SameSeedSameLossCurve) {
  const ParallelCorpus c = make_synthetic(SyntheticTask::Reverse, 16, 5, 200, 2);
  const Gene g = uniform_gene(16, 16, 2, 1, 1, 2, 16);
  const ModelDims dims{c.vocab_size(), 16};
  TrainSchedule s = quick(20);
  s.dropout = 0.1;
  auto run = [&] {
    ParamStore store = ParamStore::initialized(parameter_layout(g, dims), 4);
    return train_model(store, g, dims, c, s).log;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 20u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].loss, b[i].loss);
    EXPECT_EQ(a[i].lr, lr_at(long(i) + 1, s));
  }
}

TEST(Trainer, SingletonSupernetMatchesPlainTraining) {
  const ParallelCorpus c = make_synthetic(SyntheticTask::Copy, 16, 5, 200, 3);
  const SearchSpace space = point_space(1);
  const ModelDims dims{c.vocab_size(), 16};
  const Gene g = max_gene(space);
  const TrainSchedule s = quick(30);
  Supernet net(space, dims, 5);
  ParamStore store = ParamStore::initialized(parameter_layout(g, dims), 5);
  const auto a = train_supernet(net, c, s).log;
  const auto b = train_model(store, g, dims, c, s).log;
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].loss, b[i].loss) << i;
}

TEST(Trainer, WritesMetricsAndCheckpoints) {
  const auto dir = scratch("outputs");
  const ParallelCorpus c = make_synthetic(SyntheticTask::Copy, 16, 4, 100, 4);
  const Gene g = uniform_gene(8, 8, 2, 1, 1, 1, 8);
  const ModelDims dims{c.vocab_size(), 16};
  TrainSchedule s = quick(10);
  s.checkpoint_every = 4;
  TrainOutputs out;
  out.metrics_path = (dir / "metrics.jsonl").string();
  out.checkpoint_dir = (dir / "ckpt").string();
  out.log_every = 2;
  ParamStore store = ParamStore::initialized(parameter_layout(g, dims), 1);
  const TrainResult r = train_model(store, g, dims, c, s, out);
  EXPECT_EQ(r.log.size(), 10u);
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt" / "step_4.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "ckpt" / "step_8.ckpt"));
  EXPECT_TRUE(std::filesystem::exists(r.last_checkpoint));
  std::ifstream in(out.metrics_path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    for (const char* k : {"step", "lr", "loss", "aux_loss"}) EXPECT_TRUE(j.contains(k)) << k;
    ++n;
  }
  EXPECT_EQ(n, 5);
  std::filesystem::remove_all(dir);
}

TEST(Trainer, DivergenceReportsStepAndCheckpoint) {
  const auto dir = scratch("diverge");
  const ParallelCorpus c = make_synthetic(SyntheticTask::Copy, 16, 4, 100, 5);
  const Gene g = uniform_gene(8, 8, 2, 1, 1, 1, 8);
  const ModelDims dims{c.vocab_size(), 16};
  TrainSchedule s = quick(10);
  s.checkpoint_every = 2;
  ParamStore store = ParamStore::initialized(parameter_layout(g, dims), 1);
  TrainOutputs out;
  out.checkpoint_dir = dir.string();
  // Train a few good steps, then poison a weight so the next run fails at once.
  TrainSchedule first = s;
  first.total_steps = 4;
  first.warmup_steps = 1;
  train_model(store, g, dims, c, first, out);
  store.value("dec.output.w")[0] = std::numeric_limits<Real>::quiet_NaN();
  try {
    train_model(store, g, dims, c, s, out);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.step(), 0);
    EXPECT_TRUE(e.last_checkpoint().empty());  // this run never reached a checkpoint
  }
  std::filesystem::remove_all(dir);
}

TEST(Metrics, BleuHandExamples) {
  const std::vector<std::vector<int>> ref{{4, 5, 6, 7, 8, 9}};
  EXPECT_NEAR(corpus_bleu(ref, ref), 100.0, 1e-9);
  EXPECT_EQ(corpus_bleu({{10, 11, 12, 13}}, ref), 0.0);
  // Hypothesis 4 5 6 7 against 4 5 6 7 8 9: precisions 1,1,1,1; brevity penalty exp(1 - 6/4).
  EXPECT_NEAR(corpus_bleu({{4, 5, 6, 7}}, ref), 100.0 * std::exp(1.0 - 1.5), 1e-9);
  // 4 5 6 9 7 8: p1 = 6/6, p2 = 3/5, p3 = 1/4, p4 = 0/3 -> 0.
  EXPECT_EQ(corpus_bleu({{4, 5, 6, 9, 7, 8}}, ref), 0.0);
  // 4 5 6 7 9 8: p1 = 1, p2 = 3/5, p3 = 2/4, p4 = 1/3, no brevity penalty.
  EXPECT_NEAR(corpus_bleu({{4, 5, 6, 7, 9, 8}}, ref), 100.0 * std::pow(1.0 * 0.6 * 0.5 / 3.0, 0.25), 1e-9);
}

TEST(Metrics, TokenAccuracy) {
  EXPECT_DOUBLE_EQ(token_accuracy({{4, 5, 6}}, {{4, 5, 6}}), 1.0);
  EXPECT_DOUBLE_EQ(token_accuracy({{4, 9, 6}}, {{4, 5, 6}}), 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(token_accuracy({{4, 5}}, {{4, 5, 6, 7}}), 0.5);
  EXPECT_DOUBLE_EQ(token_accuracy({{4, 5, 6, 7}}, {{4, 5}}), 0.5);
  EXPECT_DOUBLE_EQ(token_accuracy({{4}, {5, 6}}, {{4}, {5, 7}}), 2.0 / 3.0);
}

TEST(Metrics, EvalModeNames) {
  EXPECT_EQ(parse_eval_mode("loss"), EvalMode::Loss);
  EXPECT_EQ(parse_eval_mode("token_accuracy"), EvalMode::TokenAccuracy);
  EXPECT_EQ(parse_eval_mode("bleu"), EvalMode::CorpusBleu);
  EXPECT_THROW(parse_eval_mode("perplexity"), ConfigError);
}

TEST(Trainer, UntrainedModelIsNearChance) {
  const ParallelCorpus c = make_synthetic(SyntheticTask::LookupTranslate, 40, 6, 100, 6);
  const Gene g = uniform_gene(16, 16, 2, 1, 1, 1, 16);
  const ModelDims dims{c.vocab_size(), 16};
  const ParamStore store = ParamStore::initialized(parameter_layout(g, dims), 2);
  const double loss = evaluate(store, parameter_layout(g, dims), g, dims, c, EvalMode::Loss, 0.0);
  EXPECT_NEAR(loss, std::log(double(dims.vocab)), 1.0);
  EXPECT_LT(evaluate(store, parameter_layout(g, dims), g, dims, c, EvalMode::TokenAccuracy), 0.2);
}

TEST(Trainer, LearnsCopyTask) {
  const ParallelCorpus all = make_synthetic(SyntheticTask::Copy, 16, 8, 4000, 7);
  const auto [train, valid] = split_corpus(all, 100, 1);
  const Gene g = uniform_gene(32, 32, 4, 2, 2, 1, 64);
  const ModelDims dims{all.vocab_size(), 16};
  TrainSchedule s = quick(600, 288);
  s.lr_peak = 2e-3;
  ParamStore store = ParamStore::initialized(parameter_layout(g, dims), 3);
  train_model(store, g, dims, train, s);
  const auto layout = parameter_layout(g, dims);
  EXPECT_GE(evaluate(store, layout, g, dims, valid, EvalMode::TokenAccuracy), 0.95);
  EXPECT_GT(evaluate(store, layout, g, dims, valid, EvalMode::CorpusBleu), 80.0);

  const auto path = (std::filesystem::temp_directory_path() / "automoe_copy_model.ckpt").string();
  save_model(path, store, g, dims);
  Gene g2;
  ModelDims d2;
  const ParamStore back = load_model(path, g2, d2);
  EXPECT_EQ(g2, g);
  EXPECT_EQ(d2, dims);
  EXPECT_EQ(decode_corpus(back, layout, g, dims, valid), decode_corpus(store, layout, g, dims, valid));
  std::filesystem::remove(path);
}

TEST(Trainer, LoadBalancingRaisesRoutingEntropy) {
  // Paired runs differing only in the auxiliary coefficient.
  const ParallelCorpus c = make_synthetic(SyntheticTask::LookupTranslate, 32, 6, 500, 8);
  const Gene g = uniform_gene(16, 16, 2, 1, 1, 4, 16);
  const ModelDims dims{c.vocab_size(), 16};
  auto entropy_after = [&](double coeff) {
    TrainSchedule s = quick(150);
    s.aux_loss_coeff = coeff;
    ParamStore store = ParamStore::initialized(parameter_layout(g, dims), 6);
    train_model(store, g, dims, c, s);
    Tape tape(false);
    const auto batches = corpus_batches(c, 64);
    const auto fwd = forward(tape, bind_weights(tape, store, parameter_layout(g, dims)), g, batches[0]);
    return routing_entropy(fwd.routing);
  };
  EXPECT_GT(entropy_after(1.0), entropy_after(0.0));
}
