#include "automoe/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <numbers>
#include <numeric>

#include "automoe/checkpoint.hpp"
#include "automoe/errors.hpp"
#include "internal.hpp"

namespace automoe {

TrainSchedule reference_schedule() {
  TrainSchedule s;
  s.total_steps = 40000;
  s.warmup_steps = 10000;
  return s;
}

TrainSchedule desk_schedule(long total_steps) {
  TrainSchedule s;
  s.total_steps = total_steps;
  s.warmup_steps = total_steps / 4;
  return s;
}

void validate_schedule(const TrainSchedule& s, int max_len) {
  if (s.total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (s.warmup_steps < 0 || s.warmup_steps > s.total_steps) throw ConfigError("warmup_steps must lie in [0, total_steps]");
  if (!(s.lr_min < s.lr_peak) || s.lr_min < 0) throw ConfigError("need 0 <= lr_min < lr_peak");
  if (s.batch_tokens < max_len) throw ConfigError("batch_tokens must be >= the maximum sequence length");
  if (!(s.label_smoothing >= 0 && s.label_smoothing < 1)) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (s.aux_loss_coeff < 0) throw ConfigError("aux_loss_coeff must be >= 0");
  if (!(s.dropout >= 0 && s.dropout < 1)) throw ConfigError("dropout must lie in [0, 1)");
}

double lr_at(long step, const TrainSchedule& s) {
  if (step < 0 || step > s.total_steps) {
    throw ConfigError("step " + std::to_string(step) + " outside [0, " + std::to_string(s.total_steps) + "]");
  }
  if (step <= s.warmup_steps && s.warmup_steps > 0) {
    return s.lr_min + (s.lr_peak - s.lr_min) * static_cast<double>(step) / static_cast<double>(s.warmup_steps);
  }
  const long span = s.total_steps - s.warmup_steps;
  if (span == 0) return s.lr_peak;
  const double progress = static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return s.lr_min + 0.5 * (s.lr_peak - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

std::size_t pairs_per_batch(const TrainSchedule& s, int max_len) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(s.batch_tokens) / static_cast<std::size_t>(max_len + 1));
}

BatchSampler::BatchSampler(const ParallelCorpus& corpus, std::size_t pairs, std::uint64_t seed)
    : corpus_(corpus), pairs_(std::min(pairs, corpus.size())), rng_(seed), order_(corpus.size()) {
  if (corpus.size() == 0) throw ConfigError("cannot sample batches from an empty corpus");
  if (pairs == 0) throw ConfigError("pairs per batch must be >= 1");
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
}

Batch BatchSampler::next() {
  std::vector<std::vector<int>> s, t;
  while (s.size() < pairs_) {
    if (cursor_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      cursor_ = 0;
    }
    const std::size_t i = order_[cursor_++];
    s.push_back(corpus_.src[i]);
    t.push_back(corpus_.tgt[i]);
  }
  return make_batch(s, t);
}

namespace {

StepHyper hyper_for(const TrainSchedule& s, long step) {
  StepHyper h;
  h.lr = static_cast<Real>(lr_at(step + 1, s));
  h.label_smoothing = static_cast<Real>(s.label_smoothing);
  h.aux_coeff = static_cast<Real>(s.aux_loss_coeff);
  h.dropout = static_cast<Real>(s.dropout);
  return h;
}

void log_step(const TrainOutputs& out, const TrainLogEntry& e) {
  if (out.metrics_path.empty() || (e.step % std::max(1, out.log_every)) != 0) return;
  nlohmann::ordered_json j{{"step", e.step}, {"lr", e.lr}, {"loss", e.loss}, {"ce", e.ce}, {"aux_loss", e.aux}};
  detail::append_line(out.metrics_path, j.dump());
}

// Shared loop; `step_fn` performs one optimizer step and `save` writes a checkpoint.
template <class StepFn, class SaveFn>
TrainResult run_loop(const ParallelCorpus& corpus, const TrainSchedule& sched, const TrainOutputs& out, StepFn step_fn,
                     SaveFn save) {
  validate_schedule(sched, corpus.max_len + 1);
  if (corpus.size() == 0) throw ConfigError("training corpus is empty");
  if (!out.metrics_path.empty()) std::filesystem::remove(out.metrics_path);
  BatchSampler sampler(corpus, pairs_per_batch(sched, corpus.max_len), sched.seed);
  Rng rng(sched.seed ^ 0x5bd1e995ULL);
  TrainResult result;
  for (long step = 0; step < sched.total_steps; ++step) {
    const Batch batch = sampler.next();
    const StepHyper h = hyper_for(sched, step);
    StepMetrics m;
    try {
      m = step_fn(batch, h, rng);
    } catch (const NumericalError& e) {
      throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step), step, result.last_checkpoint);
    }
    TrainLogEntry entry{step, double(h.lr), m.loss, m.ce, m.aux};
    result.log.push_back(entry);
    log_step(out, entry);
    const bool periodic = sched.checkpoint_every > 0 && (step + 1) % sched.checkpoint_every == 0;
    if (!out.checkpoint_dir.empty() && (periodic || step + 1 == sched.total_steps)) {
      const std::string path = (std::filesystem::path(out.checkpoint_dir) / ("step_" + std::to_string(step + 1) + ".ckpt")).string();
      save(path);
      result.last_checkpoint = path;
    }
  }
  return result;
}

}  // namespace

TrainResult train_model(ParamStore& store, const Gene& gene, const ModelDims& dims, const ParallelCorpus& corpus,
                        const TrainSchedule& sched, const TrainOutputs& out) {
  const auto slices = parameter_layout(gene, dims);
  Adam adam;
  return run_loop(
      corpus, sched, out,
      [&](const Batch& b, const StepHyper& h, Rng& rng) { return train_step(store, adam, gene, slices, b, h, rng); },
      [&](const std::string& path) { save_model(path, store, gene, dims); });
}

TrainResult train_supernet(Supernet& net, const ParallelCorpus& corpus, const TrainSchedule& sched,
                           const TrainOutputs& out) {
  Adam adam;
  Rng arch_rng(sched.seed ^ 0x9e3779b97f4a7c15ULL);
  return run_loop(
      corpus, sched, out,
      [&](const Batch& b, const StepHyper& h, Rng& rng) { return spos_train_step(net, adam, b, h, arch_rng, rng); },
      [&](const std::string& path) { save_supernet(path, net); });
}

EvalMode parse_eval_mode(const std::string& name) {
  if (name == "loss") return EvalMode::Loss;
  if (name == "token_accuracy" || name == "accuracy") return EvalMode::TokenAccuracy;
  if (name == "corpus_bleu" || name == "bleu") return EvalMode::CorpusBleu;
  throw ConfigError("unknown eval mode '" + name + "' (loss | token_accuracy | corpus_bleu)");
}

std::vector<std::vector<int>> decode_corpus(const ParamStore& store, const std::vector<ParamSpec>& slices,
                                            const Gene& gene, const ModelDims& dims, const ParallelCorpus& corpus) {
  Tape tape(false);
  const BoundWeights w = bind_weights(tape, store, slices);
  const std::size_t mark = tape.size();
  const std::size_t cap = static_cast<std::size_t>(std::max(1, dims.max_positions - 1));
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::size_t max_len = std::min(cap, corpus.tgt[i].size() + 4);
    out.push_back(greedy_decode(tape, w, gene, corpus.src[i], max_len));
    tape.truncate(mark);
  }
  return out;
}

double token_accuracy(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
  if (hyps.size() != refs.size()) throw DimensionError("hypothesis and reference counts differ");
  std::size_t hit = 0, total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const std::size_t n = std::max(hyps[i].size(), refs[i].size());
    for (std::size_t k = 0; k < std::min(hyps[i].size(), refs[i].size()); ++k) hit += hyps[i][k] == refs[i][k];
    total += n;
  }
  return total ? static_cast<double>(hit) / static_cast<double>(total) : 1.0;
}

double corpus_bleu(const std::vector<std::vector<int>>& hyps, const std::vector<std::vector<int>>& refs) {
  if (hyps.size() != refs.size()) throw DimensionError("hypothesis and reference counts differ");
  if (hyps.empty()) throw DimensionError("BLEU of an empty corpus");
  double match[4] = {0, 0, 0, 0}, possible[4] = {0, 0, 0, 0};
  double hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    const auto& h = hyps[i];
    const auto& r = refs[i];
    hyp_len += static_cast<double>(h.size());
    ref_len += static_cast<double>(r.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<int>, int> ref_counts;
      for (std::size_t k = 0; k + n <= r.size(); ++k) ++ref_counts[std::vector<int>(r.begin() + long(k), r.begin() + long(k + n))];
      std::map<std::vector<int>, int> hyp_counts;
      for (std::size_t k = 0; k + n <= h.size(); ++k) ++hyp_counts[std::vector<int>(h.begin() + long(k), h.begin() + long(k + n))];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) match[n - 1] += std::min(c, it->second);
      }
      if (h.size() >= n) possible[n - 1] += static_cast<double>(h.size() - n + 1);
    }
  }
  double log_p = 0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0 || possible[n] == 0) return 0.0;
    log_p += 0.25 * std::log(match[n] / possible[n]);
  }
  const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / std::max(hyp_len, 1e-12));
  return 100.0 * bp * std::exp(log_p);
}

double evaluate(const ParamStore& store, const std::vector<ParamSpec>& slices, const Gene& gene,
                const ModelDims& dims, const ParallelCorpus& corpus, EvalMode mode, double label_smoothing) {
  if (corpus.size() == 0) throw DimensionError("evaluation corpus is empty");
  if (mode == EvalMode::Loss) {
    double total = 0;
    std::size_t count = 0;
    for (const Batch& b : corpus_batches(corpus, 32)) {
      Tape tape(false);
      const BoundWeights w = bind_weights(tape, store, slices);
      ForwardResult f = forward(tape, w, gene, b);
      total += tape.value(cross_entropy(f.logits, b.labels, static_cast<Real>(label_smoothing)))[0] *
               static_cast<double>(b.num_target_tokens());
      count += b.num_target_tokens();
    }
    return total / static_cast<double>(count);
  }
  const auto hyps = decode_corpus(store, slices, gene, dims, corpus);
  return mode == EvalMode::TokenAccuracy ? token_accuracy(hyps, corpus.tgt) : corpus_bleu(hyps, corpus.tgt);
}

void save_model(const std::string& path, const ParamStore& store, const Gene& gene, const ModelDims& dims) {
  CheckpointData data;
  data.tensors = store.to_named();
  data.metadata["kind"] = "model";
  data.metadata["gene"] = encode_gene(gene);
  data.metadata["vocab"] = std::to_string(dims.vocab);
  data.metadata["max_positions"] = std::to_string(dims.max_positions);
  save_checkpoint(path, data);
}

ParamStore load_model(const std::string& path, Gene& gene, ModelDims& dims) {
  CheckpointData data = load_checkpoint(path);
  if (data.metadata.count("gene") == 0) throw ConfigError(path + " is not a model checkpoint");
  gene = decode_gene(data.metadata.at("gene"));
  dims.vocab = std::stoi(data.metadata.at("vocab"));
  dims.max_positions = std::stoi(data.metadata.at("max_positions"));
  return ParamStore::from_named(std::move(data.tensors));
}

}  // namespace automoe
