#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "automoe/corpus.hpp"
#include "automoe/param_store.hpp"
#include "automoe/supernet.hpp"

namespace automoe {

struct TrainSchedule {
  long total_steps = 2000;
  long warmup_steps = 500;
  double lr_min = 1e-7;
  double lr_peak = 1e-3;
  int batch_tokens = 4096;
  double label_smoothing = 0.1;
  double aux_loss_coeff = 0.01;
  std::uint64_t seed = 1;
  long checkpoint_every = 0;  // 0 disables periodic checkpoints
  double dropout = 0.0;
};

/// 40K steps with a 10K-step warmup from 1e-7 to 1e-3.
TrainSchedule reference_schedule();
/// Same shape scaled down: warmup = total / 4.
TrainSchedule desk_schedule(long total_steps);

/// Throws ConfigError on warmup > total, lr_min >= lr_peak, or batch_tokens < max_len.
void validate_schedule(const TrainSchedule& sched, int max_len);

/// Linear warmup lr_min -> lr_peak, then cosine annealing back to lr_min.
/// Throws ConfigError for step outside [0, total_steps].
double lr_at(long step, const TrainSchedule& sched);

/// batch_tokens / (max_len + 1), at least 1.
std::size_t pairs_per_batch(const TrainSchedule& sched, int max_len);

/// Reshuffles the corpus every epoch and hands out fixed-size batches.
class BatchSampler {
 public:
  BatchSampler(const ParallelCorpus& corpus, std::size_t pairs_per_batch, std::uint64_t seed);
  Batch next();

 private:
  const ParallelCorpus& corpus_;
  std::size_t pairs_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

struct TrainLogEntry {
  long step = 0;
  double lr = 0;
  double loss = 0;
  double ce = 0;
  double aux = 0;
};

struct TrainOutputs {
  std::string metrics_path;    // JSONL {step, lr, loss, aux_loss}; empty = none
  std::string checkpoint_dir;  // empty = no checkpoints
  int log_every = 1;           // JSONL stride; the in-memory log keeps every step
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  std::string last_checkpoint;
};

/// Plain training of one architecture stored at exact shape.
TrainResult train_model(ParamStore& store, const Gene& gene, const ModelDims& dims, const ParallelCorpus& corpus,
                        const TrainSchedule& sched, const TrainOutputs& out = {});

/// Single-path supernet training: one uniformly sampled gene per step.
TrainResult train_supernet(Supernet& net, const ParallelCorpus& corpus, const TrainSchedule& sched,
                           const TrainOutputs& out = {});

enum class EvalMode { Loss, TokenAccuracy, CorpusBleu };
EvalMode parse_eval_mode(const std::string& name);

/// Loss: token-weighted label-smoothed CE. Accuracy: position-wise matches of
/// the greedy decode against the reference over max(|hyp|, |ref|). BLEU:
/// corpus 4-gram BLEU (0-100) of greedy decodes.
double evaluate(const ParamStore& store, const std::vector<ParamSpec>& slices, const Gene& gene,
                const ModelDims& dims, const ParallelCorpus& corpus, EvalMode mode, double label_smoothing = 0.1);

/// Uniform-weight 4-gram corpus BLEU with brevity penalty, on a 0-100 scale.
double corpus_bleu(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references);

/// Position-wise token accuracy as described for evaluate().
double token_accuracy(const std::vector<std::vector<int>>& hypotheses, const std::vector<std::vector<int>>& references);

/// Greedy decodes of every source in the corpus.
std::vector<std::vector<int>> decode_corpus(const ParamStore& store, const std::vector<ParamSpec>& slices,
                                            const Gene& gene, const ModelDims& dims, const ParallelCorpus& corpus);

void save_model(const std::string& path, const ParamStore& store, const Gene& gene, const ModelDims& dims);
/// Returns the stored weights; fills gene and dims from the checkpoint metadata.
ParamStore load_model(const std::string& path, Gene& gene, ModelDims& dims);

}  // namespace automoe
