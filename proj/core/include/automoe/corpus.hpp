#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "automoe/moe_model.hpp"

namespace automoe {

/// Token <-> id map shared by source and target; ids 0-3 are pad/bos/eos/unk.
class Vocabulary {
 public:
  Vocabulary();

  int add(const std::string& token);
  /// Unknown tokens map to the unk id.
  int id(const std::string& token) const;
  const std::string& token(int id) const;
  bool contains(const std::string& token) const { return index_.count(token) != 0; }
  int size() const noexcept { return static_cast<int>(tokens_.size()); }

  /// One token per line, ids in line order.
  std::string serialize() const;
  static Vocabulary parse(std::string_view text);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ParallelCorpus {
  std::vector<std::vector<int>> src;
  std::vector<std::vector<int>> tgt;
  Vocabulary vocab;
  int max_len = 0;
  std::size_t truncated = 0;  // lines cut to max_len while loading

  std::size_t size() const noexcept { return src.size(); }
  int vocab_size() const noexcept { return vocab.size(); }
};

enum class SyntheticTask { Copy, Reverse, LookupTranslate };

SyntheticTask parse_task(std::string_view name);
std::string task_name(SyntheticTask task);

/// Random sources of exactly `len` regular tokens (ids in [4, vocab)).
/// LookupTranslate maps each token through a permutation drawn from `seed`.
ParallelCorpus make_synthetic(SyntheticTask task, int vocab, int len, std::size_t count, std::uint64_t seed);

struct VocabPolicy {
  int min_freq = 1;
  int max_len = 64;
};

/// Whitespace tokenization. Without `vocab`, the vocabulary is built from these
/// files (tokens seen fewer than min_freq times become unk).
ParallelCorpus load_corpus(const std::string& src_path, const std::string& tgt_path, const VocabPolicy& policy,
                           const Vocabulary* vocab = nullptr);

std::vector<std::string> tokenize(std::string_view line);
std::vector<int> encode_line(std::string_view line, const Vocabulary& vocab);
/// Drops pad/bos/eos; joins with single spaces.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

/// Deterministic split: the last `holdout` pairs of a seeded permutation.
std::pair<ParallelCorpus, ParallelCorpus> split_corpus(const ParallelCorpus& corpus, std::size_t holdout,
                                                       std::uint64_t seed);

/// Consecutive batches of up to `pairs_per_batch` pairs, in corpus order.
std::vector<Batch> corpus_batches(const ParallelCorpus& corpus, std::size_t pairs_per_batch);

}  // namespace automoe
