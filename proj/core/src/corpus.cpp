#include "automoe/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "automoe/errors.hpp"

namespace automoe {

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<bos>", "<eos>", "<unk>"}) add(s);
}

int Vocabulary::add(const std::string& token) {
  auto it = index_.find(token);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  index_.emplace(token, id);
  return id;
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? tokens::kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw DimensionError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const auto& t : tokens_) out += t + "\n";
  return out;
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary v;
  std::istringstream in{std::string(text)};
  std::string line;
  int id = 0;
  while (std::getline(in, line)) {
    if (id < tokens::kFirstRegular) {
      if (line != v.tokens_[static_cast<std::size_t>(id)]) throw ParseError("vocabulary must start with the special tokens", 0);
    } else if (!line.empty()) {
      v.add(line);
    }
    ++id;
  }
  return v;
}

SyntheticTask parse_task(std::string_view name) {
  if (name == "copy") return SyntheticTask::Copy;
  if (name == "reverse") return SyntheticTask::Reverse;
  if (name == "lookup-translate") return SyntheticTask::LookupTranslate;
  throw ConfigError("unknown synthetic task '" + std::string(name) + "' (copy | reverse | lookup-translate)");
}

std::string task_name(SyntheticTask task) {
  switch (task) {
    case SyntheticTask::Copy: return "copy";
    case SyntheticTask::Reverse: return "reverse";
    case SyntheticTask::LookupTranslate: return "lookup-translate";
  }
  return "?";
}

ParallelCorpus make_synthetic(SyntheticTask task, int vocab, int len, std::size_t count, std::uint64_t seed) {
  if (vocab < 5) throw ConfigError("synthetic vocab must be >= 5");
  if (len < 1) throw ConfigError("synthetic length must be >= 1");
  ParallelCorpus c;
  for (int i = tokens::kFirstRegular; i < vocab; ++i) c.vocab.add("w" + std::to_string(i));
  c.max_len = len;

  Rng rng(seed);
  std::vector<int> perm(static_cast<std::size_t>(vocab));
  std::iota(perm.begin(), perm.end(), 0);
  if (task == SyntheticTask::LookupTranslate) {
    Rng prng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::shuffle(perm.begin() + tokens::kFirstRegular, perm.end(), prng);
  }
  std::uniform_int_distribution<int> tok(tokens::kFirstRegular, vocab - 1);
  for (std::size_t n = 0; n < count; ++n) {
    std::vector<int> s(static_cast<std::size_t>(len));
    for (auto& t : s) t = tok(rng);
    std::vector<int> t = s;
    if (task == SyntheticTask::Reverse) std::reverse(t.begin(), t.end());
    if (task == SyntheticTask::LookupTranslate) {
      for (auto& x : t) x = perm[static_cast<std::size_t>(x)];
    }
    c.src.push_back(std::move(s));
    c.tgt.push_back(std::move(t));
  }
  return c;
}

std::vector<std::string> tokenize(std::string_view line) {
  std::vector<std::string> out;
  std::istringstream in{std::string(line)};
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

std::vector<int> encode_line(std::string_view line, const Vocabulary& vocab) {
  std::vector<int> ids;
  for (const auto& t : tokenize(line)) ids.push_back(vocab.id(t));
  return ids;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    if (id == tokens::kPad || id == tokens::kBos || id == tokens::kEos) continue;
    if (!out.empty()) out += ' ';
    out += vocab.token(id);
  }
  return out;
}

namespace {

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  if (lines.empty()) throw ConfigError("corpus file is empty: " + path);
  return lines;
}

}  // namespace

ParallelCorpus load_corpus(const std::string& src_path, const std::string& tgt_path, const VocabPolicy& policy,
                           const Vocabulary* vocab) {
  if (policy.max_len < 1 || policy.min_freq < 1) throw ConfigError("corpus max_len and min_freq must be >= 1");
  const auto src_lines = read_lines(src_path);
  const auto tgt_lines = read_lines(tgt_path);
  if (src_lines.size() != tgt_lines.size()) {
    throw ConfigError("corpus line counts differ: " + std::to_string(src_lines.size()) + " vs " +
                      std::to_string(tgt_lines.size()));
  }
  ParallelCorpus c;
  c.max_len = policy.max_len;
  if (vocab) {
    c.vocab = *vocab;
  } else {
    std::map<std::string, int> freq;  // ordered, so ids do not depend on hashing
    std::vector<std::string> first_seen;
    for (const auto* lines : {&src_lines, &tgt_lines}) {
      for (const auto& l : *lines) {
        for (const auto& t : tokenize(l)) {
          if (freq[t]++ == 0) first_seen.push_back(t);
        }
      }
    }
    for (const auto& t : first_seen) {
      if (freq[t] >= policy.min_freq) c.vocab.add(t);
    }
  }
  for (std::size_t i = 0; i < src_lines.size(); ++i) {
    auto s = encode_line(src_lines[i], c.vocab);
    auto t = encode_line(tgt_lines[i], c.vocab);
    const auto cap = static_cast<std::size_t>(policy.max_len);
    if (s.size() > cap) {
      s.resize(cap);
      ++c.truncated;
    }
    if (t.size() > cap) {
      t.resize(cap);
      ++c.truncated;
    }
    if (s.empty()) s.push_back(tokens::kUnk);  // the encoder needs at least one token
    c.src.push_back(std::move(s));
    c.tgt.push_back(std::move(t));
  }
  return c;
}

std::pair<ParallelCorpus, ParallelCorpus> split_corpus(const ParallelCorpus& corpus, std::size_t holdout,
                                                       std::uint64_t seed) {
  if (holdout >= corpus.size()) throw ConfigError("holdout must leave at least one training pair");
  std::vector<std::size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  ParallelCorpus train, held;
  for (auto* c : {&train, &held}) {
    c->vocab = corpus.vocab;
    c->max_len = corpus.max_len;
  }
  const std::size_t cut = corpus.size() - holdout;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    ParallelCorpus& dst = k < cut ? train : held;
    dst.src.push_back(corpus.src[idx[k]]);
    dst.tgt.push_back(corpus.tgt[idx[k]]);
  }
  return {std::move(train), std::move(held)};
}

std::vector<Batch> corpus_batches(const ParallelCorpus& corpus, std::size_t pairs_per_batch) {
  if (pairs_per_batch == 0) throw ConfigError("pairs per batch must be >= 1");
  std::vector<Batch> out;
  for (std::size_t i = 0; i < corpus.size(); i += pairs_per_batch) {
    const std::size_t j = std::min(corpus.size(), i + pairs_per_batch);
    std::vector<std::vector<int>> s(corpus.src.begin() + static_cast<std::ptrdiff_t>(i),
                                    corpus.src.begin() + static_cast<std::ptrdiff_t>(j));
    std::vector<std::vector<int>> t(corpus.tgt.begin() + static_cast<std::ptrdiff_t>(i),
                                    corpus.tgt.begin() + static_cast<std::ptrdiff_t>(j));
    out.push_back(make_batch(s, t));
  }
  return out;
}

}  // namespace automoe
