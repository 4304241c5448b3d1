#include "laddernat/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "laddernat/rng.hpp"

namespace laddernat {

void CorpusSpec::validate() const {
  if (src_vocab < 8 || tgt_vocab < 8) throw std::invalid_argument("corpus: vocab sizes must be >= 8");
  if (pairs < 1) throw std::invalid_argument("corpus: pairs must be >= 1");
  if (len_min < 1 || len_max < len_min) throw std::invalid_argument("corpus: bad length range");
  if (registers < 1) throw std::invalid_argument("corpus: registers must be >= 1");
  if (registers > tgt_vocab - kFirstContentId)
    throw std::invalid_argument("corpus: vocab too small for requested registers");
  if (src_vocab - kFirstContentId > tgt_vocab - kFirstContentId)
    throw std::invalid_argument("corpus: target vocab too small for an injective lexicon");
}

int expected_target_length(LengthOffsetRule rule, int src_len) {
  switch (rule) {
    case LengthOffsetRule::SameLength:
      return src_len;
    case LengthOffsetRule::PlusOneEveryThird:
      return src_len + src_len / 3;
  }
  throw std::invalid_argument("corpus: unknown length-offset rule");
}

namespace {

// Register r maps source content token s to perm_r[base[s]]; permutations are
// seeded and pairwise distinct across registers.
std::vector<std::vector<int>> build_register_maps(const CorpusSpec& spec) {
  const int src_content = spec.src_vocab - kFirstContentId;
  const int tgt_content = spec.tgt_vocab - kFirstContentId;

  // Injective base lexicon: source content token s -> base[s].
  auto rng = make_rng(spec.seed, "lexicon");
  std::vector<int> base(static_cast<size_t>(tgt_content));
  std::iota(base.begin(), base.end(), 0);
  std::shuffle(base.begin(), base.end(), rng);

  std::vector<std::vector<int>> maps;
  for (int r = 0; r < spec.registers; ++r) {
    for (int attempt = 0;; ++attempt) {
      auto prng = make_rng(spec.seed, "register." + std::to_string(r) + "." + std::to_string(attempt));
      std::vector<int> perm(static_cast<size_t>(tgt_content));
      std::iota(perm.begin(), perm.end(), 0);
      std::shuffle(perm.begin(), perm.end(), prng);
      std::vector<int> map(static_cast<size_t>(src_content));
      for (int s = 0; s < src_content; ++s)
        map[static_cast<size_t>(s)] = kFirstContentId + perm[static_cast<size_t>(base[static_cast<size_t>(s)])];
      if (std::find(maps.begin(), maps.end(), map) == maps.end()) {
        maps.push_back(std::move(map));
        break;
      }
      if (attempt > 64) throw std::invalid_argument("corpus: vocab too small for distinct registers");
    }
  }
  return maps;
}

TokenSeq apply_rule(const TokenSeq& mapped, LengthOffsetRule rule) {
  if (rule == LengthOffsetRule::SameLength) return mapped;
  TokenSeq out;
  out.reserve(mapped.size() + mapped.size() / 3);
  for (size_t i = 0; i < mapped.size(); ++i) {
    out.push_back(mapped[i]);
    if ((i + 1) % 3 == 0) out.push_back(mapped[i]);  // duplicate every 3rd token
  }
  return out;
}

}  // namespace

Corpus gen_corpus(const CorpusSpec& spec) {
  spec.validate();
  auto maps = build_register_maps(spec);

  // A finite pool of source sentences guarantees that duplicate sources occur,
  // which is what exposes register multimodality downstream.
  const int pool_size = std::max(1, spec.pairs / 8);
  auto pool_rng = make_rng(spec.seed, "source-pool");
  std::uniform_int_distribution<int> len_dist(spec.len_min, spec.len_max);
  std::uniform_int_distribution<int> tok_dist(kFirstContentId, spec.src_vocab - 1);
  std::vector<TokenSeq> pool(static_cast<size_t>(pool_size));
  for (auto& sent : pool) {
    sent.resize(static_cast<size_t>(len_dist(pool_rng)));
    for (auto& t : sent) t = tok_dist(pool_rng);
  }

  auto pair_rng = make_rng(spec.seed, "pairs");
  std::uniform_int_distribution<int> pool_dist(0, pool_size - 1);
  std::uniform_int_distribution<int> reg_dist(0, spec.registers - 1);

  Corpus corpus;
  corpus.spec = spec;
  corpus.pairs.reserve(static_cast<size_t>(spec.pairs));
  for (int i = 0; i < spec.pairs; ++i) {
    const TokenSeq& src = pool[static_cast<size_t>(pool_dist(pair_rng))];
    int reg = reg_dist(pair_rng);
    TokenSeq mapped(src.size());
    for (size_t j = 0; j < src.size(); ++j)
      mapped[j] = maps[static_cast<size_t>(reg)][static_cast<size_t>(src[j] - kFirstContentId)];
    corpus.pairs.push_back({src, apply_rule(mapped, spec.offset_rule), reg});
  }
  return corpus;
}

CorpusSplits split_corpus(const Corpus& corpus, double valid_frac, double test_frac) {
  const int n = static_cast<int>(corpus.pairs.size());
  int n_valid = std::max(1, static_cast<int>(n * valid_frac));
  int n_test = std::max(1, static_cast<int>(n * test_frac));
  if (n_valid + n_test >= n) throw std::invalid_argument("split: corpus too small");
  CorpusSplits s;
  s.train.spec = s.valid.spec = s.test.spec = corpus.spec;
  s.train.pairs.assign(corpus.pairs.begin(), corpus.pairs.end() - n_valid - n_test);
  s.valid.pairs.assign(corpus.pairs.end() - n_valid - n_test, corpus.pairs.end() - n_test);
  s.test.pairs.assign(corpus.pairs.end() - n_test, corpus.pairs.end());
  return s;
}

std::vector<PaddedBatch> make_batches(const std::vector<ParallelPair>& pairs, int batch_size,
                                      int pad_id) {
  if (batch_size < 1) throw std::invalid_argument("batch: batch size must be >= 1");
  if (pairs.empty()) throw std::invalid_argument("batch: empty corpus");
  std::vector<PaddedBatch> batches;
  for (size_t start = 0; start < pairs.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(pairs.size(), start + static_cast<size_t>(batch_size));
    PaddedBatch b;
    int max_src = 0, max_tgt = 0;
    for (size_t i = start; i < end; ++i) {
      max_src = std::max(max_src, static_cast<int>(pairs[i].source.size()));
      max_tgt = std::max(max_tgt, static_cast<int>(pairs[i].target.size()));
    }
    for (size_t i = start; i < end; ++i) {
      const auto& p = pairs[i];
      std::vector<int> src = p.source, tgt = p.target;
      std::vector<std::uint8_t> sm(src.size(), 1), tm(tgt.size(), 1);
      src.resize(static_cast<size_t>(max_src), pad_id);
      tgt.resize(static_cast<size_t>(max_tgt), pad_id);
      sm.resize(static_cast<size_t>(max_src), 0);
      tm.resize(static_cast<size_t>(max_tgt), 0);
      b.src.push_back(std::move(src));
      b.tgt.push_back(std::move(tgt));
      b.src_mask.push_back(std::move(sm));
      b.tgt_mask.push_back(std::move(tm));
      b.src_len.push_back(static_cast<int>(p.source.size()));
      b.tgt_len.push_back(static_cast<int>(p.target.size()));
      b.registers.push_back(p.register_id);
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("corpus: cannot open " + path + " for writing");
  for (const auto& p : corpus.pairs) {
    for (size_t i = 0; i < p.source.size(); ++i) os << (i ? " " : "") << p.source[i];
    os << '\t';
    for (size_t i = 0; i < p.target.size(); ++i) os << (i ? " " : "") << p.target[i];
    os << "\t#" << p.register_id << '\n';
  }
  if (!os) throw std::runtime_error("corpus: write failed for " + path);
}

Corpus load_corpus(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("corpus: cannot open " + path);
  Corpus corpus;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string src_part, tgt_part, reg_part;
    if (!std::getline(ss, src_part, '\t') || !std::getline(ss, tgt_part, '\t'))
      throw std::runtime_error("corpus: malformed line in " + path);
    std::getline(ss, reg_part, '\t');
    ParallelPair p;
    std::stringstream srcs(src_part), tgts(tgt_part);
    for (int t; srcs >> t;) p.source.push_back(t);
    for (int t; tgts >> t;) p.target.push_back(t);
    if (!reg_part.empty() && reg_part[0] == '#') p.register_id = std::stoi(reg_part.substr(1));
    corpus.pairs.push_back(std::move(p));
  }
  return corpus;
}

}  // namespace laddernat
