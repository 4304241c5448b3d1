#pragma once

// Synthetic parallel corpora with a controllable multimodality dial: each
// source sentence has exactly `registers` valid translations, realized as
// distinct seeded permutations of a base token lexicon.

#include <cstdint>
#include <string>
#include <vector>

namespace laddernat {

using TokenSeq = std::vector<int>;

// Reserved token ids shared by both languages.
inline constexpr int kPadId = 0;
inline constexpr int kEosId = 1;
inline constexpr int kUnkId = 2;
inline constexpr int kFirstContentId = 3;

enum class LengthOffsetRule { SameLength, PlusOneEveryThird };

struct CorpusSpec {
  int src_vocab = 64;
  int tgt_vocab = 64;
  int pairs = 10000;
  int len_min = 4;
  int len_max = 16;
  int registers = 1;
  LengthOffsetRule offset_rule = LengthOffsetRule::SameLength;
  std::uint64_t seed = 1;

  void validate() const;
};

struct ParallelPair {
  TokenSeq source;
  TokenSeq target;
  int register_id = 0;
};

struct Corpus {
  CorpusSpec spec;
  std::vector<ParallelPair> pairs;
};

int expected_target_length(LengthOffsetRule rule, int src_len);

// Deterministic in spec.seed; every source sentence is drawn from a finite
// pool so that duplicate sources (and hence multimodal evidence) exist.
Corpus gen_corpus(const CorpusSpec& spec);

struct CorpusSplits {
  Corpus train, valid, test;
};
CorpusSplits split_corpus(const Corpus& corpus, double valid_frac = 0.05, double test_frac = 0.05);

struct PaddedBatch {
  std::vector<std::vector<int>> src, tgt;                    // padded to batch max length
  std::vector<std::vector<std::uint8_t>> src_mask, tgt_mask;  // true = real token
  std::vector<int> src_len, tgt_len, registers;

  int size() const { return static_cast<int>(src.size()); }
};

std::vector<PaddedBatch> make_batches(const std::vector<ParallelPair>& pairs, int batch_size,
                                      int pad_id = kPadId);

// Line format: space-separated source ids, tab, target ids, tab, '#<register>'.
void save_corpus(const Corpus& corpus, const std::string& path);
Corpus load_corpus(const std::string& path);

struct ModelBundle;  // models module

struct KdCorpora {
  Corpus src2tgt;  // (original source, AT forward translation)
  Corpus tgt2src;  // (AT reverse translation, original target)
  int empty_outputs_replaced = 0;
};

// Regenerates both sides with greedy AT decoding (bidirectional KD). An empty
// AT output is replaced by a single end-token and counted.
KdCorpora kd_regenerate(const Corpus& corpus, const ModelBundle& at_bundle, int max_len);

}  // namespace laddernat
