#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <map>
#include <set>

#include "laddernat/data.hpp"

using namespace laddernat;

namespace {

CorpusSpec small_spec() {
  CorpusSpec spec;
  spec.src_vocab = 32;
  spec.tgt_vocab = 32;
  spec.pairs = 2000;
  spec.len_min = 3;
  spec.len_max = 8;
  spec.registers = 1;
  spec.seed = 7;
  return spec;
}

}  // namespace

TEST_CASE("corpus spec validation") {
  CorpusSpec spec = small_spec();
  CHECK_NOTHROW(spec.validate());
  spec.src_vocab = 4;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = small_spec();
  spec.registers = 0;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = small_spec();
  spec.registers = 40;  // more registers than content tokens
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
  spec = small_spec();
  spec.len_min = 9;
  CHECK_THROWS_AS(spec.validate(), std::invalid_argument);
}

TEST_CASE("registers=1 is a pure relabeling invertible by an oracle map") {
  Corpus corpus = gen_corpus(small_spec());
  REQUIRE(corpus.pairs.size() == 2000);
  // Recover the token map from the corpus, then check it is a bijection that
  // reconstructs every source exactly.
  std::map<int, int> fwd, rev;
  for (const auto& p : corpus.pairs) {
    REQUIRE(p.source.size() == p.target.size());
    for (size_t i = 0; i < p.source.size(); ++i) {
      auto [it, inserted] = fwd.emplace(p.source[i], p.target[i]);
      CHECK(it->second == p.target[i]);
      auto [rit, rinserted] = rev.emplace(p.target[i], p.source[i]);
      CHECK(rit->second == p.source[i]);
    }
  }
  for (const auto& p : corpus.pairs)
    for (size_t i = 0; i < p.source.size(); ++i) CHECK(rev.at(p.target[i]) == p.source[i]);
}

TEST_CASE("registers=2 gives duplicate sources with two distinct targets") {
  CorpusSpec spec = small_spec();
  spec.registers = 2;
  spec.pairs = 4000;
  Corpus corpus = gen_corpus(spec);

  std::map<TokenSeq, std::set<TokenSeq>> targets_by_source;
  for (const auto& p : corpus.pairs) targets_by_source[p.source].insert(p.target);
  int multimodal = 0;
  for (const auto& [src, tgts] : targets_by_source)
    if (tgts.size() >= 2) ++multimodal;
  CHECK(multimodal >= 100);
}

TEST_CASE("fixed seed reproduces the corpus bitwise") {
  CorpusSpec spec = small_spec();
  spec.registers = 3;
  Corpus a = gen_corpus(spec);
  Corpus b = gen_corpus(spec);
  REQUIRE(a.pairs.size() == b.pairs.size());
  for (size_t i = 0; i < a.pairs.size(); ++i) {
    CHECK(a.pairs[i].source == b.pairs[i].source);
    CHECK(a.pairs[i].target == b.pairs[i].target);
    CHECK(a.pairs[i].register_id == b.pairs[i].register_id);
  }
}

TEST_CASE("every pair satisfies the length-offset rule and id ranges") {
  for (auto rule : {LengthOffsetRule::SameLength, LengthOffsetRule::PlusOneEveryThird}) {
    CorpusSpec spec = small_spec();
    spec.offset_rule = rule;
    spec.registers = 2;
    Corpus corpus = gen_corpus(spec);
    for (const auto& p : corpus.pairs) {
      CHECK(static_cast<int>(p.target.size()) ==
            expected_target_length(rule, static_cast<int>(p.source.size())));
      CHECK(p.register_id < spec.registers);
      CHECK(static_cast<int>(p.source.size()) >= spec.len_min);
      CHECK(static_cast<int>(p.source.size()) <= spec.len_max);
      for (int t : p.source) {
        CHECK(t >= kFirstContentId);
        CHECK(t < spec.src_vocab);
      }
      for (int t : p.target) {
        CHECK(t >= kFirstContentId);
        CHECK(t < spec.tgt_vocab);
      }
    }
  }
}

TEST_CASE("batching pads and masks correctly") {
  Corpus corpus = gen_corpus(small_spec());
  auto batches = make_batches(corpus.pairs, 16);
  size_t covered = 0;
  for (const auto& b : batches) {
    covered += static_cast<size_t>(b.size());
    for (int i = 0; i < b.size(); ++i) {
      long mask_sum = 0;
      for (auto m : b.src_mask[static_cast<size_t>(i)]) mask_sum += m;
      CHECK(mask_sum == b.src_len[static_cast<size_t>(i)]);
      // all pads share pad-id
      for (size_t j = static_cast<size_t>(b.src_len[static_cast<size_t>(i)]);
           j < b.src[static_cast<size_t>(i)].size(); ++j)
        CHECK(b.src[static_cast<size_t>(i)][j] == kPadId);
      CHECK(b.src[static_cast<size_t>(i)].size() == b.src[0].size());
    }
  }
  CHECK(covered == corpus.pairs.size());

  SUBCASE("single pair batch has no padding") {
    auto single = make_batches({corpus.pairs[0]}, 4);
    REQUIRE(single.size() == 1);
    CHECK(single[0].size() == 1);
    CHECK(single[0].src[0].size() == corpus.pairs[0].source.size());
  }
  SUBCASE("empty corpus is an error") {
    CHECK_THROWS_AS(make_batches({}, 4), std::invalid_argument);
    CHECK_THROWS_AS(make_batches(corpus.pairs, 0), std::invalid_argument);
  }
}

TEST_CASE("corpus file round-trip") {
  CorpusSpec spec = small_spec();
  spec.registers = 2;
  spec.pairs = 200;
  Corpus corpus = gen_corpus(spec);
  auto path = std::filesystem::temp_directory_path() / "laddernat_corpus_test.txt";
  save_corpus(corpus, path.string());
  Corpus loaded = load_corpus(path.string());
  REQUIRE(loaded.pairs.size() == corpus.pairs.size());
  for (size_t i = 0; i < corpus.pairs.size(); ++i) {
    CHECK(loaded.pairs[i].source == corpus.pairs[i].source);
    CHECK(loaded.pairs[i].target == corpus.pairs[i].target);
    CHECK(loaded.pairs[i].register_id == corpus.pairs[i].register_id);
  }
  std::filesystem::remove(path);
}

TEST_CASE("splits are disjoint and cover the corpus") {
  Corpus corpus = gen_corpus(small_spec());
  CorpusSplits s = split_corpus(corpus, 0.1, 0.1);
  CHECK(s.train.pairs.size() + s.valid.pairs.size() + s.test.pairs.size() == corpus.pairs.size());
  CHECK(s.valid.pairs.size() == 200);
  CHECK(s.test.pairs.size() == 200);
}
