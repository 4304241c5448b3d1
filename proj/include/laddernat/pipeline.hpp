#pragma once

// File-level pipeline stages behind the CLI: each stage reads and writes
// artifact directories so that any stage can be reproduced from (config,
// seed) alone. The repro chain runs everything end to end.

#include <string>
#include <vector>

#include "laddernat/analysis.hpp"
#include "laddernat/config.hpp"
#include "laddernat/data.hpp"
#include "laddernat/infer.hpp"
#include "laddernat/model.hpp"
#include "laddernat/train.hpp"

namespace laddernat {

CorpusSpec corpus_spec_from(const Config& cfg);
BlockConfig block_config_from(const Config& cfg);
LatentConfig latent_config_from(const Config& cfg, ModelKind kind);
// Reads train.* keys with train.<kind>.* taking precedence.
TrainConfig train_config_from(const Config& cfg, ModelKind kind);

struct ReportRow {
  std::string metric;
  std::string model;
  double value = 0.0;
  std::uint64_t seed = 0;
};

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows,
                      const std::string& config_hash);
void write_translations(const std::string& path, const std::vector<TokenSeq>& outputs,
                        const std::string& config_hash);
void write_latent_csv(const std::string& path, const LatentMatrix& src, const LatentMatrix& tgt,
                      const std::string& config_hash);

struct BenchRow {
  std::string model;
  int length_bucket = 0;
  int sentences = 0;
  double seconds = 0.0;
  double ratio = 0.0;
};
void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows,
                     const std::string& config_hash);

// Batch translation honoring LADDERNAT_THREADS; output order matches input.
std::vector<TokenSeq> translate_corpus(const ModelBundle& b, const std::vector<TokenSeq>& inputs,
                                       Direction dir, int refinements, int max_len);

void stage_gen_data(const Config& cfg, const std::string& out_dir);
CorpusSplits load_splits(const std::string& data_dir);

void stage_train_at(const Config& cfg, const std::string& data_dir, const std::string& run_dir);
void stage_kd(const Config& cfg, const std::string& data_dir, const std::string& at_dir,
              const std::string& out_dir);
// kd_dir may be empty to train on the original parallel corpus.
void stage_train_latent(const Config& cfg, ModelKind kind, const std::string& data_dir,
                        const std::string& kd_dir, const std::string& run_dir);
void stage_eval(const Config& cfg, const std::string& run_dir, const std::string& data_dir,
                const std::string& out_csv);
void stage_analyze(const Config& cfg, const std::vector<std::string>& run_dirs,
                   const std::string& data_dir, const std::string& out_csv);
void stage_bench(const Config& cfg, const std::string& nat_dir, const std::string& at_dir,
                 const std::string& out_csv);

// gen-data -> train-at -> kd -> train x2 -> eval x2 -> analyze.
void run_repro(const Config& cfg, const std::string& out_root);

}  // namespace laddernat
