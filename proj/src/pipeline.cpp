#include "laddernat/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <thread>

#include "laddernat/rng.hpp"

namespace laddernat {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string timestamp_header(const std::string& config_hash) {
  char ts[64];
  std::time_t now = std::time(nullptr);
  std::strftime(ts, sizeof(ts), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return "# config=" + config_hash + " generated=" + ts;
}

std::ofstream open_out(const std::string& path) {
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("pipeline: cannot open " + path + " for writing");
  return os;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

CorpusSpec corpus_spec_from(const Config& cfg) {
  CorpusSpec spec;
  spec.src_vocab = static_cast<int>(cfg.get_long("corpus.src_vocab", 64));
  spec.tgt_vocab = static_cast<int>(cfg.get_long("corpus.tgt_vocab", 64));
  spec.pairs = static_cast<int>(cfg.get_long("corpus.pairs", 10000));
  spec.len_min = static_cast<int>(cfg.get_long("corpus.len_min", 4));
  spec.len_max = static_cast<int>(cfg.get_long("corpus.len_max", 16));
  spec.registers = static_cast<int>(cfg.get_long("corpus.registers", 1));
  std::string rule = cfg.get("corpus.offset_rule", "same-length");
  if (rule == "same-length")
    spec.offset_rule = LengthOffsetRule::SameLength;
  else if (rule == "plus1-every-3")
    spec.offset_rule = LengthOffsetRule::PlusOneEveryThird;
  else
    throw std::invalid_argument("config: unknown corpus.offset_rule: " + rule);
  spec.seed = cfg.get_u64("seed", 1);
  return spec;
}

BlockConfig block_config_from(const Config& cfg) {
  BlockConfig b;
  b.model_dim = static_cast<int>(cfg.get_long("block.model_dim", 64));
  b.heads = static_cast<int>(cfg.get_long("block.heads", 4));
  b.ffn_dim = static_cast<int>(cfg.get_long("block.ffn_dim", 128));
  b.enc_layers = static_cast<int>(cfg.get_long("block.enc_layers", 2));
  b.dec_layers = static_cast<int>(cfg.get_long("block.dec_layers", 2));
  b.max_positions = static_cast<int>(cfg.get_long("block.max_positions", 64));
  b.dropout = cfg.get_double("block.dropout", 0.1);
  return b;
}

LatentConfig latent_config_from(const Config& cfg, ModelKind kind) {
  LatentConfig l;
  l.t_z = static_cast<int>(cfg.get_long("latent.t_z", 16));
  l.d_z = static_cast<int>(cfg.get_long("latent.d_z", 16));
  l.rho = cfg.get_double("train." + kind_name(kind) + ".rho", cfg.get_double("latent.rho", 1.0));
  return l;
}

TrainConfig train_config_from(const Config& cfg, ModelKind kind) {
  const std::string base = "train.";
  const std::string override_prefix = base + kind_name(kind) + ".";
  auto d = [&](const std::string& key, double def) {
    return cfg.get_double(override_prefix + key, cfg.get_double(base + key, def));
  };
  auto l = [&](const std::string& key, long def) {
    return cfg.get_long(override_prefix + key, cfg.get_long(base + key, def));
  };
  TrainConfig t;
  t.beta = d("beta", kind == ModelKind::LadderNMT ? 2.5 : 1.0);
  t.rho = d("rho", cfg.get_double("latent.rho", 1.0));
  t.lr_peak = d("lr_peak", 3e-3);
  t.warmup_steps = static_cast<int>(l("warmup_steps", 200));
  t.batch_size = static_cast<int>(l("batch_size", 8));
  t.max_steps = static_cast<int>(l("max_steps", 3000));
  t.patience = static_cast<int>(l("patience", 5));
  t.seed = cfg.get_u64("seed", 1);
  t.validate_every = static_cast<int>(l("validate_every", 200));
  t.dropout = d("dropout", 0.1);
  t.label_smoothing = d("label_smoothing", 0.1);
  t.valid_refinements = static_cast<int>(l("valid_refinements", 3));
  t.valid_subset = static_cast<int>(l("valid_subset", 128));
  return t;
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows,
                      const std::string& config_hash) {
  auto os = open_out(path);
  os << timestamp_header(config_hash) << '\n';
  os << "metric,model,value,seed,config_hash\n";
  for (const auto& r : rows)
    os << r.metric << ',' << r.model << ',' << fmt(r.value) << ',' << r.seed << ',' << config_hash
       << '\n';
}

void write_translations(const std::string& path, const std::vector<TokenSeq>& outputs,
                        const std::string& config_hash) {
  auto os = open_out(path);
  os << timestamp_header(config_hash) << '\n';
  for (const auto& seq : outputs) {
    for (size_t i = 0; i < seq.size(); ++i) os << (i ? " " : "") << seq[i];
    os << '\n';
  }
}

void write_latent_csv(const std::string& path, const LatentMatrix& src, const LatentMatrix& tgt,
                      const std::string& config_hash) {
  auto os = open_out(path);
  os << timestamp_header(config_hash) << '\n';
  os << "sentence_id,language,latent\n";
  auto dump = [&](const LatentMatrix& m, const char* lang) {
    for (long i = 0; i < m.rows.rows(); ++i) {
      os << i << ',' << lang;
      for (long j = 0; j < m.rows.cols(); ++j) os << ',' << fmt(m.rows(i, j));
      os << '\n';
    }
  };
  dump(src, "src");
  dump(tgt, "tgt");
}

void write_bench_csv(const std::string& path, const std::vector<BenchRow>& rows,
                     const std::string& config_hash) {
  auto os = open_out(path);
  os << timestamp_header(config_hash) << '\n';
  os << "model,length_bucket,sentences,seconds,ratio\n";
  for (const auto& r : rows)
    os << r.model << ',' << r.length_bucket << ',' << r.sentences << ',' << fmt(r.seconds) << ','
       << fmt(r.ratio) << '\n';
}

std::vector<TokenSeq> translate_corpus(const ModelBundle& b, const std::vector<TokenSeq>& inputs,
                                       Direction dir, int refinements, int max_len) {
  std::vector<TokenSeq> out(inputs.size());
  int threads = std::min<int>(worker_threads(), static_cast<int>(inputs.size()));
  if (threads <= 1) {
    for (size_t i = 0; i < inputs.size(); ++i)
      out[i] = b.kind == ModelKind::AT ? strip_eos(translate_at(inputs[i], b, dir, max_len).tokens)
                                       : translate_nat(inputs[i], b, dir, refinements).tokens;
    return out;
  }
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (size_t i = next.fetch_add(1); i < inputs.size(); i = next.fetch_add(1))
        out[i] = b.kind == ModelKind::AT
                     ? strip_eos(translate_at(inputs[i], b, dir, max_len).tokens)
                     : translate_nat(inputs[i], b, dir, refinements).tokens;
    });
  for (auto& th : pool) th.join();
  return out;
}

void stage_gen_data(const Config& cfg, const std::string& out_dir) {
  CorpusSpec spec = corpus_spec_from(cfg);
  Corpus corpus = gen_corpus(spec);
  CorpusSplits splits = split_corpus(corpus, cfg.get_double("corpus.valid_frac", 0.05),
                                     cfg.get_double("corpus.test_frac", 0.05));
  fs::create_directories(out_dir);
  save_corpus(splits.train, out_dir + "/train.txt");
  save_corpus(splits.valid, out_dir + "/valid.txt");
  save_corpus(splits.test, out_dir + "/test.txt");
  json manifest{{"config_hash", cfg.hash()},
                {"seed", spec.seed},
                {"src_vocab", spec.src_vocab},
                {"tgt_vocab", spec.tgt_vocab},
                {"pairs", spec.pairs},
                {"len_min", spec.len_min},
                {"len_max", spec.len_max},
                {"registers", spec.registers},
                {"offset_rule", spec.offset_rule == LengthOffsetRule::SameLength ? "same-length"
                                                                                 : "plus1-every-3"}};
  auto os = open_out(out_dir + "/manifest.json");
  os << manifest.dump(2) << '\n';
}

CorpusSplits load_splits(const std::string& data_dir) {
  std::ifstream is(data_dir + "/manifest.json");
  if (!is) throw std::runtime_error("pipeline: missing data manifest in " + data_dir);
  json manifest = json::parse(is);
  CorpusSpec spec;
  spec.src_vocab = manifest["src_vocab"];
  spec.tgt_vocab = manifest["tgt_vocab"];
  spec.pairs = manifest["pairs"];
  spec.len_min = manifest["len_min"];
  spec.len_max = manifest["len_max"];
  spec.registers = manifest["registers"];
  spec.offset_rule = manifest["offset_rule"] == "same-length" ? LengthOffsetRule::SameLength
                                                              : LengthOffsetRule::PlusOneEveryThird;
  spec.seed = manifest["seed"];
  CorpusSplits s;
  s.train = load_corpus(data_dir + "/train.txt");
  s.valid = load_corpus(data_dir + "/valid.txt");
  s.test = load_corpus(data_dir + "/test.txt");
  s.train.spec = s.valid.spec = s.test.spec = spec;
  return s;
}

namespace {

int joint_vocab(const CorpusSpec& spec) { return std::max(spec.src_vocab, spec.tgt_vocab); }

void train_and_save(const Config& cfg, ModelKind kind, const Corpus& train_corpus,
                    const Corpus& valid_corpus, const std::string& run_dir) {
  TrainConfig tc = train_config_from(cfg, kind);
  BlockConfig block = block_config_from(cfg);
  block.dropout = tc.dropout;
  LatentConfig latent = latent_config_from(cfg, kind);
  latent.rho = tc.rho;
  ModelBundle bundle = make_bundle(kind, block, latent, joint_vocab(train_corpus.spec), tc.seed);
  TrainResult result = train(bundle, train_corpus, valid_corpus, tc);
  fs::create_directories(run_dir);
  save_bundle(bundle, run_dir, result.best_step > 0 ? result.best_step : result.steps_run);
  write_metrics_csv(result, run_dir + "/metrics.csv", cfg.hash());
}

}  // namespace

void stage_train_at(const Config& cfg, const std::string& data_dir, const std::string& run_dir) {
  CorpusSplits splits = load_splits(data_dir);
  train_and_save(cfg, ModelKind::AT, splits.train, splits.valid, run_dir);
}

void stage_kd(const Config& cfg, const std::string& data_dir, const std::string& at_dir,
              const std::string& out_dir) {
  CorpusSplits splits = load_splits(data_dir);
  ModelBundle at_bundle = load_latest_bundle(at_dir);
  KdCorpora kd = kd_regenerate(splits.train, at_bundle, block_config_from(cfg).max_positions);
  fs::create_directories(out_dir);
  save_corpus(kd.src2tgt, out_dir + "/kd_src2tgt.txt");
  save_corpus(kd.tgt2src, out_dir + "/kd_tgt2src.txt");
  json manifest{{"config_hash", cfg.hash()},
                {"empty_outputs_replaced", kd.empty_outputs_replaced},
                {"pairs", kd.src2tgt.pairs.size()}};
  auto os = open_out(out_dir + "/manifest.json");
  os << manifest.dump(2) << '\n';
}

void stage_train_latent(const Config& cfg, ModelKind kind, const std::string& data_dir,
                        const std::string& kd_dir, const std::string& run_dir) {
  if (kind == ModelKind::AT) throw std::invalid_argument("stage_train_latent: latent kind required");
  CorpusSplits splits = load_splits(data_dir);
  Corpus train_corpus = splits.train;
  if (!kd_dir.empty()) {
    // Interleave the two KD corpora; each pair receives the full
    // dual-reconstruction treatment.
    Corpus a = load_corpus(kd_dir + "/kd_src2tgt.txt");
    Corpus b = load_corpus(kd_dir + "/kd_tgt2src.txt");
    train_corpus.pairs.clear();
    for (size_t i = 0; i < a.pairs.size() || i < b.pairs.size(); ++i) {
      if (i < a.pairs.size()) train_corpus.pairs.push_back(a.pairs[i]);
      if (i < b.pairs.size()) train_corpus.pairs.push_back(b.pairs[i]);
    }
  }
  train_and_save(cfg, kind, train_corpus, splits.valid, run_dir);
}

void stage_eval(const Config& cfg, const std::string& run_dir, const std::string& data_dir,
                const std::string& out_csv) {
  CorpusSplits splits = load_splits(data_dir);
  ModelBundle bundle = load_latest_bundle(run_dir);
  int refinements = static_cast<int>(cfg.get_long("eval.refinements", 3));
  int max_len = block_config_from(cfg).max_positions;

  std::vector<TokenSeq> src_in, tgt_in, src_ref, tgt_ref;
  for (const auto& p : splits.test.pairs) {
    src_in.push_back(p.source);
    tgt_ref.push_back(p.target);
    tgt_in.push_back(p.target);
    src_ref.push_back(p.source);
  }
  auto fwd = translate_corpus(bundle, src_in, Direction::Forward, refinements, max_len);
  auto rev = translate_corpus(bundle, tgt_in, Direction::Reverse, refinements, max_len);

  std::vector<ReportRow> rows{
      {"bleu_fwd", kind_name(bundle.kind), bleu(fwd, tgt_ref), bundle.seed},
      {"bleu_rev", kind_name(bundle.kind), bleu(rev, src_ref), bundle.seed},
  };
  write_report_csv(out_csv, rows, cfg.hash());
}

void stage_analyze(const Config& cfg, const std::vector<std::string>& run_dirs,
                   const std::string& data_dir, const std::string& out_csv) {
  CorpusSplits splits = load_splits(data_dir);
  std::vector<ReportRow> rows;
  int cca_k = static_cast<int>(cfg.get_long("analyze.cca_k", 16));
  int trials = static_cast<int>(cfg.get_long("analyze.sensitivity_trials", 100));
  int sens_pairs = static_cast<int>(cfg.get_long("analyze.sensitivity_pairs", 24));
  std::uint64_t seed = cfg.get_u64("seed", 1);

  for (const auto& dir : run_dirs) {
    ModelBundle bundle = load_latest_bundle(dir);
    const std::string model = kind_name(bundle.kind);
    if (bundle.kind == ModelKind::AT) continue;

    LatentMatrix fit_src = collect_latents(bundle, splits.valid, LatentSide::SourceLanguage);
    LatentMatrix fit_tgt = collect_latents(bundle, splits.valid, LatentSide::TargetLanguage);
    LatentMatrix test_src = collect_latents(bundle, splits.test, LatentSide::SourceLanguage);
    LatentMatrix test_tgt = collect_latents(bundle, splits.test, LatentSide::TargetLanguage);
    int k = std::min<int>(cca_k, std::min<long>(fit_src.rows.rows() - 1, fit_src.rows.cols()));
    CcaModel cca = cca_fit(fit_src, fit_tgt, k);
    rows.push_back({"cca_score", model, cca_score(cca, test_src, test_tgt), bundle.seed});
    rows.push_back({"knn_purity", model, knn_language_purity(test_src, test_tgt), bundle.seed});

    std::vector<ParallelPair> probe(splits.valid.pairs.begin(),
                                    splits.valid.pairs.begin() +
                                        std::min<size_t>(static_cast<size_t>(sens_pairs),
                                                         splits.valid.pairs.size()));
    for (int words : {1, 2, 3}) {
      SensitivityResult s = relative_sensitivity(bundle, probe, words, trials, seed);
      rows.push_back({"relative_sensitivity_w" + std::to_string(words), model, s.ratio, seed});
    }

    write_latent_csv((fs::path(out_csv).parent_path() / (model + "_latents.csv")).string(),
                     test_src, test_tgt, cfg.hash());
    PcaResult pca = pca_project(test_src, test_tgt, 2);
    auto os = open_out((fs::path(out_csv).parent_path() / (model + "_pca.csv")).string());
    os << timestamp_header(cfg.hash()) << '\n';
    os << "sentence_id,language,pc1,pc2\n";
    for (long i = 0; i < pca.coords.rows(); ++i)
      os << i << ',' << (pca.language_labels[static_cast<size_t>(i)] == 0 ? "src" : "tgt") << ','
         << fmt(pca.coords(i, 0)) << ',' << fmt(pca.coords(i, 1)) << '\n';
  }
  write_report_csv(out_csv, rows, cfg.hash());
}

void stage_bench(const Config& cfg, const std::string& nat_dir, const std::string& at_dir,
                 const std::string& out_csv) {
  ModelBundle nat_bundle = load_latest_bundle(nat_dir);
  ModelBundle at_bundle = load_latest_bundle(at_dir);
  int refinements = static_cast<int>(cfg.get_long("bench.refinements", 3));
  int sentences = static_cast<int>(cfg.get_long("bench.sentences", 16));
  int max_len = block_config_from(cfg).max_positions;
  std::uint64_t seed = cfg.get_u64("seed", 1);

  std::vector<BenchRow> rows;
  for (int bucket : {8, 16, 32}) {
    auto rng = make_rng(seed, "bench." + std::to_string(bucket));
    std::uniform_int_distribution<int> tok(kFirstContentId, nat_bundle.vocab - 1);
    std::vector<TokenSeq> sources(static_cast<size_t>(sentences));
    for (auto& s : sources) {
      s.resize(static_cast<size_t>(bucket));
      for (auto& t : s) t = tok(rng);
    }
    SpeedBenchResult r = speed_bench(nat_bundle, at_bundle, sources, Direction::Forward,
                                     refinements, max_len);
    rows.push_back({"at", bucket, sentences, r.at_seconds, 1.0});
    rows.push_back({kind_name(nat_bundle.kind), bucket, sentences, r.nat_seconds, r.ratio});
  }
  write_bench_csv(out_csv, rows, cfg.hash());
}

void run_repro(const Config& cfg, const std::string& out_root) {
  fs::create_directories(out_root);
  stage_gen_data(cfg, out_root + "/data");
  stage_train_at(cfg, out_root + "/data", out_root + "/at");
  stage_kd(cfg, out_root + "/data", out_root + "/at", out_root + "/kd");
  stage_train_latent(cfg, ModelKind::LaNMT, out_root + "/data", out_root + "/kd",
                     out_root + "/lanmt");
  stage_train_latent(cfg, ModelKind::LadderNMT, out_root + "/data", out_root + "/kd",
                     out_root + "/laddernmt");
  stage_eval(cfg, out_root + "/lanmt", out_root + "/data", out_root + "/reports/eval_lanmt.csv");
  stage_eval(cfg, out_root + "/laddernmt", out_root + "/data",
             out_root + "/reports/eval_laddernmt.csv");
  stage_analyze(cfg, {out_root + "/lanmt", out_root + "/laddernmt"}, out_root + "/data",
                out_root + "/reports/analysis.csv");
}

}  // namespace laddernat
