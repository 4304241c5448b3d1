// Command-line front end for the full pipeline: data generation, AT
// pre-training, bidirectional KD, latent-model training, translation,
// evaluation, latent-space analysis, and the speed benchmark.

#include <CLI11.hpp>

#include <exception>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "laddernat/pipeline.hpp"

using namespace laddernat;

namespace {

Config build_config(const std::string& config_path, std::uint64_t seed,
                    const std::vector<std::string>& overrides) {
  Config cfg;
  if (!config_path.empty()) cfg = Config::from_file(config_path);
  cfg.set("seed", std::to_string(seed));
  for (const auto& o : overrides) cfg.apply_override(o);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"laddernat: shared-latent-space non-autoregressive translation lab"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, at_dir, kd_dir, run_dir, model_name = "laddernmt";
  std::string input_path, output_path, direction = "fwd";
  std::vector<std::string> overrides, model_dirs;
  std::uint64_t seed = 1;
  int refinements = 3;
  double rho = -1.0, beta = -1.0;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value config file");
    cmd->add_option("--seed", seed, "master seed");
    cmd->add_option("--set", overrides, "config overrides, key=value");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic parallel corpus");
  add_common(gen);
  gen->add_option("--out", out_dir, "output directory")->required();

  auto* train_at_cmd = app.add_subcommand("train-at", "train the autoregressive reference");
  add_common(train_at_cmd);
  train_at_cmd->add_option("--data", data_dir, "data directory")->required();
  train_at_cmd->add_option("--out", run_dir, "model output directory")->required();

  auto* kd_cmd = app.add_subcommand("kd", "regenerate both directions with the AT teacher");
  add_common(kd_cmd);
  kd_cmd->add_option("--data", data_dir, "data directory")->required();
  kd_cmd->add_option("--at", at_dir, "trained AT model directory")->required();
  kd_cmd->add_option("--out", out_dir, "KD corpus output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a latent model");
  add_common(train_cmd);
  train_cmd->add_option("--model", model_name, "lanmt or laddernmt");
  train_cmd->add_option("--data", data_dir, "data directory")->required();
  train_cmd->add_option("--kd", kd_dir, "KD corpus directory (optional)");
  train_cmd->add_option("--out", run_dir, "model output directory")->required();
  train_cmd->add_option("--rho", rho, "latent sharing ratio");
  train_cmd->add_option("--beta", beta, "KL coefficient");

  auto* translate_cmd = app.add_subcommand("translate", "translate an id-sequence file");
  add_common(translate_cmd);
  translate_cmd->add_option("--ckpt", run_dir, "model directory")->required();
  translate_cmd->add_option("--input", input_path, "one space-separated id sequence per line")
      ->required();
  translate_cmd->add_option("--output", output_path, "output file")->required();
  translate_cmd->add_option("--direction", direction, "fwd or rev");
  translate_cmd->add_option("--refinements", refinements, "refinement rounds");

  auto* eval_cmd = app.add_subcommand("eval", "test-set BLEU in both directions");
  add_common(eval_cmd);
  eval_cmd->add_option("--ckpt", run_dir, "model directory")->required();
  eval_cmd->add_option("--data", data_dir, "data directory")->required();
  eval_cmd->add_option("--out", output_path, "report CSV path")->required();

  auto* analyze_cmd = app.add_subcommand("analyze", "latent-space diagnostics");
  add_common(analyze_cmd);
  analyze_cmd->add_option("--models", model_dirs, "model directories")->required();
  analyze_cmd->add_option("--data", data_dir, "data directory")->required();
  analyze_cmd->add_option("--out", output_path, "report CSV path")->required();

  auto* bench_cmd = app.add_subcommand("bench", "AT-vs-NAT speed benchmark");
  add_common(bench_cmd);
  bench_cmd->add_option("--nat", run_dir, "latent model directory")->required();
  bench_cmd->add_option("--at", at_dir, "AT model directory")->required();
  bench_cmd->add_option("--out", output_path, "benchmark CSV path")->required();

  auto* repro_cmd = app.add_subcommand("repro", "run the full pipeline end to end");
  add_common(repro_cmd);
  repro_cmd->add_option("--out", out_dir, "output root")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg = build_config(config_path, seed, overrides);

    if (gen->parsed()) {
      stage_gen_data(cfg, out_dir);
    } else if (train_at_cmd->parsed()) {
      stage_train_at(cfg, data_dir, run_dir);
    } else if (kd_cmd->parsed()) {
      stage_kd(cfg, data_dir, at_dir, out_dir);
    } else if (train_cmd->parsed()) {
      ModelKind kind = kind_from_name(model_name);
      if (kind == ModelKind::AT) throw std::invalid_argument("train: use train-at for the AT model");
      if (rho >= 0) cfg.set("train." + model_name + ".rho", std::to_string(rho));
      if (beta >= 0) cfg.set("train." + model_name + ".beta", std::to_string(beta));
      stage_train_latent(cfg, kind, data_dir, kd_dir, run_dir);
    } else if (translate_cmd->parsed()) {
      ModelBundle bundle = load_latest_bundle(run_dir);
      Direction dir = direction == "rev" ? Direction::Reverse : Direction::Forward;
      std::ifstream is(input_path);
      if (!is) throw std::invalid_argument("translate: cannot open " + input_path);
      std::vector<TokenSeq> inputs;
      std::string line;
      while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        TokenSeq seq;
        std::stringstream ss(line);
        for (int t; ss >> t;) seq.push_back(t);
        if (!seq.empty()) inputs.push_back(std::move(seq));
      }
      auto outputs = translate_corpus(bundle, inputs, dir, refinements, bundle.block.max_positions);
      write_translations(output_path, outputs, cfg.hash());
    } else if (eval_cmd->parsed()) {
      stage_eval(cfg, run_dir, data_dir, output_path);
    } else if (analyze_cmd->parsed()) {
      stage_analyze(cfg, model_dirs, data_dir, output_path);
    } else if (bench_cmd->parsed()) {
      stage_bench(cfg, run_dir, at_dir, output_path);
    } else if (repro_cmd->parsed()) {
      run_repro(cfg, out_dir);
    }
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
