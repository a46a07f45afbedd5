// fgboost: functional-gradient boosting of small differentiable learners.
//
//   fgboost run --config experiment.cfg
//   fgboost gen --kind image-planted-rows --out data/ --seed 7
//   fgboost inspect --checkpoint ckpt/
//
// Exit codes: 0 success, 2 configuration error, 3 runtime abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "fgb/harness.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int cmd_run(const std::string& config_path) {
  fgb::harness::ExperimentConfig cfg =
      fgb::harness::parse_config_file(config_path);
  std::cout << "variant=" << fgb::harness::to_string(cfg.variant)
            << " rounds=" << cfg.rounds << " seed=" << cfg.seed << "\n";
  fgb::harness::ExperimentResult result;
  try {
    result = fgb::harness::run_experiment(cfg);
  } catch (const fgb::harness::RunAborted& e) {
    // flush the completed rounds before reporting the abort
    if (!cfg.metrics_path.empty())
      fgb::harness::write_metrics_csv(e.completed(), cfg.metrics_path);
    std::cerr << "run aborted at " << e.what() << "\n";
    return 3;
  }
  for (const auto& m : result.metrics) {
    std::printf(
        "round %2d  alpha=%-8.4g risk=%-10.6g acc=%-8.4g features=%-8.4g "
        "t=%.2fs\n",
        m.round, m.alpha, m.train_risk, m.test_accuracy, m.feature_fraction,
        m.wall_time_s);
  }
  if (!cfg.metrics_path.empty()) {
    fgb::harness::write_metrics_csv(result.metrics, cfg.metrics_path);
    std::cout << "metrics written to " << cfg.metrics_path << "\n";
  }
  if (!cfg.checkpoint_dir.empty()) {
    fgb::harness::save_ensemble(result.ensemble, cfg.checkpoint_dir);
    std::cout << "checkpoint written to " << cfg.checkpoint_dir << "\n";
  }
  return 0;
}

int cmd_gen(const std::string& kind, const std::string& out_dir, uint64_t seed) {
  fs::create_directories(out_dir);
  json meta;
  meta["kind"] = kind;
  meta["seed"] = seed;
  if (kind == "image-planted-rows") {
    fgb::harness::PlantedRowsParams params;
    auto data = fgb::harness::generate_planted_rows(params, seed);
    fgb::harness::save_image_dataset(data.train,
                                     (fs::path(out_dir) / "train.bkim").string());
    fgb::harness::save_image_dataset(data.test,
                                     (fs::path(out_dir) / "test.bkim").string());
    meta["signal_rows"] = data.signal_rows;
    meta["height"] = params.height;
    meta["width"] = params.width;
    meta["classes"] = params.classes;
    meta["train_n"] = params.train_n;
    meta["test_n"] = params.test_n;
  } else if (kind == "sequence-planted-tokens") {
    fgb::harness::PlantedTokensParams params;
    auto data = fgb::harness::generate_planted_tokens(params, seed);
    fgb::harness::save_sequence_dataset(
        data.train, (fs::path(out_dir) / "train.jsonl").string());
    fgb::harness::save_sequence_dataset(
        data.test, (fs::path(out_dir) / "test.jsonl").string());
    meta["planted_tokens"] = data.planted;
    meta["vocab"] = params.vocab;
    meta["classes"] = params.classes;
    meta["train_n"] = params.train_n;
    meta["test_n"] = params.test_n;
  } else {
    throw fgb::ConfigError("unknown dataset kind '" + kind + "'");
  }
  std::ofstream mf(fs::path(out_dir) / "meta.json", std::ios::trunc);
  if (!mf.good())
    throw fgb::Error("gen: cannot write meta.json in '" + out_dir + "'");
  mf << meta.dump(2) << "\n";
  std::cout << "datasets written to " << out_dir << "\n";
  return 0;
}

int cmd_inspect(const std::string& checkpoint_dir) {
  std::cout << fgb::harness::describe_ensemble(checkpoint_dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"functional-gradient boosting engine for differentiable weak learners"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "run an experiment from a config file");
  run->add_option("--config", config_path, "key = value config file")->required();

  std::string gen_kind, gen_out;
  uint64_t gen_seed = 0;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset pair");
  gen->add_option("--kind", gen_kind,
                  "image-planted-rows | sequence-planted-tokens")
      ->required();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--seed", gen_seed, "generator seed")->required();

  std::string inspect_dir;
  auto* inspect = app.add_subcommand("inspect", "describe an ensemble checkpoint");
  inspect->add_option("--checkpoint", inspect_dir, "checkpoint directory")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(config_path);
    if (gen->parsed()) return cmd_gen(gen_kind, gen_out, gen_seed);
    if (inspect->parsed()) return cmd_inspect(inspect_dir);
  } catch (const fgb::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
