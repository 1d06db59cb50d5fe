// Command-line entry point: split | cluster | train | eval | predict | inspect.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ce/cli.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Learn and apply principle-based classification prompt experts"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  std::string config_path;
  std::string cache_dir;
  std::string out_dir;
  bool mock = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "run configuration JSON file");
  app.add_flag("--mock", mock, "use the deterministic offline mock gateway");
  app.add_option("--cache-dir", cache_dir, "override the embedding cache directory");
  app.add_option("--out", out_dir, "override the output directory");
  auto* seed_opt = app.add_option("--seed", seed, "override the run seed");

  auto* split_cmd = app.add_subcommand("split", "write train/val/test JSONL files");
  auto* cluster_cmd = app.add_subcommand("cluster", "embed the train split and pick k");
  auto* train_cmd = app.add_subcommand("train", "train the expert ensemble");
  bool resume = false;
  train_cmd->add_flag("--resume", resume, "resume from per-cluster checkpoints");

  auto* eval_cmd = app.add_subcommand("eval", "score an ensemble on a labeled split");
  std::string ensemble_path, data_path, report_path;
  int positive_class = 1;
  eval_cmd->add_option("--ensemble", ensemble_path, "ensemble JSON file")->required();
  eval_cmd->add_option("--data", data_path, "labeled JSONL file")->required();
  eval_cmd->add_option("--report", report_path, "where to write the EvalReport JSON");
  eval_cmd->add_option("--positive-class", positive_class, "class id treated as positive");

  auto* predict_cmd = app.add_subcommand("predict", "label a JSONL file with routed experts");
  std::string input_path, output_path;
  predict_cmd->add_option("--ensemble", ensemble_path, "ensemble JSON file")->required();
  predict_cmd->add_option("--input", input_path, "input JSONL file")->required();
  predict_cmd->add_option("--out-file", output_path, "output JSONL file")->required();

  auto* inspect_cmd = app.add_subcommand("inspect", "pretty-print an ensemble's constitutions");
  inspect_cmd->add_option("--ensemble", ensemble_path, "ensemble JSON file")->required();

  CLI11_PARSE(app, argc, argv);
  seed_set = seed_opt->count() > 0;

  ce::RunConfig cfg;
  const bool needs_config = split_cmd->parsed() || cluster_cmd->parsed() || train_cmd->parsed();
  if (needs_config) {
    if (config_path.empty()) {
      std::cerr << "error: this subcommand requires --config\n";
      return 2;
    }
    cfg = ce::load_run_config(config_path);
    if (seed_set) {
      cfg.train.seed = seed;
      cfg.split_spec.seed = seed;
      cfg.mock.seed = seed;
    }
    if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
  }

  if (split_cmd->parsed()) return ce::cmd_split(cfg);
  if (cluster_cmd->parsed()) {
    auto gw = ce::make_gateway(cfg, mock);
    return ce::cmd_cluster(cfg, *gw);
  }
  if (train_cmd->parsed()) {
    auto gw = ce::make_gateway(cfg, mock);
    return ce::cmd_train(cfg, *gw, resume);
  }

  // eval/predict get class lists from the ensemble file; a config is only
  // needed when talking to a live provider.
  auto make_standalone_gateway = [&]() -> std::unique_ptr<ce::Gateway> {
    if (!config_path.empty()) {
      cfg = ce::load_run_config(config_path);
      if (seed_set) {
        cfg.train.seed = seed;
        cfg.mock.seed = seed;
      }
      if (!cache_dir.empty()) cfg.cache_dir = cache_dir;
      return ce::make_gateway(cfg, mock);
    }
    if (!mock) {
      throw ce::ConfigError("eval/predict need --config for a live provider, or --mock");
    }
    ce::MockSpec spec;
    spec.seed = seed;
    return std::make_unique<ce::MockGateway>(spec);
  };

  if (eval_cmd->parsed()) {
    auto gw = make_standalone_gateway();
    return ce::cmd_eval(ensemble_path, data_path, *gw, positive_class, report_path);
  }
  if (predict_cmd->parsed()) {
    auto gw = make_standalone_gateway();
    return ce::cmd_predict(ensemble_path, input_path, output_path, *gw);
  }
  if (inspect_cmd->parsed()) return ce::cmd_inspect(ensemble_path);
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ce::ProviderError& e) {
    std::cerr << "provider error: " << e.what() << "\n";
    return 3;
  } catch (const ce::AuthError& e) {
    std::cerr << "auth error: " << e.what() << "\n";
    return 3;
  } catch (const ce::TimeoutError& e) {
    std::cerr << "timeout: " << e.what() << "\n";
    return 3;
  } catch (const ce::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "unexpected error: " << e.what() << "\n";
    return 1;
  }
}
