// smx — generate datasets, train retrieval models, and evaluate them.
//
// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
// abort during training.

#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "smx/experiment.hpp"

namespace {

int dispatch(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const smx::ConfigError& e) {
    std::cerr << "smx: config error: " << e.what() << "\n";
    return 1;
  } catch (const smx::NumericError& e) {
    std::cerr << "smx: numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const smx::DataError& e) {
    std::cerr << "smx: data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "smx: error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic scene retrieval experiments"};
  app.require_subcommand(1);

  // gen --config <path> [--out <dir>]
  std::string gen_config;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen", "generate a dataset");
  gen->add_option("--config", gen_config, "experiment config JSON")
      ->required();
  gen->add_option("--out", gen_out,
                  "output directory (default: <output_dir>/data from the "
                  "config)");

  // train --config <path> --data <dir> --out <ckpt> [--regime <name>]
  std::string train_config, train_data, train_out, train_regime;
  CLI::App* train = app.add_subcommand("train", "train one regime");
  train->add_option("--config", train_config, "experiment config JSON")
      ->required();
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--regime", train_regime,
                    "override the config's training regime "
                    "(in_domain_A|in_domain_B|cross_AB|transfer)");

  // eval --ckpt <path>... --data <dir> [--k 1,5,10] [--baselines all|none]
  //      [--config <path>] [--out <dir>]
  std::vector<std::string> eval_ckpts;
  std::string eval_data, eval_baselines, eval_config, eval_out;
  std::vector<std::size_t> eval_ks;
  CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints");
  eval->add_option("--ckpt", eval_ckpts, "checkpoint path (repeatable)")
      ->required();
  eval->add_option("--data", eval_data, "dataset directory")->required();
  eval->add_option("--k", eval_ks, "recall cutoffs, e.g. --k 1,5,10")
      ->delimiter(',');
  eval->add_option("--baselines", eval_baselines,
                   "include baseline rows: all|none");
  eval->add_option("--config", eval_config,
                   "experiment config JSON supplying eval defaults");
  eval->add_option("--out", eval_out, "report output directory (default: .)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  if (gen->parsed()) {
    return dispatch([&] {
      std::optional<smx::fs::path> out;
      if (!gen_out.empty()) out = gen_out;
      smx::cmd_gen(gen_config, out);
    });
  }
  if (train->parsed()) {
    return dispatch([&] {
      std::optional<std::string> regime;
      if (!train_regime.empty()) regime = train_regime;
      smx::cmd_train(train_config, train_data, train_out, regime);
    });
  }
  return dispatch([&] {
    std::vector<smx::fs::path> ckpts(eval_ckpts.begin(), eval_ckpts.end());
    std::optional<std::vector<std::size_t>> ks;
    if (!eval_ks.empty()) ks = eval_ks;
    std::optional<std::string> baselines;
    if (!eval_baselines.empty()) baselines = eval_baselines;
    std::optional<smx::fs::path> config;
    if (!eval_config.empty()) config = eval_config;
    std::optional<smx::fs::path> out;
    if (!eval_out.empty()) out = eval_out;
    smx::cmd_eval(ckpts, eval_data, ks, baselines, config, out);
  });
}
