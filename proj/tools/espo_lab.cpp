#include <CLI11.hpp>
#include <iostream>

#include "espo/commands.hpp"
#include "espo/config.hpp"

int main(int argc, char** argv) {
  using namespace espo;
  CLI::App app{"Entropy-grouped policy optimization lab: train, verify and compare clipped surrogate objectives."};
  app.footer(describe_config_keys());
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Run a training loop; writes metrics.csv, checkpoints and the resolved config");
  train_cmd->add_option("-c,--config", train.config, "JSON configuration file");
  train_cmd->add_option("-s,--set", train.overrides, "Override key=value (dotted path or unique key name)");
  train_cmd->add_flag("--resume", train.resume, "Continue from <output_dir>/checkpoints/latest.ckpt");
  train_cmd->add_flag("-q,--quiet", train.quiet, "No progress output");

  GradCheckArgs grad;
  std::uint64_t grad_seed = 0;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Compare tape gradients with central finite differences for every algorithm");
  grad_cmd->add_option("-c,--config", grad.config, "JSON configuration file (objective knobs)");
  grad_cmd->add_option("-s,--set", grad.overrides, "Override key=value");
  auto* seed_opt = grad_cmd->add_option("--seed", grad_seed, "Instance seed (default: train.seed)");
  grad_cmd->add_option("--tolerance", grad.tolerance, "Maximum relative error")->capture_default_str();
  grad_cmd->add_option("--rows", grad.rows, "Write every compared coordinate as CSV");
  grad_cmd->add_flag("--corrupt-gradient", grad.corrupt_gradient, "Negative control: perturb the analytic gradient");
  grad_cmd->add_flag("-v,--verbose", grad.verbose, "List every coordinate");

  CompareArgs cmp;
  auto* cmp_cmd = app.add_subcommand("compare", "Join metrics files by step into one wide CSV table");
  cmp_cmd->add_option("files", cmp.files, "metrics.csv files")->required();
  cmp_cmd->add_option("-m,--metric", cmp.metric,
                      "Column: mean_reward|reward, accuracy, mean_length|length, mean_entropy|entropy, clip_low, "
                      "clip_high, clip_total, mean_epsilon|epsilon, loss")
      ->capture_default_str();
  cmp_cmd->add_option("--mini-epoch", cmp.mini_epoch, "Mini-epoch row to use (-1: last of each step)")
      ->capture_default_str();
  cmp_cmd->add_option("--label", cmp.labels, "Column labels, one per file");
  cmp_cmd->add_option("-o,--output", cmp.output, "Write the table here instead of stdout");

  AnalyzeArgs ana;
  auto* ana_cmd = app.add_subcommand("analyze", "Recompute entropy groups, clip bounds and clip fractions from a rollout log");
  ana_cmd->add_option("log", ana.log, "rollouts.jsonl written by train with run.rollout_log=true")->required();
  ana_cmd->add_option("-c,--config", ana.config, "JSON configuration file (objective knobs, policy.vocab)");
  ana_cmd->add_option("-s,--set", ana.overrides, "Override key=value");
  ana_cmd->add_option("--checkpoint", ana.checkpoint, "Current policy for would-be clip fractions");
  ana_cmd->add_option("--rho", ana.rho_sweep, "Top-fraction values to sweep")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*train_cmd) return cmd_train(train, std::cout, std::cerr);
  if (*grad_cmd) {
    if (*seed_opt) grad.seed = grad_seed;
    return cmd_gradcheck(grad, std::cout, std::cerr);
  }
  if (*cmp_cmd) return cmd_compare(cmp, std::cout, std::cerr);
  if (*ana_cmd) return cmd_analyze(ana, std::cout, std::cerr);
  return kExitConfig;
}
