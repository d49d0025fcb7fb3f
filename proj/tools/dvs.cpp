// Command-line entry point: gen-scene / train / render / eval subcommands.

#include <cstdint>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dvs/commands.hpp"

namespace {

struct SubArgs {
  std::string config;
  std::string out;
  std::uint64_t seed = 0;
  std::string checkpoint;
};

/// --out names the dataset directory for gen-scene and the output directory
/// for every other command; --seed and --checkpoint override the config.
dvs::RunConfig resolve_config(const SubArgs& args, const CLI::App* sub, bool out_is_dataset) {
  dvs::RunConfig cfg = dvs::load_run_config(args.config);
  if (sub->count("--seed") > 0) {
    cfg.seed = args.seed;
    cfg.train.seed = args.seed;
  }
  if (out_is_dataset)
    cfg.io.dataset_dir = args.out;
  else
    cfg.io.out_dir = args.out;
  if (!args.checkpoint.empty()) cfg.io.checkpoint = args.checkpoint;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic view synthesis from monocular video"};
  app.require_subcommand(1);

  auto add_common = [](CLI::App* sub, SubArgs& args) {
    sub->add_option("--config", args.config, "JSON run configuration")->required();
    sub->add_option("--seed", args.seed, "Root RNG seed (overrides config)");
    sub->add_option("--out", args.out, "Output directory")->required();
  };

  SubArgs gen_args, train_args, render_args, eval_args;
  CLI::App* gen = app.add_subcommand("gen-scene", "Generate a synthetic dataset");
  CLI::App* train = app.add_subcommand("train", "Train static + dynamic fields");
  CLI::App* render = app.add_subcommand("render", "Render views from a checkpoint");
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a checkpoint against ground truth");
  add_common(gen, gen_args);
  add_common(train, train_args);
  add_common(render, render_args);
  add_common(eval, eval_args);

  train->add_option("--resume", train_args.checkpoint, "Checkpoint to resume from");
  render->add_option("--checkpoint", render_args.checkpoint, "Checkpoint to render from");
  eval->add_option("--checkpoint", eval_args.checkpoint, "Checkpoint to evaluate");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      dvs::cmd_gen_scene(resolve_config(gen_args, gen, /*out_is_dataset=*/true));
    } else if (train->parsed()) {
      dvs::cmd_train(resolve_config(train_args, train, false));
    } else if (render->parsed()) {
      dvs::cmd_render(resolve_config(render_args, render, false));
    } else {
      dvs::cmd_eval(resolve_config(eval_args, eval, false));
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
