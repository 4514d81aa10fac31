// Command-line front end for the de-identification pipeline. Every
// subcommand is a pure function of the config file, the master seed, and the
// declared input paths, so reruns overwrite artifacts byte-identically.

#include <cstdio>
#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "deid/config.hpp"
#include "deid/pipeline.hpp"

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed = 0;
  bool seed_given = false;
};

deid::PipelineConfig resolve_config(const CommonArgs& args) {
  deid::PipelineConfig cfg;
  if (!args.config_path.empty()) cfg = deid::PipelineConfig::from_file(args.config_path);
  if (args.seed_given) cfg.seed = args.seed;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "pipeline config file (TOML)");
  cmd->add_option("--out-dir", args.out_dir, "artifact directory")->capture_default_str();
  cmd->add_option("--seed", args.seed, "master seed (overrides the config)")
      ->each([&args](const std::string&) { args.seed_given = true; });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MRI de-identification by skull remodeling over latent token grids"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string part = "brain";
  std::string ckpt_out;
  std::string input_path;
  std::string output_path = "deidentified.vol";
  int sampler_steps = -1;
  double temperature = -1.0;
  bool quiet = false;
  bool print_default_config = false;
  app.add_flag("--quiet", quiet, "suppress progress logging");

  auto* cmd_phantom = app.add_subcommand("phantom-gen", "generate the synthetic subject cohort");
  add_common(cmd_phantom, args);

  auto* cmd_vqvae = app.add_subcommand("train-vqvae", "train one of the two volume compressors");
  add_common(cmd_vqvae, args);
  cmd_vqvae->add_option("--part", part, "brain or skull")->required();
  cmd_vqvae->add_option("--out", ckpt_out, "checkpoint path override");

  auto* cmd_encode = app.add_subcommand("encode-dataset", "encode scans into paired code grids");
  add_common(cmd_encode, args);

  auto* cmd_mae = app.add_subcommand("train-mae", "train the conditional token predictor");
  add_common(cmd_mae, args);

  auto* cmd_deid = app.add_subcommand("deidentify", "de-identify held-out subjects or one file");
  add_common(cmd_deid, args);
  cmd_deid->add_option("--input", input_path, "single input volume (native container or NIfTI-1)");
  cmd_deid->add_option("--output", output_path, "output path for --input mode")
      ->capture_default_str();
  cmd_deid->add_option("--steps", sampler_steps, "sampler refinement steps override");
  cmd_deid->add_option("--temperature", temperature, "sampling temperature override");

  auto* cmd_reid = app.add_subcommand("evaluate-reid", "run the 5-way re-identification study");
  add_common(cmd_reid, args);

  auto* cmd_dice = app.add_subcommand("evaluate-dice", "segmentation agreement before/after");
  add_common(cmd_dice, args);

  auto* cmd_all = app.add_subcommand("run-all", "full pipeline plus evaluation report");
  add_common(cmd_all, args);

  auto* cmd_cfg = app.add_subcommand("print-config", "print the default config and exit");
  cmd_cfg->callback([&print_default_config]() { print_default_config = true; });

  CLI11_PARSE(app, argc, argv);

  try {
    if (print_default_config) {
      std::cout << deid::PipelineConfig().to_toml();
      return 0;
    }
    deid::PipelineConfig cfg = resolve_config(args);
    if (sampler_steps > 0) cfg.sampler_steps = sampler_steps;
    if (temperature > 0.0) cfg.temperature = temperature;
    deid::pipeline::StageLog log{quiet};

    if (cmd_phantom->parsed()) {
      deid::pipeline::run_phantom_gen(cfg, args.out_dir, log);
    } else if (cmd_vqvae->parsed()) {
      deid::pipeline::run_train_vqvae(cfg, args.out_dir, part, ckpt_out, log);
    } else if (cmd_encode->parsed()) {
      deid::pipeline::run_encode_dataset(cfg, args.out_dir, log);
    } else if (cmd_mae->parsed()) {
      deid::pipeline::run_train_mae(cfg, args.out_dir, log);
    } else if (cmd_deid->parsed()) {
      if (input_path.empty())
        deid::pipeline::run_deidentify_all(cfg, args.out_dir, log);
      else
        deid::pipeline::deidentify_file(cfg, args.out_dir, input_path, output_path, cfg.seed);
    } else if (cmd_reid->parsed()) {
      const auto report = deid::pipeline::run_evaluate_reid(cfg, args.out_dir, log);
      std::cout << report.dump(2) << "\n";
    } else if (cmd_dice->parsed()) {
      const auto report = deid::pipeline::run_evaluate_dice(cfg, args.out_dir, log);
      std::cout << report.dump(2) << "\n";
    } else if (cmd_all->parsed()) {
      const auto report = deid::pipeline::run_all(cfg, args.out_dir, log);
      std::cout << report.dump(2) << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
