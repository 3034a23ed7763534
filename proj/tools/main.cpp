#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "invlens/runtime.hpp"

namespace {

constexpr const char* kCommands[][2] = {
    {"synth-data", "generate a glyph dataset"},
    {"train-ae", "train the autoencoder"},
    {"train-classifier", "train the probe classifier with checkpoints"},
    {"train-cinn", "train the invariance network for a probe tap"},
    {"train-sinn", "train the semantic factor network"},
    {"sample", "render samples that share a representation"},
    {"metrics", "explained-variance reports and the variance proxy"},
    {"attack", "targeted FGSM and its decoded visualization"},
    {"modify", "swap one semantic factor between two images"},
    {"factor-evolution", "factor relevance across probe checkpoints"},
};

}  // namespace

int main(int argc, char** argv) {
  invlens::configure_runtime();
  CLI::App app{"invlens: invertible interpretation of network representations"};
  app.require_subcommand(1);
  std::string config_path;
  invlens::cli::Overrides o;
  for (const auto& [name, help] : kCommands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "run configuration file");
    sub->add_option("--out", o.out, "output directory (dataset file for synth-data)");
    sub->add_option("--seed", o.seed, "seed of this stage");
    sub->add_option("--tap", o.tap, "probe layer: tap0, tap1, tap2 or logits");
    sub->add_option("--eps", o.eps, "attack step size");
    sub->add_option("--factor", o.factor, "residual, class, fg, bg (or all for metrics)");
    sub->add_option("--count", o.count, "number of samples or inputs");
    sub->add_option("--checkpoint", o.checkpoint, "probe checkpoint: step0, final, ckpt<i>, step<n> (all for train-cinn)");
    sub->add_option("--kind", o.kind, "metrics kind: explained-by-invariances, explained-by-z, variance-proxy");
    sub->add_option("--src", o.src, "source dataset index for modify");
    sub->add_option("--donor", o.donor, "donor dataset index for modify");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  const std::string command = app.get_subcommands().front()->get_name();
  try {
    auto cfg = config_path.empty() ? invlens::cli::RunConfig() : invlens::cli::RunConfig::load(config_path);
    return invlens::cli::run_command(command, std::move(cfg), o);
  } catch (const invlens::cli::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 3;
  } catch (const invlens::cli::MissingInput& e) {
    std::cerr << "missing checkpoint or input: " << e.path << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << command << ": " << e.what() << "\n";
    return 1;
  }
}
