#include <cstdio>
#include <exception>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"

#include "cprobe/config.hpp"
#include "cprobe/experiments.hpp"
#include "cprobe/optim.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNumerical = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"circuitprobe: train small arithmetic transformers, uncover "
               "variable-computing circuits with trainable masks, and test "
               "them causally against probing baselines"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::string out_override;
  std::string seed_override;
  std::string checkpoint;
  app.add_option("--config", config_path, "experiment config file (key=value lines)");
  app.add_option("--out", out_override, "output directory (overrides the config's out=)");
  app.add_option("--seed", seed_override, "global seed (overrides the config's seed=)");
  app.add_option("--checkpoint", checkpoint, "checkpoint base path to resume training from");

  CLI::App* verb_train = app.add_subcommand("train", "train the transformer and checkpoint it");
  CLI::App* verb_probe = app.add_subcommand("probe", "learn a circuit per hypothesized variable");
  CLI::App* verb_ablate = app.add_subcommand("ablate", "knock out circuits and measure task accuracy");
  CLI::App* verb_baseline = app.add_subcommand("baseline", "probing/erasure/counterfactual comparisons");
  CLI::App* verb_sweep = app.add_subcommand("sweep", "re-probe every training checkpoint");
  CLI::App* verb_transfer = app.add_subcommand("transfer", "fine-tune against a fresh model on related tasks");
  CLI::App* verb_report = app.add_subcommand("report", "merge stage outputs into runs.csv/curves.csv/report.json");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (config_path.empty()) {
      throw std::invalid_argument("--config is required");
    }
    cprobe::Config raw = cprobe::Config::from_file(config_path);
    if (!seed_override.empty()) raw.set("seed", seed_override);
    cprobe::ExperimentConfig cfg = cprobe::ExperimentConfig::from_config(raw);
    std::string out = out_override.empty() ? raw.get_str("out", "") : out_override;
    if (out.empty()) {
      throw std::invalid_argument(
          "no output directory: pass --out or set out= in the config");
    }

    if (verb_train->parsed()) {
      cprobe::stage_train(cfg, out, checkpoint);
    } else if (verb_probe->parsed()) {
      cprobe::stage_probe(cfg, out);
    } else if (verb_ablate->parsed()) {
      cprobe::stage_ablate(cfg, out);
    } else if (verb_baseline->parsed()) {
      cprobe::stage_baseline(cfg, out);
    } else if (verb_sweep->parsed()) {
      cprobe::stage_sweep(cfg, out);
    } else if (verb_transfer->parsed()) {
      cprobe::stage_transfer(cfg, out);
    } else if (verb_report->parsed()) {
      cprobe::stage_report(cfg, out);
    }
    return kExitOk;
  } catch (const cprobe::NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitConfig;
  }
}
