#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include "tosuda/checkpoint.hpp"
#include "tosuda/experiment.hpp"

namespace {

// 0 ok, 2 bad config, 3 I/O failure, 4 corrupt checkpoint
template <typename Body>
int guarded(Body body) {
  try {
    body();
    return 0;
  } catch (const tosuda::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const tosuda::CheckpointError& e) {
    std::fprintf(stderr, "checkpoint error: %s\n", e.what());
    return 4;
  } catch (const tosuda::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 3;
  } catch (const tosuda::FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

tosuda::RunConfig load_config(const std::string& path,
                              const std::optional<std::uint64_t>& seed) {
  tosuda::RunConfig cfg;
  try {
    cfg = tosuda::RunConfig::parse_file(path);
  } catch (const tosuda::IoError& e) {
    // a missing config file is a configuration problem, not an I/O one
    throw tosuda::ConfigError(e.what());
  }
  if (seed) {
    cfg.seed = *seed;
    cfg.validate();
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Target-driven one-shot unsupervised domain adaptation trainer"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir = "out";
  std::string checkpoint_path;
  int count = 8;
  std::optional<std::uint64_t> seed;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--config", config_path, "run configuration file")
        ->required();
    cmd->add_option("--seed", seed, "override the config seed");
    if (needs_out) cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* cmd_train = app.add_subcommand("train", "train on the configured pair");
  add_common(cmd_train, true);

  CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(cmd_eval, false);
  cmd_eval->add_option("--checkpoint", checkpoint_path, "checkpoint to load")
      ->required();

  CLI::App* cmd_preview =
      app.add_subcommand("preview", "write source|augmented|target triptychs");
  add_common(cmd_preview, true);
  cmd_preview->add_option("--checkpoint", checkpoint_path, "checkpoint to load")
      ->required();
  cmd_preview->add_option("--count", count, "number of triptychs");

  CLI::App* cmd_ablate =
      app.add_subcommand("ablate", "run the four-setup ablation grid");
  add_common(cmd_ablate, true);

  CLI::App* cmd_gendata =
      app.add_subcommand("gen-data", "export the synthetic pair as PPM dirs");
  add_common(cmd_gendata, true);

  CLI11_PARSE(app, argc, argv);

  if (cmd_train->parsed()) {
    return guarded([&] {
      tosuda::TrainResult r =
          tosuda::run_training(load_config(config_path, seed), out_dir);
      std::printf("target_acc=%.4f\n", r.final_target_acc);
    });
  }
  if (cmd_eval->parsed()) {
    return guarded([&] {
      const double acc =
          tosuda::run_eval(load_config(config_path, seed), checkpoint_path);
      std::printf("acc=%.4f\n", acc);
    });
  }
  if (cmd_preview->parsed()) {
    return guarded([&] {
      tosuda::run_preview(load_config(config_path, seed), checkpoint_path,
                          count, out_dir);
      std::printf("wrote %d triptychs to %s\n", count, out_dir.c_str());
    });
  }
  if (cmd_ablate->parsed()) {
    return guarded([&] {
      const auto rows =
          tosuda::run_ablation(load_config(config_path, seed), out_dir);
      for (const auto& row : rows) {
        std::printf("%s: target_acc=%.4f +/- %.4f\n", row.setup.c_str(),
                    row.target_mean, row.target_std);
      }
    });
  }
  if (cmd_gendata->parsed()) {
    return guarded([&] {
      tosuda::run_gendata(load_config(config_path, seed), out_dir);
      std::printf("wrote synthetic pair to %s\n", out_dir.c_str());
    });
  }
  return 1;
}
