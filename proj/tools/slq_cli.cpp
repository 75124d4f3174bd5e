#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "slq/pipeline.hpp"

namespace {

// Exit codes: 0 success, 2 config error, 3 integrity error, 4 contamination
// error, 1 anything else.
int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const slq::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const slq::IntegrityError& e) {
    std::fprintf(stderr, "integrity error: %s\n", e.what());
    return 3;
  } catch (const slq::ContaminationError& e) {
    std::fprintf(stderr, "contamination error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

slq::RunConfig load_with_overrides(const std::string& config_path,
                                   bool seed_set, std::uint64_t seed) {
  slq::RunConfig cfg = slq::load_config(config_path);
  if (seed_set) {
    cfg.data.seed = seed;
    cfg.trainer.seed = seed;
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared-latent-query retrieval pipeline"};
  app.require_subcommand(1);
  app.fallthrough(true);  // global flags may follow the subcommand

  std::string config_path;
  std::string out_dir = "out";
  std::uint64_t seed_override = 0;
  bool seed_set = false;
  bool quiet = false;
  int steps_override = -1;

  app.add_option("--config", config_path, "Run config file")->required();
  app.add_option("--out", out_dir, "Output directory");
  app.add_option("--seed", seed_override, "Override data and trainer seeds")
      ->trigger_on_parse()
      ->each([&](const std::string&) { seed_set = true; });
  app.add_flag("--quiet", quiet, "Suppress progress output");

  auto* pretrain = app.add_subcommand("pretrain", "Pretrain and freeze a backbone");

  auto* adapt = app.add_subcommand("adapt", "Train the readout against a frozen backbone");
  std::string backbone_path;
  adapt->add_option("--backbone", backbone_path, "Backbone checkpoint")->required();
  adapt->add_option("--steps", steps_override, "Override trainer.total_steps");

  auto* eval = app.add_subcommand("eval", "Evaluate retrieval and geometry");
  std::string eval_backbone, adapter_path;
  eval->add_option("--backbone", eval_backbone, "Backbone checkpoint")->required();
  eval->add_option("--adapter", adapter_path, "Adapter checkpoint")->required();

  auto* ablate = app.add_subcommand("ablate", "Sweep one readout axis");
  std::string axis = "pooling";
  ablate->add_option("--axis", axis, "n_queries | pooling | variant")->required();

  auto* diagnose = app.add_subcommand("diagnose", "Zero-shot pilot comparison");
  std::string diag_backbone;
  diagnose->add_option("--backbone", diag_backbone, "Backbone checkpoint")->required();

  auto* gendata = app.add_subcommand("gendata", "Write the generated dataset");
  std::string data_out = "dataset.txt";
  gendata->add_option("--data-out", data_out, "Dataset output path");

  CLI11_PARSE(app, argc, argv);

  return run_guarded([&] {
    const slq::RunConfig cfg = load_with_overrides(config_path, seed_set, seed_override);
    if (pretrain->parsed()) {
      slq::pipeline::cmd_pretrain(cfg, out_dir, quiet);
    } else if (adapt->parsed()) {
      slq::pipeline::cmd_adapt(cfg, backbone_path, out_dir, quiet, steps_override);
    } else if (eval->parsed()) {
      slq::pipeline::cmd_eval(cfg, eval_backbone, adapter_path, out_dir, quiet);
    } else if (ablate->parsed()) {
      slq::pipeline::cmd_ablate(cfg, axis, out_dir, quiet);
    } else if (diagnose->parsed()) {
      slq::pipeline::cmd_diagnose(cfg, diag_backbone, out_dir, quiet);
    } else if (gendata->parsed()) {
      slq::pipeline::cmd_gendata(cfg, data_out);
    }
  });
}
