#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slq/backbone.hpp"
#include "slq/optimizer.hpp"
#include "slq/readout.hpp"
#include "slq/synthdata.hpp"

namespace slq {

struct DataConfig {
  std::string tier = "explicit";  // adapt/eval tier: explicit | reasoning
  int n_pretrain = 3072;
  int n_adapt = 512;
  int n_eval = 128;
  std::uint64_t seed = 404;
  std::array<double, 6> dim_mix = kDefaultDimensionMix;

  Tier tier_enum() const {
    if (tier == "explicit") return Tier::kExplicit;
    if (tier == "reasoning") return Tier::kReasoning;
    throw ConfigError("data.tier must be explicit or reasoning");
  }
};

struct ReadoutConfig {
  std::string variant = "shared_queries";
  int n_queries = 20;
  std::string pooling = "mean";
  std::string init = "zeros";  // zeros | gaussian
  std::vector<std::string> prompt_prefix;  // vocab words, empty = off

  QueryInit init_enum() const {
    if (init == "zeros") return QueryInit::kZeros;
    if (init == "gaussian") return QueryInit::kGaussian;
    throw ConfigError("readout.init must be zeros or gaussian");
  }
};

struct EvalConfig {
  std::vector<int> k_list = {1, 5, 10};
  bool geometry = true;
};

// Pretraining knobs ride in the trainer section; they drive the same
// optimizer machinery with their own budget.
struct PretrainKnobs {
  double learning_rate = 1e-3;
  int total_steps = 1800;
  int batch_size = 16;
};

struct RunConfig {
  BackboneConfig backbone;
  DataConfig data;
  TrainerConfig trainer;
  PretrainKnobs pretrain;
  ReadoutConfig readout;
  EvalConfig eval;
  std::string output_dir = "out";

  void validate() const;
};

// Parses the sectioned key = value format; unknown sections or keys are
// ConfigError naming the offending key.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

// Fully-resolved round-trippable rendering, written next to run outputs.
std::string render_config(const RunConfig& config);

}  // namespace slq
