#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slq/config.hpp"
#include "slq/export.hpp"
#include "slq/metrics.hpp"
#include "slq/trainer.hpp"

namespace slq::pipeline {

// Library entry points behind the CLI subcommands. All throw the typed
// errors from errors.hpp; the CLI maps them onto exit codes. Every command
// is a pure function of (config, input artifacts): reruns are byte-identical.

// Deterministic datasets derived from the data section via named seed
// sub-streams. Pretraining mixes explicit and reasoning pairs; adapt/eval
// only use the configured tier.
struct DataBundle {
  PairedDataset pretrain_explicit;
  PairedDataset pretrain_reasoning;
  PairedDataset adapt;
  PairedDataset eval;

  std::vector<const DataPair*> pretrain_ptrs() const;
  std::vector<const DataPair*> adapt_ptrs() const;
  std::vector<const DataPair*> eval_ptrs() const;
};

DataBundle make_data(const RunConfig& config);

// Pretrains, freezes, and writes backbone.slq + pretrain_log.txt.
void cmd_pretrain(const RunConfig& config, const std::filesystem::path& out_dir,
                  bool quiet = false);

// Trains only the readout parameters and temperature; writes adapter.slq +
// adapt_log.txt (header carries the trainable census). steps_override >= 0
// replaces trainer.total_steps (0 emits the freshly initialized adapter).
void cmd_adapt(const RunConfig& config, const std::filesystem::path& backbone_path,
               const std::filesystem::path& out_dir, bool quiet = false,
               int steps_override = -1);

// Writes retrieval.csv (+ geometry.csv, pca.svg when enabled) and
// embeddings.txt. ContaminationError when eval ids were trained on.
void cmd_eval(const RunConfig& config, const std::filesystem::path& backbone_path,
              const std::filesystem::path& adapter_path,
              const std::filesystem::path& out_dir, bool quiet = false);

// Pretrains once, then adapt+eval per setting along one axis under shared
// seeds; writes ablation.csv. Axis: n_queries | pooling | variant.
void cmd_ablate(const RunConfig& config, const std::string& axis,
                const std::filesystem::path& out_dir, bool quiet = false);

// Zero-shot pilot comparison (single zero-init query vs last token) over the
// explicit / knowledge / logical tiers; writes diagnose.csv + margins.csv.
void cmd_diagnose(const RunConfig& config,
                  const std::filesystem::path& backbone_path,
                  const std::filesystem::path& out_dir, bool quiet = false);

// Writes the generated dataset (all splits marked) as a dataset container.
void cmd_gendata(const RunConfig& config, const std::filesystem::path& out_path);

// Shared helpers (also used by tests and the acceptance suite).
EmbeddingSet encode_eval_set(const Backbone<float>& backbone,
                             const Readout<float>& readout,
                             const std::vector<const DataPair*>& pairs);

std::filesystem::path write_resolved_config(const RunConfig& config,
                                            const std::filesystem::path& out_dir);

}  // namespace slq::pipeline
