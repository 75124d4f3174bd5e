#include <fstream>

#include "slq/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <set>

namespace slq::pipeline {

namespace fs = std::filesystem;

namespace {

std::vector<const DataPair*> ptrs(const PairedDataset& ds) {
  std::vector<const DataPair*> out;
  out.reserve(ds.pairs.size());
  for (const auto& p : ds.pairs) out.push_back(&p);
  return out;
}

void mark_split(PairedDataset& ds, Split split) {
  for (auto& p : ds.pairs) p.split = split;
}

PairedDataset gen_tier(Tier tier, int n, std::uint64_t seed,
                       const std::array<double, 6>& mix) {
  return tier == Tier::kExplicit ? gen_explicit(n, seed)
                                 : gen_reasoning(n, seed, mix);
}

std::vector<int> prompt_tokens(const ReadoutConfig& readout) {
  std::vector<int> tokens;
  for (const auto& word : readout.prompt_prefix) {
    tokens.push_back(Vocab::instance().id(word));
  }
  return tokens;
}

Readout<float> make_readout(const RunConfig& cfg) {
  Readout<float> readout = Readout<float>::make(
      variant_from_name(cfg.readout.variant), pooling_from_name(cfg.readout.pooling),
      cfg.readout.n_queries, cfg.backbone.d_model, cfg.backbone.n_heads,
      cfg.readout.init_enum(), Rng(cfg.trainer.seed).stream("readout-init"));
  readout.prompt_prefix = prompt_tokens(cfg.readout);
  return readout;
}

Backbone<float> pretrain_in_memory(const RunConfig& cfg, const DataBundle& data,
                                   TrainLogWriter* log, bool quiet) {
  Backbone<float> backbone(cfg.backbone,
                           Rng(cfg.trainer.seed).stream("backbone-init"));
  auto corpus = data.pretrain_ptrs();
  if (corpus.empty()) throw InputError("pretrain: the pretrain corpus is empty");

  TrainerConfig pcfg = cfg.trainer;
  pcfg.learning_rate = cfg.pretrain.learning_rate;
  pcfg.total_steps = cfg.pretrain.total_steps;
  pcfg.batch_size = cfg.pretrain.batch_size;

  Pretrainer<float> trainer(backbone, pcfg, corpus);
  for (int i = 0; i < pcfg.total_steps; ++i) {
    const auto report = trainer.step();
    if (log) log->log_step(report.step, report.loss, 0.0, report.lr, report.grad_norm);
    if (!quiet && (i % 200 == 0 || i + 1 == pcfg.total_steps)) {
      std::printf("pretrain step %d/%d loss %.4f\n", i, pcfg.total_steps, report.loss);
    }
  }
  backbone.freeze();
  return backbone;
}

struct EvalOutcome {
  std::vector<RetrievalReport> reports;
  EmbeddingSet set;
};

EvalOutcome run_retrieval(const Backbone<float>& backbone,
                          const Readout<float>& readout,
                          const std::vector<const DataPair*>& pairs,
                          const std::vector<int>& k_list) {
  EvalOutcome outcome;
  outcome.set = encode_eval_set(backbone, readout, pairs);
  outcome.reports.push_back(retrieval_report(outcome.set, "I2T", k_list));
  outcome.reports.push_back(retrieval_report(outcome.set, "T2I", k_list));
  return outcome;
}

double recall_for(const std::vector<RetrievalReport>& reports,
                  const std::string& direction, int k) {
  for (const auto& r : reports) {
    if (r.direction != direction) continue;
    for (std::size_t i = 0; i < r.k_list.size(); ++i) {
      if (r.k_list[i] == k) return r.recall[i];
    }
  }
  throw InputError("recall_for: direction/k not present");
}

}  // namespace

std::vector<const DataPair*> DataBundle::pretrain_ptrs() const {
  auto out = ptrs(pretrain_explicit);
  const auto more = ptrs(pretrain_reasoning);
  out.insert(out.end(), more.begin(), more.end());
  return out;
}

std::vector<const DataPair*> DataBundle::adapt_ptrs() const { return ptrs(adapt); }
std::vector<const DataPair*> DataBundle::eval_ptrs() const { return ptrs(eval); }

DataBundle make_data(const RunConfig& cfg) {
  DataBundle bundle;
  const Rng root(cfg.data.seed);
  const int n_explicit = cfg.data.n_pretrain / 2;
  const int n_reasoning = cfg.data.n_pretrain - n_explicit;
  if (n_explicit > 0) {
    bundle.pretrain_explicit =
        gen_explicit(n_explicit, root.stream("pretrain-explicit").root_seed());
    mark_split(bundle.pretrain_explicit, Split::kPretrain);
  }
  if (n_reasoning > 0) {
    bundle.pretrain_reasoning = gen_reasoning(
        n_reasoning, root.stream("pretrain-reasoning").root_seed(), cfg.data.dim_mix);
    mark_split(bundle.pretrain_reasoning, Split::kPretrain);
  }
  if (cfg.data.n_adapt > 0) {
    bundle.adapt = gen_tier(cfg.data.tier_enum(), cfg.data.n_adapt,
                            root.stream("adapt-data").root_seed(), cfg.data.dim_mix);
    mark_split(bundle.adapt, Split::kAdaptTrain);
  }
  if (cfg.data.n_eval > 0) {
    bundle.eval = gen_tier(cfg.data.tier_enum(), cfg.data.n_eval,
                           root.stream("eval-data").root_seed(), cfg.data.dim_mix);
    mark_split(bundle.eval, Split::kEval);
  }
  return bundle;
}

EmbeddingSet encode_eval_set(const Backbone<float>& backbone,
                             const Readout<float>& readout,
                             const std::vector<const DataPair*>& pairs) {
  EmbeddingSet set;
  for (const auto* pair : pairs) {
    auto img = backbone.embed_image(pair->image);
    auto txt = text_content(backbone, pair->caption.tokens, readout.prompt_prefix);
    set.images.push_back(make_record(pair->id, Modality::kImage,
                                     encode_embedding(backbone, readout, img)));
    set.texts.push_back(make_record(pair->id, Modality::kText,
                                    encode_embedding(backbone, readout, txt)));
  }
  return set;
}

fs::path write_resolved_config(const RunConfig& cfg, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  const fs::path path = out_dir / "config_resolved.ini";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write resolved config: " + path.string());
  out << render_config(cfg);
  return path;
}

void cmd_pretrain(const RunConfig& cfg, const fs::path& out_dir, bool quiet) {
  cfg.validate();
  if (cfg.data.n_pretrain <= 0) {
    throw InputError("pretrain: data.n_pretrain must be positive");
  }
  fs::create_directories(out_dir);
  write_resolved_config(cfg, out_dir);
  const DataBundle data = make_data(cfg);
  TrainLogWriter log(out_dir / "pretrain_log.txt",
                     "# pretrain steps=" + std::to_string(cfg.pretrain.total_steps));
  Backbone<float> backbone = pretrain_in_memory(cfg, data, &log, quiet);
  log.close();
  backbone.save(out_dir / "backbone.slq");
  if (!quiet) std::printf("wrote %s\n", (out_dir / "backbone.slq").c_str());
}

void cmd_adapt(const RunConfig& cfg, const fs::path& backbone_path,
               const fs::path& out_dir, bool quiet, int steps_override) {
  cfg.validate();
  auto backbone = Backbone<float>::load(backbone_path);
  if (!backbone.frozen()) {
    throw StateError("adapt: backbone checkpoint is not frozen");
  }
  fs::create_directories(out_dir);
  write_resolved_config(cfg, out_dir);

  const DataBundle data = make_data(cfg);
  auto train_pairs = data.adapt_ptrs();
  if (train_pairs.empty()) throw InputError("adapt: data.n_adapt must be positive");

  Readout<float> readout = make_readout(cfg);
  Temperature<float> temperature;
  TrainerConfig tcfg = cfg.trainer;
  if (steps_override >= 0) tcfg.total_steps = steps_override;

  AdaptTrainer<float> trainer(backbone, readout, temperature, tcfg, train_pairs);
  TrainLogWriter log(out_dir / "adapt_log.txt",
                     "# trainable_params=" +
                         std::to_string(trainer.trainable_scalar_count()) +
                         " variant=" + cfg.readout.variant +
                         " pooling=" + cfg.readout.pooling);
  for (int i = 0; i < tcfg.total_steps; ++i) {
    const auto report = trainer.step();
    log.log_step(report.step, report.loss, report.tau, report.lr, report.grad_norm);
    if (!quiet && (i % 100 == 0 || i + 1 == tcfg.total_steps)) {
      std::printf("adapt step %d/%d loss %.4f tau %.4f\n", i, tcfg.total_steps,
                  report.loss, report.tau);
    }
  }
  log.close();
  backbone.verify_frozen_integrity();

  std::vector<std::uint64_t> train_ids;
  for (const auto* p : train_pairs) train_ids.push_back(p->id);
  save_adapter(out_dir / "adapter.slq", readout, temperature.raw().item(), train_ids);
  if (!quiet) std::printf("wrote %s\n", (out_dir / "adapter.slq").c_str());
}

void cmd_eval(const RunConfig& cfg, const fs::path& backbone_path,
              const fs::path& adapter_path, const fs::path& out_dir, bool quiet) {
  cfg.validate();
  auto backbone = Backbone<float>::load(backbone_path);
  auto adapter = load_adapter<float>(adapter_path, cfg.backbone.d_model,
                                     cfg.backbone.n_heads);
  adapter.readout.prompt_prefix = prompt_tokens(cfg.readout);

  const DataBundle data = make_data(cfg);
  auto eval_pairs = data.eval_ptrs();
  if (eval_pairs.empty()) throw InputError("eval: data.n_eval must be positive");

  // Contamination gate: any eval id the adapter saw in training is a refusal.
  std::set<std::uint64_t> trained(adapter.train_ids.begin(), adapter.train_ids.end());
  for (const auto* p : eval_pairs) {
    if (trained.count(p->id)) {
      throw ContaminationError("eval id " + std::to_string(p->id) +
                               " was seen during adaptation");
    }
  }

  fs::create_directories(out_dir);
  write_resolved_config(cfg, out_dir);
  const EvalOutcome outcome =
      run_retrieval(backbone, adapter.readout, eval_pairs, cfg.eval.k_list);
  write_retrieval_csv(out_dir / "retrieval.csv", outcome.reports, "eval");

  std::vector<EmbeddingRecord> all_records = outcome.set.images;
  all_records.insert(all_records.end(), outcome.set.texts.begin(),
                     outcome.set.texts.end());
  write_embedding_dump(out_dir / "embeddings.txt", all_records);

  if (cfg.eval.geometry) {
    const GeometryReport geometry = geometry_report(outcome.set, "eval");
    write_geometry_csv(out_dir / "geometry.csv", geometry);
    write_pca_svg(out_dir / "pca.svg", geometry);
  }
  if (!quiet) {
    for (const auto& r : outcome.reports) {
      std::printf("%s", r.direction.c_str());
      for (std::size_t i = 0; i < r.k_list.size(); ++i) {
        std::printf(" r@%d=%.4f", r.k_list[i], r.recall[i]);
      }
      std::printf("\n");
    }
  }
}

void cmd_ablate(const RunConfig& cfg, const std::string& axis,
                const fs::path& out_dir, bool quiet) {
  cfg.validate();
  struct Setting {
    std::string label;
    RunConfig config;
  };
  std::vector<Setting> settings;
  if (axis == "n_queries") {
    for (int n : {1, 5, 10, 20, 32}) {
      RunConfig c = cfg;
      c.readout.n_queries = n;
      settings.push_back({std::to_string(n), c});
    }
  } else if (axis == "pooling") {
    for (const char* p : {"mean", "max", "last"}) {
      RunConfig c = cfg;
      c.readout.pooling = p;
      settings.push_back({p, c});
    }
  } else if (axis == "variant") {
    for (const char* v : {"shared_queries", "separate_queries", "linear_head",
                          "tf_block_head", "prompt_prepend"}) {
      RunConfig c = cfg;
      c.readout.variant = v;
      settings.push_back({v, c});
    }
  } else {
    throw InputError("ablate: unknown axis '" + axis + "'");
  }

  fs::create_directories(out_dir);
  write_resolved_config(cfg, out_dir);

  // One shared backbone and data bundle: rows differ only on the ablated axis.
  const DataBundle data = make_data(cfg);
  Backbone<float> backbone = pretrain_in_memory(cfg, data, nullptr, quiet);
  auto train_pairs = data.adapt_ptrs();
  auto eval_pairs = data.eval_ptrs();
  if (train_pairs.empty() || eval_pairs.empty()) {
    throw InputError("ablate: adapt and eval datasets must be nonempty");
  }

  std::vector<AblationRow> rows;
  for (const auto& setting : settings) {
    Readout<float> readout = make_readout(setting.config);
    Temperature<float> temperature;
    AdaptTrainer<float> trainer(backbone, readout, temperature,
                                setting.config.trainer, train_pairs);
    for (int i = 0; i < setting.config.trainer.total_steps; ++i) trainer.step();
    const EvalOutcome outcome =
        run_retrieval(backbone, readout, eval_pairs, {1, 5});
    AblationRow row;
    row.axis = axis;
    row.setting = setting.label;
    row.data_seed = cfg.data.seed;
    row.r1_i2t = recall_for(outcome.reports, "I2T", 1);
    row.r1_t2i = recall_for(outcome.reports, "T2I", 1);
    row.r5_i2t = recall_for(outcome.reports, "I2T", 5);
    row.r5_t2i = recall_for(outcome.reports, "T2I", 5);
    row.mean_recall = 0.5 * (row.r1_i2t + row.r1_t2i);
    rows.push_back(row);
    if (!quiet) {
      std::printf("ablate %s=%s mean_r1=%.4f\n", axis.c_str(),
                  setting.label.c_str(), row.mean_recall);
    }
  }
  write_ablation_csv(out_dir / "ablation.csv", rows);
}

void cmd_diagnose(const RunConfig& cfg, const fs::path& backbone_path,
                  const fs::path& out_dir, bool quiet) {
  cfg.validate();
  auto backbone = Backbone<float>::load(backbone_path);
  if (!backbone.frozen()) throw StateError("diagnose: backbone must be frozen");
  fs::create_directories(out_dir);
  write_resolved_config(cfg, out_dir);

  const Rng root(cfg.data.seed);
  // Knowledge tier: the five non-logical dimensions, renormalized.
  std::array<double, 6> knowledge_mix = cfg.data.dim_mix;
  knowledge_mix[5] = 0.0;
  double total = 0;
  for (double p : knowledge_mix) total += p;
  for (auto& p : knowledge_mix) p /= total;

  struct TierData {
    const char* name;
    PairedDataset ds;
  };
  std::vector<TierData> tiers;
  tiers.push_back({"explicit", gen_explicit(cfg.data.n_eval,
                                            root.stream("diagnose-explicit").root_seed())});
  tiers.push_back({"knowledge",
                   gen_reasoning(cfg.data.n_eval,
                                 root.stream("diagnose-knowledge").root_seed(),
                                 knowledge_mix)});
  tiers.push_back({"logical",
                   gen_reasoning(cfg.data.n_eval,
                                 root.stream("diagnose-logical").root_seed(),
                                 {0, 0, 0, 0, 0, 1.0})});

  struct Probe {
    const char* name;
    Readout<float> readout;
  };
  std::vector<Probe> probes;
  probes.push_back({"query", Readout<float>::make(
                                 ReadoutVariant::kSharedQueries, PoolingStrategy::kMean,
                                 1, cfg.backbone.d_model, cfg.backbone.n_heads,
                                 QueryInit::kZeros, Rng(0))});
  probes.push_back({"last_token", Readout<float>::make(
                                      ReadoutVariant::kLastToken, PoolingStrategy::kMean,
                                      1, cfg.backbone.d_model, cfg.backbone.n_heads,
                                      QueryInit::kZeros, Rng(0))});

  std::vector<DiagnoseTierRow> rows;
  std::vector<MarginRow> margins;
  for (const auto& tier : tiers) {
    const auto pairs = ptrs(tier.ds);
    for (const auto& probe : probes) {
      const EmbeddingSet set = encode_eval_set(backbone, probe.readout, pairs);
      // Text-to-image: margins of the top-1 over the top-2 gallery item.
      double margin_sum = 0;
      int correct = 0;
      for (std::size_t q = 0; q < set.texts.size(); ++q) {
        double best = -2, second = -2;
        std::size_t best_idx = 0;
        for (std::size_t g = 0; g < set.images.size(); ++g) {
          double sim = 0;
          for (std::size_t i = 0; i < set.texts[q].z.size(); ++i) {
            sim += set.texts[q].z[i] * set.images[g].z[i];
          }
          if (sim > best) {
            second = best;
            best = sim;
            best_idx = g;
          } else if (sim > second) {
            second = sim;
          }
        }
        const double margin = best - second;
        const bool hit = set.images[best_idx].id == set.texts[q].id;
        margin_sum += margin;
        correct += hit ? 1 : 0;
        margins.push_back({tier.name, probe.name, set.texts[q].id, margin, hit});
      }
      DiagnoseTierRow row;
      row.tier = tier.name;
      row.readout = probe.name;
      row.r1 = static_cast<double>(correct) / static_cast<double>(set.texts.size());
      row.mean_margin = margin_sum / static_cast<double>(set.texts.size());
      rows.push_back(row);
      if (!quiet) {
        std::printf("diagnose %s/%s r@1=%.4f margin=%.5f\n", tier.name, probe.name,
                    row.r1, row.mean_margin);
      }
    }
  }
  write_diagnose_csv(out_dir / "diagnose.csv", rows);
  write_margins_csv(out_dir / "margins.csv", margins);
}

void cmd_gendata(const RunConfig& cfg, const fs::path& out_path) {
  cfg.validate();
  const DataBundle data = make_data(cfg);
  PairedDataset merged;
  merged.seed = cfg.data.seed;
  for (const auto* src : {&data.pretrain_explicit, &data.pretrain_reasoning,
                          &data.adapt, &data.eval}) {
    merged.pairs.insert(merged.pairs.end(), src->pairs.begin(), src->pairs.end());
  }
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  save_dataset(out_path, merged);
}

}  // namespace slq::pipeline
