#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "slq/metrics.hpp"
#include "slq/readout.hpp"

namespace slq {

// Deterministic text artifacts: fixed column orders, fixed float formats, no
// locale dependence. Reruns must be byte-identical.

std::string format_double(double v, int precision = 6);

// One record per line: "<id> <MODALITY> [v0,v1,...]". Field order is fixed
// for golden-file comparisons.
void write_embedding_dump(const std::filesystem::path& path,
                          const std::vector<EmbeddingRecord>& records);
std::vector<EmbeddingRecord> read_embedding_dump(const std::filesystem::path& path);

// direction,r@K...,n_queries,n_gallery,split — one row per direction.
void write_retrieval_csv(const std::filesystem::path& path,
                         const std::vector<RetrievalReport>& reports,
                         const std::string& split);

// split,gap,alignment,uniformity_text,uniformity_image,explained_var_1,...
void write_geometry_csv(const std::filesystem::path& path,
                        const GeometryReport& report);

// Scatter of the two PCA point classes with legend and axis labels.
void write_pca_svg(const std::filesystem::path& path, const GeometryReport& report);

// Ablation table: one row per setting.
struct AblationRow {
  std::string axis;     // "n_queries" | "pooling" | "variant"
  std::string setting;
  std::uint64_t data_seed = 0;
  double r1_i2t = 0, r1_t2i = 0, r5_i2t = 0, r5_t2i = 0;
  double mean_recall = 0;
};
void write_ablation_csv(const std::filesystem::path& path,
                        const std::vector<AblationRow>& rows);

// Training log: "step=N loss=... tau=... lr=... grad_norm=..." per line.
class TrainLogWriter {
 public:
  explicit TrainLogWriter(const std::filesystem::path& path,
                          const std::string& header = "");
  void log_step(int step, double loss, double tau, double lr, double grad_norm);
  void close();

 private:
  std::filesystem::path path_;
  std::string buffer_;
};

// Diagnose outputs.
struct DiagnoseTierRow {
  std::string tier;      // explicit | knowledge | logical
  std::string readout;   // query | last_token
  double r1 = 0;
  double mean_margin = 0;  // mean over queries of top1 - top2 similarity
};
void write_diagnose_csv(const std::filesystem::path& path,
                        const std::vector<DiagnoseTierRow>& rows);

struct MarginRow {
  std::string tier;
  std::string readout;
  std::uint64_t query_id = 0;
  double margin = 0;
  bool correct = false;
};
void write_margins_csv(const std::filesystem::path& path,
                       const std::vector<MarginRow>& rows);

}  // namespace slq
