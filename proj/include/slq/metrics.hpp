#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slq/errors.hpp"
#include "slq/readout.hpp"

namespace slq {

// Evaluation over immutable embedding populations. All math is double; the
// records come out of encode already unit-normalized.

struct EmbeddingSet {
  std::vector<EmbeddingRecord> images;
  std::vector<EmbeddingRecord> texts;

  // Unit norms within 1e-6 and an id bijection between modalities.
  void validate() const;
};

struct RetrievalReport {
  std::string direction;  // "I2T" or "T2I"
  std::vector<int> k_list;
  std::vector<double> recall;  // parallel to k_list
  int n_queries = 0;
  int n_gallery = 0;
};

// Fraction of queries whose aligned gallery item (same id) ranks in the
// top k by cosine similarity; ties break by stable gallery index order.
double recall_at_k(const std::vector<EmbeddingRecord>& queries,
                   const std::vector<EmbeddingRecord>& gallery, int k);

RetrievalReport retrieval_report(const EmbeddingSet& set,
                                 const std::string& direction,
                                 const std::vector<int>& k_list);

// || mean(Z_I) - mean(Z_T) ||_2 over the raw unit vectors (no re-norm).
double modality_gap(const EmbeddingSet& set);

// Mean over aligned pairs of ||z_I - z_T||^alpha.
double alignment_metric(const EmbeddingSet& set, double alpha = 2.0);

// log of the mean over distinct ordered pairs of exp(-t ||z_i - z_j||^2).
double uniformity_metric(const std::vector<EmbeddingRecord>& records,
                         double t = 2.0);
double uniformity_metric(const std::vector<std::vector<double>>& vectors,
                         double t = 2.0);

struct PcaResult {
  std::vector<std::vector<double>> components;  // dims x D, orthonormal
  std::vector<std::vector<double>> points;      // n x dims, centered data projected
  std::vector<double> explained_variance;       // ratios, descending
  bool rank_deficient = false;
};

// Top principal components via Jacobi eigendecomposition of the covariance.
PcaResult pca_project(const std::vector<std::vector<double>>& vectors,
                      int dims = 2);

struct GeometryReport {
  std::string split;
  double gap = 0;
  double alignment = 0;
  double uniformity_text = 0;
  double uniformity_image = 0;
  PcaResult pca;                          // over images + texts pooled
  std::vector<int> pca_class;             // 0 = image, 1 = text, per point
};

GeometryReport geometry_report(const EmbeddingSet& set, const std::string& split);

// Test-oracle-friendly helper: dense symmetric eigendecomposition used by
// pca_project (exposed so an independent path can cross-check it).
void jacobi_eigen_symmetric(std::vector<std::vector<double>> matrix,
                            std::vector<double>& eigenvalues,
                            std::vector<std::vector<double>>& eigenvectors);

}  // namespace slq
