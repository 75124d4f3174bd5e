#include "slq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

namespace slq {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace

void EmbeddingSet::validate() const {
  auto check_norms = [](const std::vector<EmbeddingRecord>& records) {
    for (const auto& r : records) {
      const double norm = std::sqrt(dot(r.z, r.z));
      if (std::abs(norm - 1.0) > 1e-6) {
        throw ContractError("embedding set: record " + std::to_string(r.id) +
                            " is not unit norm");
      }
    }
  };
  check_norms(images);
  check_norms(texts);
  std::set<std::uint64_t> image_ids, text_ids;
  for (const auto& r : images) image_ids.insert(r.id);
  for (const auto& r : texts) text_ids.insert(r.id);
  if (image_ids.size() != images.size() || text_ids.size() != texts.size() ||
      image_ids != text_ids) {
    throw ContractError("embedding set: id alignment is not a bijection");
  }
}

double recall_at_k(const std::vector<EmbeddingRecord>& queries,
                   const std::vector<EmbeddingRecord>& gallery, int k) {
  if (k < 1) throw InputError("recall_at_k: k must be >= 1");
  if (gallery.empty()) throw InputError("recall_at_k: empty gallery");
  std::map<std::uint64_t, std::size_t> gallery_by_id;
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    gallery_by_id[gallery[i].id] = i;
  }
  int hits = 0;
  std::vector<std::size_t> order(gallery.size());
  for (const auto& query : queries) {
    auto aligned = gallery_by_id.find(query.id);
    if (aligned == gallery_by_id.end()) {
      throw InputError("recall_at_k: query " + std::to_string(query.id) +
                       " has no aligned gallery item");
    }
    std::vector<double> sims(gallery.size());
    for (std::size_t i = 0; i < gallery.size(); ++i) {
      sims[i] = dot(query.z, gallery[i].z);
    }
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return sims[a] > sims[b];  // stable: ties keep gallery index order
    });
    const std::size_t cutoff = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
    for (std::size_t r = 0; r < cutoff; ++r) {
      if (order[r] == aligned->second) {
        ++hits;
        break;
      }
    }
  }
  return queries.empty() ? 0.0 : static_cast<double>(hits) / queries.size();
}

RetrievalReport retrieval_report(const EmbeddingSet& set,
                                 const std::string& direction,
                                 const std::vector<int>& k_list) {
  set.validate();
  const auto& queries = direction == "I2T" ? set.images : set.texts;
  const auto& gallery = direction == "I2T" ? set.texts : set.images;
  RetrievalReport report;
  report.direction = direction;
  report.k_list = k_list;
  report.n_queries = static_cast<int>(queries.size());
  report.n_gallery = static_cast<int>(gallery.size());
  for (int k : k_list) report.recall.push_back(recall_at_k(queries, gallery, k));
  return report;
}

double modality_gap(const EmbeddingSet& set) {
  if (set.images.empty() || set.texts.empty()) {
    throw InputError("modality_gap: both modalities must be nonempty");
  }
  const std::size_t d = set.images[0].z.size();
  std::vector<double> centroid_img(d, 0), centroid_txt(d, 0);
  for (const auto& r : set.images) {
    for (std::size_t i = 0; i < d; ++i) centroid_img[i] += r.z[i];
  }
  for (const auto& r : set.texts) {
    for (std::size_t i = 0; i < d; ++i) centroid_txt[i] += r.z[i];
  }
  for (std::size_t i = 0; i < d; ++i) {
    centroid_img[i] /= static_cast<double>(set.images.size());
    centroid_txt[i] /= static_cast<double>(set.texts.size());
  }
  return std::sqrt(sq_dist(centroid_img, centroid_txt));
}

double alignment_metric(const EmbeddingSet& set, double alpha) {
  if (set.images.empty() || set.texts.empty()) {
    throw InputError("alignment_metric: empty alignment map");
  }
  std::map<std::uint64_t, const EmbeddingRecord*> text_by_id;
  for (const auto& r : set.texts) text_by_id[r.id] = &r;
  double total = 0;
  int n = 0;
  for (const auto& img : set.images) {
    auto it = text_by_id.find(img.id);
    if (it == text_by_id.end()) {
      throw InputError("alignment_metric: image " + std::to_string(img.id) +
                       " has no text partner");
    }
    total += std::pow(std::sqrt(sq_dist(img.z, it->second->z)), alpha);
    ++n;
  }
  return total / n;
}

double uniformity_metric(const std::vector<std::vector<double>>& vectors,
                         double t) {
  if (vectors.size() < 2) {
    throw InputError("uniformity_metric: need at least 2 vectors");
  }
  double total = 0;
  int pairs = 0;
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    for (std::size_t j = 0; j < vectors.size(); ++j) {
      if (i == j) continue;
      total += std::exp(-t * sq_dist(vectors[i], vectors[j]));
      ++pairs;
    }
  }
  return std::log(total / pairs);
}

double uniformity_metric(const std::vector<EmbeddingRecord>& records, double t) {
  std::vector<std::vector<double>> vectors;
  vectors.reserve(records.size());
  for (const auto& r : records) vectors.push_back(r.z);
  return uniformity_metric(vectors, t);
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

void jacobi_eigen_symmetric(std::vector<std::vector<double>> a,
                            std::vector<double>& eigenvalues,
                            std::vector<std::vector<double>>& eigenvectors) {
  const std::size_t n = a.size();
  eigenvectors.assign(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) eigenvectors[i][i] = 1.0;

  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    }
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double sign = theta >= 0 ? 1.0 : -1.0;
        const double t = sign / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t i = 0; i < n; ++i) {
          const double aip = a[i][p], aiq = a[i][q];
          a[i][p] = c * aip - s * aiq;
          a[i][q] = s * aip + c * aiq;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double api = a[p][i], aqi = a[q][i];
          a[p][i] = c * api - s * aqi;
          a[q][i] = s * api + c * aqi;
        }
        for (std::size_t i = 0; i < n; ++i) {
          const double vip = eigenvectors[i][p], viq = eigenvectors[i][q];
          eigenvectors[i][p] = c * vip - s * viq;
          eigenvectors[i][q] = s * vip + c * viq;
        }
      }
    }
  }
  eigenvalues.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = a[i][i];
}

PcaResult pca_project(const std::vector<std::vector<double>>& vectors, int dims) {
  if (static_cast<int>(vectors.size()) < dims + 1) {
    throw InputError("pca_project: need at least dims+1 vectors");
  }
  const std::size_t n = vectors.size();
  const std::size_t d = vectors[0].size();
  std::vector<double> mean(d, 0);
  for (const auto& v : vectors) {
    for (std::size_t i = 0; i < d; ++i) mean[i] += v[i];
  }
  for (auto& m : mean) m /= static_cast<double>(n);

  std::vector<std::vector<double>> centered(n, std::vector<double>(d));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) centered[r][i] = vectors[r][i] - mean[i];
  }

  std::vector<std::vector<double>> cov(d, std::vector<double>(d, 0.0));
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = i; j < d; ++j) {
        cov[i][j] += centered[r][i] * centered[r][j];
      }
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = i; j < d; ++j) {
      cov[i][j] /= static_cast<double>(n);
      cov[j][i] = cov[i][j];
    }
  }

  std::vector<double> eigenvalues;
  std::vector<std::vector<double>> eigenvectors;  // columns are eigenvectors
  jacobi_eigen_symmetric(cov, eigenvalues, eigenvectors);

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return eigenvalues[a] > eigenvalues[b];
  });

  double total_var = 0;
  for (double ev : eigenvalues) total_var += std::max(0.0, ev);

  PcaResult result;
  for (int c = 0; c < dims; ++c) {
    const std::size_t col = order[static_cast<std::size_t>(c)];
    std::vector<double> component(d);
    for (std::size_t i = 0; i < d; ++i) component[i] = eigenvectors[i][col];
    // Deterministic sign: largest-magnitude coordinate is positive.
    std::size_t arg = 0;
    for (std::size_t i = 1; i < d; ++i) {
      if (std::abs(component[i]) > std::abs(component[arg])) arg = i;
    }
    if (component[arg] < 0) {
      for (auto& x : component) x = -x;
    }
    const double ev = std::max(0.0, eigenvalues[col]);
    if (ev <= 1e-12) result.rank_deficient = true;
    result.explained_variance.push_back(total_var > 0 ? ev / total_var : 0.0);
    result.components.push_back(std::move(component));
  }

  result.points.assign(n, std::vector<double>(static_cast<std::size_t>(dims), 0.0));
  for (std::size_t r = 0; r < n; ++r) {
    for (int c = 0; c < dims; ++c) {
      result.points[r][static_cast<std::size_t>(c)] =
          dot(centered[r], result.components[static_cast<std::size_t>(c)]);
    }
  }
  return result;
}

GeometryReport geometry_report(const EmbeddingSet& set, const std::string& split) {
  set.validate();
  GeometryReport report;
  report.split = split;
  report.gap = modality_gap(set);
  report.alignment = alignment_metric(set);
  report.uniformity_text = uniformity_metric(set.texts);
  report.uniformity_image = uniformity_metric(set.images);

  std::vector<std::vector<double>> pooled;
  for (const auto& r : set.images) {
    pooled.push_back(r.z);
    report.pca_class.push_back(0);
  }
  for (const auto& r : set.texts) {
    pooled.push_back(r.z);
    report.pca_class.push_back(1);
  }
  report.pca = pca_project(pooled, 2);
  return report;
}

}  // namespace slq
