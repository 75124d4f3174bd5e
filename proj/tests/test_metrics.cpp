#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "slq/metrics.hpp"
#include "slq/rng.hpp"

using namespace slq;

namespace {

std::vector<double> unit_vector(std::vector<double> v) {
  double norm = 0;
  for (double x : v) norm += x * x;
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<double> random_unit(Rng& rng, int d) {
  std::vector<double> v(static_cast<std::size_t>(d));
  for (auto& x : v) x = rng.normal();
  return unit_vector(std::move(v));
}

EmbeddingRecord rec(std::uint64_t id, Modality m, std::vector<double> z) {
  return {id, m, std::move(z)};
}

// Random orthogonal matrix via Gram-Schmidt on a random square matrix.
std::vector<std::vector<double>> random_rotation(Rng& rng, int d) {
  std::vector<std::vector<double>> q;
  for (int i = 0; i < d; ++i) {
    std::vector<double> v(static_cast<std::size_t>(d));
    for (auto& x : v) x = rng.normal();
    for (const auto& prev : q) {
      double dot = 0;
      for (int j = 0; j < d; ++j) dot += v[static_cast<std::size_t>(j)] * prev[static_cast<std::size_t>(j)];
      for (int j = 0; j < d; ++j) v[static_cast<std::size_t>(j)] -= dot * prev[static_cast<std::size_t>(j)];
    }
    q.push_back(unit_vector(std::move(v)));
  }
  return q;
}

std::vector<double> rotate(const std::vector<std::vector<double>>& q,
                           const std::vector<double>& v) {
  std::vector<double> out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    for (std::size_t j = 0; j < v.size(); ++j) out[i] += q[i][j] * v[j];
  }
  return out;
}

}  // namespace

TEST_CASE("recall: self retrieval and exact-match cases") {
  Rng rng(1);
  std::vector<EmbeddingRecord> set;
  for (int i = 0; i < 6; ++i) {
    set.push_back(rec(static_cast<std::uint64_t>(i), Modality::kImage, random_unit(rng, 8)));
  }
  CHECK(recall_at_k(set, set, 1) == doctest::Approx(1.0));

  // Orthogonal decoys with one exact match per query.
  std::vector<EmbeddingRecord> queries, gallery;
  for (int i = 0; i < 4; ++i) {
    std::vector<double> e(4, 0.0);
    e[static_cast<std::size_t>(i)] = 1.0;
    queries.push_back(rec(static_cast<std::uint64_t>(i), Modality::kText, e));
    gallery.push_back(rec(static_cast<std::uint64_t>(i), Modality::kImage, e));
  }
  CHECK(recall_at_k(queries, gallery, 1) == doctest::Approx(1.0));

  CHECK_THROWS_AS(recall_at_k(queries, {}, 1), InputError);
  auto orphan = queries;
  orphan[0].id = 999;
  CHECK_THROWS_AS(recall_at_k(orphan, gallery, 1), InputError);
}

TEST_CASE("recall matches a brute-force ranking oracle on a random 16x16 case") {
  Rng rng(42);
  std::vector<EmbeddingRecord> queries, gallery;
  for (int i = 0; i < 16; ++i) {
    queries.push_back(rec(static_cast<std::uint64_t>(i), Modality::kText, random_unit(rng, 12)));
    gallery.push_back(rec(static_cast<std::uint64_t>(i), Modality::kImage, random_unit(rng, 12)));
  }
  for (int k : {1, 3, 5, 10, 16}) {
    // Independent oracle: full sort with stable tie-break, count hits.
    int hits = 0;
    for (const auto& q : queries) {
      std::vector<std::pair<double, int>> scored;
      for (int g = 0; g < 16; ++g) {
        double dot = 0;
        for (int j = 0; j < 12; ++j) dot += q.z[static_cast<std::size_t>(j)] * gallery[static_cast<std::size_t>(g)].z[static_cast<std::size_t>(j)];
        scored.push_back({dot, g});
      }
      std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.first > b.first;
      });
      for (int r = 0; r < k; ++r) {
        if (gallery[static_cast<std::size_t>(scored[static_cast<std::size_t>(r)].second)].id == q.id) {
          ++hits;
          break;
        }
      }
    }
    CHECK(recall_at_k(queries, gallery, k) == doctest::Approx(hits / 16.0));
  }
  // Non-decreasing in k.
  double prev = 0;
  for (int k = 1; k <= 16; ++k) {
    const double r = recall_at_k(queries, gallery, k);
    CHECK(r >= prev);
    prev = r;
  }
}

TEST_CASE("recall is invariant under strictly increasing similarity transforms") {
  // The ranking logic only uses similarity order, so recomputing the oracle
  // with transformed scores must give identical recalls.
  Rng rng(7);
  std::vector<EmbeddingRecord> queries, gallery;
  for (int i = 0; i < 10; ++i) {
    queries.push_back(rec(static_cast<std::uint64_t>(i), Modality::kText, random_unit(rng, 6)));
    gallery.push_back(rec(static_cast<std::uint64_t>(i), Modality::kImage, random_unit(rng, 6)));
  }
  auto oracle = [&](int k, auto transform) {
    int hits = 0;
    for (const auto& q : queries) {
      std::vector<std::pair<double, int>> scored;
      for (int g = 0; g < 10; ++g) {
        double dot = 0;
        for (int j = 0; j < 6; ++j) dot += q.z[static_cast<std::size_t>(j)] * gallery[static_cast<std::size_t>(g)].z[static_cast<std::size_t>(j)];
        scored.push_back({transform(dot), g});
      }
      std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        return a.first > b.first;
      });
      for (int r = 0; r < k; ++r) {
        if (gallery[static_cast<std::size_t>(scored[static_cast<std::size_t>(r)].second)].id == q.id) {
          ++hits;
          break;
        }
      }
    }
    return hits / 10.0;
  };
  for (int k : {1, 3, 7}) {
    const double base = recall_at_k(queries, gallery, k);
    CHECK(oracle(k, [](double s) { return s; }) == doctest::Approx(base));
    CHECK(oracle(k, [](double s) { return std::exp(s); }) == doctest::Approx(base));
    CHECK(oracle(k, [](double s) { return 3.0 * s + 11.0; }) == doctest::Approx(base));
  }
}

TEST_CASE("modality gap fixtures") {
  EmbeddingSet same;
  Rng rng(5);
  for (int i = 0; i < 4; ++i) {
    auto z = random_unit(rng, 5);
    same.images.push_back(rec(static_cast<std::uint64_t>(i), Modality::kImage, z));
    same.texts.push_back(rec(static_cast<std::uint64_t>(i), Modality::kText, z));
  }
  CHECK(modality_gap(same) == doctest::Approx(0.0).epsilon(1e-12));

  EmbeddingSet axes;
  axes.images.push_back(rec(0, Modality::kImage, {1, 0, 0}));
  axes.texts.push_back(rec(0, Modality::kText, {0, 1, 0}));
  CHECK(modality_gap(axes) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-9));

  EmbeddingSet empty;
  empty.images.push_back(rec(0, Modality::kImage, {1, 0, 0}));
  CHECK_THROWS_AS(modality_gap(empty), InputError);
}

TEST_CASE("alignment fixtures and monotonicity") {
  EmbeddingSet perfect;
  Rng rng(9);
  for (int i = 0; i < 3; ++i) {
    auto z = random_unit(rng, 4);
    perfect.images.push_back(rec(static_cast<std::uint64_t>(i), Modality::kImage, z));
    perfect.texts.push_back(rec(static_cast<std::uint64_t>(i), Modality::kText, z));
  }
  CHECK(alignment_metric(perfect) == doctest::Approx(0.0).epsilon(1e-12));

  EmbeddingSet antipodal;
  antipodal.images.push_back(rec(0, Modality::kImage, {1, 0}));
  antipodal.texts.push_back(rec(0, Modality::kText, {-1, 0}));
  CHECK(alignment_metric(antipodal, 2.0) == doctest::Approx(4.0).epsilon(1e-12));

  // Replacing one pair with a closer pair never increases the mean.
  EmbeddingSet far = antipodal;
  far.images.push_back(rec(1, Modality::kImage, {0, 1}));
  far.texts.push_back(rec(1, Modality::kText, {0, -1}));
  EmbeddingSet closer = antipodal;
  closer.images.push_back(rec(1, Modality::kImage, {0, 1}));
  closer.texts.push_back(rec(1, Modality::kText, {0, 1}));
  CHECK(alignment_metric(closer) <= alignment_metric(far));
}

TEST_CASE("uniformity fixtures") {
  std::vector<std::vector<double>> antipodal = {{1, 0}, {-1, 0}};
  CHECK(uniformity_metric(antipodal, 2.0) == doctest::Approx(-8.0).epsilon(1e-9));

  std::vector<std::vector<double>> collapsed = {{1, 0}, {1, 0}};
  CHECK(uniformity_metric(collapsed, 2.0) == doctest::Approx(0.0).epsilon(1e-12));

  // Spreading eight points on the circle beats a collapsed clump.
  std::vector<std::vector<double>> spread, clump;
  for (int i = 0; i < 8; ++i) {
    const double angle = 2.0 * M_PI * i / 8.0;
    spread.push_back({std::cos(angle), std::sin(angle)});
    clump.push_back({1.0, 0.0});
  }
  CHECK(uniformity_metric(spread) < uniformity_metric(clump));

  CHECK_THROWS_AS(uniformity_metric(std::vector<std::vector<double>>{{1.0, 0.0}}),
                  InputError);
}

TEST_CASE("geometry quantities are invariant under a common rotation") {
  Rng rng(11);
  EmbeddingSet set;
  for (int i = 0; i < 12; ++i) {
    set.images.push_back(rec(static_cast<std::uint64_t>(i), Modality::kImage, random_unit(rng, 6)));
    set.texts.push_back(rec(static_cast<std::uint64_t>(i), Modality::kText, random_unit(rng, 6)));
  }
  const auto q = random_rotation(rng, 6);
  EmbeddingSet rotated;
  for (const auto& r : set.images) {
    rotated.images.push_back(rec(r.id, r.modality, rotate(q, r.z)));
  }
  for (const auto& r : set.texts) {
    rotated.texts.push_back(rec(r.id, r.modality, rotate(q, r.z)));
  }
  CHECK(modality_gap(rotated) == doctest::Approx(modality_gap(set)).epsilon(1e-9));
  CHECK(alignment_metric(rotated) == doctest::Approx(alignment_metric(set)).epsilon(1e-9));
  CHECK(uniformity_metric(rotated.texts) ==
        doctest::Approx(uniformity_metric(set.texts)).epsilon(1e-9));
  CHECK(uniformity_metric(rotated.images) ==
        doctest::Approx(uniformity_metric(set.images)).epsilon(1e-9));
  CHECK(recall_at_k(rotated.images, rotated.texts, 1) ==
        doctest::Approx(recall_at_k(set.images, set.texts, 1)));
}

TEST_CASE("pca: rank-1 data, subspace isometry and eigensolver oracle") {
  Rng rng(13);
  // Points on a line in 5-D.
  std::vector<std::vector<double>> line;
  auto direction = random_unit(rng, 5);
  for (int i = 0; i < 10; ++i) {
    const double t = rng.uniform() * 4.0 - 2.0;
    std::vector<double> p(5);
    for (int j = 0; j < 5; ++j) p[static_cast<std::size_t>(j)] = t * direction[static_cast<std::size_t>(j)];
    line.push_back(std::move(p));
  }
  auto on_line = pca_project(line, 2);
  CHECK(on_line.explained_variance[0] >= 1.0 - 1e-6);
  CHECK(on_line.rank_deficient);

  // Data in a planted 2-D subspace: projection preserves pairwise distances.
  std::vector<std::vector<double>> planar;
  auto u = random_unit(rng, 6);
  // Orthogonalize a second direction against u.
  auto w = random_unit(rng, 6);
  double uw = 0;
  for (int j = 0; j < 6; ++j) uw += u[static_cast<std::size_t>(j)] * w[static_cast<std::size_t>(j)];
  for (int j = 0; j < 6; ++j) w[static_cast<std::size_t>(j)] -= uw * u[static_cast<std::size_t>(j)];
  w = unit_vector(std::move(w));
  std::vector<std::pair<double, double>> coords;
  for (int i = 0; i < 12; ++i) {
    const double a = rng.uniform() * 2 - 1, b = rng.uniform() * 2 - 1;
    coords.push_back({a, b});
    std::vector<double> p(6);
    for (int j = 0; j < 6; ++j) {
      p[static_cast<std::size_t>(j)] = a * u[static_cast<std::size_t>(j)] + b * w[static_cast<std::size_t>(j)];
    }
    planar.push_back(std::move(p));
  }
  auto flat = pca_project(planar, 2);
  for (std::size_t i = 0; i < planar.size(); ++i) {
    for (std::size_t j = i + 1; j < planar.size(); ++j) {
      const double orig = std::hypot(coords[i].first - coords[j].first,
                                     coords[i].second - coords[j].second);
      const double proj = std::hypot(flat.points[i][0] - flat.points[j][0],
                                     flat.points[i][1] - flat.points[j][1]);
      CHECK(proj == doctest::Approx(orig).epsilon(1e-5));
    }
  }

  // Independent oracle: power iteration with deflation on the covariance of
  // a random 10x4 matrix.
  std::vector<std::vector<double>> data;
  for (int i = 0; i < 10; ++i) {
    std::vector<double> p(4);
    for (auto& x : p) x = rng.uniform() * 2 - 1;
    data.push_back(std::move(p));
  }
  auto result = pca_project(data, 2);

  std::vector<double> mean(4, 0);
  for (const auto& p : data) {
    for (int j = 0; j < 4; ++j) mean[static_cast<std::size_t>(j)] += p[static_cast<std::size_t>(j)] / 10.0;
  }
  std::vector<std::vector<double>> cov(4, std::vector<double>(4, 0));
  for (const auto& p : data) {
    for (int a = 0; a < 4; ++a) {
      for (int b = 0; b < 4; ++b) {
        cov[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] +=
            (p[static_cast<std::size_t>(a)] - mean[static_cast<std::size_t>(a)]) *
            (p[static_cast<std::size_t>(b)] - mean[static_cast<std::size_t>(b)]) / 10.0;
      }
    }
  }
  auto power_top = [&](std::vector<std::vector<double>> m) {
    std::vector<double> v = random_unit(rng, 4);
    for (int it = 0; it < 4000; ++it) {
      std::vector<double> next(4, 0);
      for (int a = 0; a < 4; ++a) {
        for (int b = 0; b < 4; ++b) next[static_cast<std::size_t>(a)] += m[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] * v[static_cast<std::size_t>(b)];
      }
      v = unit_vector(std::move(next));
    }
    double lambda = 0;
    for (int a = 0; a < 4; ++a) {
      double row = 0;
      for (int b = 0; b < 4; ++b) row += m[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] * v[static_cast<std::size_t>(b)];
      lambda += v[static_cast<std::size_t>(a)] * row;
    }
    return std::make_pair(v, lambda);
  };
  auto [v1, l1] = power_top(cov);
  auto deflated = cov;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) deflated[static_cast<std::size_t>(a)][static_cast<std::size_t>(b)] -= l1 * v1[static_cast<std::size_t>(a)] * v1[static_cast<std::size_t>(b)];
  }
  auto [v2, l2] = power_top(deflated);

  auto check_component = [&](const std::vector<double>& expected,
                             const std::vector<double>& got) {
    double dot = 0;
    for (int j = 0; j < 4; ++j) dot += expected[static_cast<std::size_t>(j)] * got[static_cast<std::size_t>(j)];
    const double sign = dot >= 0 ? 1.0 : -1.0;
    for (int j = 0; j < 4; ++j) {
      CHECK(got[static_cast<std::size_t>(j)] ==
            doctest::Approx(sign * expected[static_cast<std::size_t>(j)]).epsilon(1e-6));
    }
  };
  check_component(v1, result.components[0]);
  check_component(v2, result.components[1]);
  const double total = l1 + l2 +
                       (cov[0][0] + cov[1][1] + cov[2][2] + cov[3][3] - l1 - l2);
  CHECK(result.explained_variance[0] == doctest::Approx(l1 / total).epsilon(1e-6));

  // Components orthonormal.
  double norm1 = 0, norm2 = 0, cross = 0;
  for (int j = 0; j < 4; ++j) {
    norm1 += result.components[0][static_cast<std::size_t>(j)] * result.components[0][static_cast<std::size_t>(j)];
    norm2 += result.components[1][static_cast<std::size_t>(j)] * result.components[1][static_cast<std::size_t>(j)];
    cross += result.components[0][static_cast<std::size_t>(j)] * result.components[1][static_cast<std::size_t>(j)];
  }
  CHECK(norm1 == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(norm2 == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(cross) < 1e-6);

  CHECK_THROWS_AS(pca_project({{1.0, 2.0}, {2.0, 1.0}}, 2), InputError);
}

TEST_CASE("embedding set validation") {
  EmbeddingSet bad_norm;
  bad_norm.images.push_back(rec(0, Modality::kImage, {1, 1}));
  bad_norm.texts.push_back(rec(0, Modality::kText, {1, 0}));
  CHECK_THROWS_AS(bad_norm.validate(), ContractError);

  EmbeddingSet bad_ids;
  bad_ids.images.push_back(rec(0, Modality::kImage, {1, 0}));
  bad_ids.texts.push_back(rec(1, Modality::kText, {1, 0}));
  CHECK_THROWS_AS(bad_ids.validate(), ContractError);
}
