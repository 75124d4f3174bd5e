#pragma once

#include <cmath>
#include <vector>

#include "slq/tensor.hpp"

namespace slq {

constexpr double kTauMin = 1e-3;
constexpr double kTauMax = 1.0;
constexpr double kTauInit = 0.07;

// Trainable temperature stored on log scale; tau = clamp(exp(raw), bounds)
// stays positive under any optimizer trajectory.
template <typename S>
class Temperature {
 public:
  explicit Temperature(double initial_tau = kTauInit)
      : raw_(Tensor<S>::scalar(S(std::log(initial_tau)), true)) {}

  Tensor<S>& raw() { return raw_; }
  const Tensor<S>& raw() const { return raw_; }

  Tensor<S> tau(Tape<S>* tape = nullptr) const {
    return clamp(exp_elem(raw_, tape), S(kTauMin), S(kTauMax), tape);
  }

  double value() const {
    return std::min(kTauMax, std::max(kTauMin, std::exp(static_cast<double>(raw_.item()))));
  }

 private:
  Tensor<S> raw_;
};

// Cosine-similarity matrix of unit rows: S[i][j] = <z_I_i, z_T_j>.
// ContractError when any row norm deviates from 1 by more than 1e-4.
template <typename S>
Tensor<S> similarity_matrix(const Tensor<S>& z_images, const Tensor<S>& z_texts,
                            Tape<S>* tape = nullptr) {
  if (z_images.rank() != 2 || z_texts.rank() != 2 ||
      z_images.cols() != z_texts.cols()) {
    throw DimensionError("similarity_matrix: row sets must share width");
  }
  auto check_unit = [](const Tensor<S>& m, const char* side) {
    for (int i = 0; i < m.rows(); ++i) {
      double norm_sq = 0;
      for (int j = 0; j < m.cols(); ++j) {
        norm_sq += static_cast<double>(m.at(i, j)) * m.at(i, j);
      }
      if (std::abs(std::sqrt(norm_sq) - 1.0) > 1e-4) {
        throw ContractError(std::string("similarity_matrix: non-unit ") + side +
                            " row " + std::to_string(i));
      }
    }
  };
  check_unit(z_images, "image");
  check_unit(z_texts, "text");
  return matmul(z_images, transpose(z_texts, tape), tape);
}

// Image-to-text InfoNCE: mean over rows of cross-entropy against the
// diagonal with temperature-scaled logits.
template <typename S>
Tensor<S> info_nce_i2t(const Tensor<S>& sim, const Tensor<S>& tau,
                       Tape<S>* tape = nullptr) {
  if (sim.rank() != 2 || sim.rows() != sim.cols()) {
    throw DimensionError("info_nce: similarity matrix must be square");
  }
  if (!sim.all_finite()) throw NumericError("info_nce: non-finite similarities");
  std::vector<int> diagonal(static_cast<std::size_t>(sim.rows()));
  for (int i = 0; i < sim.rows(); ++i) diagonal[static_cast<std::size_t>(i)] = i;
  return cross_entropy_with_targets(div_by_scalar(sim, tau, tape), diagonal, tape);
}

template <typename S>
Tensor<S> info_nce_t2i(const Tensor<S>& sim, const Tensor<S>& tau,
                       Tape<S>* tape = nullptr) {
  return info_nce_i2t(transpose(sim, tape), tau, tape);
}

template <typename S>
Tensor<S> symmetric_loss(const Tensor<S>& sim, const Tensor<S>& tau,
                         Tape<S>* tape = nullptr) {
  Tensor<S> both = add(info_nce_i2t(sim, tau, tape), info_nce_t2i(sim, tau, tape), tape);
  return scale(both, S(0.5), tape);
}

// Plain-scalar conveniences for evaluation and closed-form checks.
template <typename S>
S info_nce_i2t(const Tensor<S>& sim, double tau) {
  auto t = Tensor<S>::scalar(S(tau));
  return info_nce_i2t(sim, t).item();
}

template <typename S>
S info_nce_t2i(const Tensor<S>& sim, double tau) {
  auto t = Tensor<S>::scalar(S(tau));
  return info_nce_t2i(sim, t).item();
}

template <typename S>
S symmetric_loss(const Tensor<S>& sim, double tau) {
  auto t = Tensor<S>::scalar(S(tau));
  return symmetric_loss(sim, t).item();
}

}  // namespace slq
