#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "slq/rng.hpp"
#include "slq/tensor.hpp"

namespace slqtest {

// Central finite differences against the tape's analytic gradients.
//
// f is evaluated once with a tape (analytic pass) and then 2x per parameter
// entry with tape == nullptr (numeric passes); it must be a pure function of
// the parameter values. Error is |analytic - numeric| scaled by
// max(1, |analytic|, |numeric|).
template <typename S, typename F>
double max_gradcheck_error(std::vector<slq::Tensor<S>>& params, F f,
                           double h = 1e-3) {
  slq::Tape<S> tape;
  for (auto& p : params) p.zero_grad();
  slq::Tensor<S> loss = f(&tape);
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& p = params[pi];
    for (int i = 0; i < p.numel(); ++i) {
      const S orig = p.at(i);
      p.at(i) = orig + S(h);
      const double fp = static_cast<double>(f(nullptr).item());
      p.at(i) = orig - S(h);
      const double fm = static_cast<double>(f(nullptr).item());
      p.at(i) = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double ana = analytic[pi][static_cast<std::size_t>(i)];
      const double err = std::abs(ana - numeric) /
                         std::max({1.0, std::abs(ana), std::abs(numeric)});
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

// Projects a non-scalar op output to a scalar with fixed random coefficients
// so sign-cancelling gradient bugs stay visible. Uses only taped ops.
template <typename S>
slq::Tensor<S> project_to_scalar(const slq::Tensor<S>& out, slq::Rng& rng,
                                 slq::Tape<S>* tape) {
  slq::Tensor<S> m = out;
  if (m.rank() == 0) return m;
  if (m.rank() == 1) m = slq::stack_rows<S>({m}, tape);
  const int r = m.rows(), c = m.cols();
  std::vector<S> u(static_cast<std::size_t>(r)), v(static_cast<std::size_t>(c));
  for (auto& x : u) x = S(rng.uniform() * 2.0 - 1.0);
  for (auto& x : v) x = S(rng.uniform() * 2.0 - 1.0);
  auto urow = slq::Tensor<S>::from_values({1, r}, u);
  auto vcol = slq::Tensor<S>::from_values({c, 1}, v);
  auto t = slq::matmul(urow, m, tape);
  auto s = slq::matmul(t, vcol, tape);
  return slq::sum_all(s, tape);
}

template <typename S>
slq::Tensor<S> random_tensor(slq::Shape shape, slq::Rng& rng, double lo = -1.0,
                             double hi = 1.0, bool requires_grad = true) {
  std::vector<S> vals(static_cast<std::size_t>(slq::shape_numel(shape)));
  for (auto& v : vals) v = S(lo + (hi - lo) * rng.uniform());
  return slq::Tensor<S>::from_values(std::move(shape), std::move(vals),
                                     requires_grad);
}

}  // namespace slqtest
