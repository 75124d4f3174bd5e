#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "slq/errors.hpp"

namespace slq {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& shape);

// Dense row-major tensor handle with value semantics over shared storage.
// Rank 0 (scalar), 1 (vector) and 2 (matrix) cover everything the backbone
// needs; there is no broadcasting and no views, slices copy.
//
// S is float (training default) or double (gradient-check mode).
template <typename S>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, S value, bool requires_grad = false);
  static Tensor from_values(Shape shape, std::vector<S> values,
                            bool requires_grad = false);
  static Tensor scalar(S value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  int dim(int i) const { return node_->shape[static_cast<std::size_t>(i)]; }
  int numel() const { return static_cast<int>(node_->values.size()); }
  // Matrix accessors; DimensionError on other ranks.
  int rows() const;
  int cols() const;

  std::span<S> values() { return node_->values; }
  std::span<const S> values() const { return node_->values; }
  std::span<S> grad();
  std::span<const S> grad() const;

  S& at(int i) { return node_->values[static_cast<std::size_t>(i)]; }
  S at(int i) const { return node_->values[static_cast<std::size_t>(i)]; }
  S& at(int r, int c);
  S at(int r, int c) const;
  // Scalar fetch; ContractError unless numel() == 1.
  S item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  // Enables/disables gradient tracking. Enabling allocates a zeroed
  // accumulator of identical shape; disabling drops it.
  void set_requires_grad(bool on);
  void zero_grad();

  // True when both handles refer to the same underlying storage — the
  // sharing contract for the shared query bank.
  bool same_storage(const Tensor& other) const {
    return node_ == other.node_ && node_ != nullptr;
  }

  // Deep copy with fresh storage (grad not copied).
  Tensor clone() const;

  bool all_finite() const;

 private:
  struct Node {
    Shape shape;
    std::vector<S> values;
    std::vector<S> grad;  // same size as values iff requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;

  static Tensor wrap(std::shared_ptr<Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }
};

using Tensor32 = Tensor<float>;
using Tensor64 = Tensor<double>;

// Reverse-mode tape. Ops append a backward closure together with their
// output; backward() re-seeds the loss and replays the closures in exact
// reverse recording order. Leaf gradients accumulate additively across
// backward calls; op-output gradients are transient and reset per call.
template <typename S>
class Tape {
 public:
  void record(Tensor<S> output, std::function<void()> backward_fn);
  // Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable
  // from the tape. ContractError if loss is not scalar.
  void backward(Tensor<S>& loss);
  std::size_t size() const { return entries_.size(); }
  void clear() { entries_.clear(); }

 private:
  struct Entry {
    Tensor<S> output;
    std::function<void()> backward_fn;
  };
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Operations. Passing a tape records the backward rule; tape == nullptr runs
// pure inference with no gradient tracking.
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);

// Elementwise (Hadamard) product.
template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape = nullptr);

// m[R x C] + bias[C] applied to every row.
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& m, const Tensor<S>& bias,
                      Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor, Tape<S>* tape = nullptr);

// tanh-approximation GELU.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x, Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> exp_elem(const Tensor<S>& x, Tape<S>* tape = nullptr);

// Clamp with pass-through gradient where the value was left unchanged.
template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi, Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids,
                           Tape<S>* tape = nullptr);

// Row-wise concatenation [a; b].
template <typename S>
Tensor<S> concat_along_sequence(const Tensor<S>& a, const Tensor<S>& b,
                                Tape<S>* tape = nullptr);

// Stacks N vectors of identical length into an N x D matrix.
template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows, Tape<S>* tape = nullptr);

// axis 0: mean over rows -> length-C vector; axis 1: mean over cols -> length-R.
template <typename S>
Tensor<S> mean_over_axis(const Tensor<S>& m, int axis, Tape<S>* tape = nullptr);

// Coordinatewise max; ties route the gradient to the first maximal index.
template <typename S>
Tensor<S> max_over_axis(const Tensor<S>& m, int axis, Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& m, int start, int count,
                     Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> slice_last_n(const Tensor<S>& m, int n, Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& m, int start, int count,
                     Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts,
                      Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> transpose(const Tensor<S>& m, Tape<S>* tape = nullptr);

// Replaces entries above the diagonal (j > i) with a large negative value so
// the following softmax assigns them exactly zero mass. Square input.
template <typename S>
Tensor<S> causal_mask_fill(const Tensor<S>& scores, Tape<S>* tape = nullptr);

// Row softmax with max subtraction. NumericError on non-finite input.
template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x, Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps = S(1e-5),
                     Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x, Tape<S>* tape = nullptr);

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x, Tape<S>* tape = nullptr);

// x / t where t is a positive scalar tensor (gradient flows to both).
template <typename S>
Tensor<S> div_by_scalar(const Tensor<S>& x, const Tensor<S>& t,
                        Tape<S>* tape = nullptr);

// Vector -> vector of unit L2 norm. DegenerateEmbeddingError when the input
// norm is (numerically) zero.
template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& x, Tape<S>* tape = nullptr);

// Mean over rows of logsumexp(row) - row[target]; the cross-entropy both the
// pretraining head and the contrastive losses reduce to.
template <typename S>
Tensor<S> cross_entropy_with_targets(const Tensor<S>& logits,
                                     const std::vector<int>& targets,
                                     Tape<S>* tape = nullptr);

// Off-tape helpers.
template <typename S>
S l2_norm(const Tensor<S>& x);

template <typename S>
S grad_l2_norm(const std::vector<Tensor<S>>& params);


// ---------------------------------------------------------------------------
// Implementation
// ---------------------------------------------------------------------------
#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>



namespace detail {

// Additive bias large enough that exp() underflows to exactly zero after
// max subtraction, yet finite so no inf-inf NaNs can appear.
constexpr double kMaskValue = -1e30;

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace detail

inline int shape_numel(const Shape& shape) {
  int n = 1;
  for (int d : shape) {
    if (d < 0) {
      throw DimensionError("negative dimension in shape " + detail::shape_str(shape));
    }
    n *= d;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Tensor
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> Tensor<S>::zeros(Shape shape, bool requires_grad) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values.assign(static_cast<std::size_t>(shape_numel(node->shape)), S(0));
  Tensor t = wrap(std::move(node));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

template <typename S>
Tensor<S> Tensor<S>::full(Shape shape, S value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  std::fill(t.node_->values.begin(), t.node_->values.end(), value);
  return t;
}

template <typename S>
Tensor<S> Tensor<S>::from_values(Shape shape, std::vector<S> values,
                                 bool requires_grad) {
  if (static_cast<std::size_t>(shape_numel(shape)) != values.size()) {
    throw DimensionError("from_values: " + std::to_string(values.size()) +
                         " values for shape " + detail::shape_str(shape));
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->values = std::move(values);
  Tensor t = wrap(std::move(node));
  if (requires_grad) t.set_requires_grad(true);
  return t;
}

template <typename S>
Tensor<S> Tensor<S>::scalar(S value, bool requires_grad) {
  return from_values({}, {value}, requires_grad);
}

template <typename S>
int Tensor<S>::rows() const {
  if (rank() != 2) throw DimensionError("rows(): tensor is not a matrix");
  return node_->shape[0];
}

template <typename S>
int Tensor<S>::cols() const {
  if (rank() != 2) throw DimensionError("cols(): tensor is not a matrix");
  return node_->shape[1];
}

template <typename S>
std::span<S> Tensor<S>::grad() {
  return node_->grad;
}

template <typename S>
std::span<const S> Tensor<S>::grad() const {
  return node_->grad;
}

template <typename S>
S& Tensor<S>::at(int r, int c) {
  return node_->values[static_cast<std::size_t>(r) * cols() + c];
}

template <typename S>
S Tensor<S>::at(int r, int c) const {
  return node_->values[static_cast<std::size_t>(r) * cols() + c];
}

template <typename S>
S Tensor<S>::item() const {
  if (!node_ || node_->values.size() != 1) {
    throw ContractError("item(): tensor is not scalar");
  }
  return node_->values[0];
}

template <typename S>
void Tensor<S>::set_requires_grad(bool on) {
  node_->requires_grad = on;
  if (on) {
    node_->grad.assign(node_->values.size(), S(0));
  } else {
    node_->grad.clear();
    node_->grad.shrink_to_fit();
  }
}

template <typename S>
void Tensor<S>::zero_grad() {
  std::fill(node_->grad.begin(), node_->grad.end(), S(0));
}

template <typename S>
Tensor<S> Tensor<S>::clone() const {
  return from_values(node_->shape, node_->values, false);
}

template <typename S>
bool Tensor<S>::all_finite() const {
  for (S v : node_->values) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

template <typename S>
void Tape<S>::record(Tensor<S> output, std::function<void()> backward_fn) {
  entries_.push_back({std::move(output), std::move(backward_fn)});
}

template <typename S>
void Tape<S>::backward(Tensor<S>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar");
  }
  // Op outputs hold transient gradients: reset them so a replayed tape
  // starts clean while leaf accumulators keep their running sums.
  for (auto& e : entries_) {
    if (e.output.requires_grad()) e.output.zero_grad();
  }
  if (!loss.requires_grad()) return;  // nothing trainable upstream
  loss.grad()[0] += S(1);
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    it->backward_fn();
  }
}

// ---------------------------------------------------------------------------
// Op helpers
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void track(Tape<S>* tape, Tensor<S>& out, bool any_input_grad,
           std::function<void()> fn) {
  if (tape && any_input_grad) {
    out.set_requires_grad(true);
    tape->record(out, std::move(fn));
  }
}

template <typename S>
void require_matrix(const Tensor<S>& t, const char* op) {
  if (!t.defined() || t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  detail::require_matrix(a, "matmul");
  detail::require_matrix(b, "matmul");
  const int m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dims " + std::to_string(k) + " vs " +
                         std::to_string(b.rows()));
  }
  Tensor<S> out = Tensor<S>::zeros({m, n});
  {
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* pc = out.values().data();
    for (int i = 0; i < m; ++i) {
      for (int p = 0; p < k; ++p) {
        const S aip = pa[static_cast<std::size_t>(i) * k + p];
        const S* brow = pb + static_cast<std::size_t>(p) * n;
        S* crow = pc + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += aip * brow[j];
      }
    }
  }
  detail::track<S>(tape, out, a.requires_grad() || b.requires_grad(),
           [a = a, b = b, out = out, m = m, k = k, n = n]() mutable {
             const S* g = out.grad().data();
             if (a.requires_grad()) {
               // dA[i,p] = dot(dC row i, B row p)
               S* ga = a.grad().data();
               const S* pb = b.values().data();
               for (int i = 0; i < m; ++i) {
                 const S* grow = g + static_cast<std::size_t>(i) * n;
                 S* garow = ga + static_cast<std::size_t>(i) * k;
                 for (int p = 0; p < k; ++p) {
                   const S* brow = pb + static_cast<std::size_t>(p) * n;
                   S acc = S(0);
                   for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                   garow[p] += acc;
                 }
               }
             }
             if (b.requires_grad()) {
               // dB = A^T * dC
               S* gb = b.grad().data();
               const S* pa = a.values().data();
               for (int i = 0; i < m; ++i) {
                 const S* arow = pa + static_cast<std::size_t>(i) * k;
                 const S* grow = g + static_cast<std::size_t>(i) * n;
                 for (int p = 0; p < k; ++p) {
                   const S aip = arow[p];
                   S* gbrow = gb + static_cast<std::size_t>(p) * n;
                   for (int j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
                 }
               }
             }
           });
  return out;
}

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
  }
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.at(i) = a.at(i) + b.at(i);
  detail::track<S>(tape, out, a.requires_grad() || b.requires_grad(),
           [a = a, b = b, out = out, n = n]() mutable {
             const auto g = out.grad();
             if (a.requires_grad()) {
               auto ga = a.grad();
               for (int i = 0; i < n; ++i) ga[i] += g[i];
             }
             if (b.requires_grad()) {
               auto gb = b.grad();
               for (int i = 0; i < n; ++i) gb[i] += g[i];
             }
           });
  return out;
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b, Tape<S>* tape) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + detail::shape_str(a.shape()) + " vs " +
                         detail::shape_str(b.shape()));
  }
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const int n = a.numel();
  for (int i = 0; i < n; ++i) out.at(i) = a.at(i) * b.at(i);
  detail::track<S>(tape, out, a.requires_grad() || b.requires_grad(),
           [a = a, b = b, out = out, n = n]() mutable {
             const auto g = out.grad();
             if (a.requires_grad()) {
               auto ga = a.grad();
               for (int i = 0; i < n; ++i) ga[i] += g[i] * b.at(i);
             }
             if (b.requires_grad()) {
               auto gb = b.grad();
               for (int i = 0; i < n; ++i) gb[i] += g[i] * a.at(i);
             }
           });
  return out;
}

template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& m, const Tensor<S>& bias, Tape<S>* tape) {
  detail::require_matrix(m, "add_rowwise");
  if (bias.rank() != 1 || bias.dim(0) != m.cols()) {
    throw DimensionError("add_rowwise: bias length must equal column count");
  }
  const int r = m.rows(), c = m.cols();
  Tensor<S> out = Tensor<S>::zeros({r, c});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) out.at(i, j) = m.at(i, j) + bias.at(j);
  }
  detail::track<S>(tape, out, m.requires_grad() || bias.requires_grad(),
           [m = m, bias = bias, out = out, r = r, c = c]() mutable {
             const auto g = out.grad();
             if (m.requires_grad()) {
               auto gm = m.grad();
               for (int i = 0; i < r * c; ++i) gm[i] += g[i];
             }
             if (bias.requires_grad()) {
               auto gb = bias.grad();
               for (int i = 0; i < r; ++i) {
                 for (int j = 0; j < c; ++j) gb[j] += g[static_cast<std::size_t>(i) * c + j];
               }
             }
           });
  return out;
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor, Tape<S>* tape) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const int n = x.numel();
  for (int i = 0; i < n; ++i) out.at(i) = x.at(i) * factor;
  detail::track<S>(tape, out, x.requires_grad(), [x = x, out = out, factor = factor, n = n]() mutable {
    const auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < n; ++i) gx[i] += factor * g[i];
  });
  return out;
}

template <typename S>
Tensor<S> gelu(const Tensor<S>& x, Tape<S>* tape) {
  const S c = S(std::sqrt(2.0 / M_PI));
  const S a = S(0.044715);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const int n = x.numel();
  for (int i = 0; i < n; ++i) {
    const S v = x.at(i);
    const S u = c * (v + a * v * v * v);
    out.at(i) = S(0.5) * v * (S(1) + std::tanh(u));
  }
  detail::track<S>(tape, out, x.requires_grad(), [x = x, out = out, c = c, a = a, n = n]() mutable {
    const auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < n; ++i) {
      const S v = x.at(i);
      const S u = c * (v + a * v * v * v);
      const S th = std::tanh(u);
      const S sech2 = S(1) - th * th;
      const S du = c * (S(1) + S(3) * a * v * v);
      gx[i] += g[i] * (S(0.5) * (S(1) + th) + S(0.5) * v * sech2 * du);
    }
  });
  return out;
}

template <typename S>
Tensor<S> exp_elem(const Tensor<S>& x, Tape<S>* tape) {
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const int n = x.numel();
  for (int i = 0; i < n; ++i) out.at(i) = std::exp(x.at(i));
  detail::track<S>(tape, out, x.requires_grad(), [x = x, out = out, n = n]() mutable {
    const auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < n; ++i) gx[i] += g[i] * out.at(i);
  });
  return out;
}

template <typename S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi, Tape<S>* tape) {
  if (lo > hi) throw ContractError("clamp: lo > hi");
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const int n = x.numel();
  for (int i = 0; i < n; ++i) out.at(i) = std::min(hi, std::max(lo, x.at(i)));
  detail::track<S>(tape, out, x.requires_grad(), [x = x, out = out, lo = lo, hi = hi, n = n]() mutable {
    const auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < n; ++i) {
      const S v = x.at(i);
      if (v >= lo && v <= hi) gx[i] += g[i];
    }
  });
  return out;
}

template <typename S>
Tensor<S> embedding_lookup(const Tensor<S>& table, const std::vector<int>& ids,
                           Tape<S>* tape) {
  detail::require_matrix(table, "embedding_lookup");
  if (ids.empty()) throw InputError("embedding_lookup: empty id list");
  const int v = table.rows(), d = table.cols();
  for (int id : ids) {
    if (id < 0 || id >= v) {
      throw InputError("embedding_lookup: id " + std::to_string(id) +
                       " out of vocabulary (" + std::to_string(v) + ")");
    }
  }
  const int l = static_cast<int>(ids.size());
  Tensor<S> out = Tensor<S>::zeros({l, d});
  for (int i = 0; i < l; ++i) {
    for (int j = 0; j < d; ++j) out.at(i, j) = table.at(ids[i], j);
  }
  detail::track<S>(tape, out, table.requires_grad(), [table = table, out = out, ids = ids, l = l, d = d]() mutable {
    const auto g = out.grad();
    auto gt = table.grad();
    for (int i = 0; i < l; ++i) {
      for (int j = 0; j < d; ++j) {
        gt[static_cast<std::size_t>(ids[i]) * d + j] +=
            g[static_cast<std::size_t>(i) * d + j];
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> concat_along_sequence(const Tensor<S>& a, const Tensor<S>& b,
                                Tape<S>* tape) {
  detail::require_matrix(a, "concat_along_sequence");
  detail::require_matrix(b, "concat_along_sequence");
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_along_sequence: column mismatch");
  }
  const int ra = a.rows(), rb = b.rows(), c = a.cols();
  Tensor<S> out = Tensor<S>::zeros({ra + rb, c});
  for (int i = 0; i < ra; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = a.at(i, j);
  for (int i = 0; i < rb; ++i)
    for (int j = 0; j < c; ++j) out.at(ra + i, j) = b.at(i, j);
  detail::track<S>(tape, out, a.requires_grad() || b.requires_grad(),
           [a = a, b = b, out = out, ra = ra, rb = rb, c = c]() mutable {
             const auto g = out.grad();
             if (a.requires_grad()) {
               auto ga = a.grad();
               for (int i = 0; i < ra * c; ++i) ga[i] += g[i];
             }
             if (b.requires_grad()) {
               auto gb = b.grad();
               for (int i = 0; i < rb * c; ++i) {
                 gb[i] += g[static_cast<std::size_t>(ra) * c + i];
               }
             }
           });
  return out;
}

template <typename S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& rows, Tape<S>* tape) {
  if (rows.empty()) throw InputError("stack_rows: no rows");
  const int d = rows[0].numel();
  bool any_grad = false;
  for (const auto& r : rows) {
    if (r.rank() != 1 || r.numel() != d) {
      throw DimensionError("stack_rows: rows must be equal-length vectors");
    }
    any_grad = any_grad || r.requires_grad();
  }
  const int n = static_cast<int>(rows.size());
  Tensor<S> out = Tensor<S>::zeros({n, d});
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) out.at(i, j) = rows[i].at(j);
  detail::track<S>(tape, out, any_grad, [rows = rows, out = out, n = n, d = d]() mutable {
    const auto g = out.grad();
    for (int i = 0; i < n; ++i) {
      if (!rows[i].requires_grad()) continue;
      auto gr = rows[i].grad();
      for (int j = 0; j < d; ++j) gr[j] += g[static_cast<std::size_t>(i) * d + j];
    }
  });
  return out;
}

template <typename S>
Tensor<S> mean_over_axis(const Tensor<S>& m, int axis, Tape<S>* tape) {
  detail::require_matrix(m, "mean_over_axis");
  if (axis != 0 && axis != 1) throw DimensionError("mean_over_axis: axis must be 0 or 1");
  const int r = m.rows(), c = m.cols();
  const int out_len = axis == 0 ? c : r;
  const int reduced = axis == 0 ? r : c;
  Tensor<S> out = Tensor<S>::zeros({out_len});
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) {
      out.at(axis == 0 ? j : i) += m.at(i, j);
    }
  }
  for (int i = 0; i < out_len; ++i) out.at(i) /= S(reduced);
  detail::track<S>(tape, out, m.requires_grad(), [m = m, out = out, r = r, c = c, axis = axis, reduced = reduced]() mutable {
    const auto g = out.grad();
    auto gm = m.grad();
    const S inv = S(1) / S(reduced);
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        gm[static_cast<std::size_t>(i) * c + j] += g[axis == 0 ? j : i] * inv;
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> max_over_axis(const Tensor<S>& m, int axis, Tape<S>* tape) {
  detail::require_matrix(m, "max_over_axis");
  if (axis != 0 && axis != 1) throw DimensionError("max_over_axis: axis must be 0 or 1");
  const int r = m.rows(), c = m.cols();
  const int out_len = axis == 0 ? c : r;
  Tensor<S> out = Tensor<S>::zeros({out_len});
  std::vector<int> argmax(static_cast<std::size_t>(out_len), 0);
  for (int o = 0; o < out_len; ++o) {
    const int span = axis == 0 ? r : c;
    S best = axis == 0 ? m.at(0, o) : m.at(o, 0);
    int best_i = 0;
    for (int i = 1; i < span; ++i) {
      const S v = axis == 0 ? m.at(i, o) : m.at(o, i);
      if (v > best) {
        best = v;
        best_i = i;
      }
    }
    out.at(o) = best;
    argmax[static_cast<std::size_t>(o)] = best_i;
  }
  detail::track<S>(tape, out, m.requires_grad(),
           [m = m, out = out, argmax = argmax, out_len = out_len, c = c, axis = axis]() mutable {
             const auto g = out.grad();
             auto gm = m.grad();
             for (int o = 0; o < out_len; ++o) {
               const int i = argmax[static_cast<std::size_t>(o)];
               const std::size_t idx =
                   axis == 0 ? static_cast<std::size_t>(i) * c + o
                             : static_cast<std::size_t>(o) * c + i;
               gm[idx] += g[o];
             }
           });
  return out;
}

template <typename S>
Tensor<S> slice_rows(const Tensor<S>& m, int start, int count, Tape<S>* tape) {
  detail::require_matrix(m, "slice_rows");
  if (start < 0 || count < 1 || start + count > m.rows()) {
    throw InputError("slice_rows: range [" + std::to_string(start) + "," +
                     std::to_string(start + count) + ") outside " +
                     std::to_string(m.rows()) + " rows");
  }
  const int c = m.cols();
  Tensor<S> out = Tensor<S>::zeros({count, c});
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < c; ++j) out.at(i, j) = m.at(start + i, j);
  detail::track<S>(tape, out, m.requires_grad(), [m = m, out = out, start = start, count = count, c = c]() mutable {
    const auto g = out.grad();
    auto gm = m.grad();
    for (int i = 0; i < count; ++i) {
      for (int j = 0; j < c; ++j) {
        gm[static_cast<std::size_t>(start + i) * c + j] +=
            g[static_cast<std::size_t>(i) * c + j];
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> slice_last_n(const Tensor<S>& m, int n, Tape<S>* tape) {
  detail::require_matrix(m, "slice_last_n");
  if (n < 1 || n >= m.rows()) {
    throw InputError("slice_last_n: n=" + std::to_string(n) + " with " +
                     std::to_string(m.rows()) + " rows");
  }
  return slice_rows(m, m.rows() - n, n, tape);
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& m, int start, int count, Tape<S>* tape) {
  detail::require_matrix(m, "slice_cols");
  if (start < 0 || count < 1 || start + count > m.cols()) {
    throw InputError("slice_cols: bad column range");
  }
  const int r = m.rows(), c = m.cols();
  Tensor<S> out = Tensor<S>::zeros({r, count});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < count; ++j) out.at(i, j) = m.at(i, start + j);
  detail::track<S>(tape, out, m.requires_grad(), [m = m, out = out, start = start, count = count, r = r, c = c]() mutable {
    const auto g = out.grad();
    auto gm = m.grad();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < count; ++j) {
        gm[static_cast<std::size_t>(i) * c + start + j] +=
            g[static_cast<std::size_t>(i) * count + j];
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts, Tape<S>* tape) {
  if (parts.empty()) throw InputError("concat_cols: no parts");
  const int r = parts[0].rows();
  int total = 0;
  bool any_grad = false;
  for (const auto& p : parts) {
    detail::require_matrix(p, "concat_cols");
    if (p.rows() != r) throw DimensionError("concat_cols: row mismatch");
    total += p.cols();
    any_grad = any_grad || p.requires_grad();
  }
  Tensor<S> out = Tensor<S>::zeros({r, total});
  int off = 0;
  for (const auto& p : parts) {
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < p.cols(); ++j) out.at(i, off + j) = p.at(i, j);
    off += p.cols();
  }
  detail::track<S>(tape, out, any_grad, [parts = parts, out = out, r = r, total = total]() mutable {
    const auto g = out.grad();
    int off = 0;
    for (auto& p : parts) {
      const int pc = p.cols();
      if (p.requires_grad()) {
        auto gp = p.grad();
        for (int i = 0; i < r; ++i) {
          for (int j = 0; j < pc; ++j) {
            gp[static_cast<std::size_t>(i) * pc + j] +=
                g[static_cast<std::size_t>(i) * total + off + j];
          }
        }
      }
      off += pc;
    }
  });
  return out;
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& m, Tape<S>* tape) {
  detail::require_matrix(m, "transpose");
  const int r = m.rows(), c = m.cols();
  Tensor<S> out = Tensor<S>::zeros({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) out.at(j, i) = m.at(i, j);
  detail::track<S>(tape, out, m.requires_grad(), [m = m, out = out, r = r, c = c]() mutable {
    const auto g = out.grad();
    auto gm = m.grad();
    for (int i = 0; i < r; ++i) {
      for (int j = 0; j < c; ++j) {
        gm[static_cast<std::size_t>(i) * c + j] += g[static_cast<std::size_t>(j) * r + i];
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> causal_mask_fill(const Tensor<S>& scores, Tape<S>* tape) {
  detail::require_matrix(scores, "causal_mask_fill");
  if (scores.rows() != scores.cols()) {
    throw DimensionError("causal_mask_fill: matrix must be square");
  }
  const int l = scores.rows();
  Tensor<S> out = Tensor<S>::zeros({l, l});
  for (int i = 0; i < l; ++i) {
    for (int j = 0; j < l; ++j) {
      out.at(i, j) = j > i ? S(detail::kMaskValue) : scores.at(i, j);
    }
  }
  detail::track<S>(tape, out, scores.requires_grad(), [scores = scores, out = out, l = l]() mutable {
    const auto g = out.grad();
    auto gs = scores.grad();
    for (int i = 0; i < l; ++i) {
      for (int j = 0; j <= i; ++j) {
        gs[static_cast<std::size_t>(i) * l + j] += g[static_cast<std::size_t>(i) * l + j];
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> softmax_lastdim(const Tensor<S>& x, Tape<S>* tape) {
  if (!x.defined() || x.rank() < 1 || x.dim(x.rank() - 1) < 1) {
    throw DimensionError("softmax_lastdim: empty last dimension");
  }
  const int c = x.dim(x.rank() - 1);
  const int r = x.numel() / c;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  if (!x.all_finite()) throw NumericError("softmax_lastdim: non-finite input");
  for (int i = 0; i < r; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * c;
    S mx = x.at(static_cast<int>(base));
    for (int j = 1; j < c; ++j) mx = std::max(mx, x.at(static_cast<int>(base) + j));
    S sum = S(0);
    for (int j = 0; j < c; ++j) {
      const S e = std::exp(x.at(static_cast<int>(base) + j) - mx);
      out.at(static_cast<int>(base) + j) = e;
      sum += e;
    }
    if (!(sum > S(0)) || !std::isfinite(static_cast<double>(sum))) {
      throw NumericError("softmax_lastdim: degenerate row");
    }
    for (int j = 0; j < c; ++j) out.at(static_cast<int>(base) + j) /= sum;
  }
  detail::track<S>(tape, out, x.requires_grad(), [x = x, out = out, r = r, c = c]() mutable {
    const auto g = out.grad();
    auto gx = x.grad();
    for (int i = 0; i < r; ++i) {
      const std::size_t base = static_cast<std::size_t>(i) * c;
      S dot = S(0);
      for (int j = 0; j < c; ++j) dot += g[base + j] * out.at(static_cast<int>(base) + j);
      for (int j = 0; j < c; ++j) {
        gx[base + j] += (g[base + j] - dot) * out.at(static_cast<int>(base) + j);
      }
    }
  });
  return out;
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain,
                     const Tensor<S>& bias, S eps, Tape<S>* tape) {
  detail::require_matrix(x, "layer_norm");
  const int r = x.rows(), c = x.cols();
  if (gain.rank() != 1 || gain.dim(0) != c || bias.rank() != 1 || bias.dim(0) != c) {
    throw DimensionError("layer_norm: gain/bias must match last dim");
  }
  Tensor<S> out = Tensor<S>::zeros({r, c});
  std::vector<S> xhat(static_cast<std::size_t>(r) * c);
  std::vector<S> inv_std(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    S mean = S(0);
    for (int j = 0; j < c; ++j) mean += x.at(i, j);
    mean /= S(c);
    S var = S(0);
    for (int j = 0; j < c; ++j) {
      const S d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= S(c);
    const S is = S(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (int j = 0; j < c; ++j) {
      const S xh = (x.at(i, j) - mean) * is;
      xhat[static_cast<std::size_t>(i) * c + j] = xh;
      out.at(i, j) = gain.at(j) * xh + bias.at(j);
    }
  }
  detail::track<S>(tape, out,
           x.requires_grad() || gain.requires_grad() || bias.requires_grad(),
           [x = x, gain = gain, bias = bias, out = out, xhat = std::move(xhat), inv_std = std::move(inv_std), r = r, c = c]() mutable {
             const auto g = out.grad();
             if (gain.requires_grad()) {
               auto gg = gain.grad();
               for (int i = 0; i < r; ++i)
                 for (int j = 0; j < c; ++j)
                   gg[j] += g[static_cast<std::size_t>(i) * c + j] *
                            xhat[static_cast<std::size_t>(i) * c + j];
             }
             if (bias.requires_grad()) {
               auto gb = bias.grad();
               for (int i = 0; i < r; ++i)
                 for (int j = 0; j < c; ++j) gb[j] += g[static_cast<std::size_t>(i) * c + j];
             }
             if (x.requires_grad()) {
               auto gx = x.grad();
               for (int i = 0; i < r; ++i) {
                 const std::size_t base = static_cast<std::size_t>(i) * c;
                 S sum_gh = S(0), sum_ghx = S(0);
                 for (int j = 0; j < c; ++j) {
                   const S gh = g[base + j] * gain.at(j);
                   sum_gh += gh;
                   sum_ghx += gh * xhat[base + j];
                 }
                 const S inv_c = S(1) / S(c);
                 for (int j = 0; j < c; ++j) {
                   const S gh = g[base + j] * gain.at(j);
                   gx[base + j] += inv_std[static_cast<std::size_t>(i)] *
                                   (gh - sum_gh * inv_c - xhat[base + j] * sum_ghx * inv_c);
                 }
               }
             }
           });
  return out;
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x, Tape<S>* tape) {
  S total = S(0);
  const int n = x.numel();
  for (int i = 0; i < n; ++i) total += x.at(i);
  Tensor<S> out = Tensor<S>::scalar(total);
  detail::track<S>(tape, out, x.requires_grad(), [x = x, out = out, n = n]() mutable {
    const S g = out.grad()[0];
    auto gx = x.grad();
    for (int i = 0; i < n; ++i) gx[i] += g;
  });
  return out;
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x, Tape<S>* tape) {
  const int n = x.numel();
  if (n == 0) throw DimensionError("mean_all: empty tensor");
  S total = S(0);
  for (int i = 0; i < n; ++i) total += x.at(i);
  Tensor<S> out = Tensor<S>::scalar(total / S(n));
  detail::track<S>(tape, out, x.requires_grad(), [x = x, out = out, n = n]() mutable {
    const S g = out.grad()[0] / S(n);
    auto gx = x.grad();
    for (int i = 0; i < n; ++i) gx[i] += g;
  });
  return out;
}

template <typename S>
Tensor<S> div_by_scalar(const Tensor<S>& x, const Tensor<S>& t, Tape<S>* tape) {
  if (t.numel() != 1) throw ContractError("div_by_scalar: divisor must be scalar");
  const S tv = t.at(0);
  if (!(tv > S(0))) throw ContractError("div_by_scalar: divisor must be positive");
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const int n = x.numel();
  for (int i = 0; i < n; ++i) out.at(i) = x.at(i) / tv;
  detail::track<S>(tape, out, x.requires_grad() || t.requires_grad(),
           [x = x, t = t, out = out, tv = tv, n = n]() mutable {
             const auto g = out.grad();
             if (x.requires_grad()) {
               auto gx = x.grad();
               for (int i = 0; i < n; ++i) gx[i] += g[i] / tv;
             }
             if (t.requires_grad()) {
               S acc = S(0);
               for (int i = 0; i < n; ++i) acc += g[i] * out.at(i);
               t.grad()[0] += -acc / tv;
             }
           });
  return out;
}

template <typename S>
Tensor<S> l2_normalize(const Tensor<S>& x, Tape<S>* tape) {
  if (x.rank() != 1) throw DimensionError("l2_normalize: expected a vector");
  const int n = x.numel();
  S norm_sq = S(0);
  for (int i = 0; i < n; ++i) norm_sq += x.at(i) * x.at(i);
  const S norm = std::sqrt(norm_sq);
  if (!(norm > S(1e-20))) {
    throw DegenerateEmbeddingError("l2_normalize: zero vector");
  }
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  for (int i = 0; i < n; ++i) out.at(i) = x.at(i) / norm;
  detail::track<S>(tape, out, x.requires_grad(), [x = x, out = out, norm = norm, n = n]() mutable {
    const auto g = out.grad();
    auto gx = x.grad();
    S dot = S(0);
    for (int i = 0; i < n; ++i) dot += g[i] * out.at(i);
    for (int i = 0; i < n; ++i) gx[i] += (g[i] - out.at(i) * dot) / norm;
  });
  return out;
}

template <typename S>
Tensor<S> cross_entropy_with_targets(const Tensor<S>& logits,
                                     const std::vector<int>& targets,
                                     Tape<S>* tape) {
  detail::require_matrix(logits, "cross_entropy_with_targets");
  const int r = logits.rows(), c = logits.cols();
  if (static_cast<int>(targets.size()) != r) {
    throw DimensionError("cross_entropy_with_targets: one target per row");
  }
  for (int t : targets) {
    if (t < 0 || t >= c) throw InputError("cross_entropy_with_targets: target out of range");
  }
  if (!logits.all_finite()) {
    throw NumericError("cross_entropy_with_targets: non-finite logits");
  }
  // Cache the row softmax for the backward rule.
  std::vector<S> probs(static_cast<std::size_t>(r) * c);
  S loss = S(0);
  for (int i = 0; i < r; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * c;
    S mx = logits.at(i, 0);
    for (int j = 1; j < c; ++j) mx = std::max(mx, logits.at(i, j));
    S sum = S(0);
    for (int j = 0; j < c; ++j) {
      const S e = std::exp(logits.at(i, j) - mx);
      probs[base + j] = e;
      sum += e;
    }
    for (int j = 0; j < c; ++j) probs[base + j] /= sum;
    loss += std::log(sum) + mx - logits.at(i, targets[static_cast<std::size_t>(i)]);
  }
  Tensor<S> out = Tensor<S>::scalar(loss / S(r));
  detail::track<S>(tape, out, logits.requires_grad(),
           [logits = logits, out = out, probs = std::move(probs), targets = targets, r = r, c = c]() mutable {
             const S g = out.grad()[0] / S(r);
             auto gl = logits.grad();
             for (int i = 0; i < r; ++i) {
               const std::size_t base = static_cast<std::size_t>(i) * c;
               for (int j = 0; j < c; ++j) {
                 S p = probs[base + j];
                 if (j == targets[static_cast<std::size_t>(i)]) p -= S(1);
                 gl[base + j] += g * p;
               }
             }
           });
  return out;
}

template <typename S>
S l2_norm(const Tensor<S>& x) {
  S acc = S(0);
  for (S v : x.values()) acc += v * v;
  return std::sqrt(acc);
}

template <typename S>
S grad_l2_norm(const std::vector<Tensor<S>>& params) {
  S acc = S(0);
  for (const auto& p : params) {
    for (S v : p.grad()) acc += v * v;
  }
  return std::sqrt(acc);
}

}  // namespace slq
