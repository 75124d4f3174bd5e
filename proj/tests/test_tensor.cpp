#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstring>
#include <vector>

#include "doctest.h"
#include "gradcheck.hpp"
#include "slq/rng.hpp"
#include "slq/tensor.hpp"

using namespace slq;
using slqtest::max_gradcheck_error;
using slqtest::project_to_scalar;
using slqtest::random_tensor;

TEST_CASE("matmul identity and hand arithmetic") {
  auto eye = Tensor64::from_values({2, 2}, {1, 0, 0, 1});
  auto m = Tensor64::from_values({2, 2}, {3, -1, 2, 5});
  auto prod = matmul(eye, m);
  for (int i = 0; i < 4; ++i) CHECK(prod.at(i) == doctest::Approx(m.at(i)));

  auto a = Tensor64::from_values({2, 2}, {1, 2, 3, 4});
  auto ones = Tensor64::from_values({2, 1}, {1, 1});
  auto c = matmul(a, ones);
  CHECK(c.at(0) == doctest::Approx(3.0));
  CHECK(c.at(1) == doctest::Approx(7.0));
}

TEST_CASE("matmul shape mismatch raises dimension error") {
  auto a = Tensor64::zeros({2, 3});
  auto b = Tensor64::zeros({2, 3});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("matmul gradient of sum(A*B) matches finite differences at 32-bit") {
  Rng rng(7);
  auto a = random_tensor<float>({2, 3}, rng);
  auto b = random_tensor<float>({3, 2}, rng);
  std::vector<Tensor32> params = {a, b};
  const double err = max_gradcheck_error<float>(
      params,
      [&](Tape<float>* tape) { return sum_all(matmul(a, b, tape), tape); },
      1e-2);
  CHECK(err < 1e-4);
}

TEST_CASE("softmax values") {
  auto flat = softmax_lastdim(Tensor64::from_values({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(flat.at(i) == doctest::Approx(1.0 / 3.0));

  auto extreme = softmax_lastdim(Tensor64::from_values({2}, {1000, 0}));
  CHECK(std::abs(extreme.at(0) - 1.0) < 1e-12);
  CHECK(std::abs(extreme.at(1)) < 1e-12);

  auto probs = softmax_lastdim(Tensor64::from_values({3}, {1, 2, 3}));
  CHECK(probs.at(0) == doctest::Approx(0.09003).epsilon(1e-4));
  CHECK(probs.at(1) == doctest::Approx(0.24473).epsilon(1e-4));
  CHECK(probs.at(2) == doctest::Approx(0.66524).epsilon(1e-4));
  double sum = probs.at(0) + probs.at(1) + probs.at(2);
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("softmax rejects non-finite input") {
  auto bad = Tensor64::from_values({2}, {std::nan(""), 0.0});
  CHECK_THROWS_AS(softmax_lastdim(bad), NumericError);
}

TEST_CASE("layer_norm values") {
  auto gain = Tensor64::from_values({2}, {1, 1});
  auto bias = Tensor64::from_values({2}, {0, 0});

  auto constant = layer_norm(Tensor64::from_values({1, 2}, {5, 5}), gain, bias);
  CHECK(std::abs(constant.at(0)) < 1e-6);
  CHECK(std::abs(constant.at(1)) < 1e-6);

  auto pair = layer_norm(Tensor64::from_values({1, 2}, {1, 3}), gain, bias);
  CHECK(pair.at(0) == doctest::Approx(-1.0).epsilon(1e-4));
  CHECK(pair.at(1) == doctest::Approx(1.0).epsilon(1e-4));

  auto short_gain = Tensor64::from_values({3}, {1, 1, 1});
  CHECK_THROWS_AS(
      layer_norm(Tensor64::zeros({1, 2}), short_gain, bias), DimensionError);
}

TEST_CASE("backward identity and sum of squares") {
  auto x = Tensor64::scalar(4.0, true);
  Tape<double> tape;
  tape.backward(x);
  CHECK(x.grad()[0] == doctest::Approx(1.0));

  auto v = Tensor64::from_values({2}, {1, 2}, true);
  Tape<double> tape2;
  auto loss = sum_all(mul(v, v, &tape2), &tape2);
  tape2.backward(loss);
  CHECK(v.grad()[0] == doctest::Approx(2.0));
  CHECK(v.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward rejects non-scalar loss") {
  auto v = Tensor64::from_values({2}, {1, 2}, true);
  Tape<double> tape;
  auto doubled = scale(v, 2.0, &tape);
  CHECK_THROWS_AS(tape.backward(doubled), ContractError);
}

TEST_CASE("frozen leaf is untouched by backward and carries no grad") {
  auto frozen = Tensor64::from_values({2, 2}, {1, 2, 3, 4}, false);
  auto live = Tensor64::from_values({2, 2}, {1, 1, 1, 1}, true);
  std::vector<double> before(frozen.values().begin(), frozen.values().end());

  Tape<double> tape;
  auto loss = sum_all(matmul(frozen, live, &tape), &tape);
  tape.backward(loss);

  CHECK(frozen.grad().empty());
  CHECK(std::memcmp(before.data(), frozen.values().data(),
                    before.size() * sizeof(double)) == 0);
  CHECK(live.grad()[0] != 0.0);
}

TEST_CASE("gradient accumulation is additive and resettable") {
  auto x = Tensor64::from_values({2}, {1.0, 2.0}, true);
  Tape<double> tape;
  auto loss = sum_all(mul(x, x, &tape), &tape);

  tape.backward(loss);
  std::vector<double> fresh(x.grad().begin(), x.grad().end());

  tape.backward(loss);  // second replay accumulates
  CHECK(x.grad()[0] == doctest::Approx(2.0 * fresh[0]));
  CHECK(x.grad()[1] == doctest::Approx(2.0 * fresh[1]));

  x.zero_grad();
  tape.backward(loss);  // zero_grad + backward == fresh backward
  CHECK(x.grad()[0] == doctest::Approx(fresh[0]));
  CHECK(x.grad()[1] == doctest::Approx(fresh[1]));
}

TEST_CASE("forward is bitwise deterministic") {
  Rng rng(99);
  auto a = random_tensor<float>({4, 4}, rng);
  auto b = random_tensor<float>({4, 4}, rng);
  auto c1 = matmul(a, b);
  auto c2 = matmul(a, b);
  CHECK(std::memcmp(c1.values().data(), c2.values().data(),
                    sizeof(float) * 16) == 0);
  auto s1 = softmax_lastdim(c1);
  auto s2 = softmax_lastdim(c2);
  CHECK(std::memcmp(s1.values().data(), s2.values().data(),
                    sizeof(float) * 16) == 0);
}

TEST_CASE("op edge cases") {
  CHECK_THROWS_AS(embedding_lookup(Tensor64::zeros({4, 2}), {4}), InputError);
  CHECK_THROWS_AS(embedding_lookup(Tensor64::zeros({4, 2}), {}), InputError);
  CHECK_THROWS_AS(slice_last_n(Tensor64::zeros({3, 2}), 3), InputError);
  CHECK_THROWS_AS(slice_last_n(Tensor64::zeros({3, 2}), 0), InputError);
  CHECK_THROWS_AS(
      concat_along_sequence(Tensor64::zeros({2, 2}), Tensor64::zeros({2, 3})),
      DimensionError);
  CHECK_THROWS_AS(causal_mask_fill(Tensor64::zeros({2, 3})), DimensionError);
  CHECK_THROWS_AS(Tensor64::zeros({2}).item(), ContractError);
  CHECK_THROWS_AS(
      div_by_scalar(Tensor64::zeros({2}), Tensor64::scalar(0.0)), ContractError);
  CHECK_THROWS_AS(l2_normalize(Tensor64::zeros({3})), DegenerateEmbeddingError);
  CHECK_THROWS_AS(clamp(Tensor64::zeros({2}), 1.0, -1.0), ContractError);
}

TEST_CASE("slice and concat round out") {
  auto m = Tensor64::from_values({3, 2}, {1, 2, 3, 4, 5, 6});
  auto tail = slice_last_n(m, 2);
  CHECK(tail.rows() == 2);
  CHECK(tail.at(0, 0) == doctest::Approx(3.0));
  CHECK(tail.at(1, 1) == doctest::Approx(6.0));

  auto joined = concat_along_sequence(slice_rows(m, 0, 1), tail);
  for (int i = 0; i < 6; ++i) CHECK(joined.at(i) == doctest::Approx(m.at(i)));
}

TEST_CASE("causal mask zeroes upper triangle mass after softmax") {
  Rng rng(3);
  auto scores = random_tensor<double>({5, 5}, rng, -2.0, 2.0, false);
  auto att = softmax_lastdim(causal_mask_fill(scores));
  for (int i = 0; i < 5; ++i) {
    double row = 0;
    for (int j = 0; j < 5; ++j) {
      if (j > i) CHECK(att.at(i, j) == 0.0);
      row += att.at(i, j);
    }
    CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
  }
}

// ---------------------------------------------------------------------------
// Finite-difference property: every differentiable op, 64-bit, h = 1e-3,
// random tensors of <= 64 elements, 100 trials per op, rel. err < 1e-5.
// ---------------------------------------------------------------------------

namespace {

struct OpCase {
  const char* name;
  // Builds params and a loss closure from a per-trial rng seed.
  std::function<double(std::uint64_t)> run;
};

template <typename BuildFn>
std::function<double(std::uint64_t)> fd_case(BuildFn build) {
  return [build](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Tensor64> params;
    auto f = build(rng, params);
    return max_gradcheck_error<double>(params, f, 1e-3);
  };
}

}  // namespace

TEST_CASE("finite differences across all differentiable ops") {
  std::vector<OpCase> cases;

  cases.push_back({"matmul", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto a = random_tensor<double>({3, 4}, rng);
    auto b = random_tensor<double>({4, 3}, rng);
    ps = {a, b};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(matmul(a, b, t), prng, t);
    };
  })});

  cases.push_back({"add", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto a = random_tensor<double>({4, 4}, rng);
    auto b = random_tensor<double>({4, 4}, rng);
    ps = {a, b};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(add(a, b, t), prng, t);
    };
  })});

  cases.push_back({"mul", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto a = random_tensor<double>({4, 4}, rng);
    auto b = random_tensor<double>({4, 4}, rng);
    ps = {a, b};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(mul(a, b, t), prng, t);
    };
  })});

  cases.push_back({"add_rowwise", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto m = random_tensor<double>({4, 5}, rng);
    auto b = random_tensor<double>({5}, rng);
    ps = {m, b};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(add_rowwise(m, b, t), prng, t);
    };
  })});

  cases.push_back({"scale", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto x = random_tensor<double>({3, 5}, rng);
    ps = {x};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(scale(x, 1.7, t), prng, t);
    };
  })});

  cases.push_back({"gelu", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto x = random_tensor<double>({4, 4}, rng, -2.0, 2.0);
    ps = {x};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(gelu(x, t), prng, t);
    };
  })});

  cases.push_back({"exp_elem", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto x = random_tensor<double>({8}, rng, -1.0, 1.0);
    ps = {x};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(exp_elem(x, t), prng, t);
    };
  })});

  cases.push_back({"clamp", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    // Keep samples off the clamp boundaries so the kink is not probed.
    auto x = random_tensor<double>({8}, rng, -3.0, 3.0);
    for (int i = 0; i < x.numel(); ++i) {
      if (std::abs(std::abs(x.at(i)) - 2.0) < 0.05) x.at(i) += 0.1;
    }
    ps = {x};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(clamp(x, -2.0, 2.0, t), prng, t);
    };
  })});

  cases.push_back({"embedding_lookup", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto table = random_tensor<double>({6, 4}, rng);
    std::vector<int> ids;
    for (int i = 0; i < 5; ++i) ids.push_back(static_cast<int>(rng.range(6)));
    ps = {table};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(embedding_lookup(table, ids, t), prng, t);
    };
  })});

  cases.push_back({"concat_along_sequence", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto a = random_tensor<double>({2, 3}, rng);
    auto b = random_tensor<double>({4, 3}, rng);
    ps = {a, b};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(concat_along_sequence(a, b, t), prng, t);
    };
  })});

  cases.push_back({"stack_rows", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto a = random_tensor<double>({5}, rng);
    auto b = random_tensor<double>({5}, rng);
    auto c = random_tensor<double>({5}, rng);
    ps = {a, b, c};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(stack_rows<double>({a, b, c}, t), prng, t);
    };
  })});

  for (int axis : {0, 1}) {
    cases.push_back({axis == 0 ? "mean_over_axis0" : "mean_over_axis1",
                     fd_case([axis](Rng& rng, std::vector<Tensor64>& ps) {
      auto m = random_tensor<double>({4, 5}, rng);
      ps = {m};
      const std::uint64_t pseed = rng.next_u64();
      return [=](Tape<double>* t) mutable {
        Rng prng(pseed);
        return project_to_scalar(mean_over_axis(m, axis, t), prng, t);
      };
    })});
    cases.push_back({axis == 0 ? "max_over_axis0" : "max_over_axis1",
                     fd_case([axis](Rng& rng, std::vector<Tensor64>& ps) {
      auto m = random_tensor<double>({4, 5}, rng);
      ps = {m};
      const std::uint64_t pseed = rng.next_u64();
      return [=](Tape<double>* t) mutable {
        Rng prng(pseed);
        return project_to_scalar(max_over_axis(m, axis, t), prng, t);
      };
    })});
  }

  cases.push_back({"slice_rows", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto m = random_tensor<double>({6, 3}, rng);
    ps = {m};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(slice_rows(m, 1, 3, t), prng, t);
    };
  })});

  cases.push_back({"slice_last_n", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto m = random_tensor<double>({6, 3}, rng);
    ps = {m};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(slice_last_n(m, 2, t), prng, t);
    };
  })});

  cases.push_back({"slice_cols", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto m = random_tensor<double>({3, 6}, rng);
    ps = {m};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(slice_cols(m, 2, 3, t), prng, t);
    };
  })});

  cases.push_back({"concat_cols", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto a = random_tensor<double>({3, 2}, rng);
    auto b = random_tensor<double>({3, 4}, rng);
    ps = {a, b};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(concat_cols<double>({a, b}, t), prng, t);
    };
  })});

  cases.push_back({"transpose", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto m = random_tensor<double>({3, 5}, rng);
    ps = {m};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(transpose(m, t), prng, t);
    };
  })});

  cases.push_back({"causal_mask_fill+softmax", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto m = random_tensor<double>({4, 4}, rng, -2.0, 2.0);
    ps = {m};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(softmax_lastdim(causal_mask_fill(m, t), t), prng, t);
    };
  })});

  cases.push_back({"softmax_lastdim", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto m = random_tensor<double>({4, 6}, rng, -2.0, 2.0);
    ps = {m};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(softmax_lastdim(m, t), prng, t);
    };
  })});

  cases.push_back({"layer_norm", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto x = random_tensor<double>({3, 6}, rng, -2.0, 2.0);
    auto gain = random_tensor<double>({6}, rng, 0.5, 1.5);
    auto bias = random_tensor<double>({6}, rng, -0.5, 0.5);
    ps = {x, gain, bias};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(layer_norm(x, gain, bias, 1e-5, t), prng, t);
    };
  })});

  cases.push_back({"sum_all", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto x = random_tensor<double>({4, 4}, rng);
    ps = {x};
    return [=](Tape<double>* t) mutable { return sum_all(x, t); };
  })});

  cases.push_back({"mean_all", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto x = random_tensor<double>({4, 4}, rng);
    ps = {x};
    return [=](Tape<double>* t) mutable { return mean_all(x, t); };
  })});

  cases.push_back({"div_by_scalar", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto x = random_tensor<double>({3, 4}, rng);
    auto tau = Tensor64::scalar(0.5 + rng.uniform(), true);
    ps = {x, tau};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(div_by_scalar(x, tau, t), prng, t);
    };
  })});

  cases.push_back({"l2_normalize", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto x = random_tensor<double>({6}, rng, 0.2, 1.2);
    ps = {x};
    const std::uint64_t pseed = rng.next_u64();
    return [=](Tape<double>* t) mutable {
      Rng prng(pseed);
      return project_to_scalar(l2_normalize(x, t), prng, t);
    };
  })});

  cases.push_back({"cross_entropy_with_targets", fd_case([](Rng& rng, std::vector<Tensor64>& ps) {
    auto logits = random_tensor<double>({4, 6}, rng, -2.0, 2.0);
    std::vector<int> targets;
    for (int i = 0; i < 4; ++i) targets.push_back(static_cast<int>(rng.range(6)));
    ps = {logits};
    return [=](Tape<double>* t) mutable {
      return cross_entropy_with_targets(logits, targets, t);
    };
  })});

  for (const auto& c : cases) {
    CAPTURE(c.name);
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
      worst = std::max(worst, c.run(trial * 7919 + 13));
    }
    INFO(c.name << " worst rel err " << worst);
    CHECK(worst < 1e-5);
  }
}
