#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace slq {

// Deterministic PRNG (xoshiro256**) with named sub-stream derivation.
// std::random distributions are implementation-defined, so everything that
// must reproduce byte-for-byte draws from this instead.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent stream for a named component, e.g. rng.stream("pretrain").
  // Deriving the same name from the same root always yields the same stream.
  Rng stream(std::string_view name) const;
  // Indexed variant for per-item fan-out (one stream per dataset pair, ...).
  Rng stream(std::string_view name, std::uint64_t index) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double uniform();
  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t range(std::uint64_t n);
  // Standard normal via Box-Muller (no cached spare, keeps state replayable).
  double normal();
  double normal(double mean, double stddev);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(range(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::uint64_t root_seed() const { return root_; }

 private:
  std::uint64_t root_ = 0;
  std::uint64_t s_[4] = {0, 0, 0, 0};
};

// FNV-1a over a string; used for sub-stream derivation and stable ids.
std::uint64_t fnv1a64(std::string_view s);

}  // namespace slq
