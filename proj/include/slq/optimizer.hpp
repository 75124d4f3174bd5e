#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "slq/errors.hpp"
#include "slq/tensor.hpp"

namespace slq {

struct TrainerConfig {
  double learning_rate = 5e-4;
  double warmup_ratio = 0.03;
  std::string schedule = "cosine";  // "cosine" or "constant"
  int total_steps = 500;
  int batch_size = 16;
  std::uint64_t seed = 1234;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;  // global-norm clip, 0 disables

  void validate() const {
    if (!(learning_rate > 0)) throw InputError("trainer: learning_rate must be > 0");
    if (warmup_ratio < 0 || warmup_ratio >= 1) {
      throw InputError("trainer: warmup_ratio must be in [0, 1)");
    }
    if (total_steps < 0) throw InputError("trainer: total_steps must be >= 0");
    if (batch_size < 1) throw InputError("trainer: batch_size must be >= 1");
    if (schedule != "cosine" && schedule != "constant") {
      throw InputError("trainer: unknown schedule '" + schedule + "'");
    }
  }
};

// Linear warmup to the peak rate at ceil(warmup_ratio * total_steps), then
// cosine decay to zero at total_steps (or flat for "constant").
inline double scheduled_lr(const TrainerConfig& cfg, int step) {
  const int warmup = static_cast<int>(std::ceil(cfg.warmup_ratio * cfg.total_steps));
  if (warmup > 0 && step < warmup) {
    return cfg.learning_rate * static_cast<double>(step) / warmup;
  }
  if (cfg.schedule == "constant") return cfg.learning_rate;
  const int span = std::max(1, cfg.total_steps - warmup);
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup) / span);
  return cfg.learning_rate * 0.5 * (1.0 + std::cos(M_PI * progress));
}

// AdamW with decoupled weight decay over an explicit trainable-leaf list.
// Reads accumulated gradients, then the caller clears them.
template <typename S>
class AdamW {
 public:
  explicit AdamW(std::vector<Tensor<S>> params) : params_(std::move(params)) {
    for (const auto& p : params_) {
      if (!p.requires_grad()) {
        throw ContractError("AdamW: all managed params must require grad");
      }
      slots_.push_back({std::vector<S>(p.values().size(), S(0)),
                        std::vector<S>(p.values().size(), S(0))});
    }
  }

  const std::vector<Tensor<S>>& params() const { return params_; }

  // One update with the given learning rate; applies optional global-norm
  // clipping first. Returns the pre-clip gradient norm.
  double step(double lr, const TrainerConfig& cfg) {
    ++t_;
    const double gnorm = static_cast<double>(grad_l2_norm(params_));
    double clip_scale = 1.0;
    if (cfg.grad_clip > 0 && gnorm > cfg.grad_clip) {
      clip_scale = cfg.grad_clip / gnorm;
    }
    const double bc1 = 1.0 - std::pow(cfg.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto vals = params_[i].values();
      auto grads = params_[i].grad();
      auto& slot = slots_[i];
      for (std::size_t j = 0; j < vals.size(); ++j) {
        const double g = static_cast<double>(grads[j]) * clip_scale;
        slot.m[j] = S(cfg.beta1 * slot.m[j] + (1.0 - cfg.beta1) * g);
        slot.v[j] = S(cfg.beta2 * slot.v[j] + (1.0 - cfg.beta2) * g * g);
        const double mhat = slot.m[j] / bc1;
        const double vhat = slot.v[j] / bc2;
        double update = mhat / (std::sqrt(vhat) + cfg.adam_eps);
        update += cfg.weight_decay * static_cast<double>(vals[j]);
        vals[j] = S(vals[j] - lr * update);
      }
    }
    return gnorm;
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int steps_taken() const { return t_; }

 private:
  struct Slot {
    std::vector<S> m, v;
  };
  std::vector<Tensor<S>> params_;
  std::vector<Slot> slots_;
  int t_ = 0;
};

}  // namespace slq
