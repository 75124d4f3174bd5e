#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "slq/backbone.hpp"
#include "slq/loss.hpp"
#include "slq/optimizer.hpp"
#include "slq/readout.hpp"
#include "slq/synthdata.hpp"

namespace slq {

struct AdaptStepReport {
  int step = 0;
  double loss = 0;
  double tau = 0;
  double lr = 0;
  double grad_norm = 0;
};

// Contrastive adaptation: updates exactly the readout's trainable tensors
// plus the raw temperature against a frozen backbone. Batches walk the
// training pairs in epoch-shuffled order.
template <typename S>
class AdaptTrainer {
 public:
  AdaptTrainer(const Backbone<S>& backbone, Readout<S>& readout,
               Temperature<S>& temperature, const TrainerConfig& config,
               std::vector<const DataPair*> train_pairs)
      : backbone_(backbone),
        readout_(readout),
        temperature_(temperature),
        cfg_(config),
        pairs_(std::move(train_pairs)),
        optimizer_(make_param_list(readout, temperature)),
        rng_(Rng(config.seed).stream("adapt")) {
    cfg_.validate();
    if (!backbone_.frozen()) {
      throw StateError("adapt trainer requires a frozen backbone");
    }
    if (cfg_.batch_size < 2) {
      throw InputError("adapt trainer requires batch size >= 2");
    }
    if (pairs_.size() < 2) {
      throw InputError("adapt trainer needs at least 2 training pairs");
    }
    order_.resize(pairs_.size());
    std::iota(order_.begin(), order_.end(), 0);
  }

  // Trainable scalar census: readout parameters + raw temperature.
  int trainable_scalar_count() const {
    return readout_.trainable_scalars() + 1;
  }

  AdaptStepReport step() {
    Tape<S> tape;
    std::vector<Tensor<S>> image_embs, text_embs;
    image_embs.reserve(static_cast<std::size_t>(cfg_.batch_size));
    text_embs.reserve(static_cast<std::size_t>(cfg_.batch_size));
    for (int i = 0; i < cfg_.batch_size; ++i) {
      const DataPair& pair = next_pair();
      TokenSequence<S> img = backbone_.embed_image(pair.image, &tape);
      TokenSequence<S> txt = text_content(backbone_, pair.caption.tokens,
                                          readout_.prompt_prefix, &tape);
      image_embs.push_back(encode_embedding(backbone_, readout_, img, &tape));
      text_embs.push_back(encode_embedding(backbone_, readout_, txt, &tape));
    }
    Tensor<S> z_images = stack_rows(image_embs, &tape);
    Tensor<S> z_texts = stack_rows(text_embs, &tape);
    Tensor<S> sim = similarity_matrix(z_images, z_texts, &tape);
    Tensor<S> tau = temperature_.tau(&tape);
    Tensor<S> loss = symmetric_loss(sim, tau, &tape);

    optimizer_.zero_grad();
    tape.backward(loss);
    const double lr = scheduled_lr(cfg_, step_);
    const double gnorm = optimizer_.step(lr, cfg_);

    AdaptStepReport report{step_, static_cast<double>(loss.item()),
                           temperature_.value(), lr, gnorm};
    ++step_;
    return report;
  }

  int steps_taken() const { return step_; }

 private:
  static std::vector<Tensor<S>> make_param_list(const Readout<S>& readout,
                                                Temperature<S>& temperature) {
    std::vector<Tensor<S>> params = readout.trainable();
    params.push_back(temperature.raw());
    return params;
  }

  const DataPair& next_pair() {
    if (cursor_ == 0) rng_.shuffle(order_);
    const DataPair& pair = *pairs_[order_[cursor_]];
    cursor_ = (cursor_ + 1) % order_.size();
    return pair;
  }

  const Backbone<S>& backbone_;
  Readout<S>& readout_;
  Temperature<S>& temperature_;
  TrainerConfig cfg_;
  std::vector<const DataPair*> pairs_;
  AdamW<S> optimizer_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  int step_ = 0;
};

}  // namespace slq
