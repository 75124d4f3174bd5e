#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "slq/checkpoint.hpp"
#include "slq/optimizer.hpp"
#include "slq/rng.hpp"
#include "slq/synthdata.hpp"
#include "slq/tensor.hpp"

namespace slq {

// Query slots reserved on top of the longest content sequence.
constexpr int kQuerySlotReserve = 32;

struct BackboneConfig {
  int d_model = 64;
  int n_layers = 4;
  int n_heads = 4;
  int vocab_size = 256;
  int max_seq_len = 96;
  int patch_grid = 4;
  int ffn_mult = 4;

  void validate() const {
    if (d_model < 1 || n_layers < 1 || n_heads < 1 || vocab_size < 1 ||
        max_seq_len < 1 || patch_grid < 1 || ffn_mult < 1) {
      throw InputError("backbone config: all dimensions must be positive");
    }
    if (d_model % n_heads != 0) {
      throw InputError("backbone config: d_model must be divisible by n_heads");
    }
    if (max_seq_len < patch_grid * patch_grid + kQuerySlotReserve) {
      throw InputError(
          "backbone config: max_seq_len too small to reserve query slots");
    }
  }
};

enum class Modality { kText, kImage };

template <typename S>
struct TokenSequence {
  Modality modality = Modality::kText;
  Tensor<S> embeddings;  // L x D, positional encoding not yet added
  int length() const { return embeddings.rows(); }
};

// Pretraining sequences are interleavings of image and token segments; any
// token segment after the first position can be a prediction target.
struct PretrainSegment {
  const SynthImage* image = nullptr;  // image segment when set
  std::vector<int> tokens;            // token segment otherwise
  bool predict = false;               // tokens double as next-token targets

  static PretrainSegment image_seg(const SynthImage& img) {
    PretrainSegment s;
    s.image = &img;
    return s;
  }
  static PretrainSegment token_seg(std::vector<int> toks, bool predict) {
    PretrainSegment s;
    s.tokens = std::move(toks);
    s.predict = predict;
    return s;
  }
};

using PretrainSequence = std::vector<PretrainSegment>;

// Convenience for the canonical [image patches; caption] form.
inline PretrainSequence image_caption_sequence(const SynthImage& image,
                                               const std::vector<int>& caption) {
  return {PretrainSegment::image_seg(image),
          PretrainSegment::token_seg(caption, true)};
}

// One pre-LN causal block: attention + MLP with residuals. Shared between
// the backbone stack and the trainable block-head readout.
template <typename S>
struct TransformerBlockParams {
  Tensor<S> ln1_gain, ln1_bias;
  Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor<S> ln2_gain, ln2_bias;
  Tensor<S> w1, b1, w2, b2;

  static TransformerBlockParams make(int d_model, int ffn_mult,
                                     const Rng& init_rng,
                                     const std::string& prefix,
                                     S sigma = S(0.02)) {
    auto init = [&](Shape shape, const std::string& name, bool zero = false) {
      Rng rng = init_rng.stream(prefix + name);
      std::vector<S> vals(static_cast<std::size_t>(shape_numel(shape)));
      for (auto& v : vals) v = zero ? S(0) : S(rng.normal(0.0, sigma));
      return Tensor<S>::from_values(std::move(shape), std::move(vals), true);
    };
    TransformerBlockParams p;
    p.ln1_gain = Tensor<S>::full({d_model}, S(1), true);
    p.ln1_bias = init({d_model}, "ln1.b", true);
    p.wq = init({d_model, d_model}, "wq");
    p.bq = init({d_model}, "bq", true);
    p.wk = init({d_model, d_model}, "wk");
    p.bk = init({d_model}, "bk", true);
    p.wv = init({d_model, d_model}, "wv");
    p.bv = init({d_model}, "bv", true);
    p.wo = init({d_model, d_model}, "wo");
    p.bo = init({d_model}, "bo", true);
    p.ln2_gain = Tensor<S>::full({d_model}, S(1), true);
    p.ln2_bias = init({d_model}, "ln2.b", true);
    p.w1 = init({d_model, ffn_mult * d_model}, "w1");
    p.b1 = init({ffn_mult * d_model}, "b1", true);
    p.w2 = init({ffn_mult * d_model, d_model}, "w2");
    p.b2 = init({d_model}, "b2", true);
    return p;
  }

  std::vector<Tensor<S>> tensors() const {
    return {ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv,
            wo,       bo,       ln2_gain, ln2_bias, w1, b1, w2, b2};
  }
  static std::vector<std::string> tensor_names() {
    return {"ln1.gain", "ln1.bias", "wq", "bq", "wk", "bk", "wv", "bv",
            "wo",       "bo",       "ln2.gain", "ln2.bias", "w1", "b1", "w2", "b2"};
  }
};

template <typename S>
Tensor<S> transformer_block_forward(const TransformerBlockParams<S>& p,
                                    const Tensor<S>& input, int n_heads,
                                    Tape<S>* tape = nullptr) {
  const int d = input.cols();
  const int dh = d / n_heads;
  const S att_scale = S(1) / S(std::sqrt(static_cast<double>(dh)));

  Tensor<S> normed = layer_norm(input, p.ln1_gain, p.ln1_bias, S(1e-5), tape);
  Tensor<S> q = add_rowwise(matmul(normed, p.wq, tape), p.bq, tape);
  Tensor<S> k = add_rowwise(matmul(normed, p.wk, tape), p.bk, tape);
  Tensor<S> v = add_rowwise(matmul(normed, p.wv, tape), p.bv, tape);
  std::vector<Tensor<S>> head_outputs;
  head_outputs.reserve(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    Tensor<S> qh = slice_cols(q, h * dh, dh, tape);
    Tensor<S> kh = slice_cols(k, h * dh, dh, tape);
    Tensor<S> vh = slice_cols(v, h * dh, dh, tape);
    Tensor<S> scores = scale(matmul(qh, transpose(kh, tape), tape), att_scale, tape);
    Tensor<S> att = softmax_lastdim(causal_mask_fill(scores, tape), tape);
    head_outputs.push_back(matmul(att, vh, tape));
  }
  Tensor<S> ctx = concat_cols(head_outputs, tape);
  Tensor<S> x = add(input, add_rowwise(matmul(ctx, p.wo, tape), p.bo, tape), tape);

  Tensor<S> normed2 = layer_norm(x, p.ln2_gain, p.ln2_bias, S(1e-5), tape);
  Tensor<S> h1 = gelu(add_rowwise(matmul(normed2, p.w1, tape), p.b1, tape), tape);
  return add(x, add_rowwise(matmul(h1, p.w2, tape), p.b2, tape), tape);
}

// Compact causal decoder with a linear vision stub. Pre-LN blocks, learned
// absolute positions added inside forward_hidden so appended query rows pick
// up positional encodings like ordinary tokens.
template <typename S>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, const Rng& init_rng);

  const BackboneConfig& config() const { return cfg_; }

  TokenSequence<S> embed_text(const std::vector<int>& token_ids,
                              Tape<S>* tape = nullptr) const;
  TokenSequence<S> embed_image(const SynthImage& image,
                               Tape<S>* tape = nullptr) const;

  // Final-layer hidden states (after the final layer norm), one row per
  // position. Strictly causal: row i never depends on rows > i.
  Tensor<S> forward_hidden(const Tensor<S>& embeddings,
                           Tape<S>* tape = nullptr) const;
  Tensor<S> forward_hidden(const TokenSequence<S>& seq,
                           Tape<S>* tape = nullptr) const {
    return forward_hidden(seq.embeddings, tape);
  }

  // Vocabulary logits for the given hidden rows.
  Tensor<S> lm_logits(const Tensor<S>& hidden, Tape<S>* tape = nullptr) const;

  // Mean next-token cross-entropy over the predicted token positions of
  // interleaved image/token sequences.
  Tensor<S> pretrain_loss(const std::vector<PretrainSequence>& batch,
                          Tape<S>* tape = nullptr) const;

  void freeze();
  bool frozen() const { return frozen_; }

  const std::vector<std::pair<std::string, Tensor<S>>>& parameters() const {
    return named_;
  }
  std::vector<Tensor<S>> parameter_tensors() const;

  // Combined CRC over all parameter contents.
  std::uint32_t content_checksum() const;
  // Checksum recorded at freeze time; 0 while unfrozen.
  std::uint32_t stored_checksum() const { return frozen_checksum_; }
  // ContractError when the frozen contents drifted from the recorded sums.
  void verify_frozen_integrity() const;

  void save(const std::filesystem::path& path) const;
  static Backbone load(const std::filesystem::path& path);

 private:
  Backbone() = default;
  void register_params();

  BackboneConfig cfg_;
  bool frozen_ = false;
  std::uint32_t frozen_checksum_ = 0;
  std::vector<std::uint32_t> frozen_per_tensor_;

  Tensor<S> tok_embed_;    // vocab x D
  Tensor<S> pos_embed_;    // max_seq_len x D
  Tensor<S> vision_w_;     // cell-feature-dim x D
  Tensor<S> vision_b_;     // D
  std::vector<TransformerBlockParams<S>> layers_;
  Tensor<S> final_gain_, final_bias_;  // D
  Tensor<S> lm_head_;      // D x vocab
  std::vector<std::pair<std::string, Tensor<S>>> named_;
};

// Next-token pretraining driver: owns the optimizer state, samples batches
// from the corpus, and advances the schedule. The backbone must be unfrozen.
template <typename S>
class Pretrainer {
 public:
  Pretrainer(Backbone<S>& backbone, const TrainerConfig& config,
             std::vector<const DataPair*> corpus);

  struct StepReport {
    int step = 0;
    double loss = 0;
    double lr = 0;
    double grad_norm = 0;
  };

  StepReport step();
  int steps_taken() const { return step_; }

 private:
  Backbone<S>& backbone_;
  TrainerConfig cfg_;
  std::vector<const DataPair*> corpus_;
  AdamW<S> optimizer_;
  Rng rng_;
  int step_ = 0;
};

// ---------------------------------------------------------------------------
// Implementation
// ---------------------------------------------------------------------------

template <typename S>
Backbone<S>::Backbone(const BackboneConfig& config, const Rng& init_rng)
    : cfg_(config) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const S sigma = S(0.02);

  auto init = [&](Shape shape, const char* name, bool zero = false) {
    Rng rng = init_rng.stream(name);
    std::vector<S> vals(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& v : vals) v = zero ? S(0) : S(rng.normal(0.0, sigma));
    return Tensor<S>::from_values(std::move(shape), std::move(vals), true);
  };
  auto ones = [&](Shape shape) {
    return Tensor<S>::full(std::move(shape), S(1), true);
  };

  tok_embed_ = init({cfg_.vocab_size, d}, "tok_embed");
  pos_embed_ = init({cfg_.max_seq_len, d}, "pos_embed");
  vision_w_ = init({SynthImage::kCellFeatureDim, d}, "vision.w");
  vision_b_ = init({d}, "vision.b", true);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    layers_.push_back(TransformerBlockParams<S>::make(
        d, cfg_.ffn_mult, init_rng, "layer" + std::to_string(l) + "."));
  }
  final_gain_ = ones({d});
  final_bias_ = init({d}, "final_ln.b", true);
  lm_head_ = init({d, cfg_.vocab_size}, "lm_head");
  register_params();
}

template <typename S>
void Backbone<S>::register_params() {
  named_.clear();
  named_.push_back({"tok_embed", tok_embed_});
  named_.push_back({"pos_embed", pos_embed_});
  named_.push_back({"vision.w", vision_w_});
  named_.push_back({"vision.b", vision_b_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    const auto tensors = layers_[l].tensors();
    const auto names = TransformerBlockParams<S>::tensor_names();
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      named_.push_back({p + names[i], tensors[i]});
    }
  }
  named_.push_back({"final_ln.gain", final_gain_});
  named_.push_back({"final_ln.bias", final_bias_});
  named_.push_back({"lm_head", lm_head_});
}

template <typename S>
std::vector<Tensor<S>> Backbone<S>::parameter_tensors() const {
  std::vector<Tensor<S>> out;
  out.reserve(named_.size());
  for (const auto& [name, tensor] : named_) out.push_back(tensor);
  return out;
}

template <typename S>
TokenSequence<S> Backbone<S>::embed_text(const std::vector<int>& token_ids,
                                         Tape<S>* tape) const {
  if (token_ids.empty()) throw InputError("embed_text: empty token list");
  if (static_cast<int>(token_ids.size()) > cfg_.max_seq_len) {
    throw InputError("embed_text: sequence longer than max_seq_len");
  }
  TokenSequence<S> seq;
  seq.modality = Modality::kText;
  seq.embeddings = embedding_lookup(tok_embed_, token_ids, tape);
  return seq;
}

template <typename S>
TokenSequence<S> Backbone<S>::embed_image(const SynthImage& image,
                                          Tape<S>* tape) const {
  if (image.grid != cfg_.patch_grid) {
    throw InputError("embed_image: image grid does not match patch_grid");
  }
  if (static_cast<int>(image.cells.size()) != image.n_patches()) {
    throw InputError("embed_image: cell count does not match grid");
  }
  const auto feats = image.features();
  std::vector<S> cast(feats.size());
  for (std::size_t i = 0; i < feats.size(); ++i) cast[i] = S(feats[i]);
  auto patches = Tensor<S>::from_values(
      {image.n_patches(), SynthImage::kCellFeatureDim}, std::move(cast));
  TokenSequence<S> seq;
  seq.modality = Modality::kImage;
  seq.embeddings = add_rowwise(matmul(patches, vision_w_, tape), vision_b_, tape);
  return seq;
}

template <typename S>
Tensor<S> Backbone<S>::forward_hidden(const Tensor<S>& embeddings,
                                      Tape<S>* tape) const {
  const int len = embeddings.rows();
  if (len > cfg_.max_seq_len) {
    throw InputError("forward_hidden: sequence longer than max_seq_len");
  }
  Tensor<S> x = add(embeddings, slice_rows(pos_embed_, 0, len, tape), tape);
  for (const auto& layer : layers_) {
    x = transformer_block_forward(layer, x, cfg_.n_heads, tape);
  }
  return layer_norm(x, final_gain_, final_bias_, S(1e-5), tape);
}

template <typename S>
Tensor<S> Backbone<S>::lm_logits(const Tensor<S>& hidden, Tape<S>* tape) const {
  return matmul(hidden, lm_head_, tape);
}

template <typename S>
Tensor<S> Backbone<S>::pretrain_loss(const std::vector<PretrainSequence>& batch,
                                     Tape<S>* tape) const {
  if (batch.empty()) throw InputError("pretrain_loss: empty batch");
  Tensor<S> total = Tensor<S>::scalar(S(0));
  for (const auto& sequence : batch) {
    if (sequence.empty()) throw InputError("pretrain_loss: empty sequence");
    // Assemble the content embeddings and note each predicted span.
    Tensor<S> content;
    struct Span {
      int start = 0;
      std::vector<int> targets;
    };
    std::vector<Span> spans;
    int position = 0;
    for (const auto& segment : sequence) {
      Tensor<S> rows;
      if (segment.image != nullptr) {
        rows = embed_image(*segment.image, tape).embeddings;
      } else {
        if (segment.tokens.empty()) {
          throw InputError("pretrain_loss: empty token segment");
        }
        rows = embed_text(segment.tokens, tape).embeddings;
        if (segment.predict) {
          if (position == 0) {
            throw InputError("pretrain_loss: predicted segment cannot start the sequence");
          }
          spans.push_back({position, segment.tokens});
        }
      }
      content = content.defined() ? concat_along_sequence(content, rows, tape) : rows;
      position += rows.rows();
    }
    if (spans.empty()) throw InputError("pretrain_loss: sequence has no targets");
    Tensor<S> hidden = forward_hidden(content, tape);
    // Position s-1 predicts targets[0]; position s+i predicts targets[i+1].
    Tensor<S> predict_rows;
    std::vector<int> targets;
    for (const auto& span : spans) {
      Tensor<S> rows = slice_rows(hidden, span.start - 1,
                                  static_cast<int>(span.targets.size()), tape);
      predict_rows = predict_rows.defined()
                         ? concat_along_sequence(predict_rows, rows, tape)
                         : rows;
      targets.insert(targets.end(), span.targets.begin(), span.targets.end());
    }
    Tensor<S> logits = lm_logits(predict_rows, tape);
    Tensor<S> sample_loss = cross_entropy_with_targets(logits, targets, tape);
    total = add(total, sample_loss, tape);
  }
  return scale(total, S(1) / S(batch.size()), tape);
}

template <typename S>
void Backbone<S>::freeze() {
  frozen_per_tensor_.clear();
  for (auto& [name, tensor] : named_) {
    tensor.set_requires_grad(false);
    frozen_per_tensor_.push_back(tensor_checksum(tensor));
  }
  frozen_ = true;
  frozen_checksum_ = content_checksum();
}

template <typename S>
std::uint32_t Backbone<S>::content_checksum() const {
  std::vector<std::byte> sums;
  for (const auto& [name, tensor] : named_) {
    detail::append_le(sums, tensor_checksum(tensor));
  }
  return crc32(sums);
}

template <typename S>
void Backbone<S>::verify_frozen_integrity() const {
  if (!frozen_) throw StateError("backbone is not frozen");
  for (std::size_t i = 0; i < named_.size(); ++i) {
    if (tensor_checksum(named_[i].second) != frozen_per_tensor_[i]) {
      throw ContractError("frozen backbone tensor '" + named_[i].first +
                          "' changed content");
    }
  }
}

template <typename S>
void Backbone<S>::save(const std::filesystem::path& path) const {
  std::vector<CheckpointEntry> entries;
  entries.push_back(to_entry_u64(
      "meta.config",
      {static_cast<std::uint64_t>(cfg_.d_model), static_cast<std::uint64_t>(cfg_.n_layers),
       static_cast<std::uint64_t>(cfg_.n_heads), static_cast<std::uint64_t>(cfg_.vocab_size),
       static_cast<std::uint64_t>(cfg_.max_seq_len), static_cast<std::uint64_t>(cfg_.patch_grid),
       static_cast<std::uint64_t>(cfg_.ffn_mult), frozen_ ? 1u : 0u}));
  for (const auto& [name, tensor] : named_) {
    entries.push_back(to_entry(name, tensor));
  }
  save_checkpoint(path, entries);
}

template <typename S>
Backbone<S> Backbone<S>::load(const std::filesystem::path& path) {
  const auto entries = load_checkpoint(path);
  if (entries.empty() || entries[0].name != "meta.config") {
    throw IntegrityError("backbone checkpoint missing config entry");
  }
  const auto meta = from_entry_u64(entries[0]);
  if (meta.size() != 8) throw IntegrityError("backbone config entry malformed");
  BackboneConfig cfg;
  cfg.d_model = static_cast<int>(meta[0]);
  cfg.n_layers = static_cast<int>(meta[1]);
  cfg.n_heads = static_cast<int>(meta[2]);
  cfg.vocab_size = static_cast<int>(meta[3]);
  cfg.max_seq_len = static_cast<int>(meta[4]);
  cfg.patch_grid = static_cast<int>(meta[5]);
  cfg.ffn_mult = static_cast<int>(meta[6]);
  const bool was_frozen = meta[7] != 0;

  Backbone<S> model(cfg, Rng(0));
  std::size_t cursor = 1;
  for (auto& [name, tensor] : model.named_) {
    if (cursor >= entries.size() || entries[cursor].name != name) {
      throw IntegrityError("backbone checkpoint missing tensor '" + name + "'");
    }
    Tensor<S> loaded = from_entry<S>(entries[cursor]);
    if (loaded.shape() != tensor.shape()) {
      throw IntegrityError("backbone tensor '" + name + "' has wrong shape");
    }
    std::copy(loaded.values().begin(), loaded.values().end(),
              tensor.values().begin());
    ++cursor;
  }
  if (was_frozen) model.freeze();
  return model;
}

// ---------------------------------------------------------------------------
// Pretrainer
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
std::vector<Tensor<S>> pretrain_params_or_throw(const Backbone<S>& backbone) {
  if (backbone.frozen()) throw StateError("pretrainer: backbone is frozen");
  return backbone.parameter_tensors();
}

}  // namespace detail

template <typename S>
Pretrainer<S>::Pretrainer(Backbone<S>& backbone, const TrainerConfig& config,
                          std::vector<const DataPair*> corpus)
    : backbone_(backbone),
      cfg_(config),
      corpus_(std::move(corpus)),
      optimizer_(detail::pretrain_params_or_throw(backbone)),
      rng_(Rng(config.seed).stream("pretrain")) {
  cfg_.validate();
  if (corpus_.empty()) throw InputError("pretrainer: empty corpus");
}

template <typename S>
typename Pretrainer<S>::StepReport Pretrainer<S>::step() {
  if (backbone_.frozen()) throw StateError("pretrain step on frozen backbone");
  std::vector<PretrainSequence> batch;
  batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
  for (int i = 0; i < cfg_.batch_size; ++i) {
    const DataPair* pair = corpus_[rng_.range(corpus_.size())];
    const bool paraphrase = pair->caption.tier == Tier::kReasoning &&
                            pair->caption.targets.size() == 1 && rng_.range(2) == 0;
    if (paraphrase) {
      // Text-only paraphrase: resolve the reasoning caption into its explicit
      // rendering. Keeps caption-at-position-zero inputs in distribution and
      // makes the continuation content-determined. Half the time a second
      // pair is appended so later text positions get trained too.
      PretrainSequence seq = {
          PretrainSegment::token_seg(pair->caption.tokens, false),
          PretrainSegment::token_seg(
              explicit_tokens_for(pair->caption.targets[0]), true)};
      if (rng_.range(2) == 0) {
        const DataPair* other = corpus_[rng_.range(corpus_.size())];
        if (other->caption.tier == Tier::kReasoning &&
            other->caption.targets.size() == 1) {
          seq.push_back(PretrainSegment::token_seg(other->caption.tokens, false));
          seq.push_back(PretrainSegment::token_seg(
              explicit_tokens_for(other->caption.targets[0]), true));
        }
      }
      batch.push_back(std::move(seq));
    } else {
      batch.push_back(image_caption_sequence(pair->image, pair->caption.tokens));
    }
  }
  Tape<S> tape;
  Tensor<S> loss = backbone_.pretrain_loss(batch, &tape);
  optimizer_.zero_grad();
  tape.backward(loss);
  const double lr = scheduled_lr(cfg_, step_);
  const double gnorm = optimizer_.step(lr, cfg_);
  StepReport report{step_, static_cast<double>(loss.item()), lr, gnorm};
  ++step_;
  return report;
}

}  // namespace slq
