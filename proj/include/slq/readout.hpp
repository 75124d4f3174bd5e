#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slq/backbone.hpp"
#include "slq/tensor.hpp"

namespace slq {

// Mechanisms mapping backbone hidden states to one retrieval embedding.
enum class ReadoutVariant {
  kSharedQueries,    // default: one bank appended after content
  kSeparateQueries,  // independent banks per modality
  kLinearHead,       // trainable D x D matrix on the last content state
  kTfBlockHead,      // one trainable block over the hidden sequence
  kPromptPrepend,    // bank rows at positions 0..N-1, read last content token
  kLastToken,        // untrained baseline: final content hidden state
};

enum class PoolingStrategy { kMean, kMax, kLast };

enum class QueryInit { kZeros, kGaussian };

constexpr double kQueryInitSigma = 0.02;

// The trainable query rows. When shared, both modality branches consume the
// identical tensor storage so gradient contributions from the two branches
// accumulate into one bank.
template <typename S>
struct QueryBank {
  int n_queries = 0;
  bool shared = true;
  Tensor<S> q;                  // N x D when shared
  Tensor<S> q_text, q_image;    // N x D each when separate

  static QueryBank make(int n, int d, bool shared, QueryInit init,
                        const Rng& rng) {
    if (n < 1) throw InputError("query bank: N must be >= 1");
    QueryBank bank;
    bank.n_queries = n;
    bank.shared = shared;
    auto fill = [&](const char* stream) {
      std::vector<S> vals(static_cast<std::size_t>(n) * d, S(0));
      if (init == QueryInit::kGaussian) {
        Rng r = rng.stream(stream);
        for (auto& v : vals) v = S(r.normal(0.0, kQueryInitSigma));
      }
      return Tensor<S>::from_values({n, d}, std::move(vals), true);
    };
    if (shared) {
      bank.q = fill("query-bank");
    } else {
      bank.q_text = fill("query-bank-text");
      bank.q_image = fill("query-bank-image");
    }
    return bank;
  }

  const Tensor<S>& rows_for(Modality modality) const {
    if (shared) return q;
    return modality == Modality::kText ? q_text : q_image;
  }

  std::vector<Tensor<S>> trainable() const {
    if (shared) return {q};
    return {q_text, q_image};
  }
};

// Full readout state: variant selection plus whatever that variant trains.
template <typename S>
struct Readout {
  ReadoutVariant variant = ReadoutVariant::kSharedQueries;
  PoolingStrategy pooling = PoolingStrategy::kMean;
  QueryBank<S> bank;
  Tensor<S> linear_head;                  // kLinearHead
  TransformerBlockParams<S> block_head;   // kTfBlockHead
  int block_head_n_heads = 1;
  std::vector<int> prompt_prefix;         // optional instruction tokens, off by default

  static Readout make(ReadoutVariant variant, PoolingStrategy pooling, int n,
                      int d_model, int n_heads, QueryInit init, const Rng& rng) {
    Readout r;
    r.variant = variant;
    r.pooling = pooling;
    r.block_head_n_heads = n_heads;
    switch (variant) {
      case ReadoutVariant::kSharedQueries:
      case ReadoutVariant::kPromptPrepend:
        r.bank = QueryBank<S>::make(n, d_model, true, init, rng);
        break;
      case ReadoutVariant::kSeparateQueries:
        r.bank = QueryBank<S>::make(n, d_model, false, init, rng);
        break;
      case ReadoutVariant::kLinearHead: {
        Rng hr = rng.stream("linear-head");
        std::vector<S> vals(static_cast<std::size_t>(d_model) * d_model);
        for (auto& v : vals) v = S(hr.normal(0.0, kQueryInitSigma));
        r.linear_head = Tensor<S>::from_values({d_model, d_model}, std::move(vals), true);
        break;
      }
      case ReadoutVariant::kTfBlockHead:
        r.block_head = TransformerBlockParams<S>::make(d_model, 4, rng, "block-head.");
        break;
      case ReadoutVariant::kLastToken:
        break;
    }
    return r;
  }

  // Everything this readout trains (the temperature is owned by the trainer).
  std::vector<Tensor<S>> trainable() const {
    switch (variant) {
      case ReadoutVariant::kSharedQueries:
      case ReadoutVariant::kSeparateQueries:
      case ReadoutVariant::kPromptPrepend:
        return bank.trainable();
      case ReadoutVariant::kLinearHead:
        return {linear_head};
      case ReadoutVariant::kTfBlockHead:
        return block_head.tensors();
      case ReadoutVariant::kLastToken:
        return {};
    }
    return {};
  }

  int trainable_scalars() const {
    int total = 0;
    for (const auto& t : trainable()) total += t.numel();
    return total;
  }
};

const char* variant_name(ReadoutVariant variant);
ReadoutVariant variant_from_name(const std::string& name);
const char* pooling_name(PoolingStrategy pooling);
PoolingStrategy pooling_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// Core operations
// ---------------------------------------------------------------------------

// [content; bank] along the sequence dimension. Content rows stay bit-equal;
// the appended rows are the bank rows for the content's modality.
template <typename S>
TokenSequence<S> build_sequence(const TokenSequence<S>& content,
                                const Tensor<S>& bank_rows, int max_seq_len,
                                Tape<S>* tape = nullptr) {
  if (bank_rows.rows() < 1) throw InputError("build_sequence: N must be >= 1");
  if (content.length() + bank_rows.rows() > max_seq_len) {
    throw InputError("build_sequence: content + queries exceed max_seq_len");
  }
  TokenSequence<S> out;
  out.modality = content.modality;
  out.embeddings = concat_along_sequence(content.embeddings, bank_rows, tape);
  return out;
}

// The last n rows of the hidden states, order preserved.
template <typename S>
Tensor<S> extract_query_states(const Tensor<S>& hidden, int n,
                               Tape<S>* tape = nullptr) {
  if (n >= hidden.rows()) {
    throw InputError("extract_query_states: n must be < hidden length");
  }
  return slice_last_n(hidden, n, tape);
}

// Pool N query states into one unit vector. A zero pooled vector raises
// DegenerateEmbeddingError rather than silently emitting NaN.
template <typename S>
Tensor<S> pool_and_normalize(const Tensor<S>& states, PoolingStrategy strategy,
                             Tape<S>* tape = nullptr) {
  if (states.rows() < 1) throw InputError("pool_and_normalize: no states");
  Tensor<S> pooled;
  switch (strategy) {
    case PoolingStrategy::kMean:
      pooled = mean_over_axis(states, 0, tape);
      break;
    case PoolingStrategy::kMax:
      pooled = max_over_axis(states, 0, tape);
      break;
    case PoolingStrategy::kLast:
      // Mean over a single row is that row, with a clean gradient path.
      pooled = mean_over_axis(slice_rows(states, states.rows() - 1, 1, tape), 0, tape);
      break;
  }
  return l2_normalize(pooled, tape);
}

// Unit-norm retrieval embedding for one content sequence under the given
// readout. Query variants append (or prepend) bank rows and read query
// states; head variants read content states through their trainable head.
template <typename S>
Tensor<S> encode_embedding(const Backbone<S>& backbone,
                           const Readout<S>& readout,
                           const TokenSequence<S>& content,
                           Tape<S>* tape = nullptr) {
  const int max_len = backbone.config().max_seq_len;
  auto last_row_vec = [&](const Tensor<S>& hidden) {
    return mean_over_axis(slice_rows(hidden, hidden.rows() - 1, 1, tape), 0, tape);
  };
  switch (readout.variant) {
    case ReadoutVariant::kSharedQueries:
    case ReadoutVariant::kSeparateQueries: {
      const Tensor<S>& rows = readout.bank.rows_for(content.modality);
      TokenSequence<S> seq = build_sequence(content, rows, max_len, tape);
      Tensor<S> hidden = backbone.forward_hidden(seq, tape);
      Tensor<S> states = extract_query_states(hidden, readout.bank.n_queries, tape);
      return pool_and_normalize(states, readout.pooling, tape);
    }
    case ReadoutVariant::kPromptPrepend: {
      const Tensor<S>& rows = readout.bank.rows_for(content.modality);
      if (content.length() + rows.rows() > max_len) {
        throw InputError("encode: content + prompt rows exceed max_seq_len");
      }
      Tensor<S> seq = concat_along_sequence(rows, content.embeddings, tape);
      Tensor<S> hidden = backbone.forward_hidden(seq, tape);
      return l2_normalize(last_row_vec(hidden), tape);
    }
    case ReadoutVariant::kLinearHead: {
      Tensor<S> hidden = backbone.forward_hidden(content, tape);
      Tensor<S> last = slice_rows(hidden, hidden.rows() - 1, 1, tape);
      Tensor<S> mapped = matmul(last, readout.linear_head, tape);
      return l2_normalize(mean_over_axis(mapped, 0, tape), tape);
    }
    case ReadoutVariant::kTfBlockHead: {
      Tensor<S> hidden = backbone.forward_hidden(content, tape);
      Tensor<S> refined = transformer_block_forward(
          readout.block_head, hidden, readout.block_head_n_heads, tape);
      return l2_normalize(last_row_vec(refined), tape);
    }
    case ReadoutVariant::kLastToken: {
      Tensor<S> hidden = backbone.forward_hidden(content, tape);
      return l2_normalize(last_row_vec(hidden), tape);
    }
  }
  throw ContractError("encode: unknown readout variant");
}

// ---------------------------------------------------------------------------
// Evaluation currency
// ---------------------------------------------------------------------------

struct EmbeddingRecord {
  std::uint64_t id = 0;
  Modality modality = Modality::kText;
  std::vector<double> z;  // unit norm within 1e-6
};

template <typename S>
EmbeddingRecord make_record(std::uint64_t id, Modality modality,
                            const Tensor<S>& unit_vec) {
  EmbeddingRecord rec;
  rec.id = id;
  rec.modality = modality;
  rec.z.assign(unit_vec.values().begin(), unit_vec.values().end());
  return rec;
}

// Content builders (prompt prefix applies to text only).
template <typename S>
TokenSequence<S> text_content(const Backbone<S>& backbone,
                              const std::vector<int>& caption,
                              const std::vector<int>& prompt_prefix,
                              Tape<S>* tape = nullptr) {
  if (prompt_prefix.empty()) return backbone.embed_text(caption, tape);
  std::vector<int> tokens = prompt_prefix;
  tokens.insert(tokens.end(), caption.begin(), caption.end());
  return backbone.embed_text(tokens, tape);
}

// ---------------------------------------------------------------------------
// Adapter checkpoint: the trained readout plus raw temperature and the ids it
// was trained on. Backbone tensors are never included.
// ---------------------------------------------------------------------------

template <typename S>
void save_adapter(const std::filesystem::path& path, const Readout<S>& readout,
                  S raw_temperature,
                  const std::vector<std::uint64_t>& train_ids) {
  std::vector<CheckpointEntry> entries;
  entries.push_back(to_entry_u64(
      "meta.readout",
      {static_cast<std::uint64_t>(readout.variant),
       static_cast<std::uint64_t>(readout.pooling),
       static_cast<std::uint64_t>(readout.bank.n_queries),
       static_cast<std::uint64_t>(readout.block_head_n_heads)}));
  entries.push_back(to_entry("raw_temperature", Tensor<S>::scalar(raw_temperature)));
  switch (readout.variant) {
    case ReadoutVariant::kSharedQueries:
    case ReadoutVariant::kPromptPrepend:
      entries.push_back(to_entry("bank.q", readout.bank.q));
      break;
    case ReadoutVariant::kSeparateQueries:
      entries.push_back(to_entry("bank.q_text", readout.bank.q_text));
      entries.push_back(to_entry("bank.q_image", readout.bank.q_image));
      break;
    case ReadoutVariant::kLinearHead:
      entries.push_back(to_entry("head.linear", readout.linear_head));
      break;
    case ReadoutVariant::kTfBlockHead: {
      const auto tensors = readout.block_head.tensors();
      const auto names = TransformerBlockParams<S>::tensor_names();
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        entries.push_back(to_entry("head.block." + names[i], tensors[i]));
      }
      break;
    }
    case ReadoutVariant::kLastToken:
      break;
  }
  entries.push_back(to_entry_u64("meta.train_ids", train_ids));
  save_checkpoint(path, entries);
}

template <typename S>
struct LoadedAdapter {
  Readout<S> readout;
  S raw_temperature = S(0);
  std::vector<std::uint64_t> train_ids;
};

template <typename S>
LoadedAdapter<S> load_adapter(const std::filesystem::path& path, int d_model,
                              int n_heads) {
  const auto entries = load_checkpoint(path);
  auto find = [&](const std::string& name) -> const CheckpointEntry& {
    for (const auto& e : entries) {
      if (e.name == name) return e;
    }
    throw IntegrityError("adapter: missing entry '" + name + "'");
  };
  const auto meta = from_entry_u64(find("meta.readout"));
  if (meta.size() != 4) throw IntegrityError("adapter: malformed meta entry");

  LoadedAdapter<S> out;
  const auto variant = static_cast<ReadoutVariant>(meta[0]);
  const auto pooling = static_cast<PoolingStrategy>(meta[1]);
  const int n_queries = static_cast<int>(meta[2]);
  out.readout = Readout<S>::make(variant, pooling, std::max(1, n_queries),
                                 d_model, n_heads, QueryInit::kZeros, Rng(0));
  out.readout.block_head_n_heads = static_cast<int>(meta[3]);
  out.raw_temperature = from_entry<S>(find("raw_temperature")).item();

  auto load_into = [&](const std::string& name, Tensor<S>& dst) {
    Tensor<S> loaded = from_entry<S>(find(name));
    if (loaded.shape() != dst.shape()) {
      throw IntegrityError("adapter: tensor '" + name + "' has wrong shape");
    }
    std::copy(loaded.values().begin(), loaded.values().end(), dst.values().begin());
  };
  switch (variant) {
    case ReadoutVariant::kSharedQueries:
    case ReadoutVariant::kPromptPrepend:
      load_into("bank.q", out.readout.bank.q);
      break;
    case ReadoutVariant::kSeparateQueries:
      load_into("bank.q_text", out.readout.bank.q_text);
      load_into("bank.q_image", out.readout.bank.q_image);
      break;
    case ReadoutVariant::kLinearHead:
      load_into("head.linear", out.readout.linear_head);
      break;
    case ReadoutVariant::kTfBlockHead: {
      auto tensors = out.readout.block_head.tensors();
      const auto names = TransformerBlockParams<S>::tensor_names();
      for (std::size_t i = 0; i < tensors.size(); ++i) {
        load_into("head.block." + names[i], tensors[i]);
      }
      break;
    }
    case ReadoutVariant::kLastToken:
      break;
  }
  out.train_ids = from_entry_u64(find("meta.train_ids"));
  return out;
}

}  // namespace slq
