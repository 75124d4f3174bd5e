#include "slq/readout.hpp"

namespace slq {

const char* variant_name(ReadoutVariant variant) {
  switch (variant) {
    case ReadoutVariant::kSharedQueries: return "shared_queries";
    case ReadoutVariant::kSeparateQueries: return "separate_queries";
    case ReadoutVariant::kLinearHead: return "linear_head";
    case ReadoutVariant::kTfBlockHead: return "tf_block_head";
    case ReadoutVariant::kPromptPrepend: return "prompt_prepend";
    case ReadoutVariant::kLastToken: return "last_token";
  }
  return "unknown";
}

ReadoutVariant variant_from_name(const std::string& name) {
  if (name == "shared_queries") return ReadoutVariant::kSharedQueries;
  if (name == "separate_queries") return ReadoutVariant::kSeparateQueries;
  if (name == "linear_head") return ReadoutVariant::kLinearHead;
  if (name == "tf_block_head") return ReadoutVariant::kTfBlockHead;
  if (name == "prompt_prepend") return ReadoutVariant::kPromptPrepend;
  if (name == "last_token") return ReadoutVariant::kLastToken;
  throw InputError("unknown readout variant '" + name + "'");
}

const char* pooling_name(PoolingStrategy pooling) {
  switch (pooling) {
    case PoolingStrategy::kMean: return "mean";
    case PoolingStrategy::kMax: return "max";
    case PoolingStrategy::kLast: return "last";
  }
  return "unknown";
}

PoolingStrategy pooling_from_name(const std::string& name) {
  if (name == "mean") return PoolingStrategy::kMean;
  if (name == "max") return PoolingStrategy::kMax;
  if (name == "last") return PoolingStrategy::kLast;
  throw InputError("unknown pooling strategy '" + name + "'");
}

}  // namespace slq
