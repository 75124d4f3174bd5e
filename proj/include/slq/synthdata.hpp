#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "slq/errors.hpp"
#include "slq/rng.hpp"

namespace slq {

// Synthetic paired multimodal data on an attribute grid. Images are feature
// grids (the vision stub consumes per-cell feature vectors, not pixels);
// captions are token-id sequences over a fixed builtin vocabulary shared
// with the knowledge tables.

constexpr int kNumShapes = 6;   // circle triangle square pentagon hexagon star
constexpr int kNumColors = 8;   // red green blue yellow purple orange black white
constexpr int kMaxCount = 9;

struct Cell {
  int shape = 0;
  int color = 0;
  int count = 0;  // 0 means the cell is empty
};

struct SynthImage {
  int grid = 4;
  std::vector<Cell> cells;  // grid*grid entries, row-major

  // One-hot shape (6) | one-hot color (8) | count/9 | occupancy. Empty cells
  // render as all-zero rows.
  static constexpr int kCellFeatureDim = kNumShapes + kNumColors + 2;
  std::vector<double> features() const;  // grid^2 x kCellFeatureDim, row-major
  bool has_content() const;
  int n_patches() const { return grid * grid; }
};

enum class Tier { kExplicit, kReasoning };

enum class ReasoningDim {
  kToolUtility = 0,
  kContextualSpatial = 1,
  kFunctional = 2,
  kCulturalSymbolic = 3,
  kEncyclopedic = 4,
  kLogicalMathematical = 5,
};

// Which attribute of the target object a reasoning caption leaves implicit.
enum class ResolvedAttr { kNone, kShape, kColor, kCount };

struct TargetAttrs {
  int shape = 0;
  int color = 0;
  int count = 0;
};

struct CaptionSpec {
  Tier tier = Tier::kExplicit;
  std::vector<int> tokens;
  std::vector<TargetAttrs> targets;  // explicit: every object; reasoning: one
  ReasoningDim dimension = ReasoningDim::kToolUtility;
  ResolvedAttr resolved = ResolvedAttr::kNone;
};

enum class Split { kUnassigned, kPretrain, kAdaptTrain, kEval };

struct DataPair {
  std::uint64_t id = 0;
  SynthImage image;
  CaptionSpec caption;
  Split split = Split::kUnassigned;
};

struct PairedDataset {
  std::uint64_t seed = 0;
  int template_version = 1;
  std::vector<DataPair> pairs;
};

// ---------------------------------------------------------------------------
// Vocabulary (fixed, versioned, <= 256 symbols)
// ---------------------------------------------------------------------------

class Vocab {
 public:
  static const Vocab& instance();
  int id(std::string_view token) const;            // GenerationError if unknown
  const std::string& token(int id) const;          // InputError if out of range
  int size() const { return static_cast<int>(tokens_.size()); }

  int shape_token(int shape) const;
  int color_token(int color) const;
  int digit_token(int digit) const;

 private:
  Vocab();
  std::vector<std::string> tokens_;
};

// ---------------------------------------------------------------------------
// Knowledge tables: clue token <-> attribute, one table per reasoning
// dimension. Clue tokens are disjoint from attribute tokens so reasoning
// captions can never leak the resolved attribute literally.
// ---------------------------------------------------------------------------

namespace knowledge {

// circle 1, triangle 3, square 4, pentagon 5, hexagon 6, star 10
int shape_sides(int shape);
// Shape with the given side count, or nullopt.
std::optional<int> shape_from_sides(int sides);

// Clue token string for an attribute under each non-logical dimension.
std::string tool_clue(int shape);
std::string cultural_clue(int shape);
std::string contextual_clue(int color);
std::string encyclopedic_clue(int color);
std::string functional_clue(int count);  // count in 1..9

// Reverse lookups; nullopt when the token is not a clue of that table.
std::optional<int> shape_from_tool_clue(std::string_view token);
std::optional<int> shape_from_cultural_clue(std::string_view token);
std::optional<int> color_from_contextual_clue(std::string_view token);
std::optional<int> color_from_encyclopedic_clue(std::string_view token);
std::optional<int> count_from_functional_clue(std::string_view token);

}  // namespace knowledge

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

// Paper-reported category mix for the six reasoning dimensions.
constexpr std::array<double, 6> kDefaultDimensionMix = {
    0.188, 0.181, 0.174, 0.194, 0.149, 0.114};

// Explicit rendering of one object's attributes: [count, color, shape].
std::vector<int> explicit_tokens_for(const TargetAttrs& target);

PairedDataset gen_explicit(int n, std::uint64_t seed);

// dimension_mix proportions must sum to 1 within 1e-6; per-dimension counts
// land within +-1 of n * p (largest-remainder apportionment).
PairedDataset gen_reasoning(int n, std::uint64_t seed,
                            const std::array<double, 6>& dimension_mix);

// Assigns split markers pretrain/adapt-train/eval by the given fractions
// (positive, sum to 1). Deterministic in the dataset seed.
PairedDataset split(const PairedDataset& dataset,
                    const std::vector<double>& fractions);

// Exhaustive cross-check that every explicit caption token naming an
// attribute occurs in the paired image's cell set.
bool explicit_captions_consistent(const PairedDataset& dataset);

// ---------------------------------------------------------------------------
// Dataset file container (self-describing structured text)
// ---------------------------------------------------------------------------

void save_dataset(const std::filesystem::path& path, const PairedDataset& dataset);
// InputError on unknown container or template version.
PairedDataset load_dataset(const std::filesystem::path& path);

const char* tier_name(Tier tier);
const char* dim_name(ReasoningDim dim);
const char* split_name(Split split);

}  // namespace slq
