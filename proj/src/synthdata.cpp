#include "slq/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace slq {

namespace {

const std::array<const char*, kNumShapes> kShapeNames = {
    "circle", "triangle", "square", "pentagon", "hexagon", "star"};
const std::array<const char*, kNumColors> kColorNames = {
    "red", "green", "blue", "yellow", "purple", "orange", "black", "white"};

const std::array<const char*, kNumShapes> kToolClues = {
    "rolling", "wedging", "stacking", "guarding", "fastening", "decorating"};
const std::array<const char*, kNumShapes> kCulturalClues = {
    "unity", "trinity", "stability", "defense", "harmony", "fame"};
const std::array<const char*, kNumColors> kContextClues = {
    "volcano", "forest", "ocean", "desert", "vineyard", "canyon", "cave", "glacier"};
const std::array<const char*, kNumColors> kEncycClues = {
    "blood", "grass", "sky", "sun", "royalty", "pumpkin", "night", "snow"};
const std::array<const char*, 9> kFunctionalClues = {
    "solo", "pair", "trio", "quartet", "quintet", "sextet", "septet", "octet", "nonet"};

const std::array<const char*, 14> kFillerWords = {
    "the", "a", "with", "of", "used", "for", "seen", "in",
    "forming", "symbol", "thing", "plus", "sides", "color"};

}  // namespace

// ---------------------------------------------------------------------------
// SynthImage
// ---------------------------------------------------------------------------

std::vector<double> SynthImage::features() const {
  std::vector<double> out(static_cast<std::size_t>(n_patches()) * kCellFeatureDim, 0.0);
  for (int p = 0; p < n_patches(); ++p) {
    const Cell& cell = cells[static_cast<std::size_t>(p)];
    if (cell.count == 0) continue;
    double* row = out.data() + static_cast<std::size_t>(p) * kCellFeatureDim;
    row[cell.shape] = 1.0;
    row[kNumShapes + cell.color] = 1.0;
    row[kNumShapes + kNumColors] = static_cast<double>(cell.count) / kMaxCount;
    row[kNumShapes + kNumColors + 1] = 1.0;
  }
  return out;
}

bool SynthImage::has_content() const {
  return std::any_of(cells.begin(), cells.end(),
                     [](const Cell& c) { return c.count > 0; });
}

// ---------------------------------------------------------------------------
// Vocab
// ---------------------------------------------------------------------------

Vocab::Vocab() {
  for (int d = 0; d <= 9; ++d) tokens_.push_back(std::to_string(d));
  for (const char* s : kShapeNames) tokens_.push_back(s);
  for (const char* s : kColorNames) tokens_.push_back(s);
  for (const char* s : kFillerWords) tokens_.push_back(s);
  for (const char* s : kToolClues) tokens_.push_back(s);
  for (const char* s : kCulturalClues) tokens_.push_back(s);
  for (const char* s : kContextClues) tokens_.push_back(s);
  for (const char* s : kEncycClues) tokens_.push_back(s);
  for (const char* s : kFunctionalClues) tokens_.push_back(s);
}

const Vocab& Vocab::instance() {
  static const Vocab vocab;
  return vocab;
}

int Vocab::id(std::string_view token) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == token) return static_cast<int>(i);
  }
  throw GenerationError("vocab: unknown token '" + std::string(token) + "'");
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= size()) {
    throw InputError("vocab: token id " + std::to_string(id) + " out of range");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocab::shape_token(int shape) const { return 10 + shape; }
int Vocab::color_token(int color) const { return 10 + kNumShapes + color; }
int Vocab::digit_token(int digit) const { return digit; }

// ---------------------------------------------------------------------------
// Knowledge tables
// ---------------------------------------------------------------------------

namespace knowledge {

int shape_sides(int shape) {
  static const std::array<int, kNumShapes> sides = {1, 3, 4, 5, 6, 10};
  return sides[static_cast<std::size_t>(shape)];
}

std::optional<int> shape_from_sides(int sides) {
  for (int s = 0; s < kNumShapes; ++s) {
    if (shape_sides(s) == sides) return s;
  }
  return std::nullopt;
}

std::string tool_clue(int shape) { return kToolClues[static_cast<std::size_t>(shape)]; }
std::string cultural_clue(int shape) { return kCulturalClues[static_cast<std::size_t>(shape)]; }
std::string contextual_clue(int color) { return kContextClues[static_cast<std::size_t>(color)]; }
std::string encyclopedic_clue(int color) { return kEncycClues[static_cast<std::size_t>(color)]; }

std::string functional_clue(int count) {
  if (count < 1 || count > 9) {
    throw GenerationError("functional clue requires count in 1..9");
  }
  return kFunctionalClues[static_cast<std::size_t>(count - 1)];
}

namespace {

template <std::size_t N>
std::optional<int> reverse_lookup(const std::array<const char*, N>& table,
                                  std::string_view token) {
  for (std::size_t i = 0; i < N; ++i) {
    if (token == table[i]) return static_cast<int>(i);
  }
  return std::nullopt;
}

}  // namespace

std::optional<int> shape_from_tool_clue(std::string_view t) { return reverse_lookup(kToolClues, t); }
std::optional<int> shape_from_cultural_clue(std::string_view t) { return reverse_lookup(kCulturalClues, t); }
std::optional<int> color_from_contextual_clue(std::string_view t) { return reverse_lookup(kContextClues, t); }
std::optional<int> color_from_encyclopedic_clue(std::string_view t) { return reverse_lookup(kEncycClues, t); }

std::optional<int> count_from_functional_clue(std::string_view t) {
  auto idx = reverse_lookup(kFunctionalClues, t);
  if (idx) return *idx + 1;
  return std::nullopt;
}

}  // namespace knowledge

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

namespace {

constexpr int kGridSide = 4;

std::uint64_t pair_id(std::uint64_t seed, std::string_view block, int index) {
  std::uint64_t x = seed ^ fnv1a64(block);
  x ^= 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(index + 1);
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

Cell random_object(Rng& rng) {
  Cell cell;
  cell.shape = static_cast<int>(rng.range(kNumShapes));
  cell.color = static_cast<int>(rng.range(kNumColors));
  cell.count = 1 + static_cast<int>(rng.range(kMaxCount));
  return cell;
}

SynthImage place_objects(const std::vector<Cell>& objects,
                         const std::vector<int>& positions) {
  SynthImage image;
  image.grid = kGridSide;
  image.cells.assign(static_cast<std::size_t>(image.n_patches()), Cell{});
  for (std::size_t i = 0; i < objects.size(); ++i) {
    image.cells[static_cast<std::size_t>(positions[i])] = objects[i];
  }
  return image;
}

std::vector<int> distinct_positions(Rng& rng, int n, int n_cells) {
  std::vector<int> all(static_cast<std::size_t>(n_cells));
  std::iota(all.begin(), all.end(), 0);
  rng.shuffle(all);
  all.resize(static_cast<std::size_t>(n));
  return all;
}

// Largest-remainder apportionment of n over the mix proportions.
std::array<int, 6> apportion(int n, const std::array<double, 6>& mix) {
  double total = 0;
  for (double p : mix) total += p;
  if (std::abs(total - 1.0) > 1e-6) {
    throw InputError("dimension mix must sum to 1");
  }
  std::array<int, 6> counts{};
  std::array<std::pair<double, int>, 6> remainders;
  int assigned = 0;
  for (int i = 0; i < 6; ++i) {
    const double exact = n * mix[static_cast<std::size_t>(i)];
    counts[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(exact));
    assigned += counts[static_cast<std::size_t>(i)];
    remainders[static_cast<std::size_t>(i)] = {
        exact - std::floor(exact), i};
  }
  std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < n - assigned; ++i) {
    counts[static_cast<std::size_t>(remainders[static_cast<std::size_t>(i)].second)]++;
  }
  return counts;
}

CaptionSpec make_explicit_caption(const SynthImage& image) {
  const Vocab& vocab = Vocab::instance();
  CaptionSpec spec;
  spec.tier = Tier::kExplicit;
  spec.resolved = ResolvedAttr::kNone;
  for (int p = 0; p < image.n_patches(); ++p) {
    const Cell& cell = image.cells[static_cast<std::size_t>(p)];
    if (cell.count == 0) continue;
    spec.tokens.push_back(vocab.digit_token(cell.count));
    spec.tokens.push_back(vocab.color_token(cell.color));
    spec.tokens.push_back(vocab.shape_token(cell.shape));
    spec.targets.push_back({cell.shape, cell.color, cell.count});
  }
  return spec;
}

CaptionSpec make_reasoning_caption(const Cell& object, ReasoningDim dim, Rng& rng) {
  const Vocab& vocab = Vocab::instance();
  CaptionSpec spec;
  spec.tier = Tier::kReasoning;
  spec.dimension = dim;
  spec.targets.push_back({object.shape, object.color, object.count});

  auto tok = [&](std::string_view word) { return vocab.id(word); };
  auto digit = [&](int d) { return vocab.digit_token(d); };
  auto color = [&]() { return vocab.color_token(object.color); };
  auto shape = [&]() { return vocab.shape_token(object.shape); };

  switch (dim) {
    case ReasoningDim::kToolUtility:
      spec.resolved = ResolvedAttr::kShape;
      spec.tokens = {digit(object.count), color(),     tok("thing"),
                     tok("used"),         tok("for"),  tok(knowledge::tool_clue(object.shape))};
      break;
    case ReasoningDim::kContextualSpatial:
      spec.resolved = ResolvedAttr::kColor;
      spec.tokens = {digit(object.count), shape(),    tok("seen"),
                     tok("in"),           tok("the"), tok(knowledge::contextual_clue(object.color))};
      break;
    case ReasoningDim::kFunctional:
      spec.resolved = ResolvedAttr::kCount;
      spec.tokens = {tok("a"),       color(),  shape(),
                     tok("forming"), tok("a"), tok(knowledge::functional_clue(object.count))};
      break;
    case ReasoningDim::kCulturalSymbolic:
      spec.resolved = ResolvedAttr::kShape;
      spec.tokens = {digit(object.count), color(),   tok("symbol"),
                     tok("of"),           tok(knowledge::cultural_clue(object.shape))};
      break;
    case ReasoningDim::kEncyclopedic:
      spec.resolved = ResolvedAttr::kColor;
      spec.tokens = {digit(object.count), shape(),     tok("with"),
                     tok("the"),          tok("color"), tok("of"),
                     tok(knowledge::encyclopedic_clue(object.color))};
      break;
    case ReasoningDim::kLogicalMathematical: {
      spec.resolved = ResolvedAttr::kShape;
      const int sides = knowledge::shape_sides(object.shape);
      const int lo = std::max(0, sides - 9);
      const int hi = std::min(9, sides);
      const int k1 = lo + static_cast<int>(rng.range(static_cast<std::uint64_t>(hi - lo + 1)));
      const int k2 = sides - k1;
      spec.tokens = {digit(object.count), color(),   tok("thing"), tok("with"),
                     digit(k1),           tok("plus"), digit(k2),  tok("sides")};
      break;
    }
  }
  return spec;
}

}  // namespace

std::vector<int> explicit_tokens_for(const TargetAttrs& target) {
  const Vocab& vocab = Vocab::instance();
  return {vocab.digit_token(target.count), vocab.color_token(target.color),
          vocab.shape_token(target.shape)};
}

PairedDataset gen_explicit(int n, std::uint64_t seed) {
  if (n < 1) throw InputError("gen_explicit: n must be >= 1");
  PairedDataset ds;
  ds.seed = seed;
  Rng root(seed);
  for (int i = 0; i < n; ++i) {
    Rng rng = root.stream("explicit", static_cast<std::uint64_t>(i));
    // Two or three objects: enough attribute combinations that caption
    // collisions across a gallery stay negligible.
    const int n_objects = 2 + static_cast<int>(rng.range(2));
    std::vector<Cell> objects;
    for (int o = 0; o < n_objects; ++o) objects.push_back(random_object(rng));
    auto positions = distinct_positions(rng, n_objects, kGridSide * kGridSide);
    std::sort(positions.begin(), positions.end());
    DataPair pair;
    pair.id = pair_id(seed, "explicit", i);
    pair.image = place_objects(objects, positions);
    pair.caption = make_explicit_caption(pair.image);
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

PairedDataset gen_reasoning(int n, std::uint64_t seed,
                            const std::array<double, 6>& dimension_mix) {
  if (n < 1) throw InputError("gen_reasoning: n must be >= 1");
  const auto counts = apportion(n, dimension_mix);
  std::vector<ReasoningDim> dims;
  dims.reserve(static_cast<std::size_t>(n));
  for (int d = 0; d < 6; ++d) {
    for (int i = 0; i < counts[static_cast<std::size_t>(d)]; ++i) {
      dims.push_back(static_cast<ReasoningDim>(d));
    }
  }
  Rng root(seed);
  Rng order = root.stream("dimension-order");
  order.shuffle(dims);

  PairedDataset ds;
  ds.seed = seed;
  for (int i = 0; i < n; ++i) {
    Rng rng = root.stream("reasoning", static_cast<std::uint64_t>(i));
    const Cell object = random_object(rng);
    const int position = static_cast<int>(rng.range(kGridSide * kGridSide));
    DataPair pair;
    pair.id = pair_id(seed, "reasoning", i);
    pair.image = place_objects({object}, {position});
    pair.caption = make_reasoning_caption(object, dims[static_cast<std::size_t>(i)], rng);
    ds.pairs.push_back(std::move(pair));
  }
  return ds;
}

PairedDataset split(const PairedDataset& dataset,
                    const std::vector<double>& fractions) {
  if (fractions.empty()) throw InputError("split: no fractions");
  double total = 0;
  for (double f : fractions) {
    if (f <= 0) throw InputError("split: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-6) throw InputError("split: fractions must sum to 1");
  if (fractions.size() > 3) throw InputError("split: at most 3 splits");

  const int n = static_cast<int>(dataset.pairs.size());
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng(dataset.seed).stream("split");
  rng.shuffle(order);

  // Largest-remainder so e.g. 0.8/0.1/0.1 over 100 gives exactly 80/10/10.
  std::vector<int> counts(fractions.size());
  std::vector<std::pair<double, int>> rem;
  int assigned = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    const double exact = n * fractions[i];
    counts[i] = static_cast<int>(std::floor(exact));
    assigned += counts[i];
    rem.push_back({exact - std::floor(exact), static_cast<int>(i)});
  }
  std::sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (int i = 0; i < n - assigned; ++i) {
    counts[static_cast<std::size_t>(rem[static_cast<std::size_t>(i)].second)]++;
  }

  static const std::array<Split, 3> kOrder = {Split::kPretrain, Split::kAdaptTrain,
                                              Split::kEval};
  PairedDataset out = dataset;
  int cursor = 0;
  for (std::size_t s = 0; s < counts.size(); ++s) {
    for (int i = 0; i < counts[s]; ++i) {
      out.pairs[static_cast<std::size_t>(order[static_cast<std::size_t>(cursor++)])].split =
          kOrder[s];
    }
  }
  return out;
}

bool explicit_captions_consistent(const PairedDataset& dataset) {
  const Vocab& vocab = Vocab::instance();
  for (const auto& pair : dataset.pairs) {
    if (pair.caption.tier != Tier::kExplicit) continue;
    // Collect the multiset of attribute tokens present in the image.
    std::map<int, int> available;
    for (const auto& cell : pair.image.cells) {
      if (cell.count == 0) continue;
      available[vocab.shape_token(cell.shape)]++;
      available[vocab.color_token(cell.color)]++;
      available[vocab.digit_token(cell.count)]++;
    }
    std::map<int, int> used;
    for (int tok : pair.caption.tokens) used[tok]++;
    for (const auto& [tok, cnt] : used) {
      auto it = available.find(tok);
      if (it == available.end() || it->second < cnt) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Dataset container
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kDatasetHeader = "slq-dataset v1";

}  // namespace

const char* tier_name(Tier tier) {
  return tier == Tier::kExplicit ? "EXPLICIT" : "REASONING";
}

const char* dim_name(ReasoningDim dim) {
  static const std::array<const char*, 6> names = {
      "TOOL_UTILITY",      "CONTEXTUAL_SPATIAL", "FUNCTIONAL",
      "CULTURAL_SYMBOLIC", "ENCYCLOPEDIC",       "LOGICAL_MATHEMATICAL"};
  return names[static_cast<std::size_t>(dim)];
}

const char* split_name(Split split) {
  switch (split) {
    case Split::kPretrain: return "PRETRAIN";
    case Split::kAdaptTrain: return "ADAPT_TRAIN";
    case Split::kEval: return "EVAL";
    default: return "UNASSIGNED";
  }
}

namespace {

Tier tier_from(const std::string& s) {
  if (s == "EXPLICIT") return Tier::kExplicit;
  if (s == "REASONING") return Tier::kReasoning;
  throw InputError("dataset: unknown tier '" + s + "'");
}

Split split_from(const std::string& s) {
  if (s == "PRETRAIN") return Split::kPretrain;
  if (s == "ADAPT_TRAIN") return Split::kAdaptTrain;
  if (s == "EVAL") return Split::kEval;
  if (s == "UNASSIGNED") return Split::kUnassigned;
  throw InputError("dataset: unknown split '" + s + "'");
}

ReasoningDim dim_from(const std::string& s) {
  for (int d = 0; d < 6; ++d) {
    if (s == dim_name(static_cast<ReasoningDim>(d))) return static_cast<ReasoningDim>(d);
  }
  throw InputError("dataset: unknown dimension '" + s + "'");
}

ResolvedAttr resolved_from(const std::string& s) {
  if (s == "none") return ResolvedAttr::kNone;
  if (s == "shape") return ResolvedAttr::kShape;
  if (s == "color") return ResolvedAttr::kColor;
  if (s == "count") return ResolvedAttr::kCount;
  throw InputError("dataset: unknown resolved attr '" + s + "'");
}

const char* resolved_name(ResolvedAttr r) {
  switch (r) {
    case ResolvedAttr::kShape: return "shape";
    case ResolvedAttr::kColor: return "color";
    case ResolvedAttr::kCount: return "count";
    default: return "none";
  }
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const PairedDataset& dataset) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot open dataset file for writing: " + path.string());
  out << kDatasetHeader << "\n";
  out << "seed " << dataset.seed << "\n";
  out << "template_version " << dataset.template_version << "\n";
  out << "count " << dataset.pairs.size() << "\n";
  for (const auto& pair : dataset.pairs) {
    out << "pair " << pair.id << " " << split_name(pair.split) << " "
        << tier_name(pair.caption.tier) << " "
        << (pair.caption.tier == Tier::kReasoning ? dim_name(pair.caption.dimension) : "-")
        << " " << pair.image.grid << "\n";
    out << "cells";
    for (const auto& cell : pair.image.cells) {
      out << " " << cell.shape << "," << cell.color << "," << cell.count;
    }
    out << "\n";
    out << "caption";
    for (int tok : pair.caption.tokens) out << " " << tok;
    out << "\n";
    for (const auto& target : pair.caption.targets) {
      out << "target " << target.shape << " " << target.color << " " << target.count
          << " " << resolved_name(pair.caption.resolved) << "\n";
    }
    out << "end\n";
  }
}

PairedDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open dataset file: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kDatasetHeader) {
    throw InputError("dataset: unknown container version in " + path.string());
  }
  PairedDataset ds;
  std::size_t expect = 0;
  std::string word;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    ls >> word;
    if (word == "seed") {
      ls >> ds.seed;
    } else if (word == "template_version") {
      ls >> ds.template_version;
      if (ds.template_version != 1) {
        throw InputError("dataset: unknown template version " +
                         std::to_string(ds.template_version));
      }
    } else if (word == "count") {
      ls >> expect;
    } else if (word == "pair") {
      DataPair pair;
      std::string split_s, tier_s, dim_s;
      int grid = 0;
      ls >> pair.id >> split_s >> tier_s >> dim_s >> grid;
      pair.split = split_from(split_s);
      pair.caption.tier = tier_from(tier_s);
      if (dim_s != "-") pair.caption.dimension = dim_from(dim_s);
      pair.image.grid = grid;

      if (!std::getline(in, line)) throw InputError("dataset: truncated pair");
      std::istringstream cs(line);
      cs >> word;
      if (word != "cells") throw InputError("dataset: expected cells line");
      std::string triple;
      while (cs >> triple) {
        Cell cell;
        if (std::sscanf(triple.c_str(), "%d,%d,%d", &cell.shape, &cell.color,
                        &cell.count) != 3) {
          throw InputError("dataset: bad cell triple '" + triple + "'");
        }
        pair.image.cells.push_back(cell);
      }
      if (static_cast<int>(pair.image.cells.size()) != grid * grid) {
        throw InputError("dataset: cell count does not match grid");
      }

      if (!std::getline(in, line)) throw InputError("dataset: truncated pair");
      std::istringstream caps(line);
      caps >> word;
      if (word != "caption") throw InputError("dataset: expected caption line");
      int tok;
      while (caps >> tok) pair.caption.tokens.push_back(tok);

      while (std::getline(in, line) && line != "end") {
        std::istringstream ts(line);
        ts >> word;
        if (word != "target") throw InputError("dataset: expected target line");
        TargetAttrs target;
        std::string resolved_s;
        ts >> target.shape >> target.color >> target.count >> resolved_s;
        pair.caption.targets.push_back(target);
        pair.caption.resolved = resolved_from(resolved_s);
      }
      ds.pairs.push_back(std::move(pair));
    } else {
      throw InputError("dataset: unexpected line '" + line + "'");
    }
  }
  if (ds.pairs.size() != expect) {
    throw InputError("dataset: pair count mismatch");
  }
  return ds;
}

}  // namespace slq
