#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prd/errors.hpp"
#include "prd/random.hpp"

namespace prd {

/// Square 8-bit greyscale raster. Pixel storage is shared and immutable, so
/// copying a Cell is cheap and copies compare equal.
class Cell {
 public:
  Cell() = default;

  Cell(int size, std::vector<std::uint8_t> pixels)
      : size_(size), pixels_(std::make_shared<const std::vector<std::uint8_t>>(std::move(pixels))) {
    if (size <= 0 || pixels_->size() != static_cast<std::size_t>(size) * static_cast<std::size_t>(size)) {
      throw RejectedInput("cell pixel count does not match a square " + std::to_string(size) + "x" +
                          std::to_string(size) + " raster");
    }
  }

  int size() const { return size_; }
  bool empty() const { return size_ == 0; }

  std::span<const std::uint8_t> pixels() const {
    if (!pixels_) return {};
    return {pixels_->data(), pixels_->size()};
  }

  std::uint8_t at(int y, int x) const { return (*pixels_)[static_cast<std::size_t>(y) * size_ + x]; }

  friend bool operator==(const Cell& a, const Cell& b) {
    if (a.size_ != b.size_) return false;
    if (a.pixels_ == b.pixels_) return true;
    return std::ranges::equal(a.pixels(), b.pixels());
  }

 private:
  int size_ = 0;
  std::shared_ptr<const std::vector<std::uint8_t>> pixels_;
};

/// Ordered triple of cells sharing one resolution.
struct Row {
  std::array<Cell, 3> cells;

  Row() = default;
  Row(Cell a, Cell b, Cell c) : cells{std::move(a), std::move(b), std::move(c)} {
    if (cells[0].size() != cells[1].size() || cells[0].size() != cells[2].size()) {
      throw RejectedInput("row cells must share one resolution");
    }
  }

  const Cell& operator[](std::size_t i) const { return cells[i]; }
  int resolution() const { return cells[0].size(); }

  friend bool operator==(const Row&, const Row&) = default;
};

enum class Configuration : std::uint8_t {
  kCenter,
  kGrid2x2,
  kGrid3x3,
  kLeftRight,
  kUpDown,
  kOutInCenter,
  kOutInGrid,
};

inline constexpr std::array<Configuration, 7> kAllConfigurations = {
    Configuration::kCenter,    Configuration::kGrid2x2,     Configuration::kGrid3x3,   Configuration::kLeftRight,
    Configuration::kUpDown,    Configuration::kOutInCenter, Configuration::kOutInGrid,
};

inline constexpr std::size_t kNumConfigurations = kAllConfigurations.size();

inline std::size_t configuration_index(Configuration c) { return static_cast<std::size_t>(c); }

/// Short name used on the command line and in manifests.
inline std::string_view configuration_name(Configuration c) {
  switch (c) {
    case Configuration::kCenter: return "center";
    case Configuration::kGrid2x2: return "2x2grid";
    case Configuration::kGrid3x3: return "3x3grid";
    case Configuration::kLeftRight: return "left_right";
    case Configuration::kUpDown: return "up_down";
    case Configuration::kOutInCenter: return "out_in_center";
    case Configuration::kOutInGrid: return "out_in_grid";
  }
  return "?";
}

/// Column label used in accuracy tables.
inline std::string_view configuration_label(Configuration c) {
  switch (c) {
    case Configuration::kCenter: return "Center";
    case Configuration::kGrid2x2: return "2x2Grid";
    case Configuration::kGrid3x3: return "3x3Grid";
    case Configuration::kLeftRight: return "L-R";
    case Configuration::kUpDown: return "U-D";
    case Configuration::kOutInCenter: return "O-IC";
    case Configuration::kOutInGrid: return "O-IG";
  }
  return "?";
}

/// Directory names used by the RAVEN distribution.
inline std::string_view raven_directory_name(Configuration c) {
  switch (c) {
    case Configuration::kCenter: return "center_single";
    case Configuration::kGrid2x2: return "distribute_four";
    case Configuration::kGrid3x3: return "distribute_nine";
    case Configuration::kLeftRight: return "left_center_single_right_center_single";
    case Configuration::kUpDown: return "up_center_single_down_center_single";
    case Configuration::kOutInCenter: return "in_center_single_out_center_single";
    case Configuration::kOutInGrid: return "in_distribute_four_out_center_single";
  }
  return "?";
}

/// Accepts short names, table labels and RAVEN directory names.
inline std::optional<Configuration> parse_configuration(std::string_view text) {
  for (Configuration c : kAllConfigurations) {
    if (text == configuration_name(c) || text == configuration_label(c) || text == raven_directory_name(c)) return c;
  }
  return std::nullopt;
}

enum class Attribute : std::uint8_t { kType, kSize, kColor, kNumber };
enum class RuleKind : std::uint8_t { kConstant, kProgression, kArithmetic, kDistributeThree };

inline constexpr std::array<Attribute, 4> kAllAttributes = {Attribute::kType, Attribute::kSize, Attribute::kColor,
                                                            Attribute::kNumber};
inline constexpr std::array<RuleKind, 4> kAllRuleKinds = {RuleKind::kConstant, RuleKind::kProgression,
                                                          RuleKind::kArithmetic, RuleKind::kDistributeThree};

inline std::string_view attribute_name(Attribute a) {
  switch (a) {
    case Attribute::kType: return "type";
    case Attribute::kSize: return "size";
    case Attribute::kColor: return "color";
    case Attribute::kNumber: return "number_position";
  }
  return "?";
}

inline std::string_view rule_name(RuleKind r) {
  switch (r) {
    case RuleKind::kConstant: return "constant";
    case RuleKind::kProgression: return "progression";
    case RuleKind::kArithmetic: return "arithmetic";
    case RuleKind::kDistributeThree: return "distribute_three";
  }
  return "?";
}

inline std::optional<Attribute> parse_attribute(std::string_view s) {
  for (Attribute a : kAllAttributes)
    if (s == attribute_name(a)) return a;
  return std::nullopt;
}

inline std::optional<RuleKind> parse_rule(std::string_view s) {
  for (RuleKind r : kAllRuleKinds)
    if (s == rule_name(r)) return r;
  return std::nullopt;
}

/// One attribute-rule pair. `param` is the progression step or the
/// arithmetic sign (+1 / -1); zero for the other rules.
struct RuleEntry {
  Attribute attribute = Attribute::kType;
  RuleKind rule = RuleKind::kConstant;
  int param = 0;

  friend bool operator==(const RuleEntry&, const RuleEntry&) = default;
};

struct RuleSystem {
  std::vector<RuleEntry> entries;

  const RuleEntry* find(Attribute a) const {
    for (const auto& e : entries)
      if (e.attribute == a) return &e;
    return nullptr;
  }

  std::size_t non_constant_count() const {
    return static_cast<std::size_t>(
        std::ranges::count_if(entries, [](const RuleEntry& e) { return e.rule != RuleKind::kConstant; }));
  }

  /// Exactly one rule per attribute.
  bool valid() const {
    for (Attribute a : kAllAttributes) {
      if (std::ranges::count_if(entries, [a](const RuleEntry& e) { return e.attribute == a; }) != 1) return false;
    }
    return entries.size() == kAllAttributes.size();
  }

  friend bool operator==(const RuleSystem&, const RuleSystem&) = default;
};

/// Attributes of the rule-governed entity in one cell.
struct EntityAttributes {
  int type = 0;   // 0 triangle, 1 square, 2 pentagon, 3 hexagon, 4 circle
  int size = 0;   // 0..5
  int color = 0;  // 0..9, 0 = white fill

  friend bool operator==(const EntityAttributes&, const EntityAttributes&) = default;
};

/// Per-cell attribute record stored by the generator next to the raster.
/// `occupancy` is a bit mask over the layout slots of the governed component;
/// `fixed_component` holds the ungoverned second component of two-part
/// configurations, identical across all cells of a problem.
struct CellAttributes {
  EntityAttributes entity;
  std::uint16_t occupancy = 1;
  std::optional<EntityAttributes> fixed_component;

  friend bool operator==(const CellAttributes&, const CellAttributes&) = default;
};

inline constexpr std::size_t kContextCells = 8;
inline constexpr std::size_t kCandidateCells = 8;
inline constexpr std::size_t kProblemCells = kContextCells + kCandidateCells;

/// Rule metadata carried only by generated problems.
struct RuleAnnotation {
  RuleSystem system;
  std::array<CellAttributes, kProblemCells> cells{};  // 0-7 context, 8-15 candidates

  friend bool operator==(const RuleAnnotation&, const RuleAnnotation&) = default;
};

/// A 3x3 matrix with the last cell missing plus eight answer candidates.
/// Candidate k corresponds to cell label k + 9.
class RpmProblem {
 public:
  RpmProblem(std::string id, std::array<Cell, kContextCells> context, std::array<Cell, kCandidateCells> candidates,
             Configuration configuration, std::optional<int> answer = std::nullopt,
             std::optional<RuleAnnotation> rules = std::nullopt)
      : id_(std::move(id)),
        context_(std::move(context)),
        candidates_(std::move(candidates)),
        configuration_(configuration),
        answer_(answer),
        rules_(std::move(rules)) {
    const int res = context_[0].size();
    if (res <= 0) throw RejectedInput("problem " + id_ + ": empty cell");
    for (const Cell& c : context_)
      if (c.size() != res) throw RejectedInput("problem " + id_ + ": cells differ in resolution");
    for (const Cell& c : candidates_)
      if (c.size() != res) throw RejectedInput("problem " + id_ + ": cells differ in resolution");
    if (answer_ && (*answer_ < 0 || *answer_ >= static_cast<int>(kCandidateCells))) {
      throw RejectedInput("problem " + id_ + ": answer index out of range");
    }
  }

  const std::string& id() const { return id_; }
  const std::array<Cell, kContextCells>& context() const { return context_; }
  const std::array<Cell, kCandidateCells>& candidates() const { return candidates_; }
  Configuration configuration() const { return configuration_; }
  const std::optional<int>& answer() const { return answer_; }
  const std::optional<RuleAnnotation>& rules() const { return rules_; }
  int resolution() const { return context_[0].size(); }

  /// Cell by 0-based position over all 16 (0-7 context, 8-15 candidates).
  const Cell& cell(std::size_t i) const { return i < kContextCells ? context_[i] : candidates_[i - kContextCells]; }

  /// Copy with answer and rule metadata removed, for label-free training pools.
  RpmProblem without_labels() const { return RpmProblem(id_, context_, candidates_, configuration_); }

  friend bool operator==(const RpmProblem&, const RpmProblem&) = default;

 private:
  std::string id_;
  std::array<Cell, kContextCells> context_;
  std::array<Cell, kCandidateCells> candidates_;
  Configuration configuration_;
  std::optional<int> answer_;
  std::optional<RuleAnnotation> rules_;
};

struct ProblemRows {
  Row row_a;                   // cells 1-3
  Row row_b;                   // cells 4-6
  std::array<Cell, 2> partial;  // cells 7-8
};

inline ProblemRows rows_of(const RpmProblem& p) {
  const auto& c = p.context();
  return {Row(c[0], c[1], c[2]), Row(c[3], c[4], c[5]), {c[6], c[7]}};
}

/// Third row completed with candidate `candidate_index` in [0, 7].
inline Row complete_row(const RpmProblem& p, int candidate_index) {
  if (candidate_index < 0 || candidate_index >= static_cast<int>(kCandidateCells)) {
    throw RejectedInput("candidate index " + std::to_string(candidate_index) + " outside [0,7]");
  }
  return Row(p.context()[6], p.context()[7], p.candidates()[static_cast<std::size_t>(candidate_index)]);
}

/// Index lists into the source collection.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

namespace detail {

// Splits group sizes into (test, val) counts. Each fold target is
// round(n / 5); extras beyond floor(n_g / 5) are handed out so that every
// group's test, val and train counts stay within one problem of its exact
// 20/20/60 share.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> allocate_folds(
    const std::vector<std::size_t>& sizes, std::size_t total) {
  const std::size_t groups = sizes.size();
  std::vector<std::size_t> test(groups), val(groups);
  std::size_t floors = 0;
  for (std::size_t g = 0; g < groups; ++g) {
    test[g] = val[g] = sizes[g] / 5;
    floors += sizes[g] / 5;
  }
  const std::size_t target = (total + 2) / 5;  // round(total / 5)
  const std::size_t extras = target > floors ? target - floors : 0;
  std::vector<bool> test_extra(groups, false);

  std::vector<std::size_t> order(groups);
  std::iota(order.begin(), order.end(), 0);
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return sizes[a] % 5 > sizes[b] % 5; });
  std::size_t given = 0;
  for (std::size_t g : order) {
    if (given == extras) break;
    if (sizes[g] == 0) continue;
    ++test[g];
    test_extra[g] = true;
    ++given;
  }

  // Validation extras: groups that still need one (remainder >= 3 without a
  // test extra) first, then groups without any extra, then high-remainder
  // groups that may take a second extra.
  auto val_rank = [&](std::size_t g) {
    const std::size_t rem = sizes[g] % 5;
    if (rem >= 3 && !test_extra[g]) return 0;
    if (!test_extra[g] && rem > 0) return 1;
    if (rem >= 3) return 2;
    if (!test_extra[g]) return 3;
    return 4;
  };
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) {
    const int ra = val_rank(a), rb = val_rank(b);
    if (ra != rb) return ra < rb;
    return sizes[a] % 5 > sizes[b] % 5;
  });
  given = 0;
  for (std::size_t g : order) {
    if (given == extras) break;
    if (val_rank(g) == 4 || test[g] + val[g] >= sizes[g]) continue;
    ++val[g];
    ++given;
  }
  return {test, val};
}

}  // namespace detail

/// Five-fold split: one fold test, one fold validation, three folds train,
/// stratified by configuration and deterministic in `seed`.
inline DatasetSplit split_folds(std::span<const RpmProblem> problems, std::uint64_t seed) {
  if (problems.size() < 5) throw RejectedInput("split_folds needs at least 5 problems");

  std::vector<std::vector<std::size_t>> groups(kNumConfigurations);
  for (std::size_t i = 0; i < problems.size(); ++i) {
    groups[configuration_index(problems[i].configuration())].push_back(i);
  }
  Rng rng(derive_seed(seed, 0x5f1d));
  std::vector<std::size_t> sizes;
  for (auto& g : groups) {
    std::shuffle(g.begin(), g.end(), rng);
    sizes.push_back(g.size());
  }

  const auto [test_counts, val_counts] = detail::allocate_folds(sizes, problems.size());

  DatasetSplit split;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& idx = groups[g];
    const auto t = static_cast<std::ptrdiff_t>(test_counts[g]);
    const auto v = static_cast<std::ptrdiff_t>(val_counts[g]);
    split.test.insert(split.test.end(), idx.begin(), idx.begin() + t);
    split.val.insert(split.val.end(), idx.begin() + t, idx.begin() + t + v);
    split.train.insert(split.train.end(), idx.begin() + t + v, idx.end());
  }
  return split;
}

/// Copies selected problems out of a collection.
inline std::vector<RpmProblem> gather(std::span<const RpmProblem> problems, std::span<const std::size_t> indices) {
  std::vector<RpmProblem> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(problems[i]);
  return out;
}

}  // namespace prd
