#pragma once

// Procedural generator for small RAVEN-style problems with known rules.
//
// Rule semantics (the generator's ground truth):
//   Constant        one value for the whole matrix
//   Progression(s)  each row is v, v+s, v+2s (start may differ per row)
//   Arithmetic(+-)  each row is a, b, a+b or a, b, a-b with b >= 1
//   DistributeThree one set of three distinct values; row r is the set
//                   rotated left by r
// Number/Position applies to grid layouts only: Constant fixes the
// occupancy mask, Progression steps the entity count, DistributeThree
// rotates three occupancy masks. Two-part layouts carry a second component
// that stays fixed across the matrix.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdio>
#include <exception>
#include <numeric>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "prd/errors.hpp"
#include "prd/problem.hpp"
#include "prd/random.hpp"

namespace prd::mini_raven {

inline constexpr int kNumTypes = 5;   // triangle, square, pentagon, hexagon, circle
inline constexpr int kNumSizes = 6;   // 0..5
inline constexpr int kNumColors = 10; // 0..9

struct GeneratorConfig {
  std::vector<Configuration> configurations{Configuration::kCenter, Configuration::kGrid2x2};
  int resolution = 96;
  int min_non_constant = 1;
  int max_non_constant = 2;
  int max_perturbed_attributes = 1;  // distractors change 1..this many attributes
  int max_problem_retries = 64;
  int max_distractor_attempts = 200;
  std::uint64_t seed = 0;

  void validate() const {
    if (configurations.empty()) throw RejectedInput("generator needs at least one configuration");
    if (resolution < 32) throw RejectedInput("generator resolution must be >= 32");
    if (min_non_constant < 0 || min_non_constant > max_non_constant) {
      throw RejectedInput("generator requires 0 <= min_non_constant <= max_non_constant");
    }
    if (max_perturbed_attributes < 1) throw RejectedInput("max_perturbed_attributes must be >= 1");
  }
};

/// One slot of a layout in unit coordinates.
struct Slot {
  double cx, cy, extent;
};

struct Layout {
  std::vector<Slot> governed;        // slots of the rule-governed component
  std::optional<Slot> fixed;         // second component, if any
  bool fixed_drawn_first = false;    // outer frame is drawn beneath
};

inline Layout layout_of(Configuration c) {
  switch (c) {
    case Configuration::kCenter: return {{{0.5, 0.5, 0.40}}, std::nullopt, false};
    case Configuration::kGrid2x2: {
      Layout l;
      for (double y : {0.25, 0.75})
        for (double x : {0.25, 0.75}) l.governed.push_back({x, y, 0.20});
      return l;
    }
    case Configuration::kGrid3x3: {
      Layout l;
      for (double y : {1.0 / 6, 0.5, 5.0 / 6})
        for (double x : {1.0 / 6, 0.5, 5.0 / 6}) l.governed.push_back({x, y, 0.14});
      return l;
    }
    case Configuration::kLeftRight: return {{{0.25, 0.5, 0.20}}, Slot{0.75, 0.5, 0.20}, false};
    case Configuration::kUpDown: return {{{0.5, 0.25, 0.20}}, Slot{0.5, 0.75, 0.20}, false};
    case Configuration::kOutInCenter: return {{{0.5, 0.5, 0.17}}, Slot{0.5, 0.5, 0.46}, true};
    case Configuration::kOutInGrid: {
      Layout l;
      for (double y : {0.41, 0.59})
        for (double x : {0.41, 0.59}) l.governed.push_back({x, y, 0.075});
      l.fixed = Slot{0.5, 0.5, 0.46};
      l.fixed_drawn_first = true;
      return l;
    }
  }
  return {};
}

inline int slot_count(Configuration c) { return static_cast<int>(layout_of(c).governed.size()); }
inline bool is_grid(Configuration c) { return slot_count(c) > 1; }

/// Inclusive value range of an attribute; Number is an entity count.
inline std::pair<int, int> attribute_range(Attribute a, Configuration c) {
  switch (a) {
    case Attribute::kType: return {0, kNumTypes - 1};
    case Attribute::kSize: return {0, kNumSizes - 1};
    case Attribute::kColor: return {0, kNumColors - 1};
    case Attribute::kNumber: return {1, slot_count(c)};
  }
  return {0, 0};
}

/// Rules each attribute may take under a configuration (Constant first).
inline std::vector<RuleKind> legal_rules(Attribute a, Configuration c) {
  switch (a) {
    case Attribute::kType:
      return {RuleKind::kConstant, RuleKind::kProgression, RuleKind::kDistributeThree};
    case Attribute::kSize:
    case Attribute::kColor:
      return {RuleKind::kConstant, RuleKind::kProgression, RuleKind::kArithmetic, RuleKind::kDistributeThree};
    case Attribute::kNumber:
      if (!is_grid(c)) return {RuleKind::kConstant};
      return {RuleKind::kConstant, RuleKind::kProgression, RuleKind::kDistributeThree};
  }
  return {RuleKind::kConstant};
}

/// Progression steps that fit the attribute's range.
inline std::vector<int> legal_steps(Attribute a, Configuration c) {
  const auto [lo, hi] = attribute_range(a, c);
  std::vector<int> steps;
  for (int s : {-2, -1, 1, 2})
    if (2 * std::abs(s) <= hi - lo) steps.push_back(s);
  return steps;
}

/// Each attribute draws uniformly from its legal rules; draws whose
/// non-constant count falls outside the configured bounds are rejected.
inline RuleSystem sample_rule_system(const GeneratorConfig& config, Configuration configuration, Rng& rng) {
  config.validate();
  int max_possible = 0;
  for (Attribute a : kAllAttributes) max_possible += legal_rules(a, configuration).size() > 1 ? 1 : 0;
  if (config.min_non_constant > max_possible) {
    throw RejectedInput("configuration " + std::string(configuration_name(configuration)) + " supports at most " +
                        std::to_string(max_possible) + " non-constant rules");
  }
  for (;;) {
    RuleSystem rs;
    int non_constant = 0;
    for (Attribute a : kAllAttributes) {
      const auto options = legal_rules(a, configuration);
      RuleEntry e{a, options[uniform_index(rng, options.size())], 0};
      if (e.rule == RuleKind::kProgression) {
        const auto steps = legal_steps(a, configuration);
        e.param = steps[uniform_index(rng, steps.size())];
      } else if (e.rule == RuleKind::kArithmetic) {
        e.param = coin(rng) ? 1 : -1;
      }
      if (e.rule != RuleKind::kConstant) ++non_constant;
      rs.entries.push_back(e);
    }
    if (non_constant >= config.min_non_constant && non_constant <= config.max_non_constant) return rs;
  }
}

/// 3x3 attribute assignment, row-major.
struct AttributeGrid {
  Configuration configuration = Configuration::kCenter;
  std::array<CellAttributes, 9> cells{};

  const CellAttributes& at(int row, int col) const { return cells[static_cast<std::size_t>(row * 3 + col)]; }
};

namespace detail {

inline int get(const CellAttributes& c, Attribute a) {
  switch (a) {
    case Attribute::kType: return c.entity.type;
    case Attribute::kSize: return c.entity.size;
    case Attribute::kColor: return c.entity.color;
    case Attribute::kNumber: return std::popcount(c.occupancy);
  }
  return 0;
}

inline void set(CellAttributes& c, Attribute a, int v) {
  switch (a) {
    case Attribute::kType: c.entity.type = v; break;
    case Attribute::kSize: c.entity.size = v; break;
    case Attribute::kColor: c.entity.color = v; break;
    case Attribute::kNumber: break;  // occupancy handled separately
  }
}

inline std::uint16_t random_mask(Rng& rng, int slots, int count) {
  std::vector<int> idx(static_cast<std::size_t>(slots));
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::uint16_t m = 0;
  for (int i = 0; i < count; ++i) m = static_cast<std::uint16_t>(m | (1u << idx[static_cast<std::size_t>(i)]));
  return m;
}

inline std::uint16_t random_nonempty_mask(Rng& rng, int slots) {
  const int full = (1 << slots) - 1;
  return static_cast<std::uint16_t>(uniform_int(rng, 1, full));
}

// Values compared by a rule: the occupancy mask for Number under Constant
// and DistributeThree, the scalar value otherwise.
inline int rule_value(const CellAttributes& c, const RuleEntry& e) {
  if (e.attribute == Attribute::kNumber && e.rule != RuleKind::kProgression) return c.occupancy;
  return get(c, e.attribute);
}

}  // namespace detail

/// True iff the three cells of `row` satisfy `entry`; `reference` is the
/// first row of the same matrix, used for the matrix-wide parts of Constant
/// and DistributeThree.
inline bool row_satisfies(const RuleEntry& entry, const std::array<CellAttributes, 3>& row,
                          const std::array<CellAttributes, 3>& reference) {
  const int a = detail::rule_value(row[0], entry);
  const int b = detail::rule_value(row[1], entry);
  const int c = detail::rule_value(row[2], entry);
  switch (entry.rule) {
    case RuleKind::kConstant:
      return a == b && b == c && a == detail::rule_value(reference[0], entry);
    case RuleKind::kProgression:
      return b - a == entry.param && c - b == entry.param;
    case RuleKind::kArithmetic:
      return b >= 1 && c == a + entry.param * b;
    case RuleKind::kDistributeThree: {
      std::array<int, 3> mine{a, b, c};
      std::array<int, 3> ref{detail::rule_value(reference[0], entry), detail::rule_value(reference[1], entry),
                             detail::rule_value(reference[2], entry)};
      std::ranges::sort(mine);
      std::ranges::sort(ref);
      return mine == ref && ref[0] != ref[1] && ref[1] != ref[2];
    }
  }
  return false;
}

inline bool row_satisfies(const RuleSystem& rules, const std::array<CellAttributes, 3>& row,
                          const std::array<CellAttributes, 3>& reference) {
  for (int i = 0; i < 3; ++i)
    if (row[static_cast<std::size_t>(i)].fixed_component != reference[0].fixed_component) return false;
  return std::ranges::all_of(rules.entries, [&](const RuleEntry& e) { return row_satisfies(e, row, reference); });
}

/// Draws attribute values satisfying `rules` on every row.
inline AttributeGrid instantiate_grid(const RuleSystem& rules, Configuration configuration, Rng& rng,
                                      int max_attempts = 256) {
  if (!rules.valid()) throw RejectedInput("rule system must govern each attribute exactly once");
  const int slots = slot_count(configuration);
  AttributeGrid grid;
  grid.configuration = configuration;

  std::optional<EntityAttributes> fixed;
  if (layout_of(configuration).fixed) {
    fixed = EntityAttributes{uniform_int(rng, 0, kNumTypes - 1), uniform_int(rng, 2, kNumSizes - 1), 0};
  }
  for (auto& c : grid.cells) {
    c.fixed_component = fixed;
    c.occupancy = 1;
  }

  for (const RuleEntry& e : rules.entries) {
    const auto [lo, hi] = attribute_range(e.attribute, configuration);
    bool done = false;
    for (int attempt = 0; attempt < max_attempts && !done; ++attempt) {
      std::array<int, 9> v{};
      std::array<std::uint16_t, 9> masks{};
      const bool number = e.attribute == Attribute::kNumber;
      if (number && slots == 1) {
        if (e.rule != RuleKind::kConstant) break;
        masks.fill(1);
        for (int i = 0; i < 9; ++i) grid.cells[static_cast<std::size_t>(i)].occupancy = 1;
        done = true;
        break;
      }
      bool ok = true;
      switch (e.rule) {
        case RuleKind::kConstant:
          if (number)
            masks.fill(detail::random_nonempty_mask(rng, slots));
          else
            v.fill(uniform_int(rng, lo, hi));
          break;
        case RuleKind::kProgression:
          for (int r = 0; r < 3 && ok; ++r) {
            const int start = uniform_int(rng, lo, hi);
            for (int k = 0; k < 3; ++k) {
              const int val = start + k * e.param;
              if (val < lo || val > hi) ok = false;
              v[static_cast<std::size_t>(r * 3 + k)] = val;
            }
          }
          if (ok && number)
            for (int i = 0; i < 9; ++i)
              masks[static_cast<std::size_t>(i)] = detail::random_mask(rng, slots, v[static_cast<std::size_t>(i)]);
          break;
        case RuleKind::kArithmetic:
          if (number) {
            ok = false;
            break;
          }
          for (int r = 0; r < 3 && ok; ++r) {
            const int x = uniform_int(rng, lo, hi);
            const int y = uniform_int(rng, std::max(lo, 1), hi);
            const int z = x + e.param * y;
            if (z < lo || z > hi) ok = false;
            v[static_cast<std::size_t>(r * 3)] = x;
            v[static_cast<std::size_t>(r * 3 + 1)] = y;
            v[static_cast<std::size_t>(r * 3 + 2)] = z;
          }
          break;
        case RuleKind::kDistributeThree: {
          std::array<int, 3> set{};
          if (number) {
            for (auto& s : set) s = detail::random_nonempty_mask(rng, slots);
          } else {
            for (auto& s : set) s = uniform_int(rng, lo, hi);
          }
          if (set[0] == set[1] || set[1] == set[2] || set[0] == set[2]) {
            ok = false;
            break;
          }
          for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k) {
              const int val = set[static_cast<std::size_t>((k + r) % 3)];
              if (number)
                masks[static_cast<std::size_t>(r * 3 + k)] = static_cast<std::uint16_t>(val);
              else
                v[static_cast<std::size_t>(r * 3 + k)] = val;
            }
          break;
        }
      }
      if (!ok) continue;
      for (int i = 0; i < 9; ++i) {
        auto& cell = grid.cells[static_cast<std::size_t>(i)];
        if (number)
          cell.occupancy = masks[static_cast<std::size_t>(i)];
        else
          detail::set(cell, e.attribute, v[static_cast<std::size_t>(i)]);
      }
      done = true;
    }
    if (!done) {
      throw GenerationRetryExhausted("cannot satisfy " + std::string(rule_name(e.rule)) + " on " +
                                     std::string(attribute_name(e.attribute)) + " within attribute range");
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

struct Shape {
  int type;
  double cx, cy, radius, fill;
  std::vector<std::pair<double, double>> normals;  // empty for circles
  double apothem = 0;

  Shape(int type_, double cx_, double cy_, double radius_, double fill_)
      : type(type_), cx(cx_), cy(cy_), radius(radius_), fill(fill_) {
    if (type == 4) return;
    const int sides = type + 3;
    // First vertex points up; squares are turned to sit on an edge.
    const double base = (sides == 4) ? std::numbers::pi / 4 : -std::numbers::pi / 2;
    apothem = radius * std::cos(std::numbers::pi / sides);
    for (int k = 0; k < sides; ++k) {
      const double mid = base + 2 * std::numbers::pi * (k + 0.5) / sides;
      normals.emplace_back(std::cos(mid), std::sin(mid));
    }
  }

  // Signed distance (convex polygon or circle) in unit coordinates. It is
  // 1-Lipschitz, which the renderer relies on to skip supersampling.
  double distance(double px, double py) const {
    const double dx = px - cx;
    const double dy = py - cy;
    if (normals.empty()) return std::sqrt(dx * dx + dy * dy) - radius;
    double d = -1e9;
    for (const auto& [nx, ny] : normals) d = std::max(d, dx * nx + dy * ny - apothem);
    return d;
  }
};

inline double fill_intensity(int color) { return 255.0 - 255.0 * color / (kNumColors - 1); }

}  // namespace detail

/// Radius of an entity of `size` in a slot of the given extent.
inline double size_radius(int size, double extent) { return extent * (0.45 + 0.11 * size); }

/// Deterministic raster of one cell: black anti-aliased outlines, grey fill,
/// white background.
inline Cell render_cell(const CellAttributes& attrs, Configuration configuration, int resolution) {
  const Layout layout = layout_of(configuration);
  std::vector<detail::Shape> shapes;
  auto add = [&](const EntityAttributes& e, const Slot& s) {
    shapes.emplace_back(e.type, s.cx, s.cy, size_radius(e.size, s.extent), detail::fill_intensity(e.color));
  };
  if (layout.fixed && attrs.fixed_component && layout.fixed_drawn_first) add(*attrs.fixed_component, *layout.fixed);
  for (std::size_t i = 0; i < layout.governed.size(); ++i)
    if (attrs.occupancy & (1u << i)) add(attrs.entity, layout.governed[i]);
  if (layout.fixed && attrs.fixed_component && !layout.fixed_drawn_first) add(*attrs.fixed_component, *layout.fixed);

  constexpr int kSub = 4;
  const double line = 0.022;
  std::vector<std::uint8_t> px(static_cast<std::size_t>(resolution) * resolution);
  const double margin = line / 2 + std::sqrt(0.5) / resolution;
  auto shade = [&](double u, double v) {
    double value = 255.0;
    for (const auto& s : shapes) {
      const double d = s.distance(u, v);
      if (std::abs(d) <= line / 2)
        value = 0.0;
      else if (d < 0)
        value = s.fill;
    }
    return value;
  };
  for (int y = 0; y < resolution; ++y) {
    for (int x = 0; x < resolution; ++x) {
      const double cu = (x + 0.5) / resolution;
      const double cv = (y + 0.5) / resolution;
      bool flat = true;
      for (const auto& s : shapes) flat = flat && std::abs(s.distance(cu, cv)) > margin;
      double mean;
      if (flat) {
        mean = shade(cu, cv);
      } else {
        double acc = 0;
        for (int sy = 0; sy < kSub; ++sy)
          for (int sx = 0; sx < kSub; ++sx)
            acc += shade((x + (sx + 0.5) / kSub) / resolution, (y + (sy + 0.5) / kSub) / resolution);
        mean = acc / (kSub * kSub);
      }
      px[static_cast<std::size_t>(y) * resolution + x] = static_cast<std::uint8_t>(std::lround(mean));
    }
  }
  return Cell(resolution, std::move(px));
}

// ---------------------------------------------------------------------------
// Problems

/// Brute-force oracle: does row 3 completed with candidate k satisfy every
/// rule? Works on the stored attributes, so no image decoding is involved.
inline bool verify_rules(const RpmProblem& problem, int candidate_index) {
  if (!problem.rules()) throw UnsupportedProblem("problem " + problem.id() + " carries no rule metadata");
  if (candidate_index < 0 || candidate_index >= static_cast<int>(kCandidateCells)) {
    throw RejectedInput("candidate index outside [0,7]");
  }
  const auto& ann = *problem.rules();
  const std::array<CellAttributes, 3> reference{ann.cells[0], ann.cells[1], ann.cells[2]};
  const std::array<CellAttributes, 3> row{ann.cells[6], ann.cells[7],
                                          ann.cells[kContextCells + static_cast<std::size_t>(candidate_index)]};
  return row_satisfies(ann.system, row, reference);
}

inline std::size_t count_valid_candidates(const RpmProblem& problem) {
  std::size_t n = 0;
  for (int k = 0; k < static_cast<int>(kCandidateCells); ++k) n += verify_rules(problem, k) ? 1 : 0;
  return n;
}

namespace detail {

inline CellAttributes perturb(const CellAttributes& answer, Configuration configuration, int max_attributes,
                              Rng& rng) {
  std::vector<Attribute> attrs{Attribute::kType, Attribute::kSize, Attribute::kColor};
  if (is_grid(configuration)) attrs.push_back(Attribute::kNumber);
  std::shuffle(attrs.begin(), attrs.end(), rng);
  const int n = uniform_int(rng, 1, std::min<int>(max_attributes, static_cast<int>(attrs.size())));
  CellAttributes out = answer;
  for (int i = 0; i < n; ++i) {
    const Attribute a = attrs[static_cast<std::size_t>(i)];
    if (a == Attribute::kNumber) {
      const int slots = slot_count(configuration);
      std::uint16_t m = out.occupancy;
      while (m == out.occupancy) m = random_nonempty_mask(rng, slots);
      out.occupancy = m;
    } else {
      const auto [lo, hi] = attribute_range(a, configuration);
      int v = get(out, a);
      while (v == get(out, a)) v = uniform_int(rng, lo, hi);
      set(out, a, v);
    }
  }
  return out;
}

}  // namespace detail

/// Generates one uniquely solvable problem of the given configuration.
inline RpmProblem generate_problem(const GeneratorConfig& config, Configuration configuration, Rng& rng,
                                   std::string id = "mini") {
  config.validate();
  for (int attempt = 0; attempt < config.max_problem_retries; ++attempt) {
    const RuleSystem rules = sample_rule_system(config, configuration, rng);
    AttributeGrid grid;
    try {
      grid = instantiate_grid(rules, configuration, rng);
    } catch (const GenerationRetryExhausted&) {
      continue;
    }
    const CellAttributes& answer = grid.cells[8];
    const std::array<CellAttributes, 3> reference{grid.cells[0], grid.cells[1], grid.cells[2]};

    std::vector<CellAttributes> distractors;
    bool failed = false;
    while (distractors.size() < kCandidateCells - 1 && !failed) {
      bool found = false;
      for (int t = 0; t < config.max_distractor_attempts; ++t) {
        CellAttributes d = detail::perturb(answer, configuration, config.max_perturbed_attributes, rng);
        if (d == answer || std::ranges::find(distractors, d) != distractors.end()) continue;
        if (row_satisfies(rules, {grid.cells[6], grid.cells[7], d}, reference)) continue;
        distractors.push_back(d);
        found = true;
        break;
      }
      failed = !found;
    }
    if (failed) continue;

    const int answer_index = static_cast<int>(uniform_index(rng, kCandidateCells));
    RuleAnnotation ann;
    ann.system = rules;
    for (std::size_t i = 0; i < kContextCells; ++i) ann.cells[i] = grid.cells[i];
    std::size_t next = 0;
    for (std::size_t k = 0; k < kCandidateCells; ++k) {
      ann.cells[kContextCells + k] = static_cast<int>(k) == answer_index ? answer : distractors[next++];
    }

    std::array<Cell, kContextCells> context;
    std::array<Cell, kCandidateCells> candidates;
    for (std::size_t i = 0; i < kContextCells; ++i) {
      context[i] = render_cell(ann.cells[i], configuration, config.resolution);
    }
    for (std::size_t k = 0; k < kCandidateCells; ++k) {
      candidates[k] = render_cell(ann.cells[kContextCells + k], configuration, config.resolution);
    }
    RpmProblem problem(std::move(id), std::move(context), std::move(candidates), configuration, answer_index,
                       std::move(ann));
    // Distinct attributes can still render identically (e.g. tiny changes
    // hidden by the outline); reject those so the answer stays unique.
    bool pixel_unique = true;
    for (std::size_t k = 0; k < kCandidateCells && pixel_unique; ++k) {
      if (static_cast<int>(k) == answer_index) continue;
      pixel_unique = !(problem.candidates()[k] == problem.candidates()[static_cast<std::size_t>(answer_index)]);
    }
    if (!pixel_unique || count_valid_candidates(problem) != 1) continue;
    return problem;
  }
  throw GenerationRetryExhausted("could not generate a uniquely solvable " +
                                 std::string(configuration_name(configuration)) + " problem after " +
                                 std::to_string(config.max_problem_retries) + " attempts");
}

/// Problem `index` of `configuration` drawn from its own seeded stream, so
/// output does not depend on how work is split across workers.
inline RpmProblem generate_indexed(const GeneratorConfig& config, Configuration configuration, std::size_t index) {
  Rng rng(derive_seed(config.seed, (static_cast<std::uint64_t>(configuration_index(configuration)) << 40) | index));
  char id[64];
  std::snprintf(id, sizeof(id), "%s_%06zu", std::string(configuration_name(configuration)).c_str(), index);
  return generate_problem(config, configuration, rng, id);
}

/// `count_per_configuration` problems for each configured layout, ordered
/// by configuration then index.
inline std::vector<RpmProblem> generate_dataset(const GeneratorConfig& config, std::size_t count_per_configuration,
                                                unsigned workers = 1) {
  config.validate();
  struct Job {
    Configuration configuration;
    std::size_t index;
  };
  std::vector<Job> jobs;
  for (Configuration c : config.configurations)
    for (std::size_t i = 0; i < count_per_configuration; ++i) jobs.push_back({c, i});
  std::vector<std::optional<RpmProblem>> out(jobs.size());
  std::vector<std::exception_ptr> errors(std::max(1u, workers));
  auto run = [&](unsigned w, unsigned stride) {
    try {
      for (std::size_t j = w; j < jobs.size(); j += stride) {
        out[j] = generate_indexed(config, jobs[j].configuration, jobs[j].index);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (workers <= 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w) threads.emplace_back(run, w, workers);
    for (auto& t : threads) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<RpmProblem> problems;
  problems.reserve(out.size());
  for (auto& p : out) problems.push_back(std::move(*p));
  return problems;
}

}  // namespace prd::mini_raven
