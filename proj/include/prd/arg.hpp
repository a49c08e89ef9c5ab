#pragma once

// Self-labelling pair sampler. Real pairs are the two complete rows of one
// problem (label 1); fake pairs put one of those rows next to a row taken
// from another problem (Cat-A) or a shuffled row assembled from the same
// problem's remaining cells (Cat-B), label 0. Samples are drawn online:
// nothing is cached between calls.

#include <array>
#include <span>
#include <string_view>
#include <vector>

#include "prd/errors.hpp"
#include "prd/problem.hpp"
#include "prd/random.hpp"

namespace prd {

enum class Provenance { kReal, kFakeCatA, kFakeCatBRowC, kFakeCatBRowGamma };

inline std::string_view provenance_name(Provenance p) {
  switch (p) {
    case Provenance::kReal: return "real";
    case Provenance::kFakeCatA: return "fake_cat_a";
    case Provenance::kFakeCatBRowC: return "fake_cat_b_rowC";
    case Provenance::kFakeCatBRowGamma: return "fake_cat_b_rowGamma";
  }
  return "?";
}

/// All six orderings of three cells; entry k maps output slot -> input slot.
inline constexpr std::array<std::array<std::uint8_t, 3>, 6> kPermutations = {{
    {0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0},
}};

struct PairSample {
  Row row_1;
  Row row_2;
  int label = 0;
  Provenance provenance = Provenance::kReal;
  std::size_t source = 0;       // pool index of the problem row_1 came from
  std::size_t row2_source = 0;  // pool index of the problem row_2 came from
  bool swapped = false;         // real pairs: emitted as (row_B, row_A)
  std::size_t permutation = 0;  // Cat-B: index into kPermutations
};

enum class BatchKind { kReal, kFake };

struct PairBatch {
  BatchKind kind = BatchKind::kReal;
  std::vector<PairSample> samples;

  int label() const { return kind == BatchKind::kReal ? 1 : 0; }
  std::size_t size() const { return samples.size(); }

  /// Throws ContractViolation unless every sample carries the batch label.
  void check_homogeneous() const {
    for (const auto& s : samples) {
      if (s.label != label() || (s.provenance == Provenance::kReal) != (s.label == 1)) {
        throw ContractViolation("mini-batch mixes real and fake pairs");
      }
    }
  }
};

/// What to do when Cat-A is drawn from a single-problem pool.
enum class SmallPoolPolicy { kFallBackToCatB, kThrow };

inline PairSample sample_real_pair(const RpmProblem& problem, Rng& rng, std::size_t source = 0) {
  const ProblemRows rows = rows_of(problem);
  PairSample s;
  s.label = 1;
  s.provenance = Provenance::kReal;
  s.source = s.row2_source = source;
  s.swapped = coin(rng);
  s.row_1 = s.swapped ? rows.row_b : rows.row_a;
  s.row_2 = s.swapped ? rows.row_a : rows.row_b;
  return s;
}

inline PairSample sample_fake_pair(std::span<const RpmProblem> pool, std::size_t source, Rng& rng,
                                   SmallPoolPolicy policy = SmallPoolPolicy::kFallBackToCatB) {
  if (source >= pool.size()) throw RejectedInput("source index outside the pool");
  const RpmProblem& problem = pool[source];
  const ProblemRows rows = rows_of(problem);
  const bool first_is_a = coin(rng);

  PairSample s;
  s.label = 0;
  s.source = s.row2_source = source;
  s.row_1 = first_is_a ? rows.row_a : rows.row_b;

  bool cat_a = uniform01(rng) < 0.5;
  if (cat_a && pool.size() < 2) {
    if (policy == SmallPoolPolicy::kThrow) throw RejectedInput("Cat-A fake pair needs a pool of at least 2 problems");
    cat_a = false;
  }
  if (cat_a) {
    std::size_t other = uniform_index(rng, pool.size() - 1);
    if (other >= source) ++other;
    const ProblemRows other_rows = rows_of(pool[other]);
    s.provenance = Provenance::kFakeCatA;
    s.row2_source = other;
    s.row_2 = coin(rng) ? other_rows.row_a : other_rows.row_b;
    return s;
  }

  const Row& gamma = first_is_a ? rows.row_b : rows.row_a;
  std::array<Cell, 3> cells;
  if (coin(rng)) {
    s.provenance = Provenance::kFakeCatBRowC;
    cells = {rows.partial[0], rows.partial[1], gamma[uniform_index(rng, 3)]};
  } else {
    s.provenance = Provenance::kFakeCatBRowGamma;
    cells = {gamma[0], gamma[1], problem.candidates()[uniform_index(rng, kCandidateCells)]};
  }
  s.permutation = uniform_index(rng, kPermutations.size());
  const auto& perm = kPermutations[s.permutation];
  s.row_2 = Row(cells[perm[0]], cells[perm[1]], cells[perm[2]]);
  return s;
}

/// `size` independent samples, each from a uniformly drawn source problem.
inline PairBatch make_batch(std::span<const RpmProblem> pool, BatchKind kind, std::size_t size, Rng& rng,
                            SmallPoolPolicy policy = SmallPoolPolicy::kFallBackToCatB) {
  if (pool.empty()) throw RejectedInput("cannot sample pairs from an empty pool");
  if (size == 0) throw RejectedInput("batch size must be positive");
  PairBatch batch;
  batch.kind = kind;
  batch.samples.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const std::size_t src = uniform_index(rng, pool.size());
    batch.samples.push_back(kind == BatchKind::kReal ? sample_real_pair(pool[src], rng, src)
                                                     : sample_fake_pair(pool, src, rng, policy));
  }
  return batch;
}

}  // namespace prd
