#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "helpers.hpp"
#include "prd/arg.hpp"

using namespace prd;
using prd::fixtures::pattern_problem;

namespace {

std::vector<RpmProblem> pool_of(std::size_t n) {
  std::vector<RpmProblem> pool;
  for (std::size_t i = 0; i < n; ++i) pool.push_back(pattern_problem("p" + std::to_string(i), static_cast<unsigned>(i)));
  return pool;
}

bool same_cells(const Row& r, std::array<Cell, 3> want) {
  std::array<Cell, 3> got{r[0], r[1], r[2]};
  for (const Cell& c : got) {
    auto it = std::find(want.begin(), want.end(), c);
    if (it == want.end()) return false;
    *it = Cell();
  }
  return true;
}

}  // namespace

TEST(Arg, RealPairIsBothCompleteRows) {
  const auto pool = pool_of(3);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const PairSample s = sample_real_pair(pool[1], rng, 1);
    const ProblemRows rows = rows_of(pool[1]);
    EXPECT_EQ(s.label, 1);
    EXPECT_EQ(s.provenance, Provenance::kReal);
    if (s.swapped) {
      EXPECT_EQ(s.row_1, rows.row_b);
      EXPECT_EQ(s.row_2, rows.row_a);
    } else {
      EXPECT_EQ(s.row_1, rows.row_a);
      EXPECT_EQ(s.row_2, rows.row_b);
    }
  }
}

TEST(Arg, FakePairsHaveTheirDocumentedStructure) {
  const auto pool = pool_of(5);
  Rng rng(2);
  std::map<Provenance, int> seen;
  for (int i = 0; i < 2000; ++i) {
    const std::size_t src = uniform_index(rng, pool.size());
    const PairSample s = sample_fake_pair(pool, src, rng);
    const ProblemRows rows = rows_of(pool[src]);
    ++seen[s.provenance];
    EXPECT_EQ(s.label, 0);
    ASSERT_TRUE(s.row_1 == rows.row_a || s.row_1 == rows.row_b);
    const Row& gamma = s.row_1 == rows.row_a ? rows.row_b : rows.row_a;
    switch (s.provenance) {
      case Provenance::kFakeCatA: {
        ASSERT_NE(s.row2_source, src);
        const ProblemRows other = rows_of(pool[s.row2_source]);
        EXPECT_TRUE(s.row_2 == other.row_a || s.row_2 == other.row_b);
        break;
      }
      case Provenance::kFakeCatBRowC: {
        bool ok = false;
        for (int g = 0; g < 3; ++g) ok = ok || same_cells(s.row_2, {rows.partial[0], rows.partial[1], gamma[static_cast<std::size_t>(g)]});
        EXPECT_TRUE(ok);
        break;
      }
      case Provenance::kFakeCatBRowGamma: {
        bool ok = false;
        for (const Cell& cand : pool[src].candidates()) ok = ok || same_cells(s.row_2, {gamma[0], gamma[1], cand});
        EXPECT_TRUE(ok);
        break;
      }
      case Provenance::kReal: FAIL();
    }
  }
  EXPECT_EQ(seen.size(), 3u);
}

TEST(Arg, PermutationIndexDescribesCellOrder) {
  const auto pool = pool_of(1);
  Rng rng(4);
  for (int i = 0; i < 300; ++i) {
    const PairSample s = sample_fake_pair(pool, 0, rng);
    ASSERT_NE(s.provenance, Provenance::kFakeCatA);  // single-problem pool falls back
    const auto& perm = kPermutations[s.permutation];
    // Undo the permutation and check the canonical order.
    std::array<Cell, 3> canonical;
    for (int k = 0; k < 3; ++k) canonical[perm[static_cast<std::size_t>(k)]] = s.row_2[static_cast<std::size_t>(k)];
    const ProblemRows rows = rows_of(pool[0]);
    if (s.provenance == Provenance::kFakeCatBRowC) {
      EXPECT_EQ(canonical[0], rows.partial[0]);
      EXPECT_EQ(canonical[1], rows.partial[1]);
    } else {
      const Row& gamma = s.row_1 == rows.row_a ? rows.row_b : rows.row_a;
      EXPECT_EQ(canonical[0], gamma[0]);
      EXPECT_EQ(canonical[1], gamma[1]);
    }
  }
}

TEST(Arg, SmallPoolPolicy) {
  const auto pool = pool_of(1);
  Rng rng(5);
  bool threw = false;
  for (int i = 0; i < 64 && !threw; ++i) {
    try {
      sample_fake_pair(pool, 0, rng, SmallPoolPolicy::kThrow);
    } catch (const RejectedInput&) {
      threw = true;
    }
  }
  EXPECT_TRUE(threw);
}

TEST(Arg, BatchesAreHomogeneousAndSized) {
  const auto pool = pool_of(4);
  Rng rng(6);
  const PairBatch real = make_batch(pool, BatchKind::kReal, 32, rng);
  const PairBatch fake = make_batch(pool, BatchKind::kFake, 32, rng);
  EXPECT_EQ(real.size(), 32u);
  EXPECT_EQ(fake.size(), 32u);
  EXPECT_NO_THROW(real.check_homogeneous());
  EXPECT_NO_THROW(fake.check_homogeneous());
  for (const auto& s : real.samples) EXPECT_EQ(s.label, 1);
  for (const auto& s : fake.samples) EXPECT_EQ(s.label, 0);

  PairBatch mixed = real;
  mixed.samples[5] = fake.samples[0];
  EXPECT_THROW(mixed.check_homogeneous(), ContractViolation);
}

TEST(Arg, EmptyPoolOrBatchIsRejected) {
  Rng rng(7);
  std::vector<RpmProblem> none;
  EXPECT_THROW(make_batch(none, BatchKind::kReal, 4, rng), RejectedInput);
  const auto pool = pool_of(2);
  EXPECT_THROW(make_batch(pool, BatchKind::kReal, 0, rng), RejectedInput);
}

TEST(Arg, SameSeedSameBatches) {
  const auto pool = pool_of(6);
  Rng a(9), b(9);
  for (int i = 0; i < 5; ++i) {
    const PairBatch x = make_batch(pool, BatchKind::kFake, 16, a);
    const PairBatch y = make_batch(pool, BatchKind::kFake, 16, b);
    for (std::size_t k = 0; k < x.size(); ++k) {
      EXPECT_EQ(x.samples[k].row_2, y.samples[k].row_2);
      EXPECT_EQ(x.samples[k].provenance, y.samples[k].provenance);
    }
  }
}

TEST(Arg, CategoryFrequenciesRoughlyBalanced) {
  const auto pool = pool_of(10);
  Rng rng(10);
  const int n = 20000;
  int cat_a = 0, row_c = 0, swaps = 0;
  std::vector<std::size_t> perms(6, 0);
  for (int i = 0; i < n; ++i) {
    const PairSample f = sample_fake_pair(pool, uniform_index(rng, pool.size()), rng);
    if (f.provenance == Provenance::kFakeCatA) {
      ++cat_a;
    } else {
      ++perms[f.permutation];
      row_c += f.provenance == Provenance::kFakeCatBRowC;
    }
    swaps += sample_real_pair(pool[0], rng).swapped;
  }
  const double sd = std::sqrt(0.25 / n);
  EXPECT_NEAR(cat_a / double(n), 0.5, 4 * sd);
  EXPECT_NEAR(swaps / double(n), 0.5, 4 * sd);
  EXPECT_NEAR(row_c / double(n - cat_a), 0.5, 4 * std::sqrt(0.25 / (n - cat_a)));
  EXPECT_GT(fixtures::chi_square_p(fixtures::chi_square_uniform(perms), 5), 0.001);
}

TEST(ChiSquareOracle, MatchesTabulatedCriticalValues) {
  EXPECT_NEAR(fixtures::chi_square_p(11.0705, 5), 0.05, 1e-4);
  EXPECT_NEAR(fixtures::chi_square_p(14.0671, 7), 0.05, 1e-4);
  EXPECT_NEAR(fixtures::chi_square_p(18.4753, 7), 0.01, 1e-4);
  EXPECT_NEAR(fixtures::chi_square_p(2.0, 2), std::exp(-1.0), 1e-12);
}
