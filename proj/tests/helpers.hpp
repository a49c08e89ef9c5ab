#pragma once

#include <cmath>
#include <vector>

#include "prd/mini_raven.hpp"
#include "prd/problem.hpp"

namespace prd::fixtures {

/// Cell filled with a single grey level.
inline Cell flat_cell(int size, std::uint8_t value) {
  return Cell(size, std::vector<std::uint8_t>(static_cast<std::size_t>(size) * size, value));
}

/// Cell whose pixels follow a deterministic pattern keyed by `seed`.
inline Cell pattern_cell(int size, unsigned seed) {
  std::vector<std::uint8_t> px(static_cast<std::size_t>(size) * size);
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = static_cast<std::uint8_t>((i * 31 + seed * 97 + (i * i) % 13) % 256);
  return Cell(size, std::move(px));
}

/// Problem with 16 distinct pattern cells.
inline RpmProblem pattern_problem(const std::string& id, unsigned seed, std::optional<int> answer = std::nullopt,
                                  Configuration c = Configuration::kCenter, int size = 16) {
  std::array<Cell, kContextCells> ctx;
  std::array<Cell, kCandidateCells> cand;
  for (unsigned i = 0; i < 8; ++i) ctx[i] = pattern_cell(size, seed * 16 + i);
  for (unsigned i = 0; i < 8; ++i) cand[i] = pattern_cell(size, seed * 16 + 8 + i);
  return RpmProblem(id, ctx, cand, c, answer);
}

/// Small generated Center problems at a reduced resolution.
inline std::vector<RpmProblem> small_generated(std::size_t count, std::uint64_t seed, int resolution = 32,
                                               std::vector<Configuration> configs = {Configuration::kCenter}) {
  mini_raven::GeneratorConfig g;
  g.configurations = std::move(configs);
  g.resolution = resolution;
  g.seed = seed;
  return mini_raven::generate_dataset(g, count, 1);
}

/// Upper tail of the chi-square distribution (regularized upper incomplete
/// gamma), by series / continued fraction.
inline double chi_square_p(double x, double dof) {
  const double a = dof / 2, z = x / 2;
  if (z <= 0) return 1.0;
  const double lg = std::lgamma(a);
  if (z < a + 1) {
    double sum = 1.0 / a, term = sum;
    for (int n = 1; n < 1000; ++n) {
      term *= z / (a + n);
      sum += term;
      if (term < sum * 1e-15) break;
    }
    return 1.0 - sum * std::exp(-z + a * std::log(z) - lg);
  }
  double b = z + 1 - a, c = 1e300, d = 1 / b, h = d;
  for (int i = 1; i < 1000; ++i) {
    const double an = -i * (i - a);
    b += 2;
    d = an * d + b;
    if (std::abs(d) < 1e-300) d = 1e-300;
    c = b + an / c;
    if (std::abs(c) < 1e-300) c = 1e-300;
    d = 1 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1) < 1e-15) break;
  }
  return std::exp(-z + a * std::log(z) - lg) * h;
}

/// Pearson statistic of observed counts against a uniform expectation.
inline double chi_square_uniform(const std::vector<std::size_t>& counts) {
  double total = 0;
  for (auto c : counts) total += static_cast<double>(c);
  const double expected = total / static_cast<double>(counts.size());
  double stat = 0;
  for (auto c : counts) stat += (c - expected) * (c - expected) / expected;
  return stat;
}

}  // namespace prd::fixtures
