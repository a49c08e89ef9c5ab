#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "helpers.hpp"
#include "prd/inference.hpp"

using namespace prd;

namespace {

ModelConfig small_model(DistanceMeasure m = DistanceMeasure::kL1) {
  ModelConfig c;
  c.backbone.input_resolution = 16;
  c.backbone.relation_dim = 12;
  c.head.hidden = 10;
  c.head.measure = m;
  return c;
}

RpmProblem swap_rows(const RpmProblem& p) {
  auto ctx = p.context();
  std::swap_ranges(ctx.begin(), ctx.begin() + 3, ctx.begin() + 3);
  return RpmProblem(p.id(), ctx, p.candidates(), p.configuration(), p.answer());
}

RpmProblem permute_candidates(const RpmProblem& p, const std::array<int, 8>& perm) {
  std::array<Cell, kCandidateCells> cands = p.candidates();
  for (std::size_t k = 0; k < 8; ++k) cands[k] = p.candidates()[static_cast<std::size_t>(perm[k])];
  return RpmProblem(p.id(), p.context(), cands, p.configuration());
}

}  // namespace

TEST(Argmax, FirstMaximumWins) {
  const std::vector<double> peak{0.1, 0.1, 0.1, 0.1, 0.1, 0.9, 0.1, 0.1};
  EXPECT_EQ(argmax_lowest(peak), 5);
  const std::vector<double> flat(8, 0.5);
  EXPECT_EQ(argmax_lowest(flat), 0);
  const std::vector<double> pair{0.2, 0.7, 0.1, 0.7};
  EXPECT_EQ(argmax_lowest(pair), 1);
  EXPECT_THROW(argmax_lowest(std::vector<double>{}), RejectedInput);
}

TEST(Inference, CombinedScoreIsMeanOfBothRows) {
  PrdModel<float> model(small_model(), 3);
  for (unsigned s = 0; s < 5; ++s) {
    const Solution sol = solve(fixtures::pattern_problem("p", s), model);
    std::array<double, 8> combined{};
    for (std::size_t k = 0; k < 8; ++k) {
      const auto& c = sol.scores[k];
      EXPECT_EQ(c.candidate_index, static_cast<int>(k));
      EXPECT_EQ(c.combined, (c.s_a + c.s_b) / 2);
      EXPECT_GE(c.combined, 0.0);
      EXPECT_LE(c.combined, 1.0);
      combined[k] = c.combined;
    }
    EXPECT_EQ(sol.prediction, argmax_lowest(combined));
  }
}

TEST(Inference, SharedRowsMatchPerCandidateScoring) {
  for (DistanceMeasure m : {DistanceMeasure::kDifference, DistanceMeasure::kL1, DistanceMeasure::kL2,
                            DistanceMeasure::kConcat}) {
    PrdModel<float> model(small_model(m), 4);
    const RpmProblem p = fixtures::pattern_problem("q", 9);
    const auto fast = score_candidates(p, model);
    const auto rows = rows_of(p);
    const auto profile = model.profile();
    for (int k = 0; k < 8; ++k) {
      // Fresh extraction of all three rows for every candidate.
      const auto ra = extract_relation(preprocess_row<float>(rows.row_a, profile), model.backbone());
      const auto rb = extract_relation(preprocess_row<float>(rows.row_b, profile), model.backbone());
      const auto rc = extract_relation(preprocess_row<float>(complete_row(p, k), profile), model.backbone());
      const double sa = score(ra, rc, model.head(), false);
      const double sb = score(rb, rc, model.head(), false);
      EXPECT_NEAR(fast[static_cast<std::size_t>(k)].s_a, sa, 1e-5);
      EXPECT_NEAR(fast[static_cast<std::size_t>(k)].s_b, sb, 1e-5);
    }
  }
}

TEST(Inference, SwappingContextRowsKeepsScores) {
  PrdModel<float> model(small_model(), 5);
  for (const auto& p : fixtures::small_generated(14, 21, 32)) {
    const Solution a = solve(p, model), b = solve(swap_rows(p), model);
    EXPECT_EQ(a.prediction, b.prediction);
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_EQ(a.scores[k].combined, b.scores[k].combined);
      EXPECT_EQ(a.scores[k].s_a, b.scores[k].s_b);
    }
  }
}

TEST(Inference, CandidateOrderIsEquivariant) {
  PrdModel<float> model(small_model(), 6);
  Rng rng(8);
  for (const auto& p : fixtures::small_generated(14, 22, 32)) {
    std::array<int, 8> perm{};
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Solution a = solve(p, model), b = solve(permute_candidates(p, perm), model);
    for (std::size_t k = 0; k < 8; ++k) {
      EXPECT_NEAR(b.scores[k].combined, a.scores[static_cast<std::size_t>(perm[k])].combined, 1e-6);
    }
    std::array<double, 8> sorted{};
    for (std::size_t k = 0; k < 8; ++k) sorted[k] = a.scores[k].combined;
    std::sort(sorted.begin(), sorted.end());
    if (sorted[7] - sorted[6] > 1e-5) {
      EXPECT_EQ(perm[static_cast<std::size_t>(b.prediction)], a.prediction);
    }
  }
}

TEST(Inference, WorkerCountDoesNotChangeResults) {
  PrdModel<float> model(small_model(), 7);
  const auto problems = fixtures::small_generated(40, 23, 32);
  const auto one = solve_all(problems, model, 1), three = solve_all(problems, model, 3);
  ASSERT_EQ(one.size(), three.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].prediction, three[i].prediction);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(one[i].scores[k].combined, three[i].scores[k].combined);
  }
  EXPECT_TRUE(solve_all(std::span<const RpmProblem>{}, model, 2).empty());
}

TEST(Inference, NonFiniteModelIsRejected) {
  PrdModel<float> model(small_model(), 8);
  model.head().params()[0].second->value(0, 0) = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(solve(fixtures::pattern_problem("n", 1), model), ModelError);
}

TEST(Report, TalliesAreConsistent) {
  const auto problems = fixtures::small_generated(
      70, 24, 32, std::vector<Configuration>(kAllConfigurations.begin(), kAllConfigurations.end()));
  Rng rng(5);
  std::vector<int> predictions;
  for (std::size_t i = 0; i < problems.size(); ++i) predictions.push_back(uniform_int(rng, 0, 7));
  const EvalReport r = make_report(problems, predictions);
  std::size_t total = 0, correct = 0, expected_correct = 0;
  for (const auto& [c, t] : r.per_configuration) {
    total += t.total;
    correct += t.correct;
  }
  for (std::size_t i = 0; i < problems.size(); ++i) expected_correct += (*problems[i].answer() == predictions[i]);
  EXPECT_EQ(total, problems.size());
  EXPECT_EQ(correct, r.overall.correct);
  EXPECT_EQ(correct, expected_correct);
  EXPECT_EQ(r.per_configuration.size(), 7u);
  const auto j = r.to_json();
  EXPECT_DOUBLE_EQ(j.at("mean_accuracy").get<double>(), r.mean_accuracy());
  EXPECT_NE(r.to_text(true).find("PRD"), std::string::npos);
}

TEST(Report, RandomPredictorNearChance) {
  std::vector<RpmProblem> problems;
  Rng rng(6);
  for (unsigned i = 0; i < 4000; ++i)
    problems.push_back(fixtures::pattern_problem("r" + std::to_string(i), i % 7, uniform_int(rng, 0, 7), Configuration::kCenter, 4));
  std::vector<int> predictions;
  for (std::size_t i = 0; i < problems.size(); ++i) predictions.push_back(uniform_int(rng, 0, 7));
  const double acc = make_report(problems, predictions).mean_accuracy();
  const double sd = std::sqrt(0.125 * 0.875 / 4000);
  EXPECT_NEAR(acc, 0.125, 4 * sd);
}

TEST(Report, UnlabelledInputIsRejected) {
  const auto problems = fixtures::small_generated(3, 25, 32);
  std::vector<RpmProblem> bare;
  for (const auto& p : problems) bare.push_back(p.without_labels());
  const std::vector<int> predictions{0, 1, 2};
  EXPECT_THROW(make_report(bare, predictions), RejectedInput);
  EXPECT_THROW(make_report(problems, std::vector<int>{0}), RejectedInput);
  PrdModel<float> model(small_model(), 9);
  EXPECT_THROW(evaluate(bare, model), RejectedInput);
}

TEST(Report, PublishedReferenceValues) {
  const auto& prd_row = kReferenceTable1[5];
  EXPECT_STREQ(prd_row.name, "PRD");
  EXPECT_DOUBLE_EQ(prd_row.values[0], 50.74);
  EXPECT_DOUBLE_EQ(prd_row.values[1], 74.55);
  EXPECT_DOUBLE_EQ(prd_row.values[7], 23.40);
  EXPECT_DOUBLE_EQ(kReferenceTable1[3].values[0], 12.50);
  EXPECT_DOUBLE_EQ(kReferenceTable1[4].values[0], 28.50);
  EXPECT_EQ(kReferenceSubsets[3].values, prd_row.values);
  EXPECT_DOUBLE_EQ(kReferenceSubsets[0].values[0], 32.21);
  EXPECT_DOUBLE_EQ(kReferenceDistances[1].second, 50.74);
  EXPECT_DOUBLE_EQ(kReferenceDistances[3].second, 38.72);
  // Averages are the mean of the seven configurations, to rounding.
  for (const auto* row : {&kReferenceTable1[5], &kReferenceSubsets[0], &kReferenceSubsets[2]}) {
    const double mean = std::accumulate(row->values.begin() + 1, row->values.end(), 0.0) / 7;
    EXPECT_NEAR(mean, row->values[0], 0.01) << row->name;
  }
}

TEST(Study, RejectsBadRequests) {
  StudyConfig cfg;
  cfg.work_dir = std::filesystem::temp_directory_path() / "prd_study_reject";
  const auto problems = fixtures::small_generated(5, 26, 32);
  EXPECT_THROW(run_distance_ablation(problems, {}, problems, cfg, {"l1", "cosine"}), RejectedInput);
  std::vector<SubsetSpec> bad{{"none", SubsetSpec::Source::kTrain, 0.0}};
  EXPECT_THROW(run_subset_study(problems, cfg, bad), RejectedInput);
  TrainResult empty_run;
  empty_run.checkpoints.push_back({1, "x"});
  Rng rng(1);
  EXPECT_THROW(select_checkpoint(empty_run, SelectionMode::kValidated, std::span<const RpmProblem>{}, rng),
               RejectedInput);
  EXPECT_EQ(parse_policy("label_free"), CheckpointPolicy::kLabelFree);
  EXPECT_FALSE(parse_policy("best").has_value());
  const auto subsets = default_subsets();
  ASSERT_EQ(subsets.size(), 4u);
  EXPECT_EQ(subsets[1].source, SubsetSpec::Source::kTest);
}

TEST(Study, TinyDistanceAblationRuns) {
  const auto labelled = fixtures::small_generated(10, 27, 32);
  StudyConfig cfg;
  cfg.train.model = small_model();
  cfg.train.batch_size = 4;
  cfg.train.max_steps = 3;
  cfg.train.checkpoint_every = 3;
  cfg.train.plateau_window = 2;
  cfg.work_dir = std::filesystem::temp_directory_path() / "prd_study_tiny";
  std::filesystem::remove_all(cfg.work_dir);
  const auto pool = detail::strip_labels(labelled);
  const StudyTable t = run_distance_ablation(pool, {}, labelled, cfg, {"difference", "concat"});
  ASSERT_EQ(t.rows.size(), 2u);
  EXPECT_EQ(t.rows[0].name, "difference");
  EXPECT_EQ(t.rows[1].report.overall.total, 10u);
  EXPECT_NE(t.to_text().find("concat"), std::string::npos);
}
