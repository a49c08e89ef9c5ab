#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "prd/model.hpp"
#include "prd/problem.hpp"
#include "prd/trainer.hpp"

namespace prd {

struct CandidateScore {
  int candidate_index = 0;
  double s_a = 0;  // against row A
  double s_b = 0;  // against row B
  double combined = 0;
};

struct Solution {
  int prediction = 0;
  std::array<CandidateScore, kCandidateCells> scores{};
};

/// Highest combined score; ties go to the lowest index.
inline int argmax_lowest(std::span<const double> values) {
  if (values.empty()) throw RejectedInput("argmax of an empty list");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return static_cast<int>(best);
}

namespace detail {

inline void check_model(const PrdModel<float>& model) {
  for (const auto& [name, p] : model.params()) {
    if (!p->value.allFinite()) throw ModelError("model parameter " + name + " holds non-finite values");
  }
}

/// Scores a block of problems with one backbone pass over all their rows.
inline std::vector<Solution> solve_block(std::span<const RpmProblem> problems, const PrdModel<float>& model) {
  constexpr std::size_t kRowsPer = 2 + kCandidateCells;
  std::vector<Row> rows;
  rows.reserve(problems.size() * kRowsPer);
  for (const auto& p : problems) {
    const ProblemRows pr = rows_of(p);
    rows.push_back(pr.row_a);
    rows.push_back(pr.row_b);
    for (std::size_t k = 0; k < kCandidateCells; ++k) rows.push_back(complete_row(p, static_cast<int>(k)));
  }
  const nn::Mat<float> rel = model.relations(rows);
  const auto n = static_cast<Eigen::Index>(problems.size() * kCandidateCells);
  nn::Mat<float> ra(n, rel.cols()), rb(n, rel.cols()), rc(n, rel.cols());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto base = static_cast<Eigen::Index>(i * kRowsPer);
    for (std::size_t k = 0; k < kCandidateCells; ++k) {
      const auto row = static_cast<Eigen::Index>(i * kCandidateCells + k);
      ra.row(row) = rel.row(base);
      rb.row(row) = rel.row(base + 1);
      rc.row(row) = rel.row(base + 2 + static_cast<Eigen::Index>(k));
    }
  }
  const std::vector<double> sa = model.head().scores(ra, rc);
  const std::vector<double> sb = model.head().scores(rb, rc);
  std::vector<Solution> out(problems.size());
  for (std::size_t i = 0; i < problems.size(); ++i) {
    std::array<double, kCandidateCells> combined{};
    for (std::size_t k = 0; k < kCandidateCells; ++k) {
      CandidateScore& c = out[i].scores[k];
      c.candidate_index = static_cast<int>(k);
      c.s_a = sa[i * kCandidateCells + k];
      c.s_b = sb[i * kCandidateCells + k];
      c.combined = (c.s_a + c.s_b) / 2;
      combined[k] = c.combined;
    }
    out[i].prediction = argmax_lowest(combined);
  }
  return out;
}

}  // namespace detail

/// Eight candidate scores. Rows A and B are embedded once and shared across
/// the candidates; each completed third row is scored against both.
inline std::array<CandidateScore, kCandidateCells> score_candidates(const RpmProblem& problem,
                                                                    const PrdModel<float>& model) {
  detail::check_model(model);
  return detail::solve_block(std::span(&problem, 1), model)[0].scores;
}

inline Solution solve(const RpmProblem& problem, const PrdModel<float>& model) {
  detail::check_model(model);
  return detail::solve_block(std::span(&problem, 1), model)[0];
}

/// Solves many problems, split over `workers` threads in blocks.
inline std::vector<Solution> solve_all(std::span<const RpmProblem> problems, const PrdModel<float>& model,
                                       unsigned workers = 1, std::size_t block = 16) {
  detail::check_model(model);
  std::vector<Solution> out(problems.size());
  const std::size_t blocks = (problems.size() + block - 1) / block;
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(blocks, 1))));
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&](unsigned w) {
    try {
      for (std::size_t b = w; b < blocks; b += workers) {
        const std::size_t lo = b * block, hi = std::min(problems.size(), lo + block);
        const auto part = detail::solve_block(problems.subspan(lo, hi - lo), model);
        std::copy(part.begin(), part.end(), out.begin() + static_cast<std::ptrdiff_t>(lo));
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (unsigned w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

// ---------------------------------------------------------------------------
// Reports

struct Tally {
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Published accuracies (percent): average, then the seven configurations in
/// kAllConfigurations order.
struct ReferenceRow {
  const char* name;
  std::array<double, 8> values;
};

inline constexpr std::array<ReferenceRow, 7> kReferenceTable1 = {{
    {"ResNet+DRT (supervised)", {59.56, 58.08, 46.53, 50.40, 65.82, 67.11, 69.09, 60.11}},
    {"LEN+Teacher (supervised)", {78.30, 82.30, 58.50, 64.30, 87.00, 85.50, 88.90, 81.90}},
    {"CoPINet (supervised)", {91.42, 95.05, 77.45, 78.85, 99.10, 99.65, 98.50, 91.35}},
    {"Random", {12.50, 12.50, 12.50, 12.50, 12.50, 12.50, 12.50, 12.50}},
    {"MCPT", {28.50, 35.90, 25.95, 27.15, 29.30, 27.40, 33.10, 20.70}},
    {"PRD", {50.74, 74.55, 38.70, 34.90, 60.80, 60.30, 62.50, 23.40}},
    {"Human", {84.41, 95.45, 81.82, 79.55, 86.36, 81.81, 86.36, 81.81}},
}};

inline constexpr std::array<ReferenceRow, 4> kReferenceSubsets = {{
    {"Train 20%", {32.21, 47.45, 25.15, 22.10, 37.60, 32.65, 42.10, 18.45}},
    {"Test 20%", {31.38, 46.95, 22.75, 18.80, 37.85, 34.80, 38.15, 20.35}},
    {"Train 60%", {37.72, 64.25, 28.85, 25.20, 40.75, 42.30, 41.95, 20.75}},
    {"Full", {50.74, 74.55, 38.70, 34.90, 60.80, 60.30, 62.50, 23.40}},
}};

/// Published average accuracy per distance measure.
inline constexpr std::array<std::pair<DistanceMeasure, double>, 4> kReferenceDistances = {{
    {DistanceMeasure::kDifference, 43.66},
    {DistanceMeasure::kL1, 50.74},
    {DistanceMeasure::kL2, 48.20},
    {DistanceMeasure::kConcat, 38.72},
}};

struct EvalReport {
  std::map<Configuration, Tally> per_configuration;
  Tally overall;
  std::string model_fingerprint;
  std::string selection = "final";
  std::uint64_t seed = 0;
  std::vector<int> predictions;

  double mean_accuracy() const { return overall.accuracy(); }

  nlohmann::json to_json() const {
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [c, t] : per_configuration) {
      per[std::string(configuration_name(c))] = {{"correct", t.correct}, {"total", t.total}, {"accuracy", t.accuracy()}};
    }
    return {{"kind", "evaluation"},
            {"mean_accuracy", mean_accuracy()},
            {"correct", overall.correct},
            {"total", overall.total},
            {"per_configuration", per},
            {"model_fingerprint", model_fingerprint},
            {"selection", selection},
            {"seed", seed},
            {"predictions", predictions}};
  }

  std::string to_text(bool with_reference = true) const;
};

inline std::string format_percent(double fraction) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * fraction);
  return buf;
}

namespace detail {

inline std::string pad(const std::string& s, std::size_t width, bool right = true) {
  if (s.size() >= width) return s;
  return right ? std::string(width - s.size(), ' ') + s : s + std::string(width - s.size(), ' ');
}

/// One aligned table line: a name column then avg + seven configurations.
inline std::string table_line(const std::string& name, const std::array<std::string, 8>& cells) {
  std::string line = pad(name, 26, false);
  for (const auto& c : cells) line += pad(c, 9);
  return line + '\n';
}

inline std::string table_header(const std::string& first) {
  std::array<std::string, 8> head{"Avg"};
  for (std::size_t i = 0; i < kAllConfigurations.size(); ++i)
    head[i + 1] = std::string(configuration_label(kAllConfigurations[i]));
  return table_line(first, head);
}

inline std::array<std::string, 8> report_cells(const EvalReport& r) {
  std::array<std::string, 8> cells;
  cells[0] = format_percent(r.mean_accuracy());
  for (std::size_t i = 0; i < kAllConfigurations.size(); ++i) {
    const auto it = r.per_configuration.find(kAllConfigurations[i]);
    cells[i + 1] = it == r.per_configuration.end() ? "-" : format_percent(it->second.accuracy());
  }
  return cells;
}

inline std::array<std::string, 8> reference_cells(const ReferenceRow& row) {
  std::array<std::string, 8> cells;
  for (std::size_t i = 0; i < 8; ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", row.values[i]);
    cells[i] = buf;
  }
  return cells;
}

}  // namespace detail

inline std::string EvalReport::to_text(bool with_reference) const {
  std::string out = detail::table_header("Model");
  out += detail::table_line("this run", detail::report_cells(*this));
  out += "problems " + std::to_string(overall.correct) + "/" + std::to_string(overall.total) + " correct";
  out += ", selection " + selection + ", seed " + std::to_string(seed) + ", model " + model_fingerprint + "\n";
  if (with_reference) {
    out += "\nPublished results on RAVEN (reference only, full-scale training):\n";
    for (const auto& row : kReferenceTable1) out += detail::table_line(row.name, detail::reference_cells(row));
  }
  return out;
}

/// Builds a report from predictions; every problem must carry its answer.
inline EvalReport make_report(std::span<const RpmProblem> problems, std::span<const int> predictions) {
  if (problems.size() != predictions.size()) throw RejectedInput("one prediction per problem is required");
  EvalReport r;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& answer = problems[i].answer();
    if (!answer) throw RejectedInput("problem " + problems[i].id() + " has no answer; evaluation needs labels");
    const bool hit = *answer == predictions[i];
    Tally& t = r.per_configuration[problems[i].configuration()];
    t.total += 1;
    t.correct += hit ? 1 : 0;
    r.overall.total += 1;
    r.overall.correct += hit ? 1 : 0;
  }
  r.predictions.assign(predictions.begin(), predictions.end());
  return r;
}

/// Accuracy per configuration and overall. Answers are read only here.
inline EvalReport evaluate(std::span<const RpmProblem> problems, const PrdModel<float>& model, unsigned workers = 1) {
  for (const auto& p : problems) {
    if (!p.answer()) throw RejectedInput("problem " + p.id() + " has no answer; evaluation needs labels");
  }
  const auto solutions = solve_all(problems, model, workers);
  std::vector<int> predictions;
  predictions.reserve(solutions.size());
  for (const auto& s : solutions) predictions.push_back(s.prediction);
  EvalReport r = make_report(problems, predictions);
  r.model_fingerprint = model.fingerprint();
  return r;
}

/// Validated or label-free choice among a training run's plateau checkpoints.
inline SelectionResult select_checkpoint(const TrainResult& run, SelectionMode mode,
                                         std::span<const RpmProblem> validation, Rng& rng, unsigned workers = 1) {
  if (mode == SelectionMode::kLabelFree) return select_checkpoint(run.checkpoints, run.plateau_start, mode, rng);
  if (validation.empty()) throw RejectedInput("validated selection needs a labelled validation fold");
  for (const auto& p : validation) {
    if (!p.answer()) throw RejectedInput("validated selection needs labels; " + p.id() + " has none");
  }
  return select_checkpoint(run.checkpoints, run.plateau_start, mode, rng, [&](const CheckpointRef& c) {
    const auto model = load_model(c.path);
    return evaluate(validation, *model, workers).mean_accuracy();
  });
}

// ---------------------------------------------------------------------------
// Studies

/// How a study picks the model it evaluates after each training run.
enum class CheckpointPolicy { kFinal, kValidated, kLabelFree };

inline std::string_view policy_name(CheckpointPolicy p) {
  switch (p) {
    case CheckpointPolicy::kFinal: return "final";
    case CheckpointPolicy::kValidated: return "validated";
    case CheckpointPolicy::kLabelFree: return "label_free";
  }
  return "?";
}

inline std::optional<CheckpointPolicy> parse_policy(std::string_view s) {
  if (s == "final") return CheckpointPolicy::kFinal;
  if (s == "validated") return CheckpointPolicy::kValidated;
  if (s == "label_free" || s == "label-free") return CheckpointPolicy::kLabelFree;
  return std::nullopt;
}

struct StudyConfig {
  TrainConfig train;
  fs::path work_dir;
  std::uint64_t split_seed = 0;
  CheckpointPolicy policy = CheckpointPolicy::kFinal;
  unsigned workers = 1;
  std::function<void(const std::string&)> progress;
};

struct StudyRow {
  std::string name;
  std::size_t train_size = 0;
  EvalReport report;
};

struct StudyTable {
  std::string kind;
  nlohmann::json config;
  std::vector<StudyRow> rows;

  nlohmann::json to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json j = r.report.to_json();
      j.erase("predictions");
      j["name"] = r.name;
      j["train_size"] = r.train_size;
      rows_json.push_back(j);
    }
    return {{"kind", kind}, {"config", config}, {"rows", rows_json}};
  }

  std::string to_text() const {
    std::string out = detail::table_header(kind == "subset_study" ? "Training subset" : "Distance measure");
    for (const auto& r : rows) out += detail::table_line(r.name, detail::report_cells(r.report));
    out += "\nPublished results on RAVEN (reference only, full-scale training):\n";
    if (kind == "subset_study") {
      for (const auto& row : kReferenceSubsets) out += detail::table_line(row.name, detail::reference_cells(row));
    } else {
      for (const auto& [m, v] : kReferenceDistances) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        out += detail::table_line(std::string(measure_name(m)), {buf, "", "", "", "", "", "", ""});
      }
    }
    return out;
  }
};

namespace detail {

inline std::vector<RpmProblem> strip_labels(std::span<const RpmProblem> problems) {
  std::vector<RpmProblem> out;
  out.reserve(problems.size());
  for (const auto& p : problems) out.push_back(p.without_labels());
  return out;
}

/// Trains on `pool`, picks a checkpoint per policy and evaluates on `test`.
inline EvalReport train_and_evaluate(std::span<const RpmProblem> pool, std::span<const RpmProblem> validation,
                                     std::span<const RpmProblem> test, const TrainConfig& train_config,
                                     const fs::path& dir, CheckpointPolicy policy, unsigned workers) {
  const auto unlabeled = strip_labels(pool);
  const TrainResult run = train(unlabeled, train_config, dir);
  fs::path chosen = run.checkpoints.back().path;
  if (policy != CheckpointPolicy::kFinal) {
    Rng rng(derive_seed(train_config.seed, 3));
    const auto mode = policy == CheckpointPolicy::kValidated ? SelectionMode::kValidated : SelectionMode::kLabelFree;
    chosen = select_checkpoint(run, mode, validation, rng, workers).chosen.path;
  }
  const auto model = load_model(chosen);
  EvalReport r = evaluate(test, *model, workers);
  r.selection = std::string(policy_name(policy));
  r.seed = train_config.seed;
  return r;
}

}  // namespace detail

/// A named training subset: a fraction of the training fold, or the test
/// fold itself.
struct SubsetSpec {
  std::string name;
  enum class Source { kTrain, kTest } source = Source::kTrain;
  double fraction = 1.0;
};

inline std::vector<SubsetSpec> default_subsets() {
  return {{"Train 20%", SubsetSpec::Source::kTrain, 0.2},
          {"Test", SubsetSpec::Source::kTest, 1.0},
          {"Train 60%", SubsetSpec::Source::kTrain, 0.6},
          {"Full", SubsetSpec::Source::kTrain, 1.0}};
}

/// Trains one model per subset with identical settings and evaluates all of
/// them on the held-out test fold.
inline StudyTable run_subset_study(std::span<const RpmProblem> labeled, const StudyConfig& config,
                                   const std::vector<SubsetSpec>& subsets = default_subsets()) {
  for (const auto& s : subsets) {
    if (!(s.fraction > 0 && s.fraction <= 1)) throw RejectedInput("subset fraction must lie in (0,1]");
  }
  const DatasetSplit split = split_folds(labeled, config.split_seed);
  auto train_fold = gather(labeled, split.train);
  auto test_fold = gather(labeled, split.test);
  const auto val_fold = gather(labeled, split.val);
  // Folds are grouped by configuration; shuffle so prefixes mix them.
  Rng order_rng(derive_seed(config.split_seed, 0x5b5e));
  std::shuffle(train_fold.begin(), train_fold.end(), order_rng);
  std::shuffle(test_fold.begin(), test_fold.end(), order_rng);

  StudyTable table;
  table.kind = "subset_study";
  table.config = {{"train", to_json(config.train)},
                  {"split_seed", config.split_seed},
                  {"policy", policy_name(config.policy)},
                  {"fold_sizes", {train_fold.size(), val_fold.size(), test_fold.size()}}};
  for (std::size_t i = 0; i < subsets.size(); ++i) {
    const auto& s = subsets[i];
    const auto& source = s.source == SubsetSpec::Source::kTrain ? train_fold : test_fold;
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(s.fraction * source.size())));
    const std::span<const RpmProblem> pool(source.data(), std::min(n, source.size()));
    if (config.progress) config.progress("training on subset " + s.name + " (" + std::to_string(pool.size()) + ")");
    StudyRow row{s.name, pool.size(),
                 detail::train_and_evaluate(pool, val_fold, test_fold, config.train,
                                            config.work_dir / ("subset_" + std::to_string(i)), config.policy,
                                            config.workers)};
    table.rows.push_back(std::move(row));
  }
  return table;
}

/// One training and evaluation per distance measure, all else fixed.
/// `validation` may be empty unless the policy is validated.
inline StudyTable run_distance_ablation(std::span<const RpmProblem> train_pool, std::span<const RpmProblem> validation,
                                        std::span<const RpmProblem> test, const StudyConfig& config,
                                        const std::vector<std::string>& measures) {
  std::vector<DistanceMeasure> parsed;
  for (const auto& name : measures) {
    const auto m = parse_measure(name);
    if (!m) throw RejectedInput("unknown distance measure '" + name + "' (expected difference, l1, l2 or concat)");
    parsed.push_back(*m);
  }
  StudyTable table;
  table.kind = "distance_ablation";
  table.config = {{"train", to_json(config.train)}, {"policy", policy_name(config.policy)}};
  for (DistanceMeasure m : parsed) {
    TrainConfig tc = config.train;
    tc.model.head.measure = m;
    if (config.progress) config.progress("training with distance " + std::string(measure_name(m)));
    StudyRow row{std::string(measure_name(m)), train_pool.size(),
                 detail::train_and_evaluate(train_pool, validation, test, tc,
                                            config.work_dir / ("measure_" + std::string(measure_name(m))),
                                            config.policy, config.workers)};
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace prd
