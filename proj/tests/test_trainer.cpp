#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "helpers.hpp"
#include "prd/trainer.hpp"

using namespace prd;
namespace fs = std::filesystem;

namespace {

std::vector<RpmProblem> unlabeled_pool(std::size_t n, std::uint64_t seed = 1) {
  std::vector<RpmProblem> out;
  for (auto& p : fixtures::small_generated(n, seed, 32)) out.push_back(p.without_labels());
  return out;
}

TrainConfig small_config(std::uint64_t seed = 3) {
  TrainConfig c;
  c.model.backbone.input_resolution = 16;
  c.model.backbone.relation_dim = 16;
  c.model.head.hidden = 16;
  c.batch_size = 4;
  c.max_steps = 8;
  c.checkpoint_every = 4;
  c.plateau_window = 2;
  c.seed = seed;
  return c;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("prd_trainer_" + name);
  fs::remove_all(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Adam, MatchesReferenceUpdate) {
  nn::Parameter<double> p({3}, 3, 1);
  p.value << 0.5, -1.0, 2.0;
  nn::ParamList<double> list{{"w", &p}};
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  Adam<double> adam(list, cfg);

  // Reference: plain loop over the textbook update.
  std::array<double, 3> w{0.5, -1.0, 2.0}, m{}, v{};
  for (int t = 1; t <= 6; ++t) {
    std::array<double, 3> g;
    for (int i = 0; i < 3; ++i) g[i] = 2 * w[i] - 0.3 * i + 0.1 * t;  // arbitrary gradient field
    for (int i = 0; i < 3; ++i) p.grad(i, 0) = g[i];
    adam.step();
    for (int i = 0; i < 3; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * g[i];
      v[i] = 0.999 * v[i] + 0.001 * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.value(i, 0), w[i], 1e-12);
  }
  EXPECT_EQ(adam.steps(), 6u);
}

TEST(Adam, SkipsFrozenParameters) {
  nn::Parameter<double> p({1}, 1, 1), q({1}, 1, 1);
  q.frozen = true;
  p.grad(0, 0) = q.grad(0, 0) = 1.0;
  nn::ParamList<double> list{{"p", &p}, {"q", &q}};
  Adam<double> adam(list, AdamConfig{});
  adam.step();
  EXPECT_NE(p.value(0, 0), 0.0);
  EXPECT_EQ(q.value(0, 0), 0.0);
}

TEST(Trainer, LossIsLn2WhenHeadIsZero) {
  const auto pool = unlabeled_pool(4);
  Trainer t(small_config(), pool);
  t.model().head().zero_parameters();
  const StepLosses l = t.step();
  EXPECT_NEAR(l.real, std::log(2.0), 1e-9);
  EXPECT_NEAR(l.fake, std::log(2.0), 1e-9);
}

TEST(Trainer, RejectsLabelledPool) {
  const auto labelled = fixtures::small_generated(3, 2, 32);
  EXPECT_THROW(Trainer(small_config(), labelled), ContractViolation);
  EXPECT_THROW(Trainer(small_config(), std::vector<RpmProblem>{}), RejectedInput);
}

TEST(Trainer, StepNeedsOneRealAndOneFakeBatch) {
  const auto pool = unlabeled_pool(4);
  Trainer t(small_config(), pool);
  Rng rng(1);
  const PairBatch real = make_batch(pool, BatchKind::kReal, 4, rng);
  const PairBatch fake = make_batch(pool, BatchKind::kFake, 4, rng);
  EXPECT_THROW(t.step_on(real, real), ContractViolation);
  PairBatch mixed = fake;
  mixed.samples[0] = real.samples[0];
  EXPECT_THROW(t.step_on(real, mixed), ContractViolation);
  EXPECT_NO_THROW(t.step_on(real, fake));
  EXPECT_EQ(t.step_count(), 1u);
}

TEST(Trainer, FrozenNormParametersStayBitIdentical) {
  const auto pool = unlabeled_pool(6);
  Trainer t(small_config(), pool);
  Rng rng(4);
  std::vector<std::pair<std::string, nn::Mat<float>>> before;
  for (const auto& [name, p] : t.model().params()) {
    if (name.find(".bn.") != std::string::npos) {
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<float>(0.5 + uniform01(rng));
      before.emplace_back(name, p->value);
    }
  }
  ASSERT_FALSE(before.empty());
  nn::Mat<float> head_before = t.model().params().back().second->value;
  for (int i = 0; i < 20; ++i) t.step();
  std::size_t k = 0;
  for (const auto& [name, p] : t.model().params()) {
    if (name.find(".bn.") == std::string::npos) continue;
    EXPECT_EQ(p->value, before[k].second) << name;
    ++k;
  }
  EXPECT_NE(t.model().params().back().second->value, head_before);
}

TEST(Trainer, SameSeedSameHistory) {
  const auto pool = unlabeled_pool(5);
  Trainer a(small_config(7), pool), b(small_config(7), pool), c(small_config(8), pool);
  for (int i = 0; i < 5; ++i) {
    const auto la = a.step(), lb = b.step(), lc = c.step();
    EXPECT_EQ(la.real, lb.real);
    EXPECT_EQ(la.fake, lb.fake);
    if (i == 0) {
      EXPECT_NE(la.real, lc.real);
    }
  }
  EXPECT_EQ(a.model().fingerprint(), b.model().fingerprint());
}

TEST(Trainer, CheckpointResumeIsBitExact) {
  const auto pool = unlabeled_pool(5);
  const TrainConfig cfg = small_config(9);
  const fs::path full_dir = fresh_dir("full"), part_dir = fresh_dir("part");
  const TrainResult full = train(pool, cfg, full_dir);
  EXPECT_EQ(full.checkpoints.size(), 2u);
  EXPECT_EQ(full.checkpoints[0].step, 4u);

  TrainConfig shorter = cfg;
  shorter.max_steps = 4;
  const TrainResult first = train(pool, shorter, part_dir);
  TrainOptions resume;
  resume.resume_from = first.checkpoints.back().path;
  const TrainResult resumed = train(pool, cfg, part_dir, resume);

  EXPECT_EQ(slurp(full.loss_log), slurp(resumed.loss_log));
  EXPECT_EQ(full.model_fingerprint, resumed.model_fingerprint);
  const std::string log = slurp(full.loss_log);
  EXPECT_EQ(log.substr(0, log.find('\n')), "step,loss_real,loss_fake");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 9);
}

TEST(Trainer, ResumeRejectsDifferentSettings) {
  const auto pool = unlabeled_pool(5);
  const TrainResult run = train(pool, small_config(10), fresh_dir("settings"));
  TrainConfig other = small_config(10);
  other.adam.learning_rate = 1e-3;
  Trainer t(other, pool);
  EXPECT_THROW(t.load_checkpoint(run.checkpoints[0].path), RejectedInput);
  Trainer u(small_config(10), unlabeled_pool(5, 77));
  EXPECT_THROW(u.load_checkpoint(run.checkpoints[0].path), RejectedInput);
}

TEST(Trainer, LoadModelRestoresWeights) {
  const auto pool = unlabeled_pool(5);
  Trainer t(small_config(11), pool);
  for (int i = 0; i < 3; ++i) t.step();
  const fs::path dir = fresh_dir("load");
  fs::create_directories(dir);
  t.save_checkpoint(dir / "c.safetensors");
  EXPECT_FALSE(fs::exists(dir / "c.safetensors.tmp"));
  const auto model = load_model(dir / "c.safetensors");
  EXPECT_EQ(model->fingerprint(), t.model().fingerprint());
  std::ofstream(dir / "junk.safetensors") << "nope";
  EXPECT_THROW(load_model(dir / "junk.safetensors"), LoadError);
}

TEST(Trainer, ConfigValidation) {
  TrainConfig c = small_config();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), RejectedInput);
  c = small_config();
  c.plateau_window = 1;
  EXPECT_THROW(c.validate(), RejectedInput);
  c = small_config();
  c.adam.learning_rate = 0;
  EXPECT_THROW(c.validate(), RejectedInput);
  c = small_config();
  EXPECT_EQ(train_config_from_json(to_json(c)).model.head.hidden, 16);
  EXPECT_EQ(config_fingerprint(train_config_from_json(to_json(c))), config_fingerprint(c));
}

TEST(Trainer, SmokeRunLowersLoss) {
  const auto pool = unlabeled_pool(200, 5);
  TrainConfig cfg;
  cfg.model.backbone.input_resolution = 32;
  cfg.seed = 1;
  Trainer t(cfg, pool);
  for (int i = 0; i < 2000; ++i) t.step();
  const auto means = mean_losses(t.history());
  const double first = std::accumulate(means.begin(), means.begin() + 200, 0.0) / 200;
  const double last = std::accumulate(means.end() - 200, means.end(), 0.0) / 200;
  EXPECT_LT(last, first);
}

TEST(Plateau, ShortHistoryGivesNone) {
  std::vector<double> losses(399, 1.0);
  EXPECT_FALSE(detect_plateau(losses, 200, 1e-5).has_value());
  EXPECT_THROW(detect_plateau(losses, 1, 1e-5), RejectedInput);
}

TEST(Plateau, ConstantLossPlateausAtFirstEligibleStep) {
  std::vector<double> losses(1000, 0.7);
  // First eligible detection is at step 2W; the fitted window starts W-1
  // steps earlier.
  EXPECT_EQ(detect_plateau(losses, 200, 1e-5), std::optional<std::size_t>(201));
}

TEST(Plateau, SteadyDescentNeverPlateaus) {
  std::vector<double> losses(3000);
  for (std::size_t i = 0; i < losses.size(); ++i) losses[i] = 2.0 - 1e-4 * static_cast<double>(i);
  EXPECT_FALSE(detect_plateau(losses, 200, 1e-5).has_value());
}

TEST(Plateau, FindsKneeOfPiecewiseTrace) {
  for (std::size_t knee : {500u, 1234u, 2000u}) {
    for (std::size_t w : {50u, 200u}) {
      std::vector<double> losses(knee + 4 * w);
      for (std::size_t i = 0; i < losses.size(); ++i) {
        const double step = static_cast<double>(i + 1);
        losses[i] = step < knee ? 0.3 + 1e-3 * (knee - step) : 0.3;
      }
      const auto found = detect_plateau(losses, w, 1e-5);
      ASSERT_TRUE(found.has_value());
      EXPECT_LE(std::abs(static_cast<double>(*found) - static_cast<double>(knee)), static_cast<double>(w))
          << "knee " << knee << " window " << w << " found " << *found;
    }
  }
}

TEST(Selection, SingletonReturnedInBothModes) {
  const std::vector<CheckpointRef> one{{100, "a"}};
  Rng rng(1);
  EXPECT_EQ(select_checkpoint(one, std::nullopt, SelectionMode::kLabelFree, rng).chosen.step, 100u);
  const auto r = select_checkpoint(one, std::nullopt, SelectionMode::kValidated, rng,
                                   [](const CheckpointRef&) { return 0.4; });
  EXPECT_EQ(r.chosen.step, 100u);
}

TEST(Selection, TiesGoToLatest) {
  const std::vector<double> acc{0.3, 0.5, 0.5};
  EXPECT_EQ(argmax_latest(acc), 2u);
  const std::vector<CheckpointRef> cps{{1, "a"}, {2, "b"}, {3, "c"}};
  Rng rng(2);
  const auto r = select_checkpoint(cps, std::nullopt, SelectionMode::kValidated, rng,
                                   [&](const CheckpointRef& c) { return acc[c.step - 1]; });
  EXPECT_EQ(r.chosen.step, 3u);
  EXPECT_EQ(r.accuracies, acc);
}

TEST(Selection, ValidatedWithoutLabelsIsRejected) {
  const std::vector<CheckpointRef> cps{{1, "a"}};
  Rng rng(3);
  EXPECT_THROW(select_checkpoint(cps, std::nullopt, SelectionMode::kValidated, rng), RejectedInput);
  EXPECT_THROW(select_checkpoint(std::vector<CheckpointRef>{}, std::nullopt, SelectionMode::kLabelFree, rng),
               RejectedInput);
}

TEST(Selection, RestrictedToPlateau) {
  const std::vector<CheckpointRef> cps{{100, "a"}, {200, "b"}, {300, "c"}, {400, "d"}};
  const auto inside = plateau_candidates(cps, 250);
  ASSERT_EQ(inside.size(), 2u);
  EXPECT_EQ(inside[0].step, 300u);
  EXPECT_EQ(plateau_candidates(cps, std::nullopt).size(), 4u);
  EXPECT_EQ(plateau_candidates(cps, 900).size(), 4u);
}

TEST(Selection, LabelFreeIsUniform) {
  const std::vector<CheckpointRef> cps{{1, "a"}, {2, "b"}, {3, "c"}};
  Rng rng(4);
  std::array<int, 3> counts{};
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++counts[select_checkpoint(cps, std::nullopt, SelectionMode::kLabelFree, rng).chosen.step - 1];
  const double sd = std::sqrt(n * (1.0 / 3) * (2.0 / 3));
  for (int c : counts) EXPECT_NEAR(c, n / 3.0, 3 * sd);
}
