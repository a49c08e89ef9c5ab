#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prd/arg.hpp"
#include "prd/io/safetensors.hpp"
#include "prd/model.hpp"
#include "prd/optim.hpp"

namespace prd {

namespace fs = std::filesystem;

struct TrainConfig {
  ModelConfig model;
  AdamConfig adam;
  std::size_t batch_size = 32;
  std::size_t max_steps = 5000;
  std::size_t checkpoint_every = 500;
  std::size_t plateau_window = 200;
  double plateau_tau = 1e-5;
  std::uint64_t seed = 0;
  SmallPoolPolicy small_pool = SmallPoolPolicy::kFallBackToCatB;

  void validate() const {
    model.backbone.validate();
    model.head.validate();
    adam.validate();
    if (batch_size == 0) throw RejectedInput("batch size must be positive");
    if (max_steps == 0) throw RejectedInput("max_steps must be positive");
    if (checkpoint_every == 0) throw RejectedInput("checkpoint interval must be positive");
    if (plateau_window < 2) throw RejectedInput("plateau window must be at least 2");
    if (!(plateau_tau > 0)) throw RejectedInput("plateau threshold must be positive");
  }
};

inline nlohmann::json to_json(const TrainConfig& c) {
  return {
      {"model", to_json(c.model)},
      {"learning_rate", c.adam.learning_rate},
      {"beta1", c.adam.beta1},
      {"beta2", c.adam.beta2},
      {"adam_eps", c.adam.eps},
      {"batch_size", c.batch_size},
      {"max_steps", c.max_steps},
      {"checkpoint_every", c.checkpoint_every},
      {"plateau_window", c.plateau_window},
      {"plateau_tau", c.plateau_tau},
      {"seed", c.seed},
      {"small_pool", c.small_pool == SmallPoolPolicy::kThrow ? "throw" : "fall_back_to_cat_b"},
  };
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.model = model_config_from_json(j.at("model"));
  c.adam.learning_rate = j.at("learning_rate").get<double>();
  c.adam.beta1 = j.at("beta1").get<double>();
  c.adam.beta2 = j.at("beta2").get<double>();
  c.adam.eps = j.at("adam_eps").get<double>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.max_steps = j.at("max_steps").get<std::size_t>();
  c.checkpoint_every = j.at("checkpoint_every").get<std::size_t>();
  c.plateau_window = j.at("plateau_window").get<std::size_t>();
  c.plateau_tau = j.at("plateau_tau").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.small_pool = j.at("small_pool").get<std::string>() == "throw" ? SmallPoolPolicy::kThrow
                                                                  : SmallPoolPolicy::kFallBackToCatB;
  return c;
}

/// Hash of the hyper-parameters that must match for a resume.
inline std::string config_fingerprint(const TrainConfig& c) {
  nlohmann::json j = to_json(c);
  j.erase("max_steps");
  j.erase("checkpoint_every");
  const std::string text = j.dump();
  return hex64(fnv1a(text.data(), text.size()));
}

/// Hash of a training pool's problem ids and pixels.
inline std::string pool_fingerprint(std::span<const RpmProblem> pool) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : pool) {
    h = fnv1a(p.id().data(), p.id().size(), h);
    for (std::size_t i = 0; i < kContextCells + kCandidateCells; ++i) {
      const auto& px = p.cell(i).pixels();
      h = fnv1a(px.data(), px.size(), h);
    }
  }
  return hex64(h);
}

struct StepLosses {
  std::size_t step = 0;
  double real = 0;
  double fake = 0;
  double mean() const { return 0.5 * (real + fake); }
};

struct CheckpointRef {
  std::size_t step = 0;
  fs::path path;
};

/// Writes bytes through a sibling temp file and a rename, so readers never
/// see a partial file.
template <typename Writer>
void write_atomically(const fs::path& path, Writer&& write) {
  fs::path tmp = path;
  tmp += ".tmp";
  write(tmp);
  fs::rename(tmp, path);
}

inline std::string format_loss_line(const StepLosses& l) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g", l.step, l.real, l.fake);
  return buf;
}

inline constexpr const char* kLossLogHeader = "step,loss_real,loss_fake";
inline constexpr const char* kCheckpointFormat = "prd-checkpoint-1";

/// Unsupervised trainer: every step draws one real and one fake batch with
/// the pair sampler, averages their BCE and applies one Adam update.
class Trainer {
 public:
  /// The pool must carry no answers; labelled problems are a contract error.
  Trainer(const TrainConfig& config, std::span<const RpmProblem> pool)
      : config_(config), pool_(pool.begin(), pool.end()) {
    config_.validate();
    if (pool_.empty()) throw RejectedInput("training pool is empty");
    for (const auto& p : pool_) {
      if (p.answer()) throw ContractViolation("training pool problem " + p.id() + " carries an answer label");
    }
    model_ = std::make_unique<PrdModel<float>>(config_.model, derive_seed(config_.seed, 1));
    adam_ = std::make_unique<Adam<float>>(model_->params(), config_.adam);
    rng_.seed(derive_seed(config_.seed, 2));
    pool_digest_ = pool_fingerprint(pool_);
  }

  const TrainConfig& config() const { return config_; }
  PrdModel<float>& model() { return *model_; }
  const PrdModel<float>& model() const { return *model_; }
  std::size_t step_count() const { return history_.size(); }
  const std::vector<StepLosses>& history() const { return history_; }

  /// One optimisation step; returns the two batch losses.
  StepLosses step() {
    const PairBatch real = make_batch(pool_, BatchKind::kReal, config_.batch_size, rng_, config_.small_pool);
    const PairBatch fake = make_batch(pool_, BatchKind::kFake, config_.batch_size, rng_, config_.small_pool);
    return step_on(real, fake);
  }

  /// One step on caller-supplied batches.
  StepLosses step_on(const PairBatch& real, const PairBatch& fake) {
    if (real.kind != BatchKind::kReal || fake.kind != BatchKind::kFake) {
      throw ContractViolation("step expects one real batch and one fake batch");
    }
    nn::zero_grads(model_->params());
    StepLosses l;
    l.real = model_->train_batch(real, 0.5, rng_);
    l.fake = model_->train_batch(fake, 0.5, rng_);
    adam_->step();
    l.step = history_.size() + 1;
    history_.push_back(l);
    return l;
  }

  void save_checkpoint(const fs::path& path) const {
    io::TensorFile file;
    file.metadata["format"] = kCheckpointFormat;
    file.metadata["step"] = std::to_string(history_.size());
    file.metadata["config"] = to_json(config_).dump();
    file.metadata["config_fingerprint"] = config_fingerprint(config_);
    file.metadata["pool_fingerprint"] = pool_digest_;
    file.metadata["model_fingerprint"] = model_->fingerprint();
    file.metadata["rng_state"] = serialize_rng(rng_);
    file.metadata["adam_steps"] = std::to_string(adam_->steps());
    for (const auto& [name, p] : model_->params()) {
      std::vector<std::int64_t> shape(p->shape.begin(), p->shape.end());
      file.tensors["model." + name] =
          io::TensorBlob::from<float>(shape, p->value.data(), static_cast<std::size_t>(p->value.size()));
    }
    for (const auto& [name, m] : adam_->first_moments()) {
      file.tensors["adam.m." + name] = io::TensorBlob::from<float>({m.rows(), m.cols()}, m.data(), m.size());
    }
    for (const auto& [name, v] : adam_->second_moments()) {
      file.tensors["adam.v." + name] = io::TensorBlob::from<float>({v.rows(), v.cols()}, v.data(), v.size());
    }
    std::vector<double> real, fake;
    for (const auto& h : history_) {
      real.push_back(h.real);
      fake.push_back(h.fake);
    }
    const auto n = static_cast<std::int64_t>(history_.size());
    file.tensors["history.loss_real"] = io::TensorBlob::from<double>({n}, real.data(), real.size());
    file.tensors["history.loss_fake"] = io::TensorBlob::from<double>({n}, fake.data(), fake.size());
    write_atomically(path, [&](const fs::path& tmp) { io::write_safetensors(tmp, file); });
  }

  /// Restores model, optimiser, random state and loss history. The stored
  /// configuration must match this trainer's apart from run length.
  void load_checkpoint(const fs::path& path) {
    const io::TensorFile file = read_checkpoint_file(path);
    if (file.metadata.at("config_fingerprint") != config_fingerprint(config_)) {
      throw RejectedInput("checkpoint " + path.string() + " was written with different hyper-parameters");
    }
    if (file.metadata.at("pool_fingerprint") != pool_digest_) {
      throw RejectedInput("checkpoint " + path.string() + " was trained on a different pool");
    }
    load_model_tensors(file, *model_, path);
    for (auto& [name, m] : adam_->first_moments()) copy_tensor(file, "adam.m." + name, m, path);
    for (auto& [name, v] : adam_->second_moments()) copy_tensor(file, "adam.v." + name, v, path);
    adam_->set_steps(std::stoull(file.metadata.at("adam_steps")));
    rng_ = deserialize_rng(file.metadata.at("rng_state"));
    const auto real = file.tensors.at("history.loss_real").as<double>();
    const auto fake = file.tensors.at("history.loss_fake").as<double>();
    history_.clear();
    for (std::size_t i = 0; i < real.size(); ++i) history_.push_back({i + 1, real[i], fake[i]});
  }

  static io::TensorFile read_checkpoint_file(const fs::path& path) {
    io::TensorFile file;
    try {
      file = io::read_safetensors(path);
    } catch (const FormatError& e) {
      throw LoadError(std::string("cannot read checkpoint: ") + e.what());
    }
    const auto it = file.metadata.find("format");
    if (it == file.metadata.end() || it->second != kCheckpointFormat) {
      throw LoadError(path.string() + " is not a training checkpoint");
    }
    return file;
  }

  static void load_model_tensors(const io::TensorFile& file, PrdModel<float>& model, const fs::path& path) {
    for (const auto& [name, p] : model.params()) copy_tensor(file, "model." + name, p->value, path);
  }

 private:
  static void copy_tensor(const io::TensorFile& file, const std::string& key, nn::Mat<float>& dst,
                          const fs::path& path) {
    const auto it = file.tensors.find(key);
    if (it == file.tensors.end()) throw LoadError(path.string() + " lacks tensor " + key);
    const auto values = it->second.as<float>();
    if (values.size() != static_cast<std::size_t>(dst.size())) {
      throw LoadError(path.string() + ": tensor " + key + " has the wrong size");
    }
    std::copy(values.begin(), values.end(), dst.data());
  }

  TrainConfig config_;
  std::vector<RpmProblem> pool_;
  std::unique_ptr<PrdModel<float>> model_;
  std::unique_ptr<Adam<float>> adam_;
  Rng rng_;
  std::vector<StepLosses> history_;
  std::string pool_digest_;
};

/// Loads a checkpoint as an evaluation model, using the configuration stored
/// in the file.
inline std::unique_ptr<PrdModel<float>> load_model(const fs::path& path) {
  const io::TensorFile file = Trainer::read_checkpoint_file(path);
  TrainConfig config;
  try {
    config = train_config_from_json(nlohmann::json::parse(file.metadata.at("config")));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(path.string() + ": bad stored configuration: " + e.what());
  }
  auto model = std::make_unique<PrdModel<float>>(config.model, 0);
  Trainer::load_model_tensors(file, *model, path);
  return model;
}

inline std::string checkpoint_name(std::size_t step) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "step_%07zu.safetensors", step);
  return buf;
}

struct TrainResult {
  std::vector<CheckpointRef> checkpoints;
  fs::path loss_log;
  std::vector<StepLosses> history;
  std::optional<std::size_t> plateau_start;
  std::string model_fingerprint;
};

inline std::optional<std::size_t> detect_plateau(std::span<const double> losses, std::size_t window, double tau);

inline std::vector<double> mean_losses(std::span<const StepLosses> history) {
  std::vector<double> out;
  out.reserve(history.size());
  for (const auto& h : history) out.push_back(h.mean());
  return out;
}

struct TrainOptions {
  std::optional<fs::path> resume_from;
  std::function<void(const StepLosses&)> on_step;
};

/// Full training run into `out_dir`: writes `loss_log.csv` and a checkpoint
/// every `checkpoint_every` steps plus one at the final step.
inline TrainResult train(std::span<const RpmProblem> pool, const TrainConfig& config, const fs::path& out_dir,
                         const TrainOptions& options = {}) {
  Trainer trainer(config, pool);
  if (options.resume_from) trainer.load_checkpoint(*options.resume_from);
  if (trainer.step_count() > config.max_steps) throw RejectedInput("checkpoint is already past max_steps");

  fs::create_directories(out_dir / "checkpoints");
  TrainResult result;
  result.loss_log = out_dir / "loss_log.csv";
  std::ofstream log(result.loss_log, std::ios::trunc);
  if (!log) throw Error("cannot write " + result.loss_log.string());
  log << kLossLogHeader << '\n';
  for (const auto& h : trainer.history()) log << format_loss_line(h) << '\n';

  for (const auto& entry : fs::directory_iterator(out_dir / "checkpoints")) {
    const std::string name = entry.path().filename().string();
    if (name.starts_with("step_") && name.ends_with(".safetensors")) {
      const std::size_t step = std::stoull(name.substr(5, name.size() - 5 - 12));
      if (step <= trainer.step_count()) result.checkpoints.push_back({step, entry.path()});
    }
  }
  std::sort(result.checkpoints.begin(), result.checkpoints.end(),
            [](const CheckpointRef& a, const CheckpointRef& b) { return a.step < b.step; });

  while (trainer.step_count() < config.max_steps) {
    const StepLosses l = trainer.step();
    log << format_loss_line(l) << '\n';
    if (options.on_step) options.on_step(l);
    if (l.step % config.checkpoint_every == 0 || l.step == config.max_steps) {
      log.flush();
      const fs::path path = out_dir / "checkpoints" / checkpoint_name(l.step);
      trainer.save_checkpoint(path);
      result.checkpoints.push_back({l.step, path});
    }
  }
  log.flush();
  result.history = trainer.history();
  const auto means = mean_losses(result.history);
  result.plateau_start = detect_plateau(means, config.plateau_window, config.plateau_tau);
  result.model_fingerprint = trainer.model().fingerprint();
  return result;
}

/// Plateau onset of a per-step loss trace (steps numbered from 1).
///
/// m_k is the mean of the W losses ending at step k. At each step k with
/// 2W losses of history, a least-squares line is fitted to the W most recent
/// m values (steps k-W+1 .. k). The first k where the absolute slope is
/// below tau marks the plateau, and its start is reported as k-W+1, the
/// first step of the fitted window.
inline std::optional<std::size_t> detect_plateau(std::span<const double> losses, std::size_t window, double tau) {
  if (window < 2) throw RejectedInput("plateau window must be at least 2");
  const std::size_t n = losses.size();
  if (n < 2 * window) return std::nullopt;

  // Windowed means, indexed by step (1-based); valid from step W.
  std::vector<double> prefix(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + losses[i];
  std::vector<double> m(n + 1, 0.0);
  for (std::size_t k = window; k <= n; ++k) m[k] = (prefix[k] - prefix[k - window]) / static_cast<double>(window);

  const double w = static_cast<double>(window);
  const double x_mean = (w - 1) / 2;
  double sxx = 0;
  for (std::size_t j = 0; j < window; ++j) sxx += (j - x_mean) * (j - x_mean);
  for (std::size_t k = 2 * window; k <= n; ++k) {
    const std::size_t first = k - window + 1;
    double y_mean = 0;
    for (std::size_t j = 0; j < window; ++j) y_mean += m[first + j];
    y_mean /= w;
    double sxy = 0;
    for (std::size_t j = 0; j < window; ++j) sxy += (j - x_mean) * (m[first + j] - y_mean);
    if (std::abs(sxy / sxx) < tau) return first;
  }
  return std::nullopt;
}

enum class SelectionMode { kValidated, kLabelFree };

inline std::string_view selection_name(SelectionMode m) {
  return m == SelectionMode::kValidated ? "validated" : "label_free";
}

inline std::optional<SelectionMode> parse_selection(std::string_view s) {
  if (s == "validated") return SelectionMode::kValidated;
  if (s == "label_free" || s == "label-free") return SelectionMode::kLabelFree;
  return std::nullopt;
}

/// Checkpoints eligible for selection: those at or after the plateau start,
/// or all of them when no plateau was found or none lies inside it.
inline std::vector<CheckpointRef> plateau_candidates(std::span<const CheckpointRef> checkpoints,
                                                     std::optional<std::size_t> plateau_start) {
  std::vector<CheckpointRef> out;
  if (plateau_start) {
    for (const auto& c : checkpoints)
      if (c.step >= *plateau_start) out.push_back(c);
  }
  if (out.empty()) out.assign(checkpoints.begin(), checkpoints.end());
  return out;
}

/// Index of the highest accuracy; ties go to the later entry.
inline std::size_t argmax_latest(std::span<const double> accuracies) {
  if (accuracies.empty()) throw RejectedInput("no checkpoints to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < accuracies.size(); ++i)
    if (accuracies[i] >= accuracies[best]) best = i;
  return best;
}

struct SelectionResult {
  SelectionMode mode = SelectionMode::kValidated;
  CheckpointRef chosen;
  std::vector<CheckpointRef> candidates;
  std::vector<double> accuracies;  // validated mode only
  std::optional<std::size_t> plateau_start;
};

/// Validated mode scores each candidate with `accuracy` (validation-fold
/// accuracy) and keeps the best, latest on ties; label-free mode picks a
/// candidate uniformly at random.
inline SelectionResult select_checkpoint(std::span<const CheckpointRef> checkpoints,
                                         std::optional<std::size_t> plateau_start, SelectionMode mode, Rng& rng,
                                         const std::function<double(const CheckpointRef&)>& accuracy = {}) {
  if (checkpoints.empty()) throw RejectedInput("no checkpoints to select from");
  SelectionResult r;
  r.mode = mode;
  r.plateau_start = plateau_start;
  r.candidates = plateau_candidates(checkpoints, plateau_start);
  if (mode == SelectionMode::kLabelFree) {
    r.chosen = r.candidates[uniform_index(rng, r.candidates.size())];
    return r;
  }
  if (!accuracy) throw RejectedInput("validated selection needs a labelled validation fold");
  for (const auto& c : r.candidates) r.accuracies.push_back(accuracy(c));
  r.chosen = r.candidates[argmax_latest(r.accuracies)];
  return r;
}

}  // namespace prd
