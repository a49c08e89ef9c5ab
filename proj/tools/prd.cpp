// prd: command-line front end.
//
// Exit codes: 0 success, 2 invalid input or arguments, 1 runtime failure.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "plots.hpp"
#include "prd/dataset_io.hpp"
#include "prd/inference.hpp"
#include "prd/mini_raven.hpp"

#ifndef PRD_SOURCE_REVISION
#define PRD_SOURCE_REVISION "unknown"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prd;

namespace {

/// Bad flags, paths or config values; maps to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Settings shared by several subcommands.

struct Common {
  std::string config_file;
  std::string runs_dir = "runs";
  unsigned workers = std::max(1u, std::thread::hardware_concurrency());
};

struct TrainFlags {
  std::uint64_t seed = 0;
  std::size_t steps = 5000;
  std::size_t batch_size = 32;
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double dropout = 0.5;
  int hidden = 128;
  std::string measure = "l1";
  std::string backbone = "tiny";
  int relation_dim = 64;
  int resolution = 64;
  bool no_freeze_norm = false;
  std::string pretrained;
  std::size_t checkpoint_every = 500;
  std::size_t plateau_window = 200;
  double plateau_tau = 1e-5;
};

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--seed", f.seed, "Training seed")->capture_default_str();
  app->add_option("--steps", f.steps, "Optimisation steps")->capture_default_str();
  app->add_option("--batch-size", f.batch_size, "Pairs per batch (real and fake batch each)")->capture_default_str();
  app->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--beta1", f.beta1, "Adam beta1")->capture_default_str();
  app->add_option("--beta2", f.beta2, "Adam beta2")->capture_default_str();
  app->add_option("--eps", f.eps, "Adam epsilon")->capture_default_str();
  app->add_option("--dropout", f.dropout, "Dropout rate on the distance feature")->capture_default_str();
  app->add_option("--hidden", f.hidden, "Hidden width of the similarity head")->capture_default_str();
  app->add_option("--measure", f.measure, "Distance measure: difference, l1, l2, concat")->capture_default_str();
  app->add_option("--backbone", f.backbone, "Relation extractor: tiny or residual18")->capture_default_str();
  app->add_option("--relation-dim", f.relation_dim, "Relation length (tiny backbone; residual18 uses 512)")
      ->capture_default_str();
  app->add_option("--resolution", f.resolution, "Backbone input size in pixels (residual18 uses 224)")
      ->capture_default_str();
  app->add_flag("--no-freeze-norm", f.no_freeze_norm, "Train normalisation layers instead of freezing them");
  app->add_option("--pretrained", f.pretrained, "Safetensors weights for the residual18 backbone");
  app->add_option("--checkpoint-every", f.checkpoint_every, "Steps between checkpoints")->capture_default_str();
  app->add_option("--plateau-window", f.plateau_window, "Window W of the plateau detector")->capture_default_str();
  app->add_option("--plateau-tau", f.plateau_tau, "Slope threshold of the plateau detector")->capture_default_str();
}

TrainConfig make_train_config(const TrainFlags& f, CLI::App* app) {
  TrainConfig c;
  const auto variant = parse_variant(f.backbone);
  if (!variant) throw UsageError("unknown --backbone '" + f.backbone + "' (expected tiny or residual18)");
  const auto measure = parse_measure(f.measure);
  if (!measure) throw UsageError("unknown --measure '" + f.measure + "' (expected difference, l1, l2 or concat)");
  c.model.backbone.variant = *variant;
  c.model.backbone.relation_dim = f.relation_dim;
  c.model.backbone.input_resolution = f.resolution;
  if (*variant == BackboneVariant::kResidual18) {
    const BackboneConfig full = BackboneConfig::residual18();
    if (app->get_option("--relation-dim")->count() == 0) c.model.backbone.relation_dim = full.relation_dim;
    if (app->get_option("--resolution")->count() == 0) c.model.backbone.input_resolution = full.input_resolution;
  }
  c.model.backbone.freeze_norm_layers = !f.no_freeze_norm;
  if (!f.pretrained.empty()) {
    if (!fs::exists(f.pretrained)) throw UsageError("--pretrained file not found: " + f.pretrained);
    c.model.backbone.pretrained_weights = fs::path(f.pretrained);
  }
  c.model.head.measure = *measure;
  c.model.head.hidden = f.hidden;
  c.model.head.dropout = f.dropout;
  c.adam.learning_rate = f.lr;
  c.adam.beta1 = f.beta1;
  c.adam.beta2 = f.beta2;
  c.adam.eps = f.eps;
  c.batch_size = f.batch_size;
  c.max_steps = f.steps;
  c.checkpoint_every = f.checkpoint_every;
  c.plateau_window = f.plateau_window;
  c.plateau_tau = f.plateau_tau;
  c.seed = f.seed;
  c.model.backbone.validate();
  c.model.head.validate();
  c.validate();
  return c;
}

/// PRD_<NAME> for every long option of a subcommand.
void bind_environment(CLI::App* app) {
  for (CLI::Option* opt : app->get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names[0] == "help") continue;
    std::string env = "PRD_" + names[0];
    for (auto& ch : env) ch = ch == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    opt->envname(env);
  }
}

/// Values from the JSON config file fill options not given on the command
/// line or through the environment.
void apply_config_file(CLI::App* sub, const std::string& file) {
  if (file.empty()) return;
  std::ifstream in(file);
  if (!in) throw UsageError("config file not found: " + file);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw UsageError("config file " + file + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file " + file + " must hold a JSON object");
  if (j.contains(sub->get_name()) && j.at(sub->get_name()).is_object()) j = j.at(sub->get_name());
  for (const auto& [key, value] : j.items()) {
    std::string name = key;
    for (auto& ch : name) ch = ch == '_' ? '-' : ch;
    CLI::Option* opt = nullptr;
    try {
      opt = sub->get_option("--" + name);
    } catch (const CLI::OptionNotFound&) {
      throw UsageError("config file key '" + key + "' is not an option of '" + sub->get_name() + "'");
    }
    if (opt->count() > 0) continue;
    std::vector<std::string> items;
    if (value.is_array()) {
      for (const auto& v : value) items.push_back(v.is_string() ? v.get<std::string>() : v.dump());
    } else {
      items.push_back(value.is_string() ? value.get<std::string>() : value.dump());
    }
    if (opt->get_type_size() == 0) {
      if (!value.is_boolean()) throw UsageError("config file key '" + key + "' expects true or false");
      if (!value.get<bool>()) continue;
      items = {"true"};
    }
    for (auto& item : items) opt->add_result(item);
    try {
      opt->run_callback();
    } catch (const CLI::Error& e) {
      throw UsageError("config file key '" + key + "': " + e.what());
    }
  }
}

json resolved_options(const CLI::App* sub) {
  json j = json::object();
  for (const CLI::Option* opt : sub->get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty() || names[0] == "help") continue;
    if (opt->count() > 0) {
      const auto& r = opt->results();
      j[names[0]] = r.size() == 1 ? json(r[0]) : json(r);
    } else if (opt->get_type_size() == 0) {
      j[names[0]] = "false";
    } else {
      j[names[0]] = opt->get_default_str();
    }
  }
  return j;
}

/// Record of one invocation, written before work starts and completed at
/// the end. Lives under --runs-dir so command outputs stay reproducible.
class RunManifest {
 public:
  RunManifest(const CLI::App* sub, const Common& common, int argc, char** argv, json outputs, std::uint64_t seed) {
    data_["subcommand"] = sub->get_name();
    std::vector<std::string> args(argv, argv + argc);
    data_["argv"] = args;
    data_["options"] = resolved_options(sub);
    data_["config_file"] = common.config_file;
    data_["seed"] = seed;
    data_["source_revision"] = PRD_SOURCE_REVISION;
    data_["outputs"] = std::move(outputs);
    data_["started_at"] = utc_now();
    data_["status"] = "running";
    char stamp[32];
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    path_ = fs::path(common.runs_dir) / (std::string(stamp) + "_" + sub->get_name() + "_" + std::to_string(getpid()) + ".json");
    write_json(path_, data_);
  }

  void finish(const std::string& status, json extra = json::object()) {
    data_["status"] = status;
    data_["finished_at"] = utc_now();
    for (auto& [k, v] : extra.items()) data_[k] = v;
    write_json(path_, data_);
  }

  const fs::path& path() const { return path_; }

 private:
  json data_;
  fs::path path_;
};

std::vector<RpmProblem> load_dataset(const std::string& dir, const char* flag) {
  if (dir.empty()) throw UsageError(std::string(flag) + " is required");
  if (!fs::is_directory(dir)) throw UsageError(std::string(flag) + " directory not found: " + dir);
  return load_portable(dir);
}

std::unique_ptr<PrdModel<float>> load_checkpoint_model(const std::string& path) {
  if (!fs::exists(path)) throw UsageError("--model checkpoint not found: " + path);
  return load_model(path);
}

void require_labels(std::span<const RpmProblem> problems, const std::string& what) {
  for (const auto& p : problems) {
    if (!p.answer()) throw UsageError(what + " problem " + p.id() + " has no answer; this command needs labeled data");
  }
}

void plot_report(const fs::path& path, const EvalReport& r) {
  std::vector<std::pair<std::string, double>> bars;
  for (const auto& [c, t] : r.per_configuration) bars.emplace_back(std::string(configuration_label(c)), t.accuracy());
  bars.emplace_back("Avg", r.mean_accuracy());
  plots::accuracy_bars(path, bars);
}

// ---------------------------------------------------------------------------
// Subcommands

struct GenFlags {
  std::string out;
  std::vector<std::string> configs{"center", "2x2grid"};
  std::size_t count = 100;
  std::uint64_t seed = 0;
  int resolution = 96;
  int min_rules = 1;
  int max_rules = 2;
  int max_perturbed = 1;
};

int cmd_gen(const GenFlags& f, const Common& common, RunManifest& manifest) {
  mini_raven::GeneratorConfig g;
  g.configurations.clear();
  for (const auto& item : f.configs) {
    for (const auto& name : split_list(item)) {
      if (name == "all") {
        g.configurations.assign(kAllConfigurations.begin(), kAllConfigurations.end());
        continue;
      }
      const auto c = parse_configuration(name);
      if (!c) throw UsageError("unknown configuration '" + name + "'");
      g.configurations.push_back(*c);
    }
  }
  g.resolution = f.resolution;
  g.min_non_constant = f.min_rules;
  g.max_non_constant = f.max_rules;
  g.max_perturbed_attributes = f.max_perturbed;
  g.seed = f.seed;
  g.validate();
  const auto problems = mini_raven::generate_dataset(g, f.count, common.workers);
  std::size_t unique = 0;
  for (const auto& p : problems) unique += mini_raven::count_valid_candidates(p) == 1 ? 1 : 0;
  const auto summary = save_portable(problems, f.out);
  std::printf("generated %zu problems (%zu per configuration) into %s\n", problems.size(), f.count, f.out.c_str());
  std::printf("unique answer (oracle verified): %zu/%zu\n", unique, problems.size());
  manifest.finish("ok", {{"problems", summary.problems}, {"unique_answers", unique}});
  return unique == problems.size() ? 0 : 1;
}

int cmd_convert(const std::string& raven, const std::string& out, RunManifest& manifest) {
  if (!fs::is_directory(raven)) throw UsageError("--raven directory not found: " + raven);
  const auto files = find_raven_archives(raven);
  std::vector<RpmProblem> problems;
  problems.reserve(files.size());
  for (const auto& f : files) problems.push_back(load_raven_archive(f));
  const auto summary = save_portable(problems, out);
  std::printf("converted %zu archives into %s\n", summary.problems, out.c_str());
  manifest.finish("ok", {{"problems", summary.problems}});
  return 0;
}

int cmd_train(const std::string& data, const std::string& out, const std::string& resume, bool plot,
              std::size_t log_every, const TrainConfig& config, RunManifest& manifest) {
  // Labels never reach the trainer.
  const auto pool = detail::strip_labels(load_dataset(data, "--data"));
  if (pool.empty()) throw UsageError("--data holds no problems");
  if (!resume.empty() && !fs::exists(resume)) throw UsageError("--resume checkpoint not found: " + resume);
  fs::create_directories(out);
  write_json(fs::path(out) / "train_config.json", to_json(config));

  TrainOptions options;
  if (!resume.empty()) options.resume_from = fs::path(resume);
  double window = 0;
  std::size_t in_window = 0;
  options.on_step = [&](const StepLosses& l) {
    window += l.mean();
    ++in_window;
    if (log_every && l.step % log_every == 0) {
      std::fprintf(stderr, "step %zu/%zu  loss %.4f (real %.4f, fake %.4f)\n", l.step, config.max_steps,
                   window / static_cast<double>(in_window), l.real, l.fake);
      window = 0;
      in_window = 0;
    }
  };
  const TrainResult result = train(pool, config, out, options);

  std::printf("trained %zu steps on %zu problems; %zu checkpoints in %s\n", result.history.size(), pool.size(),
              result.checkpoints.size(), (fs::path(out) / "checkpoints").c_str());
  if (result.plateau_start) {
    std::printf("loss plateau from step %zu; checkpoints from there on are selection candidates\n",
                *result.plateau_start);
  } else {
    std::printf("no loss plateau detected (window %zu, tau %g); consider more steps\n", config.plateau_window,
                config.plateau_tau);
  }
  std::printf("final checkpoint %s\n", result.checkpoints.back().path.c_str());
  json summary = {{"steps", result.history.size()},
                  {"checkpoints", json::array()},
                  {"plateau_start", result.plateau_start ? json(*result.plateau_start) : json(nullptr)},
                  {"model_fingerprint", result.model_fingerprint},
                  {"loss_log", result.loss_log.string()}};
  for (const auto& c : result.checkpoints) summary["checkpoints"].push_back({{"step", c.step}, {"path", c.path.string()}});
  write_json(fs::path(out) / "train_summary.json", summary);
  if (plot) {
    std::vector<double> real, fake;
    for (const auto& h : result.history) {
      real.push_back(h.real);
      fake.push_back(h.fake);
    }
    plots::loss_curve(fs::path(out) / "loss_curve.svg", {{"real pairs", real}, {"fake pairs", fake}});
  }
  manifest.finish("ok", summary);
  return 0;
}

int cmd_solve(const std::string& model_path, const std::string& data, const std::string& json_path,
              const Common& common, RunManifest& manifest) {
  const auto model = load_checkpoint_model(model_path);
  const auto problems = load_dataset(data, "--data");
  const auto solutions = solve_all(problems, *model, common.workers);
  json out = {{"kind", "solutions"}, {"model_fingerprint", model->fingerprint()}, {"problems", json::array()}};
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& s = solutions[i];
    json scores = json::array(), sa = json::array(), sb = json::array();
    for (const auto& c : s.scores) {
      scores.push_back(c.combined);
      sa.push_back(c.s_a);
      sb.push_back(c.s_b);
    }
    const double best = s.scores[static_cast<std::size_t>(s.prediction)].combined;
    std::printf("%s %d %.6f\n", problems[i].id().c_str(), s.prediction, best);
    out["problems"].push_back(
        {{"id", problems[i].id()}, {"prediction", s.prediction}, {"scores", scores}, {"s_a", sa}, {"s_b", sb}});
  }
  write_json(json_path, out);
  manifest.finish("ok", {{"problems", problems.size()}});
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data, const std::string& json_path, bool plot,
             bool reference, const Common& common, RunManifest& manifest) {
  const auto problems = load_dataset(data, "--data");
  require_labels(problems, "--data");
  const auto model = load_checkpoint_model(model_path);
  EvalReport r = evaluate(problems, *model, common.workers);
  r.selection = "given";
  std::fputs(r.to_text(reference).c_str(), stdout);
  write_json(json_path, r.to_json());
  if (plot) plot_report(fs::path(json_path).replace_extension(".svg"), r);
  manifest.finish("ok", {{"mean_accuracy", r.mean_accuracy()}});
  return 0;
}

void finish_study(const StudyTable& t, const std::string& json_path, bool plot, RunManifest& manifest) {
  std::fputs(t.to_text().c_str(), stdout);
  write_json(json_path, t.to_json());
  if (plot) {
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
      plot_report(fs::path(json_path).replace_extension("").string() + "_" + std::to_string(i) + ".svg", t.rows[i].report);
    }
  }
  json acc = json::object();
  for (const auto& r : t.rows) acc[r.name] = r.report.mean_accuracy();
  manifest.finish("ok", {{"mean_accuracy", acc}});
}

CheckpointPolicy policy_from(const std::string& s) {
  const auto p = parse_policy(s);
  if (!p) throw UsageError("unknown --policy '" + s + "' (expected final, validated or label_free)");
  return *p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pairwise relations discriminator: unsupervised solver for Raven-style matrix problems"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config-file", common.config_file, "JSON file of option values (flags and PRD_* take precedence)");
  app.add_option("--runs-dir", common.runs_dir, "Where run manifests are written")->capture_default_str()->envname("PRD_RUNS_DIR");
  app.add_option("--workers", common.workers, "Threads for generation and evaluation")->capture_default_str()->envname("PRD_WORKERS");

  GenFlags gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a mini-RAVEN dataset in the portable format");
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--config", gen.configs, "Configurations (names or 'all'; comma or repeated)")->capture_default_str();
  gen_cmd->add_option("--count", gen.count, "Problems per configuration")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
  gen_cmd->add_option("--resolution", gen.resolution, "Cell size in pixels")->capture_default_str();
  gen_cmd->add_option("--min-rules", gen.min_rules, "Minimum non-constant rules")->capture_default_str();
  gen_cmd->add_option("--max-rules", gen.max_rules, "Maximum non-constant rules")->capture_default_str();
  gen_cmd->add_option("--max-perturbed", gen.max_perturbed, "Attributes a distractor may change")->capture_default_str();

  std::string raven, convert_out;
  auto* convert_cmd = app.add_subcommand("convert", "Convert RAVEN .npz archives into the portable format");
  convert_cmd->add_option("--raven", raven, "Root of the RAVEN distribution")->required();
  convert_cmd->add_option("--out", convert_out, "Output directory")->required();

  TrainFlags tf;
  std::string train_data, train_out, resume;
  bool train_plot = false;
  std::size_t log_every = 100;
  auto* train_cmd = app.add_subcommand("train", "Train on a dataset without its labels");
  train_cmd->add_option("--data", train_data, "Portable dataset (answers are discarded)")->required();
  train_cmd->add_option("--out", train_out, "Run directory for checkpoints and loss log")->required();
  train_cmd->add_option("--resume", resume, "Checkpoint to continue from");
  train_cmd->add_option("--log-every", log_every, "Progress line interval in steps (0 = silent)")->capture_default_str();
  train_cmd->add_flag("--plot", train_plot, "Also write loss_curve.svg");
  add_train_flags(train_cmd, tf);

  std::string solve_model, solve_data, solve_json = "solutions.json";
  auto* solve_cmd = app.add_subcommand("solve", "Predict the answer of every problem");
  solve_cmd->add_option("--model", solve_model, "Checkpoint file")->required();
  solve_cmd->add_option("--data", solve_data, "Portable dataset")->required();
  solve_cmd->add_option("--json", solve_json, "Predictions file")->capture_default_str();

  std::string eval_model, eval_data, eval_json = "eval_report.json";
  bool eval_plot = false, no_reference = false;
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy per configuration on labeled data");
  eval_cmd->add_option("--model", eval_model, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Labeled portable dataset")->required();
  eval_cmd->add_option("--json", eval_json, "Report file")->capture_default_str();
  eval_cmd->add_flag("--plot", eval_plot, "Also write a per-configuration bar chart next to the report");
  eval_cmd->add_flag("--no-reference", no_reference, "Omit the published reference rows");

  TrainFlags sf;
  std::string subsets_data, subsets_out, subsets_json = "subset_study.json", subsets_policy = "final";
  std::uint64_t split_seed = 0;
  bool subsets_plot = false;
  auto* subsets_cmd = app.add_subcommand("study-subsets", "Train on several data subsets, evaluate on the test fold");
  subsets_cmd->add_option("--data", subsets_data, "Labeled portable dataset, split 60/20/20")->required();
  subsets_cmd->add_option("--out", subsets_out, "Work directory")->required();
  subsets_cmd->add_option("--json", subsets_json, "Table file")->capture_default_str();
  subsets_cmd->add_option("--policy", subsets_policy, "Checkpoint policy: final, validated, label_free")->capture_default_str();
  subsets_cmd->add_option("--split-seed", split_seed, "Seed of the fold split")->capture_default_str();
  subsets_cmd->add_flag("--plot", subsets_plot, "Also write bar charts");
  add_train_flags(subsets_cmd, sf);

  TrainFlags df;
  std::string dist_train, dist_val, dist_test, dist_out, dist_json = "distance_study.json", dist_policy = "final";
  std::string measures = "difference,l1,l2,concat";
  bool dist_plot = false;
  auto* dist_cmd = app.add_subcommand("study-distance", "Train once per distance measure, evaluate each");
  dist_cmd->add_option("--train", dist_train, "Training dataset (answers are discarded)")->required();
  dist_cmd->add_option("--val", dist_val, "Labeled validation dataset (validated policy only)");
  dist_cmd->add_option("--test", dist_test, "Labeled test dataset")->required();
  dist_cmd->add_option("--out", dist_out, "Work directory")->required();
  dist_cmd->add_option("--json", dist_json, "Table file")->capture_default_str();
  dist_cmd->add_option("--measures", measures, "Comma-separated measures")->capture_default_str();
  dist_cmd->add_option("--policy", dist_policy, "Checkpoint policy: final, validated, label_free")->capture_default_str();
  dist_cmd->add_flag("--plot", dist_plot, "Also write bar charts");
  add_train_flags(dist_cmd, df);

  for (CLI::App* sub : app.get_subcommands({})) bind_environment(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  CLI::App* sub = app.get_subcommands().front();
  try {
    apply_config_file(sub, common.config_file);
    if (common.workers == 0) throw UsageError("--workers must be at least 1");
    const auto progress = [](const std::string& s) { std::fprintf(stderr, "%s\n", s.c_str()); };

    if (sub == gen_cmd) {
      RunManifest m(sub, common, argc, argv, {{"dataset", gen.out}}, gen.seed);
      return cmd_gen(gen, common, m);
    }
    if (sub == convert_cmd) {
      RunManifest m(sub, common, argc, argv, {{"dataset", convert_out}}, 0);
      return cmd_convert(raven, convert_out, m);
    }
    if (sub == train_cmd) {
      const TrainConfig config = make_train_config(tf, sub);
      RunManifest m(sub, common, argc, argv, {{"run_dir", train_out}}, config.seed);
      return cmd_train(train_data, train_out, resume, train_plot, log_every, config, m);
    }
    if (sub == solve_cmd) {
      RunManifest m(sub, common, argc, argv, {{"json", solve_json}}, 0);
      return cmd_solve(solve_model, solve_data, solve_json, common, m);
    }
    if (sub == eval_cmd) {
      RunManifest m(sub, common, argc, argv, {{"json", eval_json}}, 0);
      return cmd_eval(eval_model, eval_data, eval_json, eval_plot, !no_reference, common, m);
    }
    if (sub == subsets_cmd) {
      StudyConfig sc;
      sc.train = make_train_config(sf, sub);
      sc.work_dir = subsets_out;
      sc.split_seed = split_seed;
      sc.policy = policy_from(subsets_policy);
      sc.workers = common.workers;
      sc.progress = progress;
      const auto data = load_dataset(subsets_data, "--data");
      require_labels(data, "--data");
      RunManifest m(sub, common, argc, argv, {{"work_dir", subsets_out}, {"json", subsets_json}}, sc.train.seed);
      finish_study(run_subset_study(data, sc), subsets_json, subsets_plot, m);
      return 0;
    }
    if (sub == dist_cmd) {
      StudyConfig sc;
      sc.train = make_train_config(df, sub);
      sc.work_dir = dist_out;
      sc.policy = policy_from(dist_policy);
      sc.workers = common.workers;
      sc.progress = progress;
      const auto pool = detail::strip_labels(load_dataset(dist_train, "--train"));
      const auto test = load_dataset(dist_test, "--test");
      require_labels(test, "--test");
      std::vector<RpmProblem> val;
      if (!dist_val.empty()) val = load_dataset(dist_val, "--val");
      if (sc.policy == CheckpointPolicy::kValidated) {
        if (val.empty()) throw UsageError("--policy validated needs a labeled --val dataset");
        require_labels(val, "--val");
      }
      RunManifest m(sub, common, argc, argv, {{"work_dir", dist_out}, {"json", dist_json}}, sc.train.seed);
      finish_study(run_distance_ablation(pool, val, test, sc, split_list(measures)), dist_json, dist_plot, m);
      return 0;
    }
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const RejectedInput& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const IntegrityError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const LoadError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const UnsupportedProblem& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "failed: %s\n", e.what());
    return 1;
  }
  return 1;
}
