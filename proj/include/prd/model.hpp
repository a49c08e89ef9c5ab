#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <iomanip>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "prd/arg.hpp"
#include "prd/backbone.hpp"
#include "prd/prd_head.hpp"

namespace prd {

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
};

inline nlohmann::json to_json(const ModelConfig& c) {
  return {
      {"backbone",
       {{"variant", variant_name(c.backbone.variant)},
        {"relation_dim", c.backbone.relation_dim},
        {"input_resolution", c.backbone.input_resolution},
        {"freeze_norm_layers", c.backbone.freeze_norm_layers}}},
      {"head",
       {{"measure", measure_name(c.head.measure)},
        {"hidden", c.head.hidden},
        {"dropout", c.head.dropout},
        {"activation", c.head.activation == HiddenActivation::kRelu ? "relu" : "tanh"}}},
  };
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  const auto& b = j.at("backbone");
  const auto variant = parse_variant(b.at("variant").get<std::string>());
  if (!variant) throw FormatError("unknown backbone variant in model config");
  c.backbone.variant = *variant;
  c.backbone.relation_dim = b.at("relation_dim").get<int>();
  c.backbone.input_resolution = b.at("input_resolution").get<int>();
  c.backbone.freeze_norm_layers = b.at("freeze_norm_layers").get<bool>();
  const auto& h = j.at("head");
  const auto measure = parse_measure(h.at("measure").get<std::string>());
  if (!measure) throw FormatError("unknown distance measure in model config");
  c.head.measure = *measure;
  c.head.hidden = h.at("hidden").get<int>();
  c.head.dropout = h.at("dropout").get<double>();
  c.head.activation = h.at("activation").get<std::string>() == "tanh" ? HiddenActivation::kTanh
                                                                       : HiddenActivation::kRelu;
  return c;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Relation extractor plus similarity head.
template <typename T = float>
class PrdModel {
 public:
  PrdModel(const ModelConfig& config, std::uint64_t init_seed)
      : config_(config), init_rng_(init_seed), backbone_(config.backbone, init_rng_),
        head_(config.head, config.backbone.relation_dim, init_rng_) {
    for (const auto& [name, p] : backbone_.params()) params_.emplace_back("backbone." + name, p);
    for (const auto& [name, p] : head_.params()) params_.emplace_back("head." + name, p);
  }

  PrdModel(const PrdModel&) = delete;
  PrdModel& operator=(const PrdModel&) = delete;

  const ModelConfig& config() const { return config_; }
  Backbone<T>& backbone() { return backbone_; }
  const Backbone<T>& backbone() const { return backbone_; }
  PrdHead<T>& head() { return head_; }
  const PrdHead<T>& head() const { return head_; }
  const nn::ParamList<T>& params() const { return params_; }
  PreprocessProfile profile() const { return config_.backbone.profile(); }

  /// Evaluation-mode relations for a list of rows.
  nn::Mat<T> relations(std::span<const Row> rows) const {
    return backbone_.infer(make_row_batch<T>(rows, profile()));
  }

  /// Training pass over one homogeneous batch: accumulates gradients of
  /// `weight` * mean BCE and returns the unweighted mean BCE.
  double train_batch(const PairBatch& batch, double weight, Rng& rng) {
    batch.check_homogeneous();
    const std::size_t n = batch.size();
    std::vector<Row> rows;
    rows.reserve(2 * n);
    for (const auto& s : batch.samples) rows.push_back(s.row_1);
    for (const auto& s : batch.samples) rows.push_back(s.row_2);
    const nn::Mat<T> rel = backbone_.forward(make_row_batch<T>(rows, profile()));
    const auto count = static_cast<Eigen::Index>(n);
    const nn::Vec<T> z = head_.forward(rel.topRows(count), rel.bottomRows(count), &rng);

    const int label = batch.label();
    double loss = 0;
    nn::Vec<T> dz(count);
    for (Eigen::Index i = 0; i < count; ++i) {
      const double zi = static_cast<double>(z(i));
      loss += bce_with_logit(zi, label);
      const double p = 1.0 / (1.0 + std::exp(-zi));
      dz(i) = static_cast<T>((p - label) * weight / static_cast<double>(n));
    }
    auto [da, db] = head_.backward(dz);
    nn::Mat<T> drel(2 * count, rel.cols());
    drel << da, db;
    backbone_.backward(drel);
    return loss / static_cast<double>(n);
  }

  /// Digest of every parameter and buffer value.
  std::string fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& [name, p] : params_) {
      h = fnv1a(name.data(), name.size(), h);
      h = fnv1a(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(T), h);
    }
    return hex64(h);
  }

 private:
  ModelConfig config_;
  Rng init_rng_;
  Backbone<T> backbone_;
  PrdHead<T> head_;
  nn::ParamList<T> params_;
};

/// Similarity score of two relations. Eval mode ignores rng; train mode
/// applies dropout and requires it.
template <typename T>
double score(const Relation<T>& a, const Relation<T>& b, PrdHead<T>& head, bool train_mode, Rng* rng = nullptr) {
  if (a.size() != b.size()) throw RejectedInput("relations differ in length");
  const nn::Mat<T> ma = a.transpose();
  const nn::Mat<T> mb = b.transpose();
  if (!train_mode) return head.scores(ma, mb)[0];
  if (!rng) throw RejectedInput("train-mode scoring needs a random source for dropout");
  return sigmoid(static_cast<double>(head.forward(ma, mb, rng)(0)));
}

}  // namespace prd
