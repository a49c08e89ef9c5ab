#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prd/io/safetensors.hpp"
#include "prd/nn/layers.hpp"
#include "prd/preprocess.hpp"
#include "prd/problem.hpp"

namespace prd {

enum class BackboneVariant { kResidual18, kTiny };

inline std::string_view variant_name(BackboneVariant v) {
  return v == BackboneVariant::kResidual18 ? "residual18" : "tiny";
}

inline std::optional<BackboneVariant> parse_variant(std::string_view s) {
  if (s == "residual18" || s == "resnet18") return BackboneVariant::kResidual18;
  if (s == "tiny") return BackboneVariant::kTiny;
  return std::nullopt;
}

struct BackboneConfig {
  BackboneVariant variant = BackboneVariant::kTiny;
  int relation_dim = 64;
  int input_resolution = 64;  // the residual variant always takes 224
  std::optional<std::filesystem::path> pretrained_weights;
  bool freeze_norm_layers = true;

  /// Full-scale defaults: 18-layer residual network, 512-d relation, 224 px.
  static BackboneConfig residual18() {
    BackboneConfig c;
    c.variant = BackboneVariant::kResidual18;
    c.relation_dim = 512;
    c.input_resolution = 224;
    return c;
  }

  void validate() const {
    if (variant == BackboneVariant::kResidual18 && relation_dim != 512) {
      throw RejectedInput("the residual-18 backbone produces 512-d relations");
    }
    if (variant == BackboneVariant::kResidual18 && input_resolution != 224) {
      throw RejectedInput("the residual-18 backbone expects 224 px input");
    }
    if (relation_dim < 1) throw RejectedInput("relation_dim must be positive");
    if (input_resolution < 16) throw RejectedInput("backbone input_resolution must be >= 16");
  }

  /// Preprocessing that produces this backbone's input.
  PreprocessProfile profile() const {
    PreprocessProfile p;
    p.target_resolution = input_resolution;
    return p;
  }
};

/// Relation extractor: 3-channel row image -> relation vector.
template <typename T = float>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const bool frozen = config_.freeze_norm_layers;
    if (config_.variant == BackboneVariant::kTiny) {
      const int widths[4] = {16, 32, 64, config_.relation_dim};
      int in = 3;
      for (int i = 0; i < 4; ++i) {
        auto& block = net_.add("blocks." + std::to_string(i), std::make_unique<nn::Sequential<T>>());
        auto& conv = block.add("conv", std::make_unique<nn::Conv2d<T>>(in, widths[i], 3, 2, 1));
        conv.init(rng);
        if (i == 0) conv.set_input_grad(false);
        block.add("bn", std::make_unique<nn::BatchNorm2d<T>>(widths[i], frozen));
        block.add("", std::make_unique<nn::ReLU<T>>());
        in = widths[i];
      }
    } else {
      auto& conv1 = net_.add("conv1", std::make_unique<nn::Conv2d<T>>(3, 64, 7, 2, 3));
      conv1.init(rng);
      conv1.set_input_grad(false);
      net_.add("bn1", std::make_unique<nn::BatchNorm2d<T>>(64, frozen));
      net_.add("", std::make_unique<nn::ReLU<T>>());
      net_.add("", std::make_unique<nn::MaxPool2d<T>>(3, 2, 1));
      const int widths[4] = {64, 128, 256, 512};
      int in = 64;
      for (int l = 0; l < 4; ++l) {
        auto& layer = net_.add("layer" + std::to_string(l + 1), std::make_unique<nn::Sequential<T>>());
        const int stride = l == 0 ? 1 : 2;
        layer.add("0", std::make_unique<nn::BasicBlock<T>>(in, widths[l], stride, frozen, rng));
        layer.add("1", std::make_unique<nn::BasicBlock<T>>(widths[l], widths[l], 1, frozen, rng));
        in = widths[l];
      }
    }
    net_.add("", std::make_unique<nn::GlobalAvgPool<T>>());
    net_.collect("", params_);
    if (config_.pretrained_weights) load_pretrained(*config_.pretrained_weights);
  }

  Backbone(const Backbone&) = delete;
  Backbone& operator=(const Backbone&) = delete;

  const BackboneConfig& config() const { return config_; }
  int relation_dim() const { return config_.relation_dim; }
  int input_resolution() const { return config_.input_resolution; }
  const nn::ParamList<T>& params() const { return params_; }

  /// Evaluation-mode relations, one row per input sample.
  nn::Mat<T> infer(const nn::Activation<T>& rows) const {
    check_input(rows);
    return net_.infer(rows).data.transpose();
  }

  /// Training-mode forward; records state for backward().
  nn::Mat<T> forward(const nn::Activation<T>& rows) {
    check_input(rows);
    return net_.forward(rows).data.transpose();
  }

  /// Accumulates parameter gradients given d(loss)/d(relations).
  void backward(const nn::Mat<T>& d_relations) {
    nn::Activation<T> dy(config_.relation_dim, static_cast<int>(d_relations.rows()), 1, 1);
    dy.data = d_relations.transpose();
    net_.backward(dy);
  }

  /// Imports a safetensors parameter dictionary keyed by layer path
  /// (torchvision names for the residual variant). Classification-head
  /// entries and batch counters are ignored.
  void load_pretrained(const std::filesystem::path& path) {
    io::TensorFile file;
    try {
      file = io::read_safetensors(path);
    } catch (const FormatError& e) {
      throw LoadError(std::string("cannot read pretrained weights: ") + e.what());
    }
    std::map<std::string, const io::TensorBlob*> by_name;
    for (const auto& [key, blob] : file.tensors) {
      std::string name = key;
      for (std::string_view prefix : {"model.backbone.", "backbone.", "module."}) {
        if (name.starts_with(prefix)) name = name.substr(prefix.size());
      }
      by_name[name] = &blob;
    }
    for (auto& [name, p] : params_) {
      const auto it = by_name.find(name);
      if (it == by_name.end()) throw LoadError("pretrained weights missing layer " + name);
      const io::TensorBlob& blob = *it->second;
      std::vector<std::int64_t> want(p->shape.begin(), p->shape.end());
      if (blob.shape != want) throw LoadError("pretrained weights have wrong shape for layer " + name);
      const auto values = blob.as<T>();
      std::copy(values.begin(), values.end(), p->value.data());
    }
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params_)
      if (!p->buffer) n += static_cast<std::size_t>(p->size());
    return n;
  }

 private:
  void check_input(const nn::Activation<T>& rows) const {
    if (rows.channels != 3 || rows.height != config_.input_resolution || rows.width != config_.input_resolution) {
      throw RejectedInput("backbone expects 3x" + std::to_string(config_.input_resolution) + "x" +
                          std::to_string(config_.input_resolution) + " rows, got " + std::to_string(rows.channels) +
                          "x" + std::to_string(rows.height) + "x" + std::to_string(rows.width));
    }
  }

  BackboneConfig config_;
  nn::Sequential<T> net_;
  nn::ParamList<T> params_;
};

/// Stacks preprocessed rows into one channel-major batch.
template <typename T>
nn::Activation<T> make_row_batch(std::span<const Row> rows, const PreprocessProfile& profile) {
  profile.validate();
  const int r = profile.target_resolution;
  const std::size_t plane = static_cast<std::size_t>(r) * r;
  nn::Activation<T> batch(3, static_cast<int>(rows.size()), r, r);
  for (std::size_t n = 0; n < rows.size(); ++n) {
    for (int c = 0; c < 3; ++c) {
      std::span<T> out(batch.data.row(c).data() + n * plane, plane);
      preprocess_cell_into<T>(rows[n][static_cast<std::size_t>(c)], c, profile, out);
    }
  }
  return batch;
}

/// Converts a single RowTensor into a batch of one.
template <typename T>
nn::Activation<T> row_tensor_batch(const RowTensor<T>& t) {
  const std::size_t plane = static_cast<std::size_t>(t.resolution) * t.resolution;
  if (t.values.size() != 3 * plane) throw RejectedInput("row tensor must have 3 channels");
  nn::Activation<T> batch(3, 1, t.resolution, t.resolution);
  for (int c = 0; c < 3; ++c) {
    std::copy_n(t.values.data() + plane * c, plane, batch.data.row(c).data());
  }
  return batch;
}

template <typename T>
using Relation = nn::Vec<T>;

/// Relation of one preprocessed row, evaluation mode.
template <typename T>
Relation<T> extract_relation(const RowTensor<T>& row, const Backbone<T>& backbone) {
  return backbone.infer(row_tensor_batch(row)).row(0).transpose();
}

}  // namespace prd
