#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prd/nn/core.hpp"
#include "prd/random.hpp"

namespace prd {

enum class DistanceMeasure { kDifference, kL1, kL2, kConcat };

inline constexpr std::array<DistanceMeasure, 4> kAllMeasures = {DistanceMeasure::kDifference, DistanceMeasure::kL1,
                                                                DistanceMeasure::kL2, DistanceMeasure::kConcat};

inline std::string_view measure_name(DistanceMeasure m) {
  switch (m) {
    case DistanceMeasure::kDifference: return "difference";
    case DistanceMeasure::kL1: return "l1";
    case DistanceMeasure::kL2: return "l2";
    case DistanceMeasure::kConcat: return "concat";
  }
  return "?";
}

inline std::optional<DistanceMeasure> parse_measure(std::string_view s) {
  for (DistanceMeasure m : kAllMeasures)
    if (s == measure_name(m)) return m;
  return std::nullopt;
}

inline int feature_width(DistanceMeasure m, int relation_dim) {
  return m == DistanceMeasure::kConcat ? 2 * relation_dim : relation_dim;
}

/// Distance feature of two relations:
///   difference  a - b
///   l1          |a - b|
///   l2          |a - b|^2 (elementwise)
///   concat      [a ; b]
template <typename T>
std::vector<T> distance(std::span<const T> a, std::span<const T> b, DistanceMeasure m) {
  if (a.size() != b.size()) {
    throw RejectedInput("relations differ in length (" + std::to_string(a.size()) + " vs " +
                        std::to_string(b.size()) + ")");
  }
  std::vector<T> out;
  out.reserve(m == DistanceMeasure::kConcat ? 2 * a.size() : a.size());
  switch (m) {
    case DistanceMeasure::kDifference:
      for (std::size_t i = 0; i < a.size(); ++i) out.push_back(a[i] - b[i]);
      break;
    case DistanceMeasure::kL1:
      for (std::size_t i = 0; i < a.size(); ++i) out.push_back(std::abs(a[i] - b[i]));
      break;
    case DistanceMeasure::kL2:
      for (std::size_t i = 0; i < a.size(); ++i) out.push_back((a[i] - b[i]) * (a[i] - b[i]));
      break;
    case DistanceMeasure::kConcat:
      out.assign(a.begin(), a.end());
      out.insert(out.end(), b.begin(), b.end());
      break;
  }
  return out;
}

/// Row-wise distance features for two relation matrices (one pair per row).
template <typename T>
nn::Mat<T> distance_rows(const nn::Mat<T>& a, const nn::Mat<T>& b, DistanceMeasure m) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw RejectedInput("relation batches differ in shape");
  switch (m) {
    case DistanceMeasure::kDifference: return a - b;
    case DistanceMeasure::kL1: return (a - b).cwiseAbs();
    case DistanceMeasure::kL2: return (a - b).array().square().matrix();
    case DistanceMeasure::kConcat: {
      nn::Mat<T> out(a.rows(), a.cols() * 2);
      out << a, b;
      return out;
    }
  }
  return {};
}

/// Logistic function in double, clamped so the result stays strictly inside
/// (0, 1).
inline double sigmoid(double z) {
  z = std::clamp(z, -30.0, 30.0);
  return 1.0 / (1.0 + std::exp(-z));
}

/// Binary cross entropy of a probability, clamped away from 0 and 1.
inline double bce(double score, int label, double eps = 1e-12) {
  const double s = std::clamp(score, eps, 1.0 - eps);
  return label == 1 ? -std::log(s) : -std::log(1.0 - s);
}

/// Numerically stable BCE on a logit: softplus(z) - y z.
inline double bce_with_logit(double z, int label) {
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - label * z;
}

enum class HiddenActivation { kRelu, kTanh };

struct HeadConfig {
  DistanceMeasure measure = DistanceMeasure::kL1;
  int hidden = 128;
  double dropout = 0.5;
  HiddenActivation activation = HiddenActivation::kRelu;

  void validate() const {
    if (hidden < 1) throw RejectedInput("hidden width must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw RejectedInput("dropout rate must lie in [0,1)");
  }
};

/// Similarity head: distance feature -> dropout -> hidden layer -> scalar
/// logit -> sigmoid.
template <typename T = float>
class PrdHead {
 public:
  PrdHead(const HeadConfig& config, int relation_dim, Rng& rng)
      : config_(config),
        relation_dim_(relation_dim),
        features_(feature_width(config.measure, relation_dim)),
        w1_({config.hidden, features_}, config.hidden, features_),
        b1_({config.hidden}, config.hidden, 1),
        w2_({1, config.hidden}, 1, config.hidden),
        b2_({1}, 1, 1) {
    config_.validate();
    init_uniform(w1_, features_, rng);
    init_uniform(b1_, features_, rng);
    init_uniform(w2_, config.hidden, rng);
    init_uniform(b2_, config.hidden, rng);
    params_ = {{"hidden.weight", &w1_}, {"hidden.bias", &b1_}, {"output.weight", &w2_}, {"output.bias", &b2_}};
  }

  PrdHead(const PrdHead&) = delete;
  PrdHead& operator=(const PrdHead&) = delete;

  const HeadConfig& config() const { return config_; }
  DistanceMeasure measure() const { return config_.measure; }
  int relation_dim() const { return relation_dim_; }
  const nn::ParamList<T>& params() const { return params_; }

  /// Evaluation-mode logits, dropout disabled. Inputs hold one relation per
  /// row.
  nn::Vec<T> logits(const nn::Mat<T>& a, const nn::Mat<T>& b) const {
    check(a, b);
    const nn::Mat<T> d = distance_rows(a, b, config_.measure);
    nn::Mat<T> h = d * w1_.value.transpose();
    h.rowwise() += b1_.value.col(0).transpose();
    activate(h);
    nn::Vec<T> z = h * w2_.value.row(0).transpose();
    z.array() += b2_.value(0, 0);
    return z;
  }

  /// Evaluation-mode similarity scores in (0, 1).
  std::vector<double> scores(const nn::Mat<T>& a, const nn::Mat<T>& b) const {
    const nn::Vec<T> z = logits(a, b);
    std::vector<double> s(static_cast<std::size_t>(z.size()));
    for (Eigen::Index i = 0; i < z.size(); ++i) s[static_cast<std::size_t>(i)] = sigmoid(static_cast<double>(z(i)));
    return s;
  }

  /// Training-mode logits with inverted dropout on the distance feature.
  /// Pass rng = nullptr to disable dropout (used by gradient checks).
  nn::Vec<T> forward(const nn::Mat<T>& a, const nn::Mat<T>& b, Rng* rng) {
    check(a, b);
    a_ = a;
    b_ = b;
    d_ = distance_rows(a, b, config_.measure);
    mask_.resize(d_.rows(), d_.cols());
    if (rng && config_.dropout > 0) {
      const T keep_scale = static_cast<T>(1.0 / (1.0 - config_.dropout));
      for (Eigen::Index i = 0; i < mask_.size(); ++i) {
        mask_.data()[i] = uniform01(*rng) >= config_.dropout ? keep_scale : T(0);
      }
    } else {
      mask_.setOnes();
    }
    dropped_ = d_.cwiseProduct(mask_);
    h_ = dropped_ * w1_.value.transpose();
    h_.rowwise() += b1_.value.col(0).transpose();
    activate(h_);
    nn::Vec<T> z = h_ * w2_.value.row(0).transpose();
    z.array() += b2_.value(0, 0);
    return z;
  }

  /// Accumulates parameter gradients from d(loss)/d(logit) and returns the
  /// gradients with respect to both relation inputs.
  std::pair<nn::Mat<T>, nn::Mat<T>> backward(const nn::Vec<T>& dz) {
    w2_.grad.row(0) += dz.transpose() * h_;
    b2_.grad(0, 0) += dz.sum();
    nn::Mat<T> dh = dz * w2_.value.row(0);
    if (config_.activation == HiddenActivation::kRelu)
      dh = (h_.array() > T(0)).select(dh, T(0));
    else
      dh = dh.cwiseProduct((T(1) - h_.array().square()).matrix());
    w1_.grad.noalias() += dh.transpose() * dropped_;
    b1_.grad.col(0) += dh.colwise().sum().transpose();
    const nn::Mat<T> dd = (dh * w1_.value).cwiseProduct(mask_);

    nn::Mat<T> da, db;
    switch (config_.measure) {
      case DistanceMeasure::kDifference:
        da = dd;
        db = -dd;
        break;
      case DistanceMeasure::kL1: {
        const nn::Mat<T> sign = (a_ - b_).array().sign().matrix();
        da = dd.cwiseProduct(sign);
        db = -da;
        break;
      }
      case DistanceMeasure::kL2:
        da = T(2) * dd.cwiseProduct(a_ - b_);
        db = -da;
        break;
      case DistanceMeasure::kConcat:
        da = dd.leftCols(relation_dim_);
        db = dd.rightCols(relation_dim_);
        break;
    }
    return {da, db};
  }

  /// Sets every weight and bias to zero.
  void zero_parameters() {
    for (auto& [n, p] : params_) p->value.setZero();
  }

 private:
  static void init_uniform(nn::Parameter<T>& p, int fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      p.value.data()[i] = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
    }
  }

  void activate(nn::Mat<T>& h) const {
    if (config_.activation == HiddenActivation::kRelu)
      h = h.cwiseMax(T(0));
    else
      h = h.array().tanh().matrix();
  }

  void check(const nn::Mat<T>& a, const nn::Mat<T>& b) const {
    if (a.cols() != relation_dim_ || b.cols() != relation_dim_) {
      throw RejectedInput("head expects " + std::to_string(relation_dim_) + "-d relations");
    }
  }

  HeadConfig config_;
  int relation_dim_;
  int features_;
  nn::Parameter<T> w1_, b1_, w2_, b2_;
  nn::ParamList<T> params_;
  nn::Mat<T> a_, b_, d_, mask_, dropped_, h_;
};

}  // namespace prd
