#pragma once

#include <cmath>
#include <map>
#include <string>

#include "prd/errors.hpp"
#include "prd/nn/core.hpp"

namespace prd {

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const {
    if (!(learning_rate > 0)) throw RejectedInput("learning rate must be positive");
    if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) throw RejectedInput("Adam betas must lie in [0,1)");
    if (!(eps > 0)) throw RejectedInput("Adam eps must be positive");
  }
};

/// Adam with bias correction:
///   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
///   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
/// Frozen parameters and buffers are skipped.
template <typename T>
class Adam {
 public:
  Adam(const nn::ParamList<T>& params, AdamConfig config) : params_(params), config_(config) {
    config_.validate();
    for (const auto& [name, p] : params_) {
      if (!p->trainable()) continue;
      m_[name] = nn::Mat<T>::Zero(p->value.rows(), p->value.cols());
      v_[name] = nn::Mat<T>::Zero(p->value.rows(), p->value.cols());
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    const T b1 = static_cast<T>(config_.beta1), b2 = static_cast<T>(config_.beta2);
    const T step_size = static_cast<T>(config_.learning_rate / c1);
    const T root_c2 = static_cast<T>(std::sqrt(c2));
    const T eps = static_cast<T>(config_.eps);
    for (const auto& [name, p] : params_) {
      if (!p->trainable()) continue;
      auto& m = m_.at(name);
      auto& v = v_.at(name);
      m = b1 * m + (T(1) - b1) * p->grad;
      v = b2 * v + (T(1) - b2) * p->grad.cwiseProduct(p->grad);
      const auto denom = (v.array().sqrt() / root_c2) + eps;
      p->value.array() -= step_size * m.array() / denom;
    }
  }

  std::size_t steps() const { return t_; }
  void set_steps(std::size_t t) { t_ = t; }
  const AdamConfig& config() const { return config_; }
  std::map<std::string, nn::Mat<T>>& first_moments() { return m_; }
  std::map<std::string, nn::Mat<T>>& second_moments() { return v_; }
  const std::map<std::string, nn::Mat<T>>& first_moments() const { return m_; }
  const std::map<std::string, nn::Mat<T>>& second_moments() const { return v_; }

 private:
  nn::ParamList<T> params_;
  AdamConfig config_;
  std::map<std::string, nn::Mat<T>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace prd
