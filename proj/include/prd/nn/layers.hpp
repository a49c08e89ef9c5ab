#pragma once

#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "prd/nn/core.hpp"
#include "prd/random.hpp"

namespace prd::nn {

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

/// Unfolds k x k patches into columns: row (c, ky, kx), column (n, oy, ox).
template <typename T>
void im2col(const Activation<T>& x, int k, int stride, int pad, int ho, int wo, Mat<T>& cols) {
  const int h = x.height, w = x.width;
  cols.resize(static_cast<Eigen::Index>(x.channels) * k * k, static_cast<Eigen::Index>(x.batch) * ho * wo);
  for (int c = 0; c < x.channels; ++c) {
    const T* src_c = x.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* dst = cols.row((c * k + ky) * k + kx).data();
        for (int n = 0; n < x.batch; ++n) {
          const T* src = src_c + static_cast<std::ptrdiff_t>(n) * h * w;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              for (int ox = 0; ox < wo; ++ox) *dst++ = T(0);
              continue;
            }
            const T* line = src + static_cast<std::ptrdiff_t>(iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              *dst++ = (ix >= 0 && ix < w) ? line[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

/// Adjoint of im2col: accumulates columns back into an image of x's shape.
template <typename T>
void col2im(const Mat<T>& cols, int k, int stride, int pad, int ho, int wo, Activation<T>& dx) {
  const int h = dx.height, w = dx.width;
  dx.data.setZero();
  for (int c = 0; c < dx.channels; ++c) {
    T* dst_c = dx.data.row(c).data();
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* src = cols.row((c * k + ky) * k + kx).data();
        for (int n = 0; n < dx.batch; ++n) {
          T* dst = dst_c + static_cast<std::ptrdiff_t>(n) * h * w;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride - pad + ky;
            if (iy < 0 || iy >= h) {
              src += wo;
              continue;
            }
            T* line = dst + static_cast<std::ptrdiff_t>(iy) * w;
            for (int ox = 0; ox < wo; ++ox, ++src) {
              const int ix = ox * stride - pad + kx;
              if (ix >= 0 && ix < w) line[ix] += *src;
            }
          }
        }
      }
    }
  }
}

template <typename T>
class Conv2d final : public Module<T> {
 public:
  Conv2d(int in, int out, int kernel, int stride, int pad, bool bias = false)
      : in_(in),
        out_(out),
        k_(kernel),
        stride_(stride),
        pad_(pad),
        weight_({out, in, kernel, kernel}, out, in * kernel * kernel),
        bias_({out}, out, 1) {
    has_bias_ = bias;
  }

  /// He-normal initialization (fan-out, ReLU gain).
  void init(Rng& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (out_ * k_ * k_)));
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i) weight_.value.data()[i] = static_cast<T>(dist(rng));
    bias_.value.setZero();
  }

  /// The first layer of a network never needs an input gradient.
  void set_input_grad(bool v) { input_grad_ = v; }

  Activation<T> infer(const Activation<T>& x) const override {
    check(x);
    Mat<T> cols;
    const Mat<T>& c = unfold(x, cols);
    return apply(x, c);
  }

  Activation<T> forward(const Activation<T>& x) override {
    check(x);
    in_shape_ = {x.channels, x.batch, x.height, x.width};
    if (pointwise()) {
      cols_ = x.data;
    } else {
      im2col(x, k_, stride_, pad_, conv_out(x.height, k_, stride_, pad_), conv_out(x.width, k_, stride_, pad_),
             cols_);
    }
    return apply(x, cols_);
  }

  Activation<T> backward(const Activation<T>& dy) override {
    weight_.grad.noalias() += dy.data * cols_.transpose();
    if (has_bias_) bias_.grad += dy.data.rowwise().sum();
    Activation<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    if (!input_grad_) return dx;
    if (pointwise()) {
      dx.data.noalias() = weight_.value.transpose() * dy.data;
    } else {
      Mat<T> dcols = weight_.value.transpose() * dy.data;
      col2im(dcols, k_, stride_, pad_, dy.height, dy.width, dx);
    }
    return dx;
  }

  void collect(const std::string& prefix, ParamList<T>& out) override {
    out.emplace_back(join_name(prefix, "weight"), &weight_);
    if (has_bias_) out.emplace_back(join_name(prefix, "bias"), &bias_);
  }

  Parameter<T>& weight() { return weight_; }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  void check(const Activation<T>& x) const {
    if (x.channels != in_) {
      throw RejectedInput("conv expects " + std::to_string(in_) + " input channels, got " +
                          std::to_string(x.channels));
    }
  }

  const Mat<T>& unfold(const Activation<T>& x, Mat<T>& cols) const {
    if (pointwise()) return x.data;
    im2col(x, k_, stride_, pad_, conv_out(x.height, k_, stride_, pad_), conv_out(x.width, k_, stride_, pad_), cols);
    return cols;
  }

  Activation<T> apply(const Activation<T>& x, const Mat<T>& cols) const {
    Activation<T> y(out_, x.batch, conv_out(x.height, k_, stride_, pad_), conv_out(x.width, k_, stride_, pad_));
    y.data.noalias() = weight_.value * cols;
    if (has_bias_) y.data.colwise() += Vec<T>(bias_.value.col(0));
    return y;
  }

  int in_, out_, k_, stride_, pad_;
  bool has_bias_ = false;
  bool input_grad_ = true;
  Parameter<T> weight_;
  Parameter<T> bias_;
  Mat<T> cols_;
  std::array<int, 4> in_shape_{};
};

/// Batch normalization over channels. When frozen, running statistics and
/// the affine parameters stay fixed and the layer is a per-channel affine map
/// in both modes.
template <typename T>
class BatchNorm2d final : public Module<T> {
 public:
  explicit BatchNorm2d(int channels, bool frozen = true, double eps = 1e-5, double momentum = 0.1)
      : channels_(channels),
        eps_(eps),
        momentum_(momentum),
        weight_({channels}, channels, 1),
        bias_({channels}, channels, 1),
        running_mean_({channels}, channels, 1, true),
        running_var_({channels}, channels, 1, true) {
    weight_.value.setOnes();
    running_var_.value.setOnes();
    set_frozen(frozen);
  }

  void set_frozen(bool frozen) {
    frozen_ = frozen;
    weight_.frozen = frozen;
    bias_.frozen = frozen;
  }
  bool frozen() const { return frozen_; }

  Activation<T> infer(const Activation<T>& x) const override {
    Vec<T> scale, shift;
    eval_affine(scale, shift);
    return affine(x, scale, shift);
  }

  Activation<T> forward(const Activation<T>& x) override {
    if (frozen_) {
      Vec<T> shift;
      eval_affine(scale_, shift);
      return affine(x, scale_, shift);
    }
    const Eigen::Index m = x.data.cols();
    mean_ = x.data.rowwise().mean();
    xhat_ = x.data.colwise() - mean_;
    const Vec<T> var = xhat_.array().square().rowwise().mean();
    inv_std_ = (var.array() + static_cast<T>(eps_)).rsqrt();
    xhat_ = inv_std_.asDiagonal() * xhat_;
    const T mom = static_cast<T>(momentum_);
    const T unbias = m > 1 ? static_cast<T>(m) / static_cast<T>(m - 1) : T(1);
    running_mean_.value.col(0) = (T(1) - mom) * running_mean_.value.col(0) + mom * mean_;
    running_var_.value.col(0) = (T(1) - mom) * running_var_.value.col(0) + mom * unbias * var;
    Activation<T> y(x.channels, x.batch, x.height, x.width);
    y.data = Vec<T>(weight_.value.col(0)).asDiagonal() * xhat_;
    y.data.colwise() += Vec<T>(bias_.value.col(0));
    return y;
  }

  Activation<T> backward(const Activation<T>& dy) override {
    Activation<T> dx(dy.channels, dy.batch, dy.height, dy.width);
    if (frozen_) {
      dx.data = scale_.asDiagonal() * dy.data;
      return dx;
    }
    const T m = static_cast<T>(dy.data.cols());
    const Vec<T> dbeta = dy.data.rowwise().sum();
    const Vec<T> dgamma = (dy.data.array() * xhat_.array()).rowwise().sum();
    weight_.grad.col(0) += dgamma;
    bias_.grad.col(0) += dbeta;
    const Vec<T> g = Vec<T>(weight_.value.col(0)).cwiseProduct(inv_std_) / m;
    dx.data = (m * dy.data).colwise() - dbeta;
    dx.data -= dgamma.asDiagonal() * xhat_;
    dx.data = g.asDiagonal() * dx.data;
    return dx;
  }

  void collect(const std::string& prefix, ParamList<T>& out) override {
    out.emplace_back(join_name(prefix, "weight"), &weight_);
    out.emplace_back(join_name(prefix, "bias"), &bias_);
    out.emplace_back(join_name(prefix, "running_mean"), &running_mean_);
    out.emplace_back(join_name(prefix, "running_var"), &running_var_);
  }

 private:
  void eval_affine(Vec<T>& scale, Vec<T>& shift) const {
    scale = Vec<T>(weight_.value.col(0)).array() /
            (Vec<T>(running_var_.value.col(0)).array() + static_cast<T>(eps_)).sqrt();
    shift = Vec<T>(bias_.value.col(0)) - Vec<T>(running_mean_.value.col(0)).cwiseProduct(scale);
  }

  static Activation<T> affine(const Activation<T>& x, const Vec<T>& scale, const Vec<T>& shift) {
    Activation<T> y(x.channels, x.batch, x.height, x.width);
    y.data = scale.asDiagonal() * x.data;
    y.data.colwise() += shift;
    return y;
  }

  int channels_;
  double eps_, momentum_;
  bool frozen_ = true;
  Parameter<T> weight_, bias_, running_mean_, running_var_;
  Vec<T> scale_, mean_, inv_std_;
  Mat<T> xhat_;
};

template <typename T>
class ReLU final : public Module<T> {
 public:
  Activation<T> infer(const Activation<T>& x) const override {
    Activation<T> y = x;
    y.data = y.data.cwiseMax(T(0));
    return y;
  }
  Activation<T> forward(const Activation<T>& x) override {
    Activation<T> y = infer(x);
    out_ = y.data;
    return y;
  }
  Activation<T> backward(const Activation<T>& dy) override {
    Activation<T> dx = dy;
    dx.data = (out_.array() > T(0)).select(dy.data, T(0));
    return dx;
  }
  void collect(const std::string&, ParamList<T>&) override {}

 private:
  Mat<T> out_;
};

template <typename T>
class MaxPool2d final : public Module<T> {
 public:
  MaxPool2d(int kernel, int stride, int pad) : k_(kernel), s_(stride), p_(pad) {}

  Activation<T> infer(const Activation<T>& x) const override { return pool(x, nullptr); }
  Activation<T> forward(const Activation<T>& x) override {
    in_shape_ = {x.channels, x.batch, x.height, x.width};
    return pool(x, &argmax_);
  }
  Activation<T> backward(const Activation<T>& dy) override {
    Activation<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    dx.data.setZero();
    for (Eigen::Index c = 0; c < dy.data.rows(); ++c)
      for (Eigen::Index j = 0; j < dy.data.cols(); ++j) dx.data(c, argmax_(c, j)) += dy.data(c, j);
    return dx;
  }
  void collect(const std::string&, ParamList<T>&) override {}

 private:
  Activation<T> pool(const Activation<T>& x, Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic>* arg) const {
    const int ho = conv_out(x.height, k_, s_, p_), wo = conv_out(x.width, k_, s_, p_);
    Activation<T> y(x.channels, x.batch, ho, wo);
    if (arg) arg->resize(y.data.rows(), y.data.cols());
    for (int c = 0; c < x.channels; ++c) {
      for (int n = 0; n < x.batch; ++n) {
        const Eigen::Index base = static_cast<Eigen::Index>(n) * x.height * x.width;
        for (int oy = 0; oy < ho; ++oy) {
          for (int ox = 0; ox < wo; ++ox) {
            T best = -std::numeric_limits<T>::infinity();
            Eigen::Index where = base;
            for (int ky = 0; ky < k_; ++ky) {
              const int iy = oy * s_ - p_ + ky;
              if (iy < 0 || iy >= x.height) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const int ix = ox * s_ - p_ + kx;
                if (ix < 0 || ix >= x.width) continue;
                const Eigen::Index idx = base + static_cast<Eigen::Index>(iy) * x.width + ix;
                if (x.data(c, idx) > best) {
                  best = x.data(c, idx);
                  where = idx;
                }
              }
            }
            const Eigen::Index out = (static_cast<Eigen::Index>(n) * ho + oy) * wo + ox;
            y.data(c, out) = best;
            if (arg) (*arg)(c, out) = where;
          }
        }
      }
    }
    return y;
  }

  int k_, s_, p_;
  std::array<int, 4> in_shape_{};
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax_;
};

/// Mean over the spatial plane; output is channels x batch with 1x1 planes.
template <typename T>
class GlobalAvgPool final : public Module<T> {
 public:
  Activation<T> infer(const Activation<T>& x) const override {
    Activation<T> y(x.channels, x.batch, 1, 1);
    const int plane = x.plane();
    for (int n = 0; n < x.batch; ++n) {
      y.data.col(n) = x.data.middleCols(static_cast<Eigen::Index>(n) * plane, plane).rowwise().mean();
    }
    return y;
  }
  Activation<T> forward(const Activation<T>& x) override {
    in_shape_ = {x.channels, x.batch, x.height, x.width};
    return infer(x);
  }
  Activation<T> backward(const Activation<T>& dy) override {
    Activation<T> dx(in_shape_[0], in_shape_[1], in_shape_[2], in_shape_[3]);
    const int plane = dx.plane();
    const T inv = T(1) / static_cast<T>(plane);
    for (int n = 0; n < dx.batch; ++n) {
      dx.data.middleCols(static_cast<Eigen::Index>(n) * plane, plane).colwise() = dy.data.col(n) * inv;
    }
    return dx;
  }
  void collect(const std::string&, ParamList<T>&) override {}

 private:
  std::array<int, 4> in_shape_{};
};

/// Named children applied in order.
template <typename T>
class Sequential final : public Module<T> {
 public:
  template <typename M>
  M& add(std::string name, std::unique_ptr<M> m) {
    M& ref = *m;
    children_.emplace_back(std::move(name), std::move(m));
    return ref;
  }

  Activation<T> infer(const Activation<T>& x) const override {
    Activation<T> h = x;
    for (const auto& [name, m] : children_) h = m->infer(h);
    return h;
  }
  Activation<T> forward(const Activation<T>& x) override {
    Activation<T> h = x;
    for (auto& [name, m] : children_) h = m->forward(h);
    return h;
  }
  Activation<T> backward(const Activation<T>& dy) override {
    Activation<T> g = dy;
    for (auto it = children_.rbegin(); it != children_.rend(); ++it) g = it->second->backward(g);
    return g;
  }
  void collect(const std::string& prefix, ParamList<T>& out) override {
    for (auto& [name, m] : children_) m->collect(name.empty() ? prefix : join_name(prefix, name), out);
  }

 private:
  std::vector<std::pair<std::string, std::unique_ptr<Module<T>>>> children_;
};

/// Two 3x3 convolutions with identity or projected shortcut.
template <typename T>
class BasicBlock final : public Module<T> {
 public:
  BasicBlock(int in, int out, int stride, bool frozen_norm, Rng& rng)
      : conv1_(in, out, 3, stride, 1), bn1_(out, frozen_norm), conv2_(out, out, 3, 1, 1), bn2_(out, frozen_norm) {
    conv1_.init(rng);
    conv2_.init(rng);
    if (stride != 1 || in != out) {
      down_conv_ = std::make_unique<Conv2d<T>>(in, out, 1, stride, 0);
      down_conv_->init(rng);
      down_bn_ = std::make_unique<BatchNorm2d<T>>(out, frozen_norm);
    }
  }

  Activation<T> infer(const Activation<T>& x) const override {
    Activation<T> h = bn2_.infer(conv2_.infer(relu_.infer(bn1_.infer(conv1_.infer(x)))));
    if (down_conv_)
      h.data += down_bn_->infer(down_conv_->infer(x)).data;
    else
      h.data += x.data;
    return relu_.infer(h);
  }

  Activation<T> forward(const Activation<T>& x) override {
    Activation<T> h = bn2_.forward(conv2_.forward(relu1_.forward(bn1_.forward(conv1_.forward(x)))));
    if (down_conv_)
      h.data += down_bn_->forward(down_conv_->forward(x)).data;
    else
      h.data += x.data;
    return relu_out_.forward(h);
  }

  Activation<T> backward(const Activation<T>& dy) override {
    const Activation<T> d = relu_out_.backward(dy);
    Activation<T> dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(d)))));
    if (down_conv_)
      dx.data += down_conv_->backward(down_bn_->backward(d)).data;
    else
      dx.data += d.data;
    return dx;
  }

  void collect(const std::string& prefix, ParamList<T>& out) override {
    conv1_.collect(join_name(prefix, "conv1"), out);
    bn1_.collect(join_name(prefix, "bn1"), out);
    conv2_.collect(join_name(prefix, "conv2"), out);
    bn2_.collect(join_name(prefix, "bn2"), out);
    if (down_conv_) {
      down_conv_->collect(join_name(prefix, "downsample.0"), out);
      down_bn_->collect(join_name(prefix, "downsample.1"), out);
    }
  }

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  ReLU<T> relu_, relu1_, relu_out_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  std::unique_ptr<Conv2d<T>> down_conv_;
  std::unique_ptr<BatchNorm2d<T>> down_bn_;
};

}  // namespace prd::nn
