#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "prd/errors.hpp"

namespace prd::nn {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Feature maps in channel-major layout: row c holds channel c of every
/// sample, sample-major (n, y, x) along the row.
template <typename T>
struct Activation {
  int channels = 0;
  int batch = 0;
  int height = 0;
  int width = 0;
  Mat<T> data;

  Activation() = default;
  Activation(int c, int n, int h, int w) : channels(c), batch(n), height(h), width(w), data(c, n * h * w) {}

  int plane() const { return height * width; }
};

/// A named tensor owned by a module. Buffers (running statistics) are not
/// trained; frozen parameters are trained by nobody.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> shape;
  Mat<T> value;
  Mat<T> grad;
  bool buffer = false;
  bool frozen = false;

  Parameter(std::vector<int> shape_, int rows, int cols, bool is_buffer = false)
      : shape(std::move(shape_)), value(Mat<T>::Zero(rows, cols)), buffer(is_buffer) {
    if (!buffer) grad = Mat<T>::Zero(rows, cols);
  }

  bool trainable() const { return !buffer && !frozen; }
  Eigen::Index size() const { return value.size(); }
};

template <typename T>
using ParamList = std::vector<std::pair<std::string, Parameter<T>*>>;

/// Layer interface. `infer` is const and cache-free so one module can serve
/// concurrent readers; `forward` records what `backward` needs.
template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Activation<T> infer(const Activation<T>& x) const = 0;
  virtual Activation<T> forward(const Activation<T>& x) = 0;
  virtual Activation<T> backward(const Activation<T>& dy) = 0;
  virtual void collect(const std::string& prefix, ParamList<T>& out) = 0;
};

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (auto& [name, p] : params)
    if (!p->buffer) p->grad.setZero();
}

inline std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace prd::nn
