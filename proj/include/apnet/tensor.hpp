#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace apnet {

/// Dense row-major tensor of doubles. Feature maps use NCHW, images CHW,
/// logits NxF. Shapes are fixed after construction; reshape() only relabels.
class Tensor {
public:
  Tensor() = default;

  explicit Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<std::size_t>(count(shape_)), 0.0);
  }

  Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (count(shape_) != static_cast<std::int64_t>(data_.size()))
      throw std::invalid_argument("Tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<std::int64_t> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
  }

  const std::vector<std::int64_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }

  std::int64_t dim(std::size_t i) const {
    if (i >= shape_.size()) throw std::out_of_range("Tensor::dim: axis " + std::to_string(i));
    return shape_[i];
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-D accessors (N, C, H, W)
  double& at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at(std::int64_t n, std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>(((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }

  // 3-D accessors (C, H, W)
  double& at(std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
  }
  double at(std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
  }

  // 2-D accessors (N, F)
  double& at(std::int64_t n, std::int64_t f) {
    return data_[static_cast<std::size_t>(n * shape_[1] + f)];
  }
  double at(std::int64_t n, std::int64_t f) const {
    return data_[static_cast<std::size_t>(n * shape_[1] + f)];
  }

  void fill(double value) { data_.assign(data_.size(), value); }
  void zero() { fill(0.0); }

  Tensor& add_(const Tensor& other) {
    require_same_shape(other, "add_");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  Tensor& axpy_(double alpha, const Tensor& other) {
    require_same_shape(other, "axpy_");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += alpha * other.data_[i];
    return *this;
  }

  Tensor& scale_(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  double sum() const {
    double s = 0.0;
    for (double v : data_) s += v;
    return s;
  }

  /// Relabels the shape; element count must be preserved.
  void reshape(std::vector<std::int64_t> shape) {
    if (count(shape) != numel()) throw std::invalid_argument("Tensor::reshape: element count mismatch");
    shape_ = std::move(shape);
  }

  static std::int64_t count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= d;
    }
    return shape.empty() ? 0 : n;
  }

private:
  void require_same_shape(const Tensor& other, const char* op) const {
    if (!same_shape(other)) throw std::invalid_argument(std::string("Tensor::") + op + ": shape mismatch");
  }

  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

inline std::string shape_string(const Tensor& t) {
  std::string s = "(";
  for (std::size_t i = 0; i < t.shape().size(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.shape()[i]);
  }
  return s + ")";
}

}  // namespace apnet
