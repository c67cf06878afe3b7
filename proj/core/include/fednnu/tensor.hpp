#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace fednnu {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& dims);
std::string shape_to_string(const Shape& dims);

// Dense row-major tensor of 64-bit floats with an optional gradient buffer.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape dims, double fill = 0.0);
  Tensor(Shape dims, std::vector<double> values);

  const Shape& dims() const { return dims_; }
  std::size_t rank() const { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // NCHW accessor for rank-4 tensors.
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return values_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return values_[((n * dims_[1] + c) * dims_[2] + h) * dims_[3] + w];
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }
  // Allocates (or resets) the gradient buffer to zeros.
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  void fill(double v);

  // Values and dims only; gradients are scratch state.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.dims_ == b.dims_ && a.values_ == b.values_;
  }

 private:
  Shape dims_;
  std::vector<double> values_;
  std::vector<double> grad_;
};

}  // namespace fednnu
