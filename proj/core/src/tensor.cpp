#include "fednnu/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

#include "fednnu/error.hpp"

namespace fednnu {

std::size_t shape_numel(const Shape& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape dims, double fill) : dims_(std::move(dims)), values_(shape_numel(dims_), fill) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_to_string(dims_));
  }
}

Tensor::Tensor(Shape dims, std::vector<double> values) : dims_(std::move(dims)), values_(std::move(values)) {
  for (auto d : dims_) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + shape_to_string(dims_));
  }
  if (shape_numel(dims_) != values_.size()) {
    throw ShapeError("tensor " + shape_to_string(dims_) + " needs " + std::to_string(shape_numel(dims_)) +
                     " values, got " + std::to_string(values_.size()));
  }
}

void Tensor::zero_grad() { grad_.assign(values_.size(), 0.0); }

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

}  // namespace fednnu
