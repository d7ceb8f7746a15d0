#include "histlayer/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "histlayer/error.hpp"

namespace histlayer {

std::string Shape::str() const {
  std::ostringstream os;
  os << '[' << n << ',' << c << ',' << h << ',' << w << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw ShapeError("tensor of shape " + shape_.str() + " needs " + std::to_string(shape_.numel()) +
                     " values, got " + std::to_string(data_.size()));
  }
}

std::span<double> Tensor::plane(std::size_t n, std::size_t c) noexcept {
  return std::span<double>(data_).subspan(index(n, c, 0, 0), shape_.spatial());
}

std::span<const double> Tensor::plane(std::size_t n, std::size_t c) const noexcept {
  return std::span<const double>(data_).subspan(index(n, c, 0, 0), shape_.spatial());
}

void Tensor::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::add(const Tensor& other) {
  if (other.shape_ != shape_) {
    throw ShapeError("cannot add " + other.shape_.str() + " into " + shape_.str());
  }
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)),
      value(std::move(value_)),
      grad(value.shape()),
      lock_mask(value.shape(), 1.0),
      momentum(value.shape()),
      structural_mask(value.shape(), 1.0) {}

void Parameter::zero_grad() { grad.fill(0.0); }

void Parameter::freeze() { lock_mask.fill(0.0); }

void Parameter::thaw() { lock_mask = structural_mask; }

void Parameter::set_structural_mask(Tensor mask) {
  if (mask.shape() != value.shape()) {
    throw ShapeError("mask shape " + mask.shape().str() + " does not match parameter " + name + " " +
                     value.shape().str());
  }
  structural_mask = std::move(mask);
  lock_mask = structural_mask;
}

std::size_t Parameter::structural_count() const {
  return static_cast<std::size_t>(
      std::count_if(structural_mask.values().begin(), structural_mask.values().end(),
                    [](double m) { return m != 0.0; }));
}

std::size_t Parameter::trainable_count() const {
  return static_cast<std::size_t>(std::count_if(lock_mask.values().begin(), lock_mask.values().end(),
                                                [](double m) { return m != 0.0; }));
}

}  // namespace histlayer
