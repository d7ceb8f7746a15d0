#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace histlayer {

/// Extent of a rank-4 tensor in NCHW order.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t numel() const noexcept { return n * c * h * w; }
  constexpr std::size_t spatial() const noexcept { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string str() const;
};

/// Dense row-major NCHW array of doubles, W fastest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape()); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) noexcept {
    return data_[index(n, c, h, w)];
  }
  double operator()(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const noexcept {
    return data_[index(n, c, h, w)];
  }
  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  /// Contiguous H*W plane of channel c in sample n.
  std::span<double> plane(std::size_t n, std::size_t c) noexcept;
  std::span<const double> plane(std::size_t n, std::size_t c) const noexcept;

  void fill(double v);
  /// this += other, shapes must match.
  void add(const Tensor& other);
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Trainable tensor with gradient, momentum buffer and update lock.
///
/// `lock_mask` entries are 1 for trainable entries and 0 for frozen ones.
/// `structural_mask` records which entries the layer design allows to train
/// at all; phase scheduling toggles `lock_mask` between all-zero and it.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  Tensor lock_mask;
  Tensor momentum;
  Tensor structural_mask;

  Parameter() = default;
  Parameter(std::string name, Tensor value);

  const Shape& shape() const noexcept { return value.shape(); }
  std::size_t size() const noexcept { return value.size(); }

  void zero_grad();
  /// Lock every entry.
  void freeze();
  /// Restore the structural mask.
  void thaw();
  /// Replace the structural mask and apply it.
  void set_structural_mask(Tensor mask);
  std::size_t structural_count() const;
  std::size_t trainable_count() const;
};

}  // namespace histlayer
