#pragma once

#include <array>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace cf {

// Up to three extents. Rank 0 is a scalar holding one element.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 3;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents);
  explicit Shape(std::span<const std::size_t> extents);

  std::size_t rank() const { return rank_; }
  std::size_t operator[](std::size_t axis) const { return extents_[axis]; }
  std::size_t numel() const;
  std::size_t back() const { return rank_ == 0 ? 1 : extents_[rank_ - 1]; }

  std::string str() const;

  friend bool operator==(const Shape& a, const Shape& b);

 private:
  std::array<std::size_t, kMaxRank> extents_{};
  std::size_t rank_ = 0;
};

// Dense row-major float64 array.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(shape); }
  static Tensor filled(Shape shape, double value);
  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.rank(); }
  std::size_t extent(std::size_t axis) const { return shape_[axis]; }
  std::size_t size() const { return data_.size(); }

  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }
  const std::vector<double>& values() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  double at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }
  double& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
  double at(std::size_t h, std::size_t i, std::size_t j) const {
    return data_[(h * shape_[1] + i) * shape_[2] + j];
  }
  double& at(std::size_t h, std::size_t i, std::size_t j) {
    return data_[(h * shape_[1] + i) * shape_[2] + j];
  }

  double item() const;
  bool all_finite() const;
  Tensor reshaped(Shape shape) const;

  void fill(double value);
  // this += other, shapes must match.
  void accumulate(const Tensor& other, double scale = 1.0);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

// Throws DimensionError naming both shapes when they differ.
void require_same_shape(const Shape& a, const Shape& b, const char* what);

}  // namespace cf
