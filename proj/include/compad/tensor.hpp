#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace compad {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

// Dense row-major tensor of doubles. A rank-0 shape is a scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double value);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor filled(Shape shape, double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  // rows()/cols() require rank 2.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> data() const& noexcept { return data_; }
  std::span<double> data() & noexcept { return data_; }
  const std::vector<double>& values() const& noexcept { return data_; }
  // a view into a temporary would dangle
  std::span<const double> data() const&& = delete;
  const std::vector<double>& values() const&& = delete;

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }
  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * shape_[1] + c];
  }

  double item() const;
  bool all_finite() const noexcept;
  void fill(double value) noexcept;

  // Same data, new shape of equal size.
  Tensor reshaped(Shape shape) const;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace compad
