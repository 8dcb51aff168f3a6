#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace yolod {

// Extents in N,C,H,W order for image-like data.
using Shape = std::vector<int>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

// Dense row-major array. Value type; copying copies the payload.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0));
  BasicTensor(Shape shape, std::vector<T> data);

  static BasicTensor scalar(T value) { return BasicTensor(Shape{1}, std::vector<T>{value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int axis) const;
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // 4-D accessors; no bounds checks beyond what the caller guarantees.
  T& at(int n, int c, int h, int w) { return data_[offset(n, c, h, w)]; }
  T at(int n, int c, int h, int w) const { return data_[offset(n, c, h, w)]; }

  BasicTensor reshaped(Shape shape) const;
  void fill(T value);
  bool all_finite() const;

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool operator==(const BasicTensor& other) const = default;

 private:
  std::size_t offset(int n, int c, int h, int w) const {
    return ((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace yolod
