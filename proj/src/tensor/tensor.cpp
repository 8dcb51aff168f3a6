#include "yolod/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "yolod/errors.hpp"

namespace yolod {

std::int64_t numel(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, T fill)
    : shape_(std::move(shape)), data_(static_cast<std::size_t>(yolod::numel(shape_)), fill) {}

template <typename T>
BasicTensor<T>::BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (yolod::numel(shape_) != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError("tensor shape " + to_string(shape_) + " holds " + std::to_string(yolod::numel(shape_)) +
                     " elements but " + std::to_string(data_.size()) + " were given");
  }
}

template <typename T>
int BasicTensor<T>::dim(int axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for shape " + to_string(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename T>
BasicTensor<T> BasicTensor<T>::reshaped(Shape shape) const {
  if (yolod::numel(shape) != numel()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  return BasicTensor(std::move(shape), data_);
}

template <typename T>
void BasicTensor<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool BasicTensor<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
}

template class BasicTensor<float>;
template class BasicTensor<double>;

}  // namespace yolod
