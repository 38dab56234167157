#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "irstyle/error.hpp"

namespace irstyle {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. `Tensor` (32-bit) is the working type; the 64-bit
/// instantiation backs gradient checking.
template <class R>
class BasicTensor {
 public:
  using value_type = R;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, R fill = R(0))
      : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}
  BasicTensor(Shape shape, std::vector<R> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      fail(ErrorKind::shape, "tensor data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_string(shape_));
    }
  }
  BasicTensor(Shape shape, std::initializer_list<R> data)
      : BasicTensor(std::move(shape), std::vector<R>(data)) {}

  static BasicTensor scalar(R v) { return BasicTensor(Shape{1}, std::vector<R>{v}); }
  static BasicTensor vector(std::vector<R> v) {
    const std::size_t n = v.size();
    return BasicTensor(Shape{n}, std::move(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<R> data() noexcept { return data_; }
  std::span<const R> data() const noexcept { return data_; }
  R* raw() noexcept { return data_.data(); }
  const R* raw() const noexcept { return data_.data(); }
  std::vector<R>& storage() noexcept { return data_; }
  const std::vector<R>& storage() const noexcept { return data_; }

  R& operator[](std::size_t i) { return data_[i]; }
  const R& operator[](std::size_t i) const { return data_[i]; }
  R item() const {
    if (data_.size() != 1) fail(ErrorKind::shape, "item() on tensor of shape " + shape_string(shape_));
    return data_[0];
  }

  BasicTensor reshaped(Shape shape) const {
    return BasicTensor(std::move(shape), data_);
  }

  template <class U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  bool all_finite() const;

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<R> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace irstyle
