#pragma once

#include <algorithm>
#include <cstddef>
#include <new>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace kpn {

/// 64-byte aligned allocation. Vectorized reductions split their loops at
/// the first aligned element, so results only repeat bit for bit across runs
/// when buffers start at the same alignment.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

/// Dense NCHW shape.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t size() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Row-major NCHW tensor with value semantics.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0))
      : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, const std::vector<T>& data) : shape_(shape), data_(data.begin(), data.end()) {
    if (data_.size() != shape_.size()) {
      throw std::invalid_argument("tensor data size " + std::to_string(data_.size()) +
                                  " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  int n() const { return shape_.n; }
  int c() const { return shape_.c; }
  int h() const { return shape_.h; }
  int w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }

  T& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  const T& at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  /// Pointer to plane (n, c).
  T* plane(int n, int c) { return data_.data() + index(n, c, 0, 0); }
  const T* plane(int n, int c) const { return data_.data() + index(n, c, 0, 0); }
  /// Pointer to sample n.
  T* sample(int n) { return data_.data() + index(n, 0, 0, 0); }
  const T* sample(int n) const { return data_.data() + index(n, 0, 0, 0); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }

  Shape shape_;
  AlignedVector<T> data_;
};

inline std::string Shape::str() const {
  return "[" + std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" +
         std::to_string(w) + "]";
}

}  // namespace kpn
