#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace ctaf::num {

namespace detail {

// Allocator whose default-construct is a no-op, so resizing the backing
// vector does not value-initialize. Tensor(shape) zero-fills explicitly;
// Tensor::uninit skips the fill for buffers the caller overwrites in full.
template <class T>
struct UninitAlloc : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = UninitAlloc<U>;
  };
  using std::allocator<T>::allocator;
  template <class U>
  void construct(U*) noexcept {}
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace detail

// Dense row-major f64 array. Rank is dynamic; most of the model lives at
// rank 2 ([rows, cols]) or rank 3 ([batch, seq, feat]).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  static Tensor uninit(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor scalar(double v);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t numel() const { return data_.size(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Rank-checked element access for 2-D / 3-D tensors.
  double& at2(std::size_t i, std::size_t j);
  double at2(std::size_t i, std::size_t j) const;
  double& at3(std::size_t b, std::size_t i, std::size_t j);
  double at3(std::size_t b, std::size_t i, std::size_t j) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  void fill(double v);
  bool all_finite() const;
  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double, detail::UninitAlloc<double>> data_;
};

}  // namespace ctaf::num
