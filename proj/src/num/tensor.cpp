#include "ctaf/num/tensor.hpp"

#include <cassert>
#include <cmath>
#include <sstream>

#include "ctaf/common/errors.hpp"

namespace ctaf::num {
namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(product(shape_), 0.0) {}

Tensor Tensor::uninit(std::vector<std::size_t> shape) {
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_.resize(product(t.shape_));
  return t;
}

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t = uninit(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data) {
  if (product(shape) != data.size())
    throw NumericError("tensor data size does not match shape");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_.assign(data.begin(), data.end());
  return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double& Tensor::at2(std::size_t i, std::size_t j) {
  assert(rank() == 2);
  return data_[i * shape_[1] + j];
}

double Tensor::at2(std::size_t i, std::size_t j) const {
  assert(rank() == 2);
  return data_[i * shape_[1] + j];
}

double& Tensor::at3(std::size_t b, std::size_t i, std::size_t j) {
  assert(rank() == 3);
  return data_[(b * shape_[1] + i) * shape_[2] + j];
}

double Tensor::at3(std::size_t b, std::size_t i, std::size_t j) const {
  assert(rank() == 3);
  return data_[(b * shape_[1] + i) * shape_[2] + j];
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

}  // namespace ctaf::num
