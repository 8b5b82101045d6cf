#pragma once

#include <Eigen/Core>

#include <cmath>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace wz {

using Shape = std::vector<int>;

inline std::string shape_to_string(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ", ";
    os << s[i];
  }
  os << "]";
  return os.str();
}

inline long shape_size(const Shape& s) {
  long n = 1;
  for (int d : s) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_to_string(s));
    n *= d;
  }
  return n;
}

// Dense row-major tensor over an Eigen array, with an optional gradient
// buffer of the same shape (allocated on first use). Rank is dynamic; the
// model only uses ranks 1-4.
template <typename S>
class Tensor {
 public:
  using Array = Eigen::Array<S, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(shape_size(shape_))) {}
  Tensor(Shape shape, std::initializer_list<S> values) : Tensor(std::move(shape)) {
    if (static_cast<long>(values.size()) != size())
      throw std::invalid_argument("initializer size does not match shape " + shape_to_string(shape_));
    long i = 0;
    for (S v : values) data_[i++] = v;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, S value) {
    Tensor t(std::move(shape));
    t.data_.setConstant(value);
    return t;
  }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  long size() const { return data_.size(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  Array& array() { return data_; }
  const Array& array() const { return data_; }

  S& operator[](long i) { return data_[i]; }
  S operator[](long i) const { return data_[i]; }

  // Row-major indexing helpers.
  S& operator()(int i) { return data_[i]; }
  S operator()(int i) const { return data_[i]; }
  S& operator()(int i, int j) { return data_[static_cast<long>(i) * dim(1) + j]; }
  S operator()(int i, int j) const { return data_[static_cast<long>(i) * dim(1) + j]; }
  S& operator()(int i, int j, int k) {
    return data_[(static_cast<long>(i) * dim(1) + j) * dim(2) + k];
  }
  S operator()(int i, int j, int k) const {
    return data_[(static_cast<long>(i) * dim(1) + j) * dim(2) + k];
  }
  S& operator()(int i, int j, int k, int l) {
    return data_[((static_cast<long>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }
  S operator()(int i, int j, int k, int l) const {
    return data_[((static_cast<long>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
  }

  bool has_grad() const { return grad_.size() == data_.size() && data_.size() > 0; }
  Array& grad() {
    if (!has_grad()) grad_ = Array::Zero(data_.size());
    return grad_;
  }
  const Array& grad() const {
    if (!has_grad()) throw std::logic_error("gradient buffer not allocated");
    return grad_;
  }
  void zero_grad() {
    if (has_grad()) grad_.setZero();
  }

  bool all_finite() const { return data_.isFinite().all(); }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != size())
      throw std::invalid_argument("reshape " + shape_to_string(shape_) + " -> " +
                                  shape_to_string(shape) + " changes element count");
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> t(shape_);
    t.array() = data_.template cast<T>();
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  Shape shape_;
  Array data_;
  Array grad_;
};

template <typename S>
void require_shape(const Tensor<S>& t, const Shape& want, const char* what) {
  if (t.shape() != want)
    throw std::invalid_argument(std::string(what) + ": expected shape " + shape_to_string(want) +
                                ", got " + shape_to_string(t.shape()));
}

template <typename S>
void require_rank(const Tensor<S>& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw std::invalid_argument(std::string(what) + ": expected rank " + std::to_string(rank) +
                                ", got shape " + shape_to_string(t.shape()));
}

}  // namespace wz
