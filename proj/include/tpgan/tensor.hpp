#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tpgan {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

// Dense n-d array, row-major (last dimension fastest), flat Eigen storage.
// Images are stored NHWC with values in [-1, 1].
template <typename S>
class TensorT {
 public:
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  TensorT() = default;
  explicit TensorT(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_)) {
    data_.setZero();
  }
  TensorT(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_))
      throw std::invalid_argument("tensor: storage size does not match shape " + shape_str(shape_));
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT ones(Shape shape) { return full(std::move(shape), S(1)); }
  static TensorT full(Shape shape, S v) {
    TensorT t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }
  static TensorT scalar(S v) { return full({1}, v); }
  static TensorT from(Shape shape, std::initializer_list<S> vals) {
    TensorT t(std::move(shape));
    if ((Index)vals.size() != t.numel())
      throw std::invalid_argument("tensor: initializer size mismatch");
    Index i = 0;
    for (S v : vals) t.data_[i++] = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  int ndim() const { return (int)shape_.size(); }
  Index dim(int i) const { return shape_.at((size_t)i); }
  Index numel() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  S& at(Index i) { return data_[i]; }
  S& at(Index i, Index j) { return data_[i * shape_[1] + j]; }
  S& at(Index i, Index j, Index k) { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  S& at(Index i, Index j, Index k, Index l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  S at(Index i) const { return data_[i]; }
  S at(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  S at(Index i, Index j, Index k) const { return data_[(i * shape_[1] + j) * shape_[2] + k]; }
  S at(Index i, Index j, Index k, Index l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  TensorT reshaped(Shape shape) const {
    if (shape_numel(shape) != numel())
      throw std::invalid_argument("reshape: element count mismatch " + shape_str(shape_) + " -> " +
                                  shape_str(shape));
    return TensorT(std::move(shape), data_);
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  // 2-d matrix view over the flat buffer (row-major).
  MatrixMap matrix(Index rows, Index cols) {
    if (rows * cols != numel()) throw std::invalid_argument("matrix view: size mismatch");
    return MatrixMap(data(), rows, cols);
  }
  ConstMatrixMap matrix(Index rows, Index cols) const {
    if (rows * cols != numel()) throw std::invalid_argument("matrix view: size mismatch");
    return ConstMatrixMap(data(), rows, cols);
  }
  // Interpret as [prod(leading dims), last dim].
  MatrixMap as_rows() { return matrix(numel() / shape_.back(), shape_.back()); }
  ConstMatrixMap as_rows() const { return matrix(numel() / shape_.back(), shape_.back()); }

  bool all_finite() const { return data_.isFinite().all(); }

 private:
  Shape shape_;
  Storage data_;
};

using Real = double;
using Tensor = TensorT<Real>;

inline Tensor onehot_rows(const std::vector<Index>& labels, Index num_classes) {
  Tensor t(Shape{(Index)labels.size(), num_classes});
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw std::invalid_argument("onehot: label " + std::to_string(labels[i]) + " out of [0, " +
                                  std::to_string(num_classes) + ")");
    t.at((Index)i, labels[i]) = Real(1);
  }
  return t;
}

}  // namespace tpgan
