// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace resformer {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

/// Thrown when operand shapes are incompatible.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown for invalid layer or model configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a caller breaks a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown for malformed or mismatched files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

Index numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using MatrixMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatrixMap = Eigen::Map<const RowMatrix<Scalar>>;

/// Dense row-major N-d array. Value semantics; the flat storage is an Eigen
/// array so elementwise expressions can be written directly against it.
template <typename Scalar>
class Tensor {
 public:
  using Array = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Tensor() = default;
  explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(Array::Zero(numel(shape_))) {}
  Tensor(Shape shape, Scalar fill) : shape_(std::move(shape)), data_(Array::Constant(numel(shape_), fill)) {}
  Tensor(Shape shape, std::initializer_list<Scalar> values);
  Tensor(Shape shape, Array values);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Array& array() { return data_; }
  const Array& array() const { return data_; }
  Scalar* data() { return data_.data(); }
  const Scalar* data() const { return data_.data(); }

  Scalar& operator[](Index i) { return data_[i]; }
  Scalar operator[](Index i) const { return data_[i]; }

  /// Multi-index access, e.g. t.at({0, 2, 1}).
  Scalar& at(std::initializer_list<Index> index);
  Scalar at(std::initializer_list<Index> index) const;

  /// Row-major matrix view of `rows * cols` elements starting at `offset`.
  MatrixMap<Scalar> matrix(Index rows, Index cols, Index offset = 0);
  ConstMatrixMap<Scalar> matrix(Index rows, Index cols, Index offset = 0) const;

  /// Same data, new shape. Element count must match.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  bool all_finite() const { return data_.allFinite(); }
  void set_zero() { data_.setZero(); }

 private:
  Index flat_index(std::initializer_list<Index> index) const;

  Shape shape_;
  Array data_;
};

template <typename Scalar>
class SpikeTensor;

namespace detail {
// Only neuron ops construct spike tensors without the binarity scan.
struct SpikeAccess {
  template <typename Scalar>
  static SpikeTensor<Scalar> wrap(Tensor<Scalar> values);
};
}  // namespace detail

/// Binary array with a leading time axis.
template <typename Scalar>
class SpikeTensor {
 public:
  SpikeTensor() = default;

  /// Validates that every element is exactly 0 or 1.
  static SpikeTensor from_binary(Tensor<Scalar> values);

  const Tensor<Scalar>& values() const { return values_; }
  const Shape& shape() const { return values_.shape(); }
  Index time_steps() const { return values_.rank() == 0 ? 0 : values_.dim(0); }
  Index size() const { return values_.size(); }

  Index spike_count() const;
  /// Fraction of ones; 0 for an empty tensor.
  double firing_rate() const;

 private:
  friend struct detail::SpikeAccess;
  explicit SpikeTensor(Tensor<Scalar> values) : values_(std::move(values)) {}

  Tensor<Scalar> values_;
};

template <typename Scalar>
SpikeTensor<Scalar> detail::SpikeAccess::wrap(Tensor<Scalar> values) {
  return SpikeTensor<Scalar>(std::move(values));
}

template <typename Scalar>
bool is_binary(const Tensor<Scalar>& t) {
  return ((t.array() == Scalar(0)) || (t.array() == Scalar(1))).all();
}

}  // namespace resformer
