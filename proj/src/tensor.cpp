// SPDX-FileCopyrightText: © 2026 The resformer authors
//
// SPDX-License-Identifier: Apache-2.0

#include "resformer/tensor.hpp"

#include <sstream>

namespace resformer {

Index numel(const Shape& shape) {
  Index n = 1;
  for (Index d : shape) {
    if (d < 0) throw DimensionError("negative axis length in shape " + to_string(shape));
    n *= d;
  }
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::initializer_list<Scalar> values) : shape_(std::move(shape)) {
  if (numel(shape_) != static_cast<Index>(values.size())) {
    throw DimensionError("shape " + to_string(shape_) + " does not hold " + std::to_string(values.size()) +
                         " values");
  }
  data_.resize(numel(shape_));
  Index i = 0;
  for (Scalar v : values) data_[i++] = v;
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Array values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (numel(shape_) != data_.size()) {
    throw DimensionError("shape " + to_string(shape_) + " does not hold " + std::to_string(data_.size()) +
                         " values");
  }
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + to_string(shape_));
  }
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Index Tensor<Scalar>::flat_index(std::initializer_list<Index> index) const {
  if (static_cast<Index>(index.size()) != rank()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " + to_string(shape_));
  }
  Index flat = 0;
  std::size_t axis = 0;
  for (Index i : index) {
    if (i < 0 || i >= shape_[axis]) throw DimensionError("index out of range for shape " + to_string(shape_));
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

template <typename Scalar>
Scalar& Tensor<Scalar>::at(std::initializer_list<Index> index) {
  return data_[flat_index(index)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::at(std::initializer_list<Index> index) const {
  return data_[flat_index(index)];
}

template <typename Scalar>
MatrixMap<Scalar> Tensor<Scalar>::matrix(Index rows, Index cols, Index offset) {
  if (offset < 0 || offset + rows * cols > size()) {
    throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " exceeds tensor of shape " + to_string(shape_));
  }
  return MatrixMap<Scalar>(data_.data() + offset, rows, cols);
}

template <typename Scalar>
ConstMatrixMap<Scalar> Tensor<Scalar>::matrix(Index rows, Index cols, Index offset) const {
  if (offset < 0 || offset + rows * cols > size()) {
    throw DimensionError("matrix view " + std::to_string(rows) + "x" + std::to_string(cols) +
                         " exceeds tensor of shape " + to_string(shape_));
  }
  return ConstMatrixMap<Scalar>(data_.data() + offset, rows, cols);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) && {
  if (numel(shape) != size()) {
    throw DimensionError("cannot reshape " + to_string(shape_) + " to " + to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

template <typename Scalar>
SpikeTensor<Scalar> SpikeTensor<Scalar>::from_binary(Tensor<Scalar> values) {
  if (!is_binary(values)) throw ContractViolation("spike tensor values must be exactly 0 or 1");
  return SpikeTensor(std::move(values));
}

template <typename Scalar>
Index SpikeTensor<Scalar>::spike_count() const {
  return (values_.array() != Scalar(0)).count();
}

template <typename Scalar>
double SpikeTensor<Scalar>::firing_rate() const {
  if (values_.size() == 0) return 0.0;
  return static_cast<double>(spike_count()) / static_cast<double>(values_.size());
}

template class Tensor<float>;
template class Tensor<double>;
template class SpikeTensor<float>;
template class SpikeTensor<double>;

}  // namespace resformer
