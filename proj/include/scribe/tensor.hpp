#pragma once

#include <algorithm>
#include <cmath>
#include <initializer_list>
#include <map>
#include <utility>

#include "scribe/common.hpp"

namespace scribe {

/// Dense n-d array with explicit shape and row-major storage (last axis
/// fastest). No broadcasting: every shape adaptation is explicit.
template <class S>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    data_ = Arr<S>::Zero(checked_count(shape_));
  }

  Tensor(Shape shape, std::initializer_list<S> values) : shape_(std::move(shape)) {
    Index n = checked_count(shape_);
    if (static_cast<Index>(values.size()) != n)
      throw ShapeError("tensor init: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape_));
    data_.resize(n);
    std::copy(values.begin(), values.end(), data_.data());
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor from_array(Shape shape, Arr<S> values) {
    Tensor t;
    t.shape_ = std::move(shape);
    if (checked_count(t.shape_) != values.size())
      throw ShapeError("tensor from_array: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(t.shape_));
    t.data_ = std::move(values);
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index i) const { return shape_.at(static_cast<size_t>(i)); }
  Index size() const { return data_.size(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }
  Arr<S>& array() { return data_; }
  const Arr<S>& array() const { return data_; }

  S& operator()(Index i) { return data_[i]; }
  S operator()(Index i) const { return data_[i]; }
  S& operator()(Index i, Index j) { return data_[i * shape_[1] + j]; }
  S operator()(Index i, Index j) const { return data_[i * shape_[1] + j]; }
  S& operator()(Index i, Index j, Index k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  S operator()(Index i, Index j, Index k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  S& operator()(Index i, Index j, Index k, Index l) {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }
  S operator()(Index i, Index j, Index k, Index l) const {
    return data_[((i * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
  }

  void setZero() { data_.setZero(); }

  Eigen::Map<Vec<S>> flat() { return {data_.data(), data_.size()}; }
  Eigen::Map<const Vec<S>> flat() const { return {data_.data(), data_.size()}; }

  /// Rank-2 view {R,C} as an R-by-C matrix.
  Eigen::Map<RowMajorMat<S>> mat() {
    require_rank(2);
    return {data_.data(), shape_[0], shape_[1]};
  }
  Eigen::Map<const RowMajorMat<S>> mat() const {
    require_rank(2);
    return {data_.data(), shape_[0], shape_[1]};
  }

  /// Rank-3 view {H,W,C} as a C-by-(H*W) column-major matrix: column n holds
  /// the channel vector of pixel n = i*W+j. This is the same buffer, no copy.
  Eigen::Map<Mat<S>> pixels() {
    require_rank(3);
    return {data_.data(), shape_[2], shape_[0] * shape_[1]};
  }
  Eigen::Map<const Mat<S>> pixels() const {
    require_rank(3);
    return {data_.data(), shape_[2], shape_[0] * shape_[1]};
  }

  bool all_finite() const { return data_.isFinite().all(); }

  template <class T>
  Tensor<T> cast() const {
    return Tensor<T>::from_array(shape_, data_.template cast<T>());
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

 private:
  static Index checked_count(const Shape& shape) {
    Index n = 1;
    for (Index d : shape) {
      if (d <= 0) throw ShapeError("tensor shape must have positive extents, got " + shape_str(shape));
      n *= d;
    }
    return n;
  }
  void require_rank(Index r) const {
    if (rank() != r)
      throw ShapeError("tensor rank " + std::to_string(rank()) + " where " +
                       std::to_string(r) + " required, shape " + shape_str(shape_));
  }

  Shape shape_;
  Arr<S> data_;
};

/// Ordered name -> Tensor map. Iteration order is lexicographic by name, so
/// serialization and gradient checking visit parameters deterministically.
template <class S>
class ParamSet {
 public:
  using Map = std::map<std::string, Tensor<S>>;

  void add(const std::string& name, Tensor<S> t) {
    auto [it, inserted] = items_.emplace(name, std::move(t));
    if (!inserted) throw ConfigError("duplicate parameter name '" + name + "'");
  }

  Tensor<S>& at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw ConfigError("no parameter named '" + name + "'");
    return it->second;
  }

  bool has(const std::string& name) const { return items_.count(name) != 0; }
  size_t size() const { return items_.size(); }

  typename Map::iterator begin() { return items_.begin(); }
  typename Map::iterator end() { return items_.end(); }
  typename Map::const_iterator begin() const { return items_.begin(); }
  typename Map::const_iterator end() const { return items_.end(); }

  template <class T>
  ParamSet<T> cast() const {
    ParamSet<T> out;
    for (const auto& [name, t] : items_) out.add(name, t.template cast<T>());
    return out;
  }

 private:
  Map items_;
};

}  // namespace scribe
