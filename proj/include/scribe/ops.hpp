#pragma once

#include <cmath>
#include <limits>

#include "scribe/tensor.hpp"

namespace scribe {

// Stable logistic: never produces NaN for finite input, saturates to 0/1.
template <class S>
inline S sigmoid_scalar(S x) {
  if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
  S e = std::exp(x);
  return e / (S(1) + e);
}

template <class S, class Derived>
inline void sigmoid_inplace(Eigen::MatrixBase<Derived>& m) {
  m = m.unaryExpr([](S x) { return sigmoid_scalar<S>(x); });
}

template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
  return Tensor<S>::from_array(x.shape(), x.array().unaryExpr([](S v) { return sigmoid_scalar<S>(v); }));
}

template <class S>
Tensor<S> tanh(const Tensor<S>& x) {
  return Tensor<S>::from_array(x.shape(), x.array().tanh());
}

/// out[i] = sum_j W[i,j]*x[j] + b[i]. Shapes must conform exactly.
template <class S>
Tensor<S> linear(const Tensor<S>& W, const Tensor<S>& b, const Tensor<S>& x) {
  if (W.rank() != 2 || b.rank() != 1 || x.rank() != 1 || W.dim(1) != x.dim(0) || W.dim(0) != b.dim(0))
    throw ShapeError("linear: W " + shape_str(W.shape()) + " incompatible with b " +
                     shape_str(b.shape()) + ", x " + shape_str(x.shape()));
  Tensor<S> out({W.dim(0)});
  out.flat() = W.mat() * x.flat() + b.flat();
  return out;
}

/// Softmax with mandatory max subtraction; attention logits over large maps
/// can be far from zero.
template <class S>
Tensor<S> softmax(const Tensor<S>& v) {
  if (v.size() == 0) throw DomainError("softmax of empty input");
  Tensor<S> out(v.shape());
  S m = v.array().maxCoeff();
  out.array() = (v.array() - m).exp();
  out.array() /= out.array().sum();
  return out;
}

template <class S>
inline void softmax_inplace(Vec<S>& v) {
  if (v.size() == 0) throw DomainError("softmax of empty input");
  S m = v.maxCoeff();
  v = (v.array() - m).exp();
  v /= v.sum();
}

/// d(loss)/d(logits) given d(loss)/d(softmax output) and the softmax output.
template <class S>
inline Vec<S> softmax_backward(const Vec<S>& probs, const Vec<S>& dprobs) {
  S dot = probs.dot(dprobs);
  return (probs.array() * (dprobs.array() - dot)).matrix();
}

template <class S>
inline S log_sum_exp(S a, S b) {
  const S ninf = -std::numeric_limits<S>::infinity();
  if (a == ninf) return b;
  if (b == ninf) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

}  // namespace scribe
