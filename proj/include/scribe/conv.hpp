#pragma once

#include "scribe/ops.hpp"
#include "scribe/tensor.hpp"

namespace scribe {

/// Non-overlapping subsampling convolution: kernel size equals stride, tanh
/// output. Kernel tensor is {kh, kw, C, F}.
template <class S>
struct ConvParams {
  Tensor<S> kernel;
  Vec<S> bias;

  Index kh() const { return kernel.dim(0); }
  Index kw() const { return kernel.dim(1); }
  Index in_channels() const { return kernel.dim(2); }
  Index features() const { return kernel.dim(3); }
};

template <class S>
ConvParams<S> make_conv(Index kh, Index kw, Index in_channels, Index features) {
  ConvParams<S> p;
  p.kernel = Tensor<S>({kh, kw, in_channels, features});
  p.bias = Vec<S>::Zero(features);
  return p;
}

template <class S>
struct ConvTrace {
  Mat<S> patches;  // (kh*kw*C) x Nout, rows ordered (di, dj, c) with c fastest
  Mat<S> out;      // F x Nout, tanh applied
  Index Hout = 0, Wout = 0;
};

// {kh,kw,C,F} row-major data is exactly an F x (kh*kw*C) column-major matrix.
template <class S>
Eigen::Map<const Mat<S>> kernel_matrix(const ConvParams<S>& p) {
  return {p.kernel.data(), p.features(), p.kh() * p.kw() * p.in_channels()};
}

template <class S>
void conv_forward(const Mat<S>& X, Index H, Index W, const ConvParams<S>& p, ConvTrace<S>& tr) {
  const Index kh = p.kh(), kw = p.kw(), C = p.in_channels(), F = p.features();
  if (X.rows() != C)
    throw ShapeError("conv: input channels " + std::to_string(X.rows()) + " != kernel channels " +
                     std::to_string(C));
  if (H < kh || W < kw)
    throw DomainError("conv: image " + std::to_string(H) + "x" + std::to_string(W) +
                      " smaller than one window, need at least " + std::to_string(kh) + "x" +
                      std::to_string(kw));
  tr.Hout = H / kh;  // trailing rows/cols without a full window are dropped
  tr.Wout = W / kw;
  const Index Nout = tr.Hout * tr.Wout;
  tr.patches.resize(kh * kw * C, Nout);
  for (Index oi = 0; oi < tr.Hout; ++oi)
    for (Index oj = 0; oj < tr.Wout; ++oj) {
      const Index col = oi * tr.Wout + oj;
      for (Index di = 0; di < kh; ++di)
        for (Index dj = 0; dj < kw; ++dj)
          tr.patches.col(col).segment((di * kw + dj) * C, C) =
              X.col((oi * kh + di) * W + (oj * kw + dj));
    }
  tr.out.resize(F, Nout);
  tr.out.noalias() = kernel_matrix(p) * tr.patches;
  tr.out.colwise() += p.bias;
  tr.out = tr.out.array().tanh().matrix();
}

template <class S>
void conv_backward(const ConvTrace<S>& tr, const ConvParams<S>& p, const Mat<S>& dout,
                   ConvParams<S>& grad, Mat<S>& dX, Index H, Index W) {
  const Index kh = p.kh(), kw = p.kw(), C = p.in_channels(), F = p.features();
  Mat<S> dpre = (dout.array() * (S(1) - tr.out.array() * tr.out.array())).matrix();
  Eigen::Map<Mat<S>> dkernel(grad.kernel.data(), F, kh * kw * C);
  dkernel.noalias() += dpre * tr.patches.transpose();
  grad.bias.noalias() += dpre.rowwise().sum();
  Mat<S> dpatches = kernel_matrix(p).transpose() * dpre;
  for (Index oi = 0; oi < tr.Hout; ++oi)
    for (Index oj = 0; oj < tr.Wout; ++oj) {
      const Index col = oi * tr.Wout + oj;
      for (Index di = 0; di < kh; ++di)
        for (Index dj = 0; dj < kw; ++dj)
          dX.col((oi * kh + di) * W + (oj * kw + dj)) +=
              dpatches.col(col).segment((di * kw + dj) * C, C);
    }
}

/// Tensor-level op: input {H,W,C}, kernel {kh,kw,C,F}, stride must equal the
/// kernel size.
template <class S>
Tensor<S> conv_subsample(const Tensor<S>& input, const Tensor<S>& kernel, const Tensor<S>& bias,
                         std::pair<Index, Index> stride) {
  if (input.rank() != 3 || kernel.rank() != 4)
    throw ShapeError("conv_subsample: need input {H,W,C} and kernel {kh,kw,C,F}, got " +
                     shape_str(input.shape()) + " and " + shape_str(kernel.shape()));
  if (kernel.dim(0) != stride.first || kernel.dim(1) != stride.second)
    throw ConfigError("conv_subsample: kernel " + std::to_string(kernel.dim(0)) + "x" +
                      std::to_string(kernel.dim(1)) + " must equal stride " +
                      std::to_string(stride.first) + "x" + std::to_string(stride.second));
  if (kernel.dim(2) != input.dim(2))
    throw ShapeError("conv_subsample: kernel channels " + std::to_string(kernel.dim(2)) +
                     " != input channels " + std::to_string(input.dim(2)));
  ConvParams<S> p;
  p.kernel = kernel;
  p.bias = bias.flat();
  ConvTrace<S> tr;
  conv_forward(input.pixels().eval(), input.dim(0), input.dim(1), p, tr);
  Tensor<S> out({tr.Hout, tr.Wout, p.features()});
  out.pixels() = tr.out;
  return out;
}

/// Sum feature maps over the vertical axis: {H,W,K} -> {W,K}.
template <class S>
Tensor<S> collapse(const Tensor<S>& maps) {
  if (maps.rank() != 3)
    throw ShapeError("collapse: expected rank-3 {H,W,K}, got " + shape_str(maps.shape()));
  const Index H = maps.dim(0), W = maps.dim(1), K = maps.dim(2);
  Tensor<S> out({W, K});
  Eigen::Map<Mat<S>> out_cols(out.data(), K, W);
  out_cols.setZero();
  auto px = maps.pixels();
  for (Index i = 0; i < H; ++i) out_cols += px.middleCols(i * W, W);
  return out;
}

}  // namespace scribe
