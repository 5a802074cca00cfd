#pragma once

#include <array>

#include "scribe/conv.hpp"
#include "scribe/mdlstm.hpp"

namespace scribe {

enum class RunMode { Train, Eval };

/// Stack layout: MDLSTM / conv / MDLSTM / conv / MDLSTM / 1x1 linear, with
/// channelwise dropout after each MDLSTM block. Both subsampling stages use
/// 2x2 windows with stride 2.
struct EncoderConfig {
  std::array<int, 3> mdlstm_units{4, 20, 100};
  std::array<int, 2> conv_features{12, 32};
  int feature_dim = 80;
  double dropout = 0.5;

  bool operator==(const EncoderConfig&) const = default;
};

template <class S>
struct EncoderParams {
  EncoderConfig cfg;
  std::array<MdlstmBlockParams<S>, 3> blocks;
  std::array<ConvParams<S>, 2> convs;
  Mat<S> Wout;  // feature_dim x units3
  Vec<S> bout;
};

template <class S>
EncoderParams<S> make_encoder(const EncoderConfig& cfg, Index in_channels = 1) {
  EncoderParams<S> p;
  p.cfg = cfg;
  p.blocks[0] = make_mdlstm_block<S>(cfg.mdlstm_units[0], in_channels);
  p.convs[0] = make_conv<S>(2, 2, cfg.mdlstm_units[0], cfg.conv_features[0]);
  p.blocks[1] = make_mdlstm_block<S>(cfg.mdlstm_units[1], cfg.conv_features[0]);
  p.convs[1] = make_conv<S>(2, 2, cfg.mdlstm_units[1], cfg.conv_features[1]);
  p.blocks[2] = make_mdlstm_block<S>(cfg.mdlstm_units[2], cfg.conv_features[1]);
  p.Wout = Mat<S>::Zero(cfg.feature_dim, cfg.mdlstm_units[2]);
  p.bout = Vec<S>::Zero(cfg.feature_dim);
  return p;
}

template <class S>
struct EncoderTrace {
  Index H0 = 0, W0 = 0;          // input size
  Index H1 = 0, W1 = 0;          // after conv1
  Index H2 = 0, W2 = 0;          // after conv2 (= output map size)
  Mat<S> x0;                     // input pixels, 1 x N0
  std::array<MdlstmBlockTrace<S>, 3> blocks;
  std::array<Vec<S>, 3> drop;    // per-channel keep/scale factors
  std::array<Mat<S>, 3> dropped; // block sums after dropout (conv/linear inputs)
  std::array<ConvTrace<S>, 2> convs;
  Mat<S> feat;                   // feature_dim x N2
};

/// Channelwise inverted dropout: a dropped channel zeroes the whole map, a
/// kept one is scaled by 1/(1-p) so eval needs no rescaling.
template <class S>
Vec<S> dropout_mask(Index channels, double p, std::mt19937_64& rng) {
  Vec<S> mask(channels);
  const S keep = static_cast<S>(1.0 / (1.0 - p));
  for (Index c = 0; c < channels; ++c) mask[c] = uniform01(rng) < p ? S(0) : keep;
  return mask;
}

/// e_{i,j} feature maps from a grayscale image {H,W,1}. Train mode draws
/// dropout from `seed`; eval mode is a deterministic pure function of
/// (image, params).
template <class S>
Tensor<S> encode(const Tensor<S>& image, const EncoderParams<S>& p, RunMode mode,
                 uint64_t seed = 0, EncoderTrace<S>* trace = nullptr) {
  if (image.rank() != 3 || image.dim(2) != 1)
    throw ShapeError("encode: expected {H,W,1} image, got " + shape_str(image.shape()));
  EncoderTrace<S> local;
  EncoderTrace<S>& tr = trace ? *trace : local;
  tr.H0 = image.dim(0);
  tr.W0 = image.dim(1);
  const Index H2 = (tr.H0 / 2) / 2, W2 = (tr.W0 / 2) / 2;
  if (H2 < 1 || W2 < 1)
    throw DomainError("encode: image " + std::to_string(tr.H0) + "x" + std::to_string(tr.W0) +
                      " collapses to nothing after two 2x2 subsampling stages; need at least 4x4");

  std::mt19937_64 rng(seed);
  const bool train = mode == RunMode::Train;
  const double dp = p.cfg.dropout;

  auto apply_dropout = [&](int b, const Mat<S>& sum) {
    if (train && dp > 0.0)
      tr.drop[b] = dropout_mask<S>(sum.rows(), dp, rng);
    else
      tr.drop[b] = Vec<S>::Ones(sum.rows());
    tr.dropped[b] = tr.drop[b].asDiagonal() * sum;
  };

  tr.x0 = image.pixels();
  mdlstm_block_forward(tr.x0, tr.H0, tr.W0, p.blocks[0], tr.blocks[0]);
  apply_dropout(0, tr.blocks[0].sum);
  conv_forward(tr.dropped[0], tr.H0, tr.W0, p.convs[0], tr.convs[0]);
  tr.H1 = tr.convs[0].Hout;
  tr.W1 = tr.convs[0].Wout;

  mdlstm_block_forward(tr.convs[0].out, tr.H1, tr.W1, p.blocks[1], tr.blocks[1]);
  apply_dropout(1, tr.blocks[1].sum);
  conv_forward(tr.dropped[1], tr.H1, tr.W1, p.convs[1], tr.convs[1]);
  tr.H2 = tr.convs[1].Hout;
  tr.W2 = tr.convs[1].Wout;

  mdlstm_block_forward(tr.convs[1].out, tr.H2, tr.W2, p.blocks[2], tr.blocks[2]);
  apply_dropout(2, tr.blocks[2].sum);
  tr.feat.resize(p.cfg.feature_dim, tr.H2 * tr.W2);
  tr.feat.noalias() = p.Wout * tr.dropped[2];
  tr.feat.colwise() += p.bout;

  Tensor<S> out({tr.H2, tr.W2, p.cfg.feature_dim});
  out.pixels() = tr.feat;
  return out;
}

template <class S>
void encode_backward(const EncoderTrace<S>& tr, const EncoderParams<S>& p, const Mat<S>& dfeat,
                     EncoderParams<S>& grad) {
  grad.Wout.noalias() += dfeat * tr.dropped[2].transpose();
  grad.bout.noalias() += dfeat.rowwise().sum();
  Mat<S> dsum2 = tr.drop[2].asDiagonal() * (p.Wout.transpose() * dfeat);

  Mat<S> dconv2_out = Mat<S>::Zero(p.cfg.conv_features[1], tr.H2 * tr.W2);
  mdlstm_block_backward(tr.convs[1].out, tr.blocks[2], p.blocks[2], dsum2, grad.blocks[2],
                        dconv2_out);

  Mat<S> ddropped1 = Mat<S>::Zero(p.cfg.mdlstm_units[1], tr.H1 * tr.W1);
  conv_backward(tr.convs[1], p.convs[1], dconv2_out, grad.convs[1], ddropped1, tr.H1, tr.W1);
  Mat<S> dsum1 = tr.drop[1].asDiagonal() * ddropped1;

  Mat<S> dconv1_out = Mat<S>::Zero(p.cfg.conv_features[0], tr.H1 * tr.W1);
  mdlstm_block_backward(tr.convs[0].out, tr.blocks[1], p.blocks[1], dsum1, grad.blocks[1],
                        dconv1_out);

  Mat<S> ddropped0 = Mat<S>::Zero(p.cfg.mdlstm_units[0], tr.H0 * tr.W0);
  conv_backward(tr.convs[0], p.convs[0], dconv1_out, grad.convs[0], ddropped0, tr.H0, tr.W0);
  Mat<S> dsum0 = tr.drop[0].asDiagonal() * ddropped0;

  Mat<S> dx0 = Mat<S>::Zero(1, tr.H0 * tr.W0);
  mdlstm_block_backward(tr.x0, tr.blocks[0], p.blocks[0], dsum0, grad.blocks[0], dx0);
}

}  // namespace scribe
