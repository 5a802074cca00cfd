#pragma once

#include <array>
#include <utility>
#include <vector>

#include "scribe/ops.hpp"
#include "scribe/tensor.hpp"

namespace scribe {

/// The four corner-to-corner scan orders. DownRight reads left-to-right,
/// top-to-bottom; the others mirror one or both axes.
enum class ScanDir : int { DownRight = 0, DownLeft = 1, UpRight = 2, UpLeft = 3 };

inline int dir_sy(ScanDir d) { return (d == ScanDir::DownRight || d == ScanDir::DownLeft) ? 1 : -1; }
inline int dir_sx(ScanDir d) { return (d == ScanDir::DownRight || d == ScanDir::UpRight) ? 1 : -1; }

inline ScanDir mirror_horizontal(ScanDir d) {
  switch (d) {
    case ScanDir::DownRight: return ScanDir::DownLeft;
    case ScanDir::DownLeft: return ScanDir::DownRight;
    case ScanDir::UpRight: return ScanDir::UpLeft;
    default: return ScanDir::UpRight;
  }
}

inline ScanDir mirror_vertical(ScanDir d) {
  switch (d) {
    case ScanDir::DownRight: return ScanDir::UpRight;
    case ScanDir::UpRight: return ScanDir::DownRight;
    case ScanDir::DownLeft: return ScanDir::UpLeft;
    default: return ScanDir::DownLeft;
  }
}

constexpr std::array<ScanDir, 4> kAllDirs = {ScanDir::DownRight, ScanDir::DownLeft,
                                             ScanDir::UpRight, ScanDir::UpLeft};

/// 2D LSTM cell: one input/output/candidate gate and two forget gates, one
/// per predecessor axis. Gate rows are stacked [i | fh | fv | o | g], each
/// `units` rows, so one GEMM produces all preactivations.
template <class S>
struct MdlstmCellParams {
  Mat<S> W;   // 5u x in
  Mat<S> Uh;  // 5u x u, horizontal-predecessor recurrence
  Mat<S> Uv;  // 5u x u, vertical-predecessor recurrence
  Vec<S> b;   // 5u

  Index units() const { return Uh.cols(); }
  Index input_dim() const { return W.cols(); }
};

template <class S>
MdlstmCellParams<S> make_mdlstm_cell(Index units, Index input_dim) {
  MdlstmCellParams<S> p;
  p.W = Mat<S>::Zero(5 * units, input_dim);
  p.Uh = Mat<S>::Zero(5 * units, units);
  p.Uv = Mat<S>::Zero(5 * units, units);
  p.b = Vec<S>::Zero(5 * units);
  return p;
}

/// One cell update. Out-of-image predecessors are zero vectors.
template <class S>
std::pair<Vec<S>, Vec<S>> mdlstm_cell_step(const Vec<S>& x, const Vec<S>& h_h, const Vec<S>& h_v,
                                           const Vec<S>& c_h, const Vec<S>& c_v,
                                           const MdlstmCellParams<S>& p) {
  const Index u = p.units();
  if (x.size() != p.input_dim() || h_h.size() != u || h_v.size() != u || c_h.size() != u ||
      c_v.size() != u)
    throw ShapeError("mdlstm_cell_step: input sizes (x=" + std::to_string(x.size()) +
                     ", h=" + std::to_string(h_h.size()) + ") do not conform to cell (in=" +
                     std::to_string(p.input_dim()) + ", units=" + std::to_string(u) + ")");
  Vec<S> a = p.W * x + p.Uh * h_h + p.Uv * h_v + p.b;
  auto seg = [&](Index k) { return a.segment(k * u, u); };
  Vec<S> gi = seg(0).unaryExpr([](S v) { return sigmoid_scalar<S>(v); });
  Vec<S> gfh = seg(1).unaryExpr([](S v) { return sigmoid_scalar<S>(v); });
  Vec<S> gfv = seg(2).unaryExpr([](S v) { return sigmoid_scalar<S>(v); });
  Vec<S> go = seg(3).unaryExpr([](S v) { return sigmoid_scalar<S>(v); });
  Vec<S> gg = seg(4).array().tanh().matrix();
  Vec<S> c = (gi.array() * gg.array() + gfh.array() * c_h.array() + gfv.array() * c_v.array()).matrix();
  Vec<S> h = (go.array() * c.array().tanh()).matrix();
  return {std::move(h), std::move(c)};
}

/// Wavefront schedule for one (H, W, direction) triple. Cells on a wavefront
/// have both predecessors on earlier wavefronts, so each wavefront is
/// evaluated as one batch. Within a wavefront, cells are ordered by the
/// direction-normalized row, which makes mirrored scans produce bitwise
/// identical batches on mirrored images.
struct ScanPlan {
  Index H = 0, W = 0;
  std::vector<Index> order;       // pixel id n = i*W + j, wavefront-major
  std::vector<Index> hpred;       // aligned with order, -1 at the border
  std::vector<Index> vpred;
  std::vector<Index> wave_begin;  // n_waves + 1 offsets into order
};

inline ScanPlan make_scan_plan(Index H, Index W, ScanDir d) {
  ScanPlan plan;
  plan.H = H;
  plan.W = W;
  const int sy = dir_sy(d), sx = dir_sx(d);
  const Index n_waves = H + W - 1;
  plan.order.reserve(H * W);
  plan.hpred.reserve(H * W);
  plan.vpred.reserve(H * W);
  plan.wave_begin.reserve(n_waves + 1);
  for (Index k = 0; k < n_waves; ++k) {
    plan.wave_begin.push_back(static_cast<Index>(plan.order.size()));
    const Index a_lo = std::max<Index>(0, k - (W - 1));
    const Index a_hi = std::min<Index>(H - 1, k);
    for (Index a = a_lo; a <= a_hi; ++a) {
      const Index b = k - a;
      const Index i = sy > 0 ? a : H - 1 - a;
      const Index j = sx > 0 ? b : W - 1 - b;
      plan.order.push_back(i * W + j);
      plan.hpred.push_back(b >= 1 ? i * W + (j - sx) : -1);
      plan.vpred.push_back(a >= 1 ? (i - sy) * W + j : -1);
    }
  }
  plan.wave_begin.push_back(static_cast<Index>(plan.order.size()));
  return plan;
}

/// Everything the backward pass needs from one directional scan.
template <class S>
struct MdlstmDirTrace {
  Mat<S> gates;   // 5u x N, activated [i | fh | fv | o | g]
  Mat<S> c;       // u x N
  Mat<S> tanh_c;  // u x N
  Mat<S> h;       // u x N
  ScanPlan plan;
};

/// Scan recurrence. Input preactivations come either from a precomputed grid
/// (`preact`, consumed; used by the attention scorer) or from per-wavefront
/// GEMMs against `X` when given. The per-wavefront form keeps every GEMM's
/// batch composition identical under mirrored scans of mirrored images,
/// which is what makes flip-equivalence bitwise: Eigen kernels are not
/// position-independent across a wider batch.
template <class S>
void mdlstm_scan_forward_impl(const Mat<S>* X, Mat<S>&& preact, const MdlstmCellParams<S>& p,
                              Index H, Index W, ScanDir dir, MdlstmDirTrace<S>& tr) {
  const Index u = p.units();
  const Index N = H * W;
  tr.plan = make_scan_plan(H, W, dir);
  if (X)
    tr.gates.resize(5 * u, N);
  else
    tr.gates = std::move(preact);
  tr.c.resize(u, N);
  tr.tanh_c.resize(u, N);
  tr.h.resize(u, N);

  const Index Lmax = std::min(H, W);
  Mat<S> hh(u, Lmax), hv(u, Lmax), ch(u, Lmax), cv(u, Lmax), a(5 * u, Lmax);
  Mat<S> xg;
  if (X) xg.resize(X->rows(), Lmax);

  const auto& plan = tr.plan;
  const Index n_waves = static_cast<Index>(plan.wave_begin.size()) - 1;
  for (Index k = 0; k < n_waves; ++k) {
    const Index begin = plan.wave_begin[k], end = plan.wave_begin[k + 1];
    const Index L = end - begin;
    for (Index p_i = 0; p_i < L; ++p_i) {
      const Index hp = plan.hpred[begin + p_i], vp = plan.vpred[begin + p_i];
      if (hp >= 0) {
        hh.col(p_i) = tr.h.col(hp);
        ch.col(p_i) = tr.c.col(hp);
      } else {
        hh.col(p_i).setZero();
        ch.col(p_i).setZero();
      }
      if (vp >= 0) {
        hv.col(p_i) = tr.h.col(vp);
        cv.col(p_i) = tr.c.col(vp);
      } else {
        hv.col(p_i).setZero();
        cv.col(p_i).setZero();
      }
      if (X)
        xg.col(p_i) = X->col(plan.order[begin + p_i]);
      else
        a.col(p_i) = tr.gates.col(plan.order[begin + p_i]);
    }
    auto ab = a.leftCols(L);
    if (X) {
      ab.noalias() = p.W * xg.leftCols(L);
      ab.colwise() += p.b;
    }
    ab.noalias() += p.Uh * hh.leftCols(L);
    ab.noalias() += p.Uv * hv.leftCols(L);
    auto sig = ab.topRows(4 * u).array();
    sig = sig.unaryExpr([](S v) { return sigmoid_scalar<S>(v); });
    auto cand = ab.bottomRows(u).array();
    cand = cand.tanh();
    for (Index p_i = 0; p_i < L; ++p_i) {
      const Index n = plan.order[begin + p_i];
      auto gi = a.col(p_i).segment(0, u).array();
      auto gfh = a.col(p_i).segment(u, u).array();
      auto gfv = a.col(p_i).segment(2 * u, u).array();
      auto go = a.col(p_i).segment(3 * u, u).array();
      auto gg = a.col(p_i).segment(4 * u, u).array();
      tr.c.col(n) = (gi * gg + gfh * ch.col(p_i).array() + gfv * cv.col(p_i).array()).matrix();
      tr.tanh_c.col(n) = tr.c.col(n).array().tanh().matrix();
      tr.h.col(n) = (go * tr.tanh_c.col(n).array()).matrix();
      tr.gates.col(n) = a.col(p_i);
    }
  }
}

template <class S>
void mdlstm_scan_forward(Mat<S>&& preact, const MdlstmCellParams<S>& p, Index H, Index W,
                         ScanDir dir, MdlstmDirTrace<S>& tr) {
  mdlstm_scan_forward_impl<S>(nullptr, std::move(preact), p, H, W, dir, tr);
}

/// Reverse scan. Accumulates dUh/dUv into `grad` and returns the gradient
/// w.r.t. the input preactivations (5u x N); the caller turns that into
/// dW/db/dX for whatever produced the preactivations.
template <class S>
Mat<S> mdlstm_scan_backward(const MdlstmDirTrace<S>& tr, const MdlstmCellParams<S>& p,
                            const Mat<S>& dh_out, MdlstmCellParams<S>& grad) {
  const Index u = p.units();
  const Index N = tr.h.cols();
  const auto& plan = tr.plan;

  Mat<S> dh = dh_out;             // accumulates recurrent contributions
  Mat<S> dc = Mat<S>::Zero(u, N);
  Mat<S> dpre(5 * u, N);

  const Index Lmax = std::min(plan.H, plan.W);
  Mat<S> da(5 * u, Lmax), dhh(u, Lmax), dhv(u, Lmax);

  const Index n_waves = static_cast<Index>(plan.wave_begin.size()) - 1;
  for (Index k = n_waves - 1; k >= 0; --k) {
    const Index begin = plan.wave_begin[k], end = plan.wave_begin[k + 1];
    const Index L = end - begin;
    for (Index p_i = 0; p_i < L; ++p_i) {
      const Index idx = begin + p_i;
      const Index n = plan.order[idx];
      const Index hp = plan.hpred[idx], vp = plan.vpred[idx];
      auto gi = tr.gates.col(n).segment(0, u).array();
      auto gfh = tr.gates.col(n).segment(u, u).array();
      auto gfv = tr.gates.col(n).segment(2 * u, u).array();
      auto go = tr.gates.col(n).segment(3 * u, u).array();
      auto gg = tr.gates.col(n).segment(4 * u, u).array();
      auto tc = tr.tanh_c.col(n).array();

      Arr<S> dhn = dh.col(n).array();
      Arr<S> dcn = dc.col(n).array() + dhn * go * (S(1) - tc * tc);
      Arr<S> d_o = dhn * tc;

      Arr<S> di = dcn * gg;
      Arr<S> dg = dcn * gi;
      Arr<S> dfh, dfv;
      if (hp >= 0) {
        dfh = dcn * tr.c.col(hp).array();
        dc.col(hp).array() += dcn * gfh;
      } else {
        dfh = Arr<S>::Zero(u);
      }
      if (vp >= 0) {
        dfv = dcn * tr.c.col(vp).array();
        dc.col(vp).array() += dcn * gfv;
      } else {
        dfv = Arr<S>::Zero(u);
      }

      da.col(p_i).segment(0, u) = (di * gi * (S(1) - gi)).matrix();
      da.col(p_i).segment(u, u) = (dfh * gfh * (S(1) - gfh)).matrix();
      da.col(p_i).segment(2 * u, u) = (dfv * gfv * (S(1) - gfv)).matrix();
      da.col(p_i).segment(3 * u, u) = (d_o * go * (S(1) - go)).matrix();
      da.col(p_i).segment(4 * u, u) = (dg * (S(1) - gg * gg)).matrix();
      dpre.col(n) = da.col(p_i);
    }
    dhh.leftCols(L).noalias() = p.Uh.transpose() * da.leftCols(L);
    dhv.leftCols(L).noalias() = p.Uv.transpose() * da.leftCols(L);
    for (Index p_i = 0; p_i < L; ++p_i) {
      const Index idx = begin + p_i;
      if (plan.hpred[idx] >= 0) dh.col(plan.hpred[idx]) += dhh.col(p_i);
      if (plan.vpred[idx] >= 0) dh.col(plan.vpred[idx]) += dhv.col(p_i);
    }
  }

  // Deferred weight grads as two whole-grid GEMMs against the gathered
  // predecessor outputs.
  Mat<S> hh_all = Mat<S>::Zero(u, N), hv_all = Mat<S>::Zero(u, N);
  for (size_t idx = 0; idx < plan.order.size(); ++idx) {
    const Index n = plan.order[idx];
    if (plan.hpred[idx] >= 0) hh_all.col(n) = tr.h.col(plan.hpred[idx]);
    if (plan.vpred[idx] >= 0) hv_all.col(n) = tr.h.col(plan.vpred[idx]);
  }
  grad.Uh.noalias() += dpre * hh_all.transpose();
  grad.Uv.noalias() += dpre * hv_all.transpose();
  return dpre;
}

/// Full directional layer: input GEMMs folded into the wavefront scan.
template <class S>
void mdlstm_dir_forward(const Mat<S>& X, const MdlstmCellParams<S>& p, Index H, Index W,
                        ScanDir dir, MdlstmDirTrace<S>& tr) {
  if (X.rows() != p.input_dim())
    throw ShapeError("mdlstm layer: input channels " + std::to_string(X.rows()) +
                     " do not match cell input dim " + std::to_string(p.input_dim()));
  if (H < 1 || W < 1) throw DomainError("mdlstm layer: empty image");
  mdlstm_scan_forward_impl<S>(&X, Mat<S>(), p, H, W, dir, tr);
}

template <class S>
void mdlstm_dir_backward(const Mat<S>& X, const MdlstmDirTrace<S>& tr,
                         const MdlstmCellParams<S>& p, const Mat<S>& dh_out,
                         MdlstmCellParams<S>& grad, Mat<S>& dX) {
  Mat<S> dpre = mdlstm_scan_backward(tr, p, dh_out, grad);
  grad.W.noalias() += dpre * X.transpose();
  grad.b.noalias() += dpre.rowwise().sum();
  dX.noalias() += p.W.transpose() * dpre;
}

template <class S>
struct DirectionalLayer {
  ScanDir dir;
  MdlstmCellParams<S> cell;
};

/// A four-direction block; the directional outputs are combined by
/// elementwise sum, which keeps the channel count at units-per-direction.
template <class S>
struct MdlstmBlockParams {
  std::vector<DirectionalLayer<S>> dirs;

  Index units() const { return dirs.empty() ? 0 : dirs.front().cell.units(); }
  Index input_dim() const { return dirs.empty() ? 0 : dirs.front().cell.input_dim(); }
};

template <class S>
MdlstmBlockParams<S> make_mdlstm_block(Index units, Index input_dim) {
  MdlstmBlockParams<S> block;
  for (ScanDir d : kAllDirs) block.dirs.push_back({d, make_mdlstm_cell<S>(units, input_dim)});
  return block;
}

template <class S>
void check_block(const MdlstmBlockParams<S>& block) {
  if (block.dirs.size() != 4)
    throw ConfigError("directional block needs exactly 4 layers, got " +
                      std::to_string(block.dirs.size()));
}

template <class S>
struct MdlstmBlockTrace {
  std::array<MdlstmDirTrace<S>, 4> dirs;
  Mat<S> sum;  // u x N
};

template <class S>
void mdlstm_block_forward(const Mat<S>& X, Index H, Index W, const MdlstmBlockParams<S>& block,
                          MdlstmBlockTrace<S>& tr) {
  check_block(block);
  for (int d = 0; d < 4; ++d)
    mdlstm_dir_forward(X, block.dirs[d].cell, H, W, block.dirs[d].dir, tr.dirs[d]);
  tr.sum = tr.dirs[0].h;
  for (int d = 1; d < 4; ++d) tr.sum += tr.dirs[d].h;
}

/// All four directions receive the same upstream gradient (the sum rule).
template <class S>
void mdlstm_block_backward(const Mat<S>& X, const MdlstmBlockTrace<S>& tr,
                           const MdlstmBlockParams<S>& block, const Mat<S>& dsum,
                           MdlstmBlockParams<S>& grad, Mat<S>& dX) {
  for (int d = 0; d < 4; ++d)
    mdlstm_dir_backward(X, tr.dirs[d], block.dirs[d].cell, dsum, grad.dirs[d].cell, dX);
}

// ---- Tensor-level wrappers -------------------------------------------------

/// input {H,W,C} -> {H,W,u} along one scan direction.
template <class S>
Tensor<S> mdlstm_layer(const Tensor<S>& input, const DirectionalLayer<S>& layer) {
  if (input.rank() != 3)
    throw ShapeError("mdlstm_layer: expected rank-3 {H,W,C} input, got " + shape_str(input.shape()));
  const Index H = input.dim(0), W = input.dim(1);
  MdlstmDirTrace<S> tr;
  mdlstm_dir_forward(input.pixels().eval(), layer.cell, H, W, layer.dir, tr);
  Tensor<S> out({H, W, layer.cell.units()});
  out.pixels() = tr.h;
  return out;
}

/// Elementwise sum of the four directional layer outputs.
template <class S>
Tensor<S> directional_sum(const Tensor<S>& input, const MdlstmBlockParams<S>& block) {
  check_block(block);
  if (input.rank() != 3)
    throw ShapeError("directional_sum: expected rank-3 {H,W,C} input, got " +
                     shape_str(input.shape()));
  MdlstmBlockTrace<S> tr;
  mdlstm_block_forward(input.pixels().eval(), input.dim(0), input.dim(1), block, tr);
  Tensor<S> out({input.dim(0), input.dim(1), block.units()});
  out.pixels() = tr.sum;
  return out;
}

}  // namespace scribe
