#pragma once

#include <optional>

#include "scribe/mdlstm.hpp"
#include "scribe/ops.hpp"
#include "scribe/vocab.hpp"

namespace scribe {

/// Plain 1D LSTM, gate rows stacked [i | f | o | g].
template <class S>
struct StateLstmParams {
  Mat<S> W;  // 4u x in
  Mat<S> U;  // 4u x u
  Vec<S> b;  // 4u

  Index units() const { return U.cols(); }
  Index input_dim() const { return W.cols(); }
};

template <class S>
StateLstmParams<S> make_state_lstm(Index units, Index input_dim) {
  StateLstmParams<S> p;
  p.W = Mat<S>::Zero(4 * units, input_dim);
  p.U = Mat<S>::Zero(4 * units, units);
  p.b = Vec<S>::Zero(4 * units);
  return p;
}

/// MDLSTM attention scorer. Per-pixel input is [e_{i,j} | alpha_{t-1}(i,j) |
/// proj(s_{t-1})]: the previous attention map enters as a raw scalar channel
/// and the projected state vector is appended identically at every position.
/// Column blocks of each directional W follow that layout.
template <class S>
struct AttentionNetParams {
  MdlstmBlockParams<S> net;
  Vec<S> w_score;  // units -> one score per position
  Vec<S> b_score;  // 1
  Mat<S> Wproj;    // proj_width x state_units
  Vec<S> bproj;

  Index units() const { return net.units(); }
  Index proj_width() const { return Wproj.rows(); }
};

template <class S>
struct DecoderMlpParams {
  Mat<S> W1;  // hidden x (state_units + feature_dim)
  Vec<S> b1;
  Mat<S> W2;  // classes x hidden
  Vec<S> b2;

  Index hidden() const { return W1.rows(); }
  Index classes() const { return W2.rows(); }
};

template <class S>
struct AttentionHeadParams {
  AttentionNetParams<S> att;
  StateLstmParams<S> state;
  DecoderMlpParams<S> dec;

  Index feature_dim() const { return state.input_dim(); }
  Index state_units() const { return state.units(); }
};

template <class S>
AttentionHeadParams<S> make_attention_head(Index feature_dim, Index att_units, Index proj_width,
                                           Index state_units, Index dec_hidden, Index classes) {
  AttentionHeadParams<S> p;
  p.att.net = make_mdlstm_block<S>(att_units, feature_dim + 1 + proj_width);
  p.att.w_score = Vec<S>::Zero(att_units);
  p.att.b_score = Vec<S>::Zero(1);
  p.att.Wproj = Mat<S>::Zero(proj_width, state_units);
  p.att.bproj = Vec<S>::Zero(proj_width);
  p.state = make_state_lstm<S>(state_units, feature_dim);
  p.dec.W1 = Mat<S>::Zero(dec_hidden, state_units + feature_dim);
  p.dec.b1 = Vec<S>::Zero(dec_hidden);
  p.dec.W2 = Mat<S>::Zero(classes, dec_hidden);
  p.dec.b2 = Vec<S>::Zero(classes);
  return p;
}

/// Decoder-side recurrent state. t=0 initialization: uniform attention map,
/// zero LSTM state.
template <class S>
struct DecoderState {
  Vec<S> s;
  Vec<S> c_state;
  Vec<S> alpha_prev;  // flattened H'*W'
  Index t = 0;
};

template <class S>
DecoderState<S> initial_decoder_state(Index positions, Index state_units) {
  DecoderState<S> st;
  st.s = Vec<S>::Zero(state_units);
  st.c_state = Vec<S>::Zero(state_units);
  st.alpha_prev = Vec<S>::Constant(positions, S(1) / static_cast<S>(positions));
  st.t = 0;
  return st;
}

// ---- single-step pieces ----------------------------------------------------

template <class S>
struct LstmStepTrace {
  Vec<S> gates;   // 4u activated [i | f | o | g]
  Vec<S> c;
  Vec<S> tanh_c;
  Vec<S> h;
};

template <class S>
void lstm_step(const Vec<S>& x, const Vec<S>& h_prev, const Vec<S>& c_prev,
               const StateLstmParams<S>& p, LstmStepTrace<S>& tr) {
  const Index u = p.units();
  if (x.size() != p.input_dim() || h_prev.size() != u || c_prev.size() != u)
    throw ShapeError("lstm_step: sizes (x=" + std::to_string(x.size()) + ", h=" +
                     std::to_string(h_prev.size()) + ") do not conform to (in=" +
                     std::to_string(p.input_dim()) + ", units=" + std::to_string(u) + ")");
  tr.gates = p.W * x + p.U * h_prev + p.b;
  auto sig = tr.gates.segment(0, 3 * u).array();
  sig = sig.unaryExpr([](S v) { return sigmoid_scalar<S>(v); });
  auto cand = tr.gates.segment(3 * u, u).array();
  cand = cand.tanh();
  tr.c = (tr.gates.segment(0, u).array() * tr.gates.segment(3 * u, u).array() +
          tr.gates.segment(u, u).array() * c_prev.array())
             .matrix();
  tr.tanh_c = tr.c.array().tanh().matrix();
  tr.h = (tr.gates.segment(2 * u, u).array() * tr.tanh_c.array()).matrix();
}

/// Returns dx; accumulates parameter grads; writes dh_prev/dc_prev.
template <class S>
Vec<S> lstm_step_backward(const LstmStepTrace<S>& tr, const StateLstmParams<S>& p,
                          const Vec<S>& x, const Vec<S>& h_prev, const Vec<S>& c_prev,
                          const Vec<S>& dh, const Vec<S>& dc_in, StateLstmParams<S>& grad,
                          Vec<S>& dh_prev, Vec<S>& dc_prev) {
  const Index u = p.units();
  auto gi = tr.gates.segment(0, u).array();
  auto gf = tr.gates.segment(u, u).array();
  auto go = tr.gates.segment(2 * u, u).array();
  auto gg = tr.gates.segment(3 * u, u).array();
  auto tc = tr.tanh_c.array();

  Arr<S> dc = dc_in.array() + dh.array() * go * (S(1) - tc * tc);
  Vec<S> da(4 * u);
  da.segment(0, u) = (dc * gg * gi * (S(1) - gi)).matrix();
  da.segment(u, u) = (dc * c_prev.array() * gf * (S(1) - gf)).matrix();
  da.segment(2 * u, u) = (dh.array() * tc * go * (S(1) - go)).matrix();
  da.segment(3 * u, u) = (dc * gi * (S(1) - gg * gg)).matrix();

  grad.W.noalias() += da * x.transpose();
  grad.U.noalias() += da * h_prev.transpose();
  grad.b.noalias() += da;
  dh_prev.noalias() = p.U.transpose() * da;
  dc_prev = (dc * gf).matrix();
  return p.W.transpose() * da;
}

/// One decoder step, everything retained for backprop.
template <class S>
struct StepInternals {
  Vec<S> proj;                             // projected previous state
  std::array<MdlstmDirTrace<S>, 4> att;    // scorer internals
  Mat<S> hsum;                             // units x N
  Vec<S> z;                                // raw scores
  Vec<S> alpha;
  Vec<S> g;                                // image summary
  LstmStepTrace<S> state;
  Vec<S> hin;                              // [s | g]
  Vec<S> h1;                               // decoder hidden (tanh)
  Vec<S> probs;
};

/// Per-sequence cache: encoder features and their per-direction contribution
/// to the scorer preactivations (feature channels are step-invariant).
template <class S>
struct SeqCache {
  Mat<S> E;  // feature_dim x N
  Index Hp = 0, Wp = 0;
  std::array<Mat<S>, 4> Ae;  // 5u x N each

  Index positions() const { return Hp * Wp; }
};

template <class S>
void build_seq_cache(const Mat<S>& E, Index Hp, Index Wp, const AttentionHeadParams<S>& p,
                     SeqCache<S>& cache) {
  check_block(p.att.net);
  const Index F = p.feature_dim();
  if (E.rows() != F)
    throw ShapeError("attention: feature dim " + std::to_string(E.rows()) +
                     " != head feature dim " + std::to_string(F));
  cache.E = E;
  cache.Hp = Hp;
  cache.Wp = Wp;
  for (int d = 0; d < 4; ++d)
    cache.Ae[d].noalias() = p.att.net.dirs[d].cell.W.leftCols(F) * E;
}

/// Scores, attention map, summary, state update and character distribution
/// for one timestep.
template <class S>
void attention_step(const SeqCache<S>& cache, const AttentionHeadParams<S>& p,
                    const Vec<S>& alpha_prev, const Vec<S>& s_prev, const Vec<S>& c_prev,
                    StepInternals<S>& st) {
  const Index F = p.feature_dim();
  const Index P = p.att.proj_width();
  const Index u = p.att.units();
  const Index N = cache.positions();

  st.proj = p.att.Wproj * s_prev + p.att.bproj;
  st.hsum = Mat<S>::Zero(u, N);
  for (int d = 0; d < 4; ++d) {
    const auto& cell = p.att.net.dirs[d].cell;
    Mat<S> pre = cache.Ae[d];
    pre.noalias() += cell.W.col(F) * alpha_prev.transpose();
    Vec<S> base = cell.W.rightCols(P) * st.proj + cell.b;
    pre.colwise() += base;
    mdlstm_scan_forward(std::move(pre), cell, cache.Hp, cache.Wp, p.att.net.dirs[d].dir,
                        st.att[d]);
    st.hsum += st.att[d].h;
  }
  st.z = st.hsum.transpose() * p.att.w_score;
  st.z.array() += p.att.b_score[0];
  st.alpha = st.z;
  softmax_inplace(st.alpha);
  st.g.noalias() = cache.E * st.alpha;

  lstm_step(st.g, s_prev, c_prev, p.state, st.state);

  st.hin.resize(p.state_units() + F);
  st.hin << st.state.h, st.g;
  st.h1 = (p.dec.W1 * st.hin + p.dec.b1).array().tanh().matrix();
  st.probs = p.dec.W2 * st.h1 + p.dec.b2;
  softmax_inplace(st.probs);
}

/// Spec-shaped per-step trace: attention map, summary and output distribution
/// per timestep.
template <class S>
struct AttentionTraceStep {
  Tensor<S> alpha;  // {H',W'}
  Vec<S> probs;
  Vec<S> g;
  int emitted = -1;  // argmax class (decode path); target class when training
};

template <class S>
struct AttentionTrace {
  Index Hp = 0, Wp = 0;
  std::vector<AttentionTraceStep<S>> steps;
  bool truncated = false;  // greedy decode hit max_steps without EOS
};

template <class S>
AttentionTraceStep<S> make_trace_step(const StepInternals<S>& st, Index Hp, Index Wp,
                                      int emitted) {
  AttentionTraceStep<S> out;
  out.alpha = Tensor<S>({Hp, Wp});
  out.alpha.flat() = st.alpha;
  out.probs = st.probs;
  out.g = st.g;
  out.emitted = emitted;
  return out;
}

/// Sum of per-step NLL terms. The decoder never consumes the previous
/// character, so the forward pass is target-independent; the target picks
/// which probability each step is scored on.
template <class S>
S attention_sequence_nll(const SeqCache<S>& cache, const AttentionHeadParams<S>& p,
                         const LabelSeq& target_with_eos,
                         std::vector<StepInternals<S>>* internals = nullptr,
                         AttentionTrace<S>* trace = nullptr) {
  if (target_with_eos.empty())
    throw DomainError("sequence_nll: target must contain at least EOS");
  const Index T = static_cast<Index>(target_with_eos.size());
  const Index K = p.dec.classes();
  for (int v : target_with_eos)
    if (v < 0 || v >= static_cast<int>(K))
      throw DomainError("sequence_nll: target label " + std::to_string(v) +
                        " outside class range [0," + std::to_string(K) + ")");

  DecoderState<S> ds = initial_decoder_state<S>(cache.positions(), p.state_units());
  if (internals) internals->resize(static_cast<size_t>(T));
  if (trace) {
    trace->Hp = cache.Hp;
    trace->Wp = cache.Wp;
    trace->steps.clear();
    trace->truncated = false;
  }

  S loss = S(0);
  StepInternals<S> scratch;
  for (Index t = 0; t < T; ++t) {
    StepInternals<S>& st = internals ? (*internals)[static_cast<size_t>(t)] : scratch;
    attention_step(cache, p, ds.alpha_prev, ds.s, ds.c_state, st);
    const int y = target_with_eos[static_cast<size_t>(t)];
    loss -= std::log(st.probs[y]);
    if (trace) trace->steps.push_back(make_trace_step(st, cache.Hp, cache.Wp, y));
    ds.alpha_prev = st.alpha;
    ds.s = st.state.h;
    ds.c_state = st.state.c;
    ds.t = t + 1;
  }
  return loss;
}

/// Backprop through the decoder steps. Gradients flow through the s_t and
/// alpha_t recurrences (including the state projection feeding the scorer)
/// for at most `window` steps: values crossing a window boundary are treated
/// as constants. Encoder feature gradients accumulate from every step
/// regardless. Returns dE.
template <class S>
Mat<S> attention_sequence_backward(const SeqCache<S>& cache,
                                   const std::vector<StepInternals<S>>& steps,
                                   const AttentionHeadParams<S>& p,
                                   const LabelSeq& target_with_eos, Index window,
                                   AttentionHeadParams<S>& grad) {
  if (window < 1) throw DomainError("bptt window must be >= 1");
  const Index T = static_cast<Index>(steps.size());
  const Index F = p.feature_dim();
  const Index P = p.att.proj_width();
  const Index Su = p.state_units();
  const Index N = cache.positions();

  Mat<S> dE = Mat<S>::Zero(F, N);
  std::array<Mat<S>, 4> dAe_sum;
  for (int d = 0; d < 4; ++d) dAe_sum[d] = Mat<S>::Zero(p.att.units() * 5, N);

  Vec<S> ds_rec = Vec<S>::Zero(Su), dc_rec = Vec<S>::Zero(Su);
  Vec<S> dalpha_rec = Vec<S>::Zero(N);
  const Vec<S> alpha_init = Vec<S>::Constant(N, S(1) / static_cast<S>(N));
  const Vec<S> zero_state = Vec<S>::Zero(Su);

  for (Index t = T - 1; t >= 0; --t) {
    const StepInternals<S>& st = steps[static_cast<size_t>(t)];
    const Vec<S>& s_prev = t > 0 ? steps[static_cast<size_t>(t - 1)].state.h : zero_state;
    const Vec<S>& c_prev = t > 0 ? steps[static_cast<size_t>(t - 1)].state.c : zero_state;
    const Vec<S>& alpha_prev = t > 0 ? steps[static_cast<size_t>(t - 1)].alpha : alpha_init;

    // -log p(y_t) through the output softmax
    Vec<S> dlogits = st.probs;
    dlogits[target_with_eos[static_cast<size_t>(t)]] -= S(1);

    grad.dec.W2.noalias() += dlogits * st.h1.transpose();
    grad.dec.b2.noalias() += dlogits;
    Vec<S> dh1 = p.dec.W2.transpose() * dlogits;
    Vec<S> dpre1 = (dh1.array() * (S(1) - st.h1.array() * st.h1.array())).matrix();
    grad.dec.W1.noalias() += dpre1 * st.hin.transpose();
    grad.dec.b1.noalias() += dpre1;
    Vec<S> dhin = p.dec.W1.transpose() * dpre1;

    Vec<S> ds = dhin.segment(0, Su) + ds_rec;
    Vec<S> dg = dhin.segment(Su, F);

    Vec<S> ds_prev_state(Su), dc_prev(Su);
    dg += lstm_step_backward(st.state, p.state, st.g, s_prev, c_prev, ds, dc_rec, grad.state,
                             ds_prev_state, dc_prev);

    // summarize: g = E * alpha
    Vec<S> dalpha = cache.E.transpose() * dg + dalpha_rec;
    dE.noalias() += dg * st.alpha.transpose();

    Vec<S> dz = softmax_backward(st.alpha, dalpha);

    grad.att.w_score.noalias() += st.hsum * dz;
    grad.att.b_score[0] += dz.sum();
    Mat<S> dhsum = p.att.w_score * dz.transpose();

    Vec<S> dproj = Vec<S>::Zero(P);
    Vec<S> dalpha_prev = Vec<S>::Zero(N);
    for (int d = 0; d < 4; ++d) {
      const auto& cell = p.att.net.dirs[d].cell;
      auto& gcell = grad.att.net.dirs[d].cell;
      Mat<S> dpre = mdlstm_scan_backward(st.att[d], cell, dhsum, gcell);
      dAe_sum[d] += dpre;
      gcell.W.col(F).noalias() += dpre * alpha_prev;
      dalpha_prev.noalias() += dpre.transpose() * cell.W.col(F);
      Vec<S> dbase = dpre.rowwise().sum();
      gcell.b.noalias() += dbase;
      gcell.W.rightCols(P).noalias() += dbase * st.proj.transpose();
      dproj.noalias() += cell.W.rightCols(P).transpose() * dbase;
    }

    grad.att.Wproj.noalias() += dproj * s_prev.transpose();
    grad.att.bproj.noalias() += dproj;
    Vec<S> ds_prev_att = p.att.Wproj.transpose() * dproj;

    if (t % window == 0) {  // boundary: upstream state treated as constant
      ds_rec.setZero();
      dc_rec.setZero();
      dalpha_rec.setZero();
    } else {
      ds_rec = ds_prev_state + ds_prev_att;
      dc_rec = dc_prev;
      dalpha_rec = dalpha_prev;
    }
  }

  for (int d = 0; d < 4; ++d) {
    const auto& cell = p.att.net.dirs[d].cell;
    grad.att.net.dirs[d].cell.W.leftCols(F).noalias() += dAe_sum[d] * cache.E.transpose();
    dE.noalias() += cell.W.leftCols(F).transpose() * dAe_sum[d];
  }
  return dE;
}

/// Greedy decoding: argmax per step until EOS or max_steps. EOS is not part
/// of the returned sequence; hitting the cap is flagged on the trace.
template <class S>
LabelSeq greedy_decode(const SeqCache<S>& cache, const AttentionHeadParams<S>& p, int eos_index,
                       Index max_steps, AttentionTrace<S>* trace = nullptr) {
  if (max_steps < 1) throw DomainError("greedy_decode: max_steps must be >= 1");
  DecoderState<S> ds = initial_decoder_state<S>(cache.positions(), p.state_units());
  if (trace) {
    trace->Hp = cache.Hp;
    trace->Wp = cache.Wp;
    trace->steps.clear();
    trace->truncated = false;
  }
  LabelSeq out;
  StepInternals<S> st;
  for (Index t = 0; t < max_steps; ++t) {
    attention_step(cache, p, ds.alpha_prev, ds.s, ds.c_state, st);
    Index best = 0;
    for (Index k = 1; k < st.probs.size(); ++k)
      if (st.probs[k] > st.probs[best]) best = k;
    if (trace) trace->steps.push_back(make_trace_step(st, cache.Hp, cache.Wp, static_cast<int>(best)));
    if (static_cast<int>(best) == eos_index) return out;
    out.push_back(static_cast<int>(best));
    ds.alpha_prev = st.alpha;
    ds.s = st.state.h;
    ds.c_state = st.state.c;
    ds.t = t + 1;
  }
  if (trace) trace->truncated = true;
  return out;
}

// ---- Tensor-level spec ops -------------------------------------------------

/// One real score per position from the 4-direction MDLSTM over
/// [e | alpha_prev | proj(s_prev)] followed by the 1-output linear layer.
template <class S>
Tensor<S> attention_scores(const Tensor<S>& e, const Tensor<S>& alpha_prev, const Vec<S>& s_prev,
                           const AttentionHeadParams<S>& p) {
  if (e.rank() != 3 || alpha_prev.rank() != 2 || e.dim(0) != alpha_prev.dim(0) ||
      e.dim(1) != alpha_prev.dim(1))
    throw ShapeError("attention_scores: feature map " + shape_str(e.shape()) +
                     " vs attention map " + shape_str(alpha_prev.shape()));
  SeqCache<S> cache;
  build_seq_cache(e.pixels().eval(), e.dim(0), e.dim(1), p, cache);
  StepInternals<S> st;
  attention_step(cache, p, alpha_prev.flat().eval(), s_prev,
                 Vec<S>::Zero(p.state_units()).eval(), st);
  Tensor<S> out({e.dim(0), e.dim(1)});
  out.flat() = st.z;
  return out;
}

/// 2D softmax over all positions jointly.
template <class S>
Tensor<S> normalize_attention(const Tensor<S>& z) {
  if (z.rank() != 2)
    throw ShapeError("normalize_attention: expected {H,W}, got " + shape_str(z.shape()));
  Tensor<S> out(z.shape());
  Vec<S> v = z.flat();
  softmax_inplace(v);
  out.flat() = v;
  return out;
}

/// g = sum_{i,j} alpha_{i,j} e_{i,j}
template <class S>
Tensor<S> summarize(const Tensor<S>& alpha, const Tensor<S>& e) {
  if (e.rank() != 3 || alpha.rank() != 2 || e.dim(0) != alpha.dim(0) || e.dim(1) != alpha.dim(1))
    throw ShapeError("summarize: feature map " + shape_str(e.shape()) + " vs attention map " +
                     shape_str(alpha.shape()));
  Tensor<S> out({e.dim(2)});
  out.flat() = e.pixels() * alpha.flat();
  return out;
}

/// s_t = LSTM(s_{t-1}, g_t); counter incremented.
template <class S>
DecoderState<S> state_update(const DecoderState<S>& state, const Vec<S>& g,
                             const StateLstmParams<S>& p) {
  LstmStepTrace<S> tr;
  lstm_step(g, state.s, state.c_state, p, tr);
  DecoderState<S> out;
  out.s = tr.h;
  out.c_state = tr.c;
  out.alpha_prev = state.alpha_prev;
  out.t = state.t + 1;
  return out;
}

/// Softmax distribution over characters + EOS from [s | g].
template <class S>
Tensor<S> decode_char(const Vec<S>& s, const Vec<S>& g, const DecoderMlpParams<S>& p) {
  if (s.size() + g.size() != p.W1.cols())
    throw ShapeError("decode_char: |s|+|g| = " + std::to_string(s.size() + g.size()) +
                     " != decoder input dim " + std::to_string(p.W1.cols()));
  Vec<S> hin(s.size() + g.size());
  hin << s, g;
  Vec<S> h1 = (p.W1 * hin + p.b1).array().tanh().matrix();
  Vec<S> logits = p.W2 * h1 + p.b2;
  softmax_inplace(logits);
  Tensor<S> out({p.classes()});
  out.flat() = logits;
  return out;
}

}  // namespace scribe
