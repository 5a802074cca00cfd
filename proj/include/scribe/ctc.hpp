#pragma once

#include <limits>

#include "scribe/ops.hpp"
#include "scribe/tensor.hpp"
#include "scribe/vocab.hpp"

namespace scribe {

/// Raised when no frame path of the given length can produce the target.
/// Deliberately not +inf loss: an infeasible pair is a data bug the caller
/// should see.
struct CtcInfeasible : DomainError {
  using DomainError::DomainError;
};

/// B mapping: drop repeated symbols, then drop blanks.
inline LabelSeq collapse_mapping(const LabelSeq& path, int blank) {
  LabelSeq out;
  int prev = -1;
  for (int s : path) {
    if (s != prev && s != blank) out.push_back(s);
    prev = s;
  }
  return out;
}

/// Frames needed for a target: repeats require a separating blank.
inline Index ctc_min_frames(const LabelSeq& y) {
  Index repeats = 0;
  for (size_t i = 1; i < y.size(); ++i)
    if (y[i] == y[i - 1]) ++repeats;
  return static_cast<Index>(y.size()) + repeats;
}

template <class S>
struct CtcResult {
  S nll = S(0);
  Mat<S> grad;  // K x T, same pixel layout as the logits
};

/// Forward-backward over the blank-augmented target, entirely in log space
/// (line-length frame counts underflow otherwise). Blank is the last class.
/// `logits` is K x T, one unnormalized score column per frame.
template <class S>
CtcResult<S> ctc_loss_cols(const Mat<S>& logits, const LabelSeq& y) {
  const S ninf = -std::numeric_limits<S>::infinity();
  const Index K = logits.rows(), T = logits.cols();
  const int blank = static_cast<int>(K) - 1;
  const Index N = static_cast<Index>(y.size());

  for (int v : y)
    if (v < 0 || v >= blank)
      throw DomainError("ctc: target label " + std::to_string(v) +
                        " outside character range [0," + std::to_string(blank) + ")");
  const Index need = ctc_min_frames(y);
  if (T < need)
    throw CtcInfeasible("ctc: target of length " + std::to_string(N) + " needs at least " +
                        std::to_string(need) + " frames, got " + std::to_string(T));

  // log softmax per frame
  Mat<S> lp(K, T);
  Vec<S> probs_scratch(K);
  for (Index t = 0; t < T; ++t) {
    S m = logits.col(t).maxCoeff();
    S lse = std::log((logits.col(t).array() - m).exp().sum()) + m;
    lp.col(t) = logits.col(t).array() - lse;
  }

  const Index A = 2 * N + 1;
  std::vector<int> aug(A, blank);
  for (Index i = 0; i < N; ++i) aug[2 * i + 1] = y[i];
  auto allow_skip = [&](Index s) {
    return s >= 2 && aug[s] != blank && aug[s] != aug[s - 2];
  };

  Mat<S> alpha = Mat<S>::Constant(A, T, ninf), beta = Mat<S>::Constant(A, T, ninf);
  alpha(0, 0) = lp(aug[0], 0);
  if (A > 1) alpha(1, 0) = lp(aug[1], 0);
  for (Index t = 1; t < T; ++t)
    for (Index s = 0; s < A; ++s) {
      S acc = alpha(s, t - 1);
      if (s >= 1) acc = log_sum_exp(acc, alpha(s - 1, t - 1));
      if (allow_skip(s)) acc = log_sum_exp(acc, alpha(s - 2, t - 1));
      if (acc != ninf) alpha(s, t) = acc + lp(aug[s], t);
    }

  S log_p = alpha(A - 1, T - 1);
  if (A > 1) log_p = log_sum_exp(log_p, alpha(A - 2, T - 1));
  if (log_p == ninf)
    throw CtcInfeasible("ctc: no feasible alignment (unexpected)");

  beta(A - 1, T - 1) = lp(aug[A - 1], T - 1);
  if (A > 1) beta(A - 2, T - 1) = lp(aug[A - 2], T - 1);
  for (Index t = T - 2; t >= 0; --t)
    for (Index s = 0; s < A; ++s) {
      S acc = beta(s, t + 1);
      if (s + 1 < A) acc = log_sum_exp(acc, beta(s + 1, t + 1));
      if (s + 2 < A && aug[s + 2] != blank && aug[s + 2] != aug[s])
        acc = log_sum_exp(acc, beta(s + 2, t + 1));
      if (acc != ninf) beta(s, t) = acc + lp(aug[s], t);
    }

  // d(-log P)/d(logit) = softmax - per-frame posterior over labels
  CtcResult<S> res;
  res.nll = -log_p;
  res.grad.resize(K, T);
  for (Index t = 0; t < T; ++t) {
    S m = logits.col(t).maxCoeff();
    probs_scratch = (logits.col(t).array() - m).exp();
    probs_scratch /= probs_scratch.sum();
    Vec<S> post = Vec<S>::Zero(K);
    for (Index s = 0; s < A; ++s) {
      S g = alpha(s, t) + beta(s, t) - lp(aug[s], t) - log_p;
      if (g != ninf) post[aug[s]] += std::exp(g);
    }
    res.grad.col(t) = probs_scratch - post;
  }
  return res;
}

/// Tensor-level op: logits {T,K} row-major, grad in the same shape.
template <class S>
std::pair<S, Tensor<S>> ctc_loss(const Tensor<S>& logit_seq, const LabelSeq& target) {
  if (logit_seq.rank() != 2)
    throw ShapeError("ctc_loss: expected logits {T,K}, got " + shape_str(logit_seq.shape()));
  Eigen::Map<const Mat<S>> cols(logit_seq.data(), logit_seq.dim(1), logit_seq.dim(0));
  CtcResult<S> res = ctc_loss_cols<S>(cols, target);
  Tensor<S> grad(logit_seq.shape());
  Eigen::Map<Mat<S>>(grad.data(), grad.dim(1), grad.dim(0)) = res.grad;
  return {res.nll, std::move(grad)};
}

/// Greedy decoding: per-frame argmax (ties to the lowest index), then the
/// collapse mapping.
template <class S>
LabelSeq best_path_decode(const Tensor<S>& prob_seq) {
  if (prob_seq.rank() != 2)
    throw ShapeError("best_path_decode: expected probs {T,K}, got " + shape_str(prob_seq.shape()));
  const Index T = prob_seq.dim(0), K = prob_seq.dim(1);
  const int blank = static_cast<int>(K) - 1;
  LabelSeq path(static_cast<size_t>(T));
  for (Index t = 0; t < T; ++t) {
    Index best = 0;
    for (Index k = 1; k < K; ++k)
      if (prob_seq(t, k) > prob_seq(t, best)) best = k;
    path[static_cast<size_t>(t)] = static_cast<int>(best);
  }
  return collapse_mapping(path, blank);
}

}  // namespace scribe
