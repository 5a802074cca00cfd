#pragma once

#include <optional>

#include "scribe/attention.hpp"
#include "scribe/ctc.hpp"
#include "scribe/encoder.hpp"
#include "scribe/vocab.hpp"

namespace scribe {

enum class HeadKind { Ctc, Attention };

inline std::string head_name(HeadKind h) { return h == HeadKind::Ctc ? "ctc" : "attention"; }
inline HeadKind head_from_name(const std::string& s) {
  if (s == "ctc") return HeadKind::Ctc;
  if (s == "attention") return HeadKind::Attention;
  throw ConfigError("unknown head '" + s + "' (expected ctc or attention)");
}

struct ModelConfig {
  EncoderConfig encoder;
  int attention_units = 16;
  int proj_width = 32;
  int state_units = 128;
  int decoder_hidden = 128;

  bool operator==(const ModelConfig&) const = default;
};

/// Full parameter bundle: the unit of checkpointing and gradient checking.
template <class S>
struct ModelParams {
  HeadKind head = HeadKind::Attention;
  Vocab vocab;
  ModelConfig cfg;
  EncoderParams<S> enc;
  std::optional<AttentionHeadParams<S>> att;
};

/// The CTC head reads the collapsed encoder output directly as per-frame
/// class scores, so its encoder feature dim is forced to the vocabulary size
/// (blank last). The attention head keeps the configured feature dim.
template <class S>
ModelParams<S> make_model(HeadKind head, const Vocab& vocab, ModelConfig cfg) {
  ModelParams<S> m;
  m.head = head;
  m.vocab = vocab;
  if (head == HeadKind::Ctc) cfg.encoder.feature_dim = vocab.size();
  m.cfg = cfg;
  m.enc = make_encoder<S>(cfg.encoder);
  if (head == HeadKind::Attention)
    m.att = make_attention_head<S>(cfg.encoder.feature_dim, cfg.attention_units, cfg.proj_width,
                                   cfg.state_units, cfg.decoder_hidden,
                                   vocab.attention_classes());
  return m;
}

// ---- parameter reflection ---------------------------------------------------

template <class S, class F>
void visit_cell(const std::string& prefix, MdlstmCellParams<S>& c, F&& f) {
  f(prefix + "/W", c.W);
  f(prefix + "/Uh", c.Uh);
  f(prefix + "/Uv", c.Uv);
  f(prefix + "/b", c.b);
}

template <class S, class F>
void visit_block(const std::string& prefix, MdlstmBlockParams<S>& blk, F&& f) {
  for (size_t d = 0; d < blk.dirs.size(); ++d)
    visit_cell(prefix + "/d" + std::to_string(d), blk.dirs[d].cell, f);
}

template <class S, class F>
void visit_encoder_params(EncoderParams<S>& enc, F&& f) {
  for (int l = 0; l < 3; ++l) visit_block("enc/l" + std::to_string(l + 1), enc.blocks[l], f);
  for (int c = 0; c < 2; ++c) {
    f("enc/conv" + std::to_string(c + 1) + "/kernel", enc.convs[c].kernel);
    f("enc/conv" + std::to_string(c + 1) + "/bias", enc.convs[c].bias);
  }
  f("enc/out/W", enc.Wout);
  f("enc/out/b", enc.bout);
}

template <class S, class F>
void visit_head_params(AttentionHeadParams<S>& head, F&& f) {
  visit_block("att/net", head.att.net, f);
  f("att/score/w", head.att.w_score);
  f("att/score/b", head.att.b_score);
  f("att/proj/W", head.att.Wproj);
  f("att/proj/b", head.att.bproj);
  f("state/W", head.state.W);
  f("state/U", head.state.U);
  f("state/b", head.state.b);
  f("dec/W1", head.dec.W1);
  f("dec/b1", head.dec.b1);
  f("dec/W2", head.dec.W2);
  f("dec/b2", head.dec.b2);
}

/// Visits every tensor with its canonical name. The order is fixed by this
/// function; consumers needing lexicographic order sort via ParamSet.
template <class S, class F>
void visit_params(ModelParams<S>& m, F&& f) {
  visit_encoder_params(m.enc, f);
  if (m.att) visit_head_params(*m.att, f);
}

/// Flat elementwise views in canonical visit order (Eigen storage order);
/// used by the optimizer and batch accumulation.
template <class S>
struct ParamEntry {
  std::string name;
  S* data;
  Index size;
};

template <class S>
std::vector<ParamEntry<S>> param_entries(ModelParams<S>& m) {
  std::vector<ParamEntry<S>> out;
  visit_params(m, [&](const std::string& name, auto& t) {
    out.push_back({name, t.data(), t.size()});
  });
  return out;
}

template <class S>
Index param_count(ModelParams<S>& m) {
  Index n = 0;
  visit_params(m, [&](const std::string&, auto& t) { n += t.size(); });
  return n;
}

inline bool is_bias_name(const std::string& name) {
  auto pos = name.rfind('/');
  std::string leaf = pos == std::string::npos ? name : name.substr(pos + 1);
  return leaf == "b" || leaf == "b1" || leaf == "b2" || leaf == "bias";
}

/// Weights uniform in [-0.1, 0.1], biases zero. Draws happen in canonical
/// visit order from a single stream, so a seed pins every weight.
template <class S>
void init_params(ModelParams<S>& m, uint64_t seed) {
  std::mt19937_64 rng(seed);
  visit_params(m, [&](const std::string& name, auto& t) {
    if (is_bias_name(name)) {
      t.setZero();
      return;
    }
    S* p = t.data();
    for (Index i = 0; i < t.size(); ++i) p[i] = static_cast<S>(uniform(rng, -0.1, 0.1));
  });
}

template <class S>
ModelParams<S> zero_like(const ModelParams<S>& m) {
  ModelParams<S> z = m;  // copies structure
  visit_params(z, [](const std::string&, auto& t) { t.setZero(); });
  return z;
}

template <class S>
void add_scaled(ModelParams<S>& dst, ModelParams<S>& src, S factor) {
  auto de = param_entries(dst);
  auto se = param_entries(src);
  for (size_t i = 0; i < de.size(); ++i)
    Eigen::Map<Vec<S>>(de[i].data, de[i].size) +=
        factor * Eigen::Map<const Vec<S>>(se[i].data, se[i].size);
}

// Row-major Tensor copy of one parameter, and the inverse with shape checks.
template <class S>
void pack_one(ParamSet<S>& ps, const std::string& name, const Mat<S>& t) {
  Tensor<S> out({t.rows(), t.cols()});
  out.mat() = t;
  ps.add(name, std::move(out));
}
template <class S>
void pack_one(ParamSet<S>& ps, const std::string& name, const Vec<S>& t) {
  Tensor<S> out({t.size()});
  out.flat() = t;
  ps.add(name, std::move(out));
}
template <class S>
void pack_one(ParamSet<S>& ps, const std::string& name, const Tensor<S>& t) {
  ps.add(name, t);
}

template <class S>
void unpack_one(const ParamSet<S>& ps, const std::string& name, Mat<S>& t) {
  const Tensor<S>& src = ps.at(name);
  if (src.rank() != 2 || src.dim(0) != t.rows() || src.dim(1) != t.cols())
    throw ShapeError("parameter '" + name + "': stored shape " + shape_str(src.shape()) +
                     " does not match expected " + std::to_string(t.rows()) + "x" +
                     std::to_string(t.cols()));
  t = src.mat();
}
template <class S>
void unpack_one(const ParamSet<S>& ps, const std::string& name, Vec<S>& t) {
  const Tensor<S>& src = ps.at(name);
  if (src.size() != t.size())
    throw ShapeError("parameter '" + name + "': stored size " + std::to_string(src.size()) +
                     " does not match expected " + std::to_string(t.size()));
  t = src.flat();
}
template <class S>
void unpack_one(const ParamSet<S>& ps, const std::string& name, Tensor<S>& t) {
  const Tensor<S>& src = ps.at(name);
  if (src.shape() != t.shape())
    throw ShapeError("parameter '" + name + "': stored shape " + shape_str(src.shape()) +
                     " does not match expected " + shape_str(t.shape()));
  t = src;
}

template <class S>
ParamSet<S> to_param_set(const ModelParams<S>& m) {
  ParamSet<S> ps;
  visit_params(const_cast<ModelParams<S>&>(m),
               [&](const std::string& name, auto& t) { pack_one(ps, name, t); });
  return ps;
}

template <class S>
void load_param_set(ModelParams<S>& m, const ParamSet<S>& ps) {
  visit_params(m, [&](const std::string& name, auto& t) { unpack_one(ps, name, t); });
}

// ---- attention head, model level --------------------------------------------

template <class S>
const AttentionHeadParams<S>& attention_head(const ModelParams<S>& m) {
  if (!m.att) throw ConfigError("model has no attention head (head=" + head_name(m.head) + ")");
  return *m.att;
}

template <class S>
struct AttentionBackprop {
  EncoderTrace<S> enc;
  SeqCache<S> cache;
  std::vector<StepInternals<S>> steps;
};

/// NLL of the target under the attention head: encode once, then one decoder
/// step per target symbol. Targets must end with EOS.
template <class S>
S sequence_nll(const Tensor<S>& image, const LabelSeq& target_with_eos, const ModelParams<S>& m,
               RunMode mode = RunMode::Eval, uint64_t dropout_seed = 0,
               AttentionTrace<S>* trace = nullptr, AttentionBackprop<S>* bp = nullptr) {
  const AttentionHeadParams<S>& head = attention_head(m);
  if (target_with_eos.empty())
    throw DomainError("sequence_nll: target must contain at least EOS");
  if (target_with_eos.back() != m.vocab.eos_index())
    throw DomainError("sequence_nll: target must end with EOS");
  AttentionBackprop<S> local;
  AttentionBackprop<S>& ctx = bp ? *bp : local;
  encode(image, m.enc, mode, dropout_seed, &ctx.enc);
  build_seq_cache(ctx.enc.feat, ctx.enc.H2, ctx.enc.W2, head, ctx.cache);
  return attention_sequence_nll(ctx.cache, head, target_with_eos, bp ? &ctx.steps : nullptr,
                                trace);
}

template <class S>
void sequence_nll_backward(const AttentionBackprop<S>& bp, const LabelSeq& target_with_eos,
                           Index window, const ModelParams<S>& m, ModelParams<S>& grads) {
  Mat<S> dE = attention_sequence_backward(bp.cache, bp.steps, attention_head(m), target_with_eos,
                                          window, *grads.att);
  encode_backward(bp.enc, m.enc, dE, grads.enc);
}

template <class S>
struct TranscribeResult {
  std::string text;
  AttentionTrace<S> trace;
};

/// Argmax decoding until EOS or max_steps (truncation is flagged on the
/// trace, mirroring the runaway-insertion failure mode).
template <class S>
TranscribeResult<S> greedy_transcribe(const Tensor<S>& image, const ModelParams<S>& m,
                                      Index max_steps) {
  const AttentionHeadParams<S>& head = attention_head(m);
  EncoderTrace<S> enc_tr;
  encode(image, m.enc, RunMode::Eval, 0, &enc_tr);
  SeqCache<S> cache;
  build_seq_cache(enc_tr.feat, enc_tr.H2, enc_tr.W2, head, cache);
  TranscribeResult<S> res;
  LabelSeq seq = greedy_decode(cache, head, m.vocab.eos_index(), max_steps, &res.trace);
  res.text = m.vocab.decode(seq);
  return res;
}

// ---- ctc head, model level ---------------------------------------------------

template <class S>
void require_ctc(const ModelParams<S>& m) {
  if (m.head != HeadKind::Ctc)
    throw ConfigError("model head is " + head_name(m.head) + ", ctc required");
  if (m.enc.cfg.feature_dim != m.vocab.size())
    throw ConfigError("ctc head needs encoder feature dim == vocab size");
}

template <class S>
struct CtcBackprop {
  EncoderTrace<S> enc;
  Mat<S> dlogits;  // K x T
};

/// Collapse the encoder maps vertically into a frame sequence and apply the
/// CTC objective. Target carries no blank and no EOS.
template <class S>
S ctc_nll(const Tensor<S>& image, const LabelSeq& target, const ModelParams<S>& m,
          RunMode mode = RunMode::Eval, uint64_t dropout_seed = 0, CtcBackprop<S>* bp = nullptr) {
  require_ctc(m);
  CtcBackprop<S> local;
  CtcBackprop<S>& ctx = bp ? *bp : local;
  encode(image, m.enc, mode, dropout_seed, &ctx.enc);
  const Index W2 = ctx.enc.W2, K = m.enc.cfg.feature_dim;
  Mat<S> logits = Mat<S>::Zero(K, W2);
  for (Index i = 0; i < ctx.enc.H2; ++i) logits += ctx.enc.feat.middleCols(i * W2, W2);
  CtcResult<S> res = ctc_loss_cols(logits, target);
  ctx.dlogits = std::move(res.grad);
  return res.nll;
}

template <class S>
void ctc_nll_backward(const CtcBackprop<S>& bp, const ModelParams<S>& m, ModelParams<S>& grads) {
  const Index W2 = bp.enc.W2;
  Mat<S> dfeat(bp.enc.feat.rows(), bp.enc.feat.cols());
  for (Index i = 0; i < bp.enc.H2; ++i) dfeat.middleCols(i * W2, W2) = bp.dlogits;
  encode_backward(bp.enc, m.enc, dfeat, grads.enc);
}

/// Best-path transcription for the CTC head.
template <class S>
std::string transcribe_ctc(const Tensor<S>& image, const ModelParams<S>& m) {
  require_ctc(m);
  EncoderTrace<S> tr;
  encode(image, m.enc, RunMode::Eval, 0, &tr);
  const Index W2 = tr.W2, K = m.enc.cfg.feature_dim;
  Mat<S> logits = Mat<S>::Zero(K, W2);
  for (Index i = 0; i < tr.H2; ++i) logits += tr.feat.middleCols(i * W2, W2);
  Tensor<S> probs({W2, K});
  for (Index t = 0; t < W2; ++t) {
    Vec<S> col = logits.col(t);
    softmax_inplace(col);
    probs.mat().row(t) = col.transpose();
  }
  return m.vocab.decode(best_path_decode(probs));
}

}  // namespace scribe
