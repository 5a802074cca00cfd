#include <doctest.h>

#include <cmath>

#include "scribe/attention.hpp"
#include "scribe/gradcheck_scopes.hpp"
#include "scribe/model.hpp"

using namespace scribe;

namespace {

AttentionHeadParams<double> random_head(Index F, Index u, Index P, Index S, Index hidden,
                                        Index classes, uint64_t seed) {
  auto head = make_attention_head<double>(F, u, P, S, hidden, classes);
  std::mt19937_64 rng(seed);
  visit_head_params(head, [&](const std::string&, auto& t) {
    auto* p = t.data();
    for (Index i = 0; i < t.size(); ++i) p[i] = uniform(rng, -0.3, 0.3);
  });
  return head;
}

Tensor<double> random_map(Index H, Index W, Index C, std::mt19937_64& rng) {
  Tensor<double> t({H, W, C});
  for (Index i = 0; i < t.size(); ++i) t(i) = uniform(rng, -1, 1);
  return t;
}

// independent scalar LSTM for state_update checks
void scalar_lstm(const Vec<double>& x, const Vec<double>& h_prev, const Vec<double>& c_prev,
                 const StateLstmParams<double>& p, Vec<double>& h, Vec<double>& c) {
  const Index u = p.units();
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  h.resize(u);
  c.resize(u);
  for (Index k = 0; k < u; ++k) {
    auto pre = [&](Index gate) {
      double a = p.b[gate * u + k];
      for (Index j = 0; j < x.size(); ++j) a += p.W(gate * u + k, j) * x[j];
      for (Index j = 0; j < u; ++j) a += p.U(gate * u + k, j) * h_prev[j];
      return a;
    };
    double gi = sig(pre(0)), gf = sig(pre(1)), go = sig(pre(2)), gg = std::tanh(pre(3));
    c[k] = gf * c_prev[k] + gi * gg;
    h[k] = go * std::tanh(c[k]);
  }
}

}  // namespace

TEST_CASE("attention_scores: zero parameters give zero scores") {
  auto head = make_attention_head<double>(4, 3, 2, 5, 6, 7);
  std::mt19937_64 rng(41);
  Tensor<double> e = random_map(2, 3, 4, rng);
  Tensor<double> alpha({2, 3});
  alpha.array().setConstant(1.0 / 6.0);
  auto z = attention_scores(e, alpha, Vec<double>::Zero(5).eval(), head);
  CHECK(z.array().abs().maxCoeff() == doctest::Approx(0.0));
}

TEST_CASE("attention_scores on 1x1 map reduces to one cell step plus linear") {
  auto head = random_head(4, 3, 2, 5, 6, 7, 42);
  std::mt19937_64 rng(43);
  Tensor<double> e = random_map(1, 1, 4, rng);
  Tensor<double> alpha({1, 1});
  alpha(0, 0) = 1.0;
  Vec<double> s(5);
  for (Index i = 0; i < 5; ++i) s[i] = uniform(rng, -1, 1);

  auto z = attention_scores(e, alpha, s, head);

  Vec<double> proj = head.att.Wproj * s + head.att.bproj;
  Vec<double> x(4 + 1 + 2);
  x << e.pixels().col(0), alpha(0, 0), proj;
  Vec<double> zeros = Vec<double>::Zero(3);
  Vec<double> hsum = Vec<double>::Zero(3);
  for (const auto& dl : head.att.net.dirs) {
    auto [h, c] = mdlstm_cell_step(x, zeros, zeros, zeros, zeros, dl.cell);
    hsum += h;
  }
  double expect = head.att.w_score.dot(hsum) + head.att.b_score[0];
  CHECK(z(0, 0) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("attention_scores on 2x3 map matches manual unrolled evaluation") {
  auto head = random_head(3, 2, 2, 4, 5, 6, 44);
  std::mt19937_64 rng(45);
  const Index H = 2, W = 3;
  Tensor<double> e = random_map(H, W, 3, rng);
  Tensor<double> alpha({H, W});
  for (Index i = 0; i < alpha.size(); ++i) alpha(i) = uniform01(rng);
  alpha.array() /= alpha.array().sum();
  Vec<double> s(4);
  for (Index i = 0; i < 4; ++i) s[i] = uniform(rng, -1, 1);

  auto z = attention_scores(e, alpha, s, head);

  // manual: build per-pixel inputs, run each direction by explicit cell steps
  Vec<double> proj = head.att.Wproj * s + head.att.bproj;
  auto input_at = [&](Index i, Index j) {
    Vec<double> x(3 + 1 + 2);
    x << e.pixels().col(i * W + j), alpha(i, j), proj;
    return x;
  };
  Mat<double> hsum = Mat<double>::Zero(2, H * W);
  for (const auto& dl : head.att.net.dirs) {
    const int sy = dir_sy(dl.dir), sx = dir_sx(dl.dir);
    Mat<double> hgrid = Mat<double>::Zero(2, H * W), cgrid = Mat<double>::Zero(2, H * W);
    Vec<double> zero = Vec<double>::Zero(2);
    std::vector<Index> rows(H), cols(W);
    for (Index i = 0; i < H; ++i) rows[i] = sy > 0 ? i : H - 1 - i;
    for (Index j = 0; j < W; ++j) cols[j] = sx > 0 ? j : W - 1 - j;
    for (Index a = 0; a < H; ++a)
      for (Index b = 0; b < W; ++b) {
        const Index i = rows[a], j = cols[b];
        const Index hp = b >= 1 ? i * W + cols[b - 1] : -1;
        const Index vp = a >= 1 ? rows[a - 1] * W + j : -1;
        auto [h, c] = mdlstm_cell_step<double>(
            input_at(i, j), hp >= 0 ? Vec<double>(hgrid.col(hp)) : zero,
            vp >= 0 ? Vec<double>(hgrid.col(vp)) : zero,
            hp >= 0 ? Vec<double>(cgrid.col(hp)) : zero,
            vp >= 0 ? Vec<double>(cgrid.col(vp)) : zero, dl.cell);
        hgrid.col(i * W + j) = h;
        cgrid.col(i * W + j) = c;
      }
    hsum += hgrid;
  }
  for (Index n = 0; n < H * W; ++n) {
    double expect = head.att.w_score.dot(hsum.col(n)) + head.att.b_score[0];
    CHECK(z(n) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("normalize_attention: constant, spike, and flatten oracle") {
  Tensor<double> c({2, 3});
  c.array().setConstant(4.2);
  auto u = normalize_attention(c);
  for (Index i = 0; i < 6; ++i) CHECK(u(i) == doctest::Approx(1.0 / 6.0));

  Tensor<double> spike({2, 3});
  spike(1, 2) = 20.0;
  auto sp = normalize_attention(spike);
  CHECK(sp(1, 2) >= 0.999);

  std::mt19937_64 rng(46);
  Tensor<double> z({3, 4});
  for (Index i = 0; i < z.size(); ++i) z(i) = uniform(rng, -5, 5);
  auto a = normalize_attention(z);
  Tensor<double> flat({12});
  flat.flat() = z.flat();
  auto oracle = softmax(flat);
  for (Index i = 0; i < 12; ++i) CHECK(a(i) == doctest::Approx(oracle(i)).epsilon(1e-12));
  CHECK(a.array().sum() == doctest::Approx(1.0));
}

TEST_CASE("summarize: selection, mean, and accumulation oracle") {
  std::mt19937_64 rng(47);
  Tensor<double> e = random_map(2, 3, 4, rng);

  Tensor<double> onehot({2, 3});
  onehot(1, 2) = 1.0;
  auto g = summarize(onehot, e);
  for (Index k = 0; k < 4; ++k) CHECK(g(k) == doctest::Approx(e(1, 2, k)));

  Tensor<double> uniform_map({2, 3});
  uniform_map.array().setConstant(1.0 / 6.0);
  auto gm = summarize(uniform_map, e);
  for (Index k = 0; k < 4; ++k) {
    double mean = 0;
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 3; ++j) mean += e(i, j, k) / 6.0;
    CHECK(gm(k) == doctest::Approx(mean).epsilon(1e-12));
  }

  Tensor<double> alpha({2, 3});
  for (Index i = 0; i < 6; ++i) alpha(i) = uniform01(rng);
  alpha.array() /= alpha.array().sum();
  auto gr = summarize(alpha, e);
  for (Index k = 0; k < 4; ++k) {
    double acc = 0;
    for (Index i = 0; i < 2; ++i)
      for (Index j = 0; j < 3; ++j) acc += alpha(i, j) * e(i, j, k);
    CHECK(gr(k) == doctest::Approx(acc).epsilon(1e-9));
  }
}

TEST_CASE("state_update: zero-parameter cases") {
  auto p = make_state_lstm<double>(3, 4);
  auto st = initial_decoder_state<double>(6, 3);
  Vec<double> g = Vec<double>::Ones(4);
  auto next = state_update(st, g, p);
  CHECK(next.s.norm() == doctest::Approx(0.0));
  CHECK(next.c_state.norm() == doctest::Approx(0.0));
  CHECK(next.t == 1);

  st.c_state << 2.0, -4.0, 6.0;
  auto half = state_update(st, g, p);
  CHECK(half.c_state[0] == doctest::Approx(1.0));   // forget gate 0.5
  CHECK(half.c_state[1] == doctest::Approx(-2.0));
  CHECK(half.c_state[2] == doctest::Approx(3.0));
}

TEST_CASE("state_update matches scalar LSTM oracle") {
  std::mt19937_64 rng(48);
  auto p = make_state_lstm<double>(3, 4);
  for (auto* m : {&p.W, &p.U}) {
    for (Index i = 0; i < m->size(); ++i) m->data()[i] = uniform(rng, -0.5, 0.5);
  }
  for (Index i = 0; i < p.b.size(); ++i) p.b[i] = uniform(rng, -0.5, 0.5);
  DecoderState<double> st = initial_decoder_state<double>(4, 3);
  for (Index i = 0; i < 3; ++i) {
    st.s[i] = uniform(rng, -1, 1);
    st.c_state[i] = uniform(rng, -1, 1);
  }
  Vec<double> g(4);
  for (Index i = 0; i < 4; ++i) g[i] = uniform(rng, -1, 1);
  auto next = state_update(st, g, p);
  Vec<double> h, c;
  scalar_lstm(g, st.s, st.c_state, p, h, c);
  CHECK((next.s - h).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((next.c_state - c).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("decode_char: uniform at zero params, composition oracle otherwise") {
  auto zero = make_attention_head<double>(4, 2, 2, 3, 5, 7);
  auto probs = decode_char(Vec<double>::Zero(3).eval(), Vec<double>::Zero(4).eval(), zero.dec);
  for (Index k = 0; k < 7; ++k) CHECK(probs(k) == doctest::Approx(1.0 / 7.0));

  auto head = random_head(4, 2, 2, 3, 5, 7, 49);
  std::mt19937_64 rng(50);
  Vec<double> s(3), g(4);
  for (Index i = 0; i < 3; ++i) s[i] = uniform(rng, -1, 1);
  for (Index i = 0; i < 4; ++i) g[i] = uniform(rng, -1, 1);
  auto out = decode_char(s, g, head.dec);
  CHECK(out.array().sum() == doctest::Approx(1.0).epsilon(1e-9));
  Vec<double> hin(7);
  hin << s, g;
  Vec<double> h1 = (head.dec.W1 * hin + head.dec.b1).array().tanh().matrix();
  Vec<double> logits = head.dec.W2 * h1 + head.dec.b2;
  softmax_inplace(logits);
  for (Index k = 0; k < 7; ++k) CHECK(out(k) == doctest::Approx(logits[k]).epsilon(1e-12));
}

TEST_CASE("sequence_nll: zero-parameter model is uniform, K=11") {
  ModelConfig cfg = detail::tiny_encoder_config();
  auto model = make_model<double>(HeadKind::Attention, Vocab("0123456789"), cfg);
  // params left zero: every step outputs the uniform distribution over 11
  std::mt19937_64 rng(51);
  Tensor<double> img({12, 24, 1});
  for (Index i = 0; i < img.size(); ++i) img(i) = uniform01(rng);
  LabelSeq target = {3, 0, 4, model.vocab.eos_index()};
  double loss = sequence_nll(img, target, model);
  CHECK(loss == doctest::Approx(4.0 * std::log(11.0)).epsilon(1e-9));
}

TEST_CASE("sequence_nll is non-negative and requires EOS-terminated targets") {
  ModelConfig cfg = detail::tiny_encoder_config();
  auto model = make_model<double>(HeadKind::Attention, Vocab("abc"), cfg);
  init_params(model, 3);
  std::mt19937_64 rng(52);
  Tensor<double> img({12, 24, 1});
  for (Index i = 0; i < img.size(); ++i) img(i) = uniform01(rng);
  LabelSeq ok = {0, 1, model.vocab.eos_index()};
  CHECK(sequence_nll(img, ok, model) >= 0.0);
  CHECK_THROWS_AS(sequence_nll(img, {}, model), DomainError);
  CHECK_THROWS_AS(sequence_nll(img, {0, 1}, model), DomainError);
}

TEST_CASE("targets differing at one step shift the loss by exactly the log ratio") {
  ModelConfig cfg = detail::tiny_encoder_config();
  auto model = make_model<double>(HeadKind::Attention, Vocab("abcd"), cfg);
  init_params(model, 9);
  std::mt19937_64 rng(53);
  Tensor<double> img({12, 28, 1});
  for (Index i = 0; i < img.size(); ++i) img(i) = uniform01(rng);
  const int eos = model.vocab.eos_index();
  LabelSeq y = {0, 1, 2, eos};
  LabelSeq y2 = {0, 3, 2, eos};
  AttentionTrace<double> tr1, tr2;
  double l1 = sequence_nll(img, y, model, RunMode::Eval, 0, &tr1);
  double l2 = sequence_nll(img, y2, model, RunMode::Eval, 0, &tr2);
  // states and attention are target-independent
  for (size_t t = 0; t < tr1.steps.size(); ++t)
    CHECK((tr1.steps[t].alpha.flat() - tr2.steps[t].alpha.flat()).cwiseAbs().maxCoeff() == 0.0);
  double expect = std::log(tr1.steps[1].probs[1]) - std::log(tr1.steps[1].probs[3]);
  CHECK(l2 - l1 == doctest::Approx(-expect * -1.0).epsilon(1e-9));
  CHECK(l2 - l1 == doctest::Approx(std::log(tr1.steps[1].probs[1] / tr1.steps[1].probs[3]))
                       .epsilon(1e-9));
}

TEST_CASE("attention maps and output distributions stay normalized") {
  ModelConfig cfg = detail::tiny_encoder_config();
  auto model = make_model<double>(HeadKind::Attention, Vocab("0123456789"), cfg);
  init_params(model, 17);
  std::mt19937_64 rng(54);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<double> img({12, 20 + 4 * trial, 1});
    for (Index i = 0; i < img.size(); ++i) img(i) = uniform01(rng);
    LabelSeq target = {1, 2, model.vocab.eos_index()};
    AttentionTrace<double> tr;
    sequence_nll(img, target, model, RunMode::Eval, 0, &tr);
    for (const auto& step : tr.steps) {
      CHECK(step.alpha.array().sum() == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(step.alpha.array().minCoeff() >= 0.0);
      CHECK(step.probs.sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("greedy_transcribe: EOS-first model, max_steps cap, determinism") {
  ModelConfig cfg = detail::tiny_encoder_config();
  auto model = make_model<double>(HeadKind::Attention, Vocab("ab"), cfg);
  std::mt19937_64 rng(55);
  Tensor<double> img({12, 20, 1});
  for (Index i = 0; i < img.size(); ++i) img(i) = uniform01(rng);

  // bias the decoder output toward EOS: first argmax is EOS immediately
  model.att->dec.b2[model.vocab.eos_index()] = 5.0;
  auto res = greedy_transcribe(img, model, 10);
  CHECK(res.text.empty());
  CHECK(res.trace.steps.size() == 1);
  CHECK_FALSE(res.trace.truncated);

  // bias toward 'a': never emits EOS, runs to the cap
  model.att->dec.b2[model.vocab.eos_index()] = 0.0;
  model.att->dec.b2[0] = 5.0;
  auto capped = greedy_transcribe(img, model, 5);
  CHECK(capped.text == "aaaaa");
  CHECK(capped.trace.truncated);

  auto again = greedy_transcribe(img, model, 5);
  CHECK(again.text == capped.text);
}

TEST_CASE("one-hot attention reduces the summary to feature selection") {
  std::mt19937_64 rng(56);
  Tensor<double> e = random_map(3, 5, 6, rng);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 5; ++j) {
      Tensor<double> alpha({3, 5});
      alpha(i, j) = 1.0;
      auto g = summarize(alpha, e);
      for (Index k = 0; k < 6; ++k) CHECK(g(k) == e(i, j, k));
    }
}

TEST_CASE("scoped attention gradcheck passes") {
  CHECK(run_scoped_gradcheck(GradScope::Attention, 11).max_rel_error < 1e-4);
}

TEST_CASE("scoped full-model gradcheck passes on a 12x40 image") {
  CHECK(run_scoped_gradcheck(GradScope::Full, 11).max_rel_error < 1e-4);
}
