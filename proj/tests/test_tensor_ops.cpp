#include <doctest.h>

#include <cmath>

#include "scribe/grad_check.hpp"
#include "scribe/ops.hpp"
#include "scribe/tensor.hpp"

using namespace scribe;

TEST_CASE("tensor shape bookkeeping") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.rank() == 3);
  t(1, 2, 3) = 5.0f;
  CHECK(t.data()[23] == 5.0f);  // row-major, last axis fastest
  CHECK_THROWS_AS(Tensor<float>({2, 0}), ShapeError);
  CHECK_THROWS_AS((Tensor<float>({2, 2}, {1.0f, 2.0f, 3.0f})), ShapeError);
}

TEST_CASE("pixels view aliases row-major {H,W,C} storage") {
  Tensor<double> t({2, 3, 4});
  for (Index i = 0; i < t.size(); ++i) t(i) = static_cast<double>(i);
  auto px = t.pixels();
  CHECK(px.rows() == 4);
  CHECK(px.cols() == 6);
  // pixel (1,2) is column 1*3+2 and holds channels contiguously
  for (Index c = 0; c < 4; ++c) CHECK(px(c, 5) == t(1, 2, c));
}

TEST_CASE("linear identity and zero-weight cases") {
  Tensor<double> I({2, 2}, {1, 0, 0, 1});
  Tensor<double> zero_b({2}, {0, 0});
  Tensor<double> x({2}, {3, 4});
  auto y = linear(I, zero_b, x);
  CHECK(y(0) == doctest::Approx(3));
  CHECK(y(1) == doctest::Approx(4));

  Tensor<double> W0({2, 2}, {0, 0, 0, 0});
  Tensor<double> b({2}, {1, 2});
  auto y2 = linear(W0, b, x);
  CHECK(y2(0) == doctest::Approx(1));
  CHECK(y2(1) == doctest::Approx(2));
}

TEST_CASE("linear dot-product oracle") {
  Tensor<double> W({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({2}, {0, 0});
  Tensor<double> x({2}, {1, 1});
  auto y = linear(W, b, x);
  CHECK(y(0) == doctest::Approx(3));
  CHECK(y(1) == doctest::Approx(7));
}

TEST_CASE("linear rejects mismatched shapes naming both") {
  Tensor<double> W({2, 3});
  Tensor<double> b({2});
  Tensor<double> x({2});
  try {
    linear(W, b, x);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2]") != std::string::npos);
  }
}

TEST_CASE("linear additivity in 32-bit") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor<float> W({4, 5}), b({4}), x({5}), y({5});
    for (Index i = 0; i < W.size(); ++i) W(i) = static_cast<float>(uniform(rng, -1, 1));
    for (Index i = 0; i < 4; ++i) b(i) = static_cast<float>(uniform(rng, -1, 1));
    for (Index i = 0; i < 5; ++i) {
      x(i) = static_cast<float>(uniform(rng, -1, 1));
      y(i) = static_cast<float>(uniform(rng, -1, 1));
    }
    Tensor<float> xy({5});
    xy.flat() = x.flat() + y.flat();
    Tensor<float> zero_b({4});
    auto lhs = linear(W, b, xy);
    auto rhs_a = linear(W, b, x);
    auto rhs_b = linear(W, zero_b, y);
    for (Index i = 0; i < 4; ++i)
      CHECK(lhs(i) == doctest::Approx(rhs_a(i) + rhs_b(i)).epsilon(1e-6));
  }
}

TEST_CASE("softmax trivial cases") {
  Tensor<double> c({4}, {2.5, 2.5, 2.5, 2.5});
  auto u = softmax(c);
  for (Index i = 0; i < 4; ++i) CHECK(u(i) == doctest::Approx(0.25));

  Tensor<double> single({1}, {17.0});
  CHECK(softmax(single)(0) == doctest::Approx(1.0));

  Tensor<double> pair({2}, {0.0, std::log(3.0)});
  auto p = softmax(pair);
  CHECK(p(0) == doctest::Approx(0.25));
  CHECK(p(1) == doctest::Approx(0.75));
}

TEST_CASE("softmax sums to one and shifts are exact in 64-bit") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor<double> v({7});
    for (Index i = 0; i < 7; ++i) v(i) = uniform(rng, -30, 30);
    auto s = softmax(v);
    CHECK(s.array().sum() == doctest::Approx(1.0).epsilon(1e-6));
    // order preserved
    for (Index i = 0; i < 7; ++i)
      for (Index j = 0; j < 7; ++j)
        if (v(i) < v(j)) CHECK(s(i) <= s(j));
    Tensor<double> shifted({7});
    double c = uniform(rng, -50, 50);
    shifted.array() = v.array() + c;
    auto s2 = softmax(shifted);
    for (Index i = 0; i < 7; ++i) CHECK(std::abs(s(i) - s2(i)) < 1e-12);
  }
}

TEST_CASE("softmax of empty input is a domain error") {
  Vec<double> v(0);
  CHECK_THROWS_AS(softmax_inplace(v), DomainError);
}

TEST_CASE("activations") {
  CHECK(sigmoid_scalar(0.0) == doctest::Approx(0.5));
  CHECK(std::tanh(0.0) == doctest::Approx(0.0));
  CHECK(sigmoid_scalar(-1.7) == doctest::Approx(1.0 - sigmoid_scalar(1.7)));
  // saturation, never NaN
  CHECK(sigmoid_scalar(1000.0) == doctest::Approx(1.0));
  CHECK(sigmoid_scalar(-1000.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(sigmoid_scalar(-1e30)));
  Tensor<double> x({3}, {-2.0, 0.0, 2.0});
  auto sg = sigmoid(x);
  for (Index i = 0; i < 3; ++i) {
    CHECK(sg(i) > 0.0);
    CHECK(sg(i) < 1.0);
  }
}

TEST_CASE("param set is lexicographic and rejects duplicates") {
  ParamSet<double> ps;
  ps.add("b", Tensor<double>({1}));
  ps.add("a/x", Tensor<double>({1}));
  ps.add("a/b", Tensor<double>({1}));
  std::vector<std::string> names;
  for (auto& [n, t] : ps) names.push_back(n);
  CHECK(names == std::vector<std::string>{"a/b", "a/x", "b"});
  CHECK_THROWS_AS(ps.add("b", Tensor<double>({1})), ConfigError);
}

static ParamSet<double> quadratic_params() {
  ParamSet<double> ps;
  Tensor<double> theta({3}, {0.5, -1.25, 2.0});
  ps.add("theta", theta);
  return ps;
}

TEST_CASE("grad_check: quadratic loss is near-exact") {
  auto params = quadratic_params();
  auto loss = [](const ParamSet<double>& p) { return p.at("theta").flat().squaredNorm(); };
  ParamSet<double> grads;
  Tensor<double> g({3});
  g.flat() = 2.0 * params.at("theta").flat();
  grads.add("theta", g);
  auto rep = grad_check(loss, grads, params, 1e-5);
  CHECK(rep.max_rel_error < 1e-8);
}

TEST_CASE("grad_check: planted 1% error is detected") {
  auto params = quadratic_params();
  auto loss = [](const ParamSet<double>& p) { return p.at("theta").flat().squaredNorm(); };
  ParamSet<double> grads;
  Tensor<double> g({3});
  g.flat() = 2.0 * 1.01 * params.at("theta").flat();
  grads.add("theta", g);
  auto rep = grad_check(loss, grads, params, 1e-5);
  CHECK(rep.max_rel_error == doctest::Approx(0.01).epsilon(0.05));
  CHECK(rep.worst_param == "theta");
}

TEST_CASE("grad_check: non-finite loss names the parameter") {
  auto params = quadratic_params();
  auto loss = [](const ParamSet<double>& p) {
    double v = p.at("theta")(0);
    return v > 0.5 ? std::numeric_limits<double>::quiet_NaN() : v;
  };
  ParamSet<double> grads;
  grads.add("theta", Tensor<double>({3}));
  try {
    grad_check(loss, grads, params, 1e-3);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("theta") != std::string::npos);
  }
}

TEST_CASE("grad_check rejects non-positive eps") {
  auto params = quadratic_params();
  ParamSet<double> grads;
  grads.add("theta", Tensor<double>({3}));
  CHECK_THROWS_AS(grad_check([](const ParamSet<double>&) { return 0.0; }, grads, params, 0.0),
                  DomainError);
}
