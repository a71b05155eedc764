#include <catch_amalgamated.hpp>

#include "gradcheck.hpp"
#include "prosody/autodiff.hpp"

using namespace prosody;
using prosody::testing::check_gradients;
using prosody::testing::probe;

namespace {

Parameter<double>& rand_param(ParameterSet<double>& ps, const std::string& name, int r, int c, Rng& rng,
                              double stddev = 1.0) {
  return ps.add(name, random_normal<double>(r, c, stddev, rng));
}

constexpr double kTol = 1e-6;

}  // namespace

TEST_CASE("elementwise and matrix ops match finite differences", "[autodiff]") {
  Rng rng(1);
  ParameterSet<double> ps;
  auto& a = rand_param(ps, "a", 4, 3, rng);
  auto& b = rand_param(ps, "b", 3, 5, rng);
  auto& c = rand_param(ps, "c", 4, 3, rng);
  auto& row = rand_param(ps, "row", 1, 3, rng);
  auto& d = rand_param(ps, "d", 6, 3, rng);

  auto res = check_gradients(ps, [&](Tape<double>& t) {
    auto va = t.parameter(a), vb = t.parameter(b), vc = t.parameter(c), vr = t.parameter(row), vd = t.parameter(d);
    auto x = add(mul(va, vc), sub(va, vc));
    x = mul_row(add_row(x, vr), vr);
    x = gelu(x);
    x = add(tanh(x), sigmoid(scale(x, 0.5)));
    x = add_scalar(x, 0.3);
    auto y = matmul(x, vb);
    auto z = matmul_nt(x, vd);
    auto n = l2_normalize_rows(layer_norm(va));
    return add(add(probe(y, 1), probe(z, 2)), add(probe(n, 3), probe(relu(vd), 4)));
  });
  INFO(res.worst_parameter);
  CHECK(res.max_relative_error < kTol);
}

TEST_CASE("indexing ops match finite differences", "[autodiff]") {
  Rng rng(2);
  ParameterSet<double> ps;
  auto& a = rand_param(ps, "a", 7, 4, rng);
  Segments seg({3, 4});
  auto res = check_gradients(ps, [&](Tape<double>& t) {
    auto va = t.parameter(a);
    auto g = gather_rows(va, {0, 0, 6, 2});
    auto m = segment_mean(va, {0, 0, 1, 2, 2, 2, 1}, 3);
    auto cc = concat_cols<double>({va, slice_cols(va, 1, 2)});
    auto col = im2col(va, seg, 3, 1);
    auto col2 = im2col(va, seg, 3, 2);
    return add(add(probe(g, 1), probe(m, 2)), add(probe(cc, 3), add(probe(col, 4), probe(col2, 5))));
  });
  INFO(res.worst_parameter);
  CHECK(res.max_relative_error < kTol);
}

TEST_CASE("im2col pads with zeros at segment boundaries", "[autodiff]") {
  Tape<double> t(false);
  MatrixD x(4, 1);
  x << 1, 2, 3, 4;
  auto out = im2col(t.constant(x), Segments({2, 2}), 3, 1).value();
  MatrixD expected(4, 3);
  expected << 0, 1, 2,  //
      1, 2, 0,          //
      0, 3, 4,          //
      3, 4, 0;
  CHECK(out == expected);
}

TEST_CASE("relative attention matches finite differences", "[autodiff]") {
  Rng rng(3);
  ParameterSet<double> ps;
  const int d = 8, clip = 2;
  auto& q = rand_param(ps, "q", 9, d, rng);
  auto& k = rand_param(ps, "k", 9, d, rng);
  auto& v = rand_param(ps, "v", 9, d, rng);
  auto& r = rand_param(ps, "r", 2 * clip + 1, d, rng);
  Segments seg({5, 1, 3});
  auto res = check_gradients(ps, [&](Tape<double>& t) {
    return probe(relative_attention(t.parameter(q), t.parameter(k), t.parameter(v), t.parameter(r), seg, 2, clip));
  });
  INFO(res.worst_parameter);
  CHECK(res.max_relative_error < kTol);
}

TEST_CASE("attention rows are convex combinations confined to their segment", "[autodiff]") {
  Rng rng(4);
  Tape<double> t(false);
  MatrixD q = random_normal<double>(5, 4, 1.0, rng);
  MatrixD v = MatrixD::Zero(5, 4);
  v.topRows(2).setOnes();
  auto out = relative_attention(t.constant(q), t.constant(q), t.constant(v), t.constant(MatrixD::Zero(3, 4)),
                                Segments({2, 3}), 2, 1)
                 .value();
  CHECK(out.topRows(2).isApprox(MatrixD::Ones(2, 4)));
  CHECK(out.bottomRows(3).isZero());
}

TEST_CASE("attentive statistics pooling matches finite differences", "[autodiff]") {
  Rng rng(5);
  ParameterSet<double> ps;
  auto& h = rand_param(ps, "h", 8, 3, rng);
  auto& e = rand_param(ps, "e", 8, 3, rng);
  Segments seg({5, 3});
  auto res = check_gradients(ps, [&](Tape<double>& t) {
    return probe(attentive_stats_pool(t.parameter(h), t.parameter(e), seg));
  });
  INFO(res.worst_parameter);
  CHECK(res.max_relative_error < kTol);
}

TEST_CASE("losses match finite differences", "[autodiff]") {
  Rng rng(6);
  ParameterSet<double> ps;
  auto& s = rand_param(ps, "s", 5, 5, rng, 0.5);
  auto& scale_p = ps.add("scale", MatrixD::Constant(1, 1, 2.659));
  auto& bias_p = ps.add("bias", MatrixD::Constant(1, 1, -1.5));
  auto& logits = rand_param(ps, "logits", 6, 7, rng);
  auto res = check_gradients(ps, [&](Tape<double>& t) {
    auto vs = t.parameter(s);
    auto l1 = sigmoid_pair_loss(vs, t.parameter(scale_p), t.parameter(bias_p));
    auto l2 = symmetric_softmax_loss(vs, t.parameter(scale_p));
    auto l3 = masked_cross_entropy(t.parameter(logits), {1, -1, 6, 0, -100, 3});
    return add(add(l1, l2), l3);
  });
  INFO(res.worst_parameter);
  CHECK(res.max_relative_error < kTol);
}

TEST_CASE("backward accumulates into parameters across uses", "[autodiff]") {
  ParameterSet<double> ps;
  auto& a = ps.add("a", MatrixD::Constant(1, 1, 3.0));
  Tape<double> t;
  auto va = t.parameter(a);
  auto loss = mul(va, va);
  t.backward(loss);
  CHECK(a.grad(0, 0) == Catch::Approx(6.0));
}

TEST_CASE("dropout is the identity at p = 0 and preserves expectation", "[autodiff]") {
  Rng rng(9);
  Tape<double> t(false);
  MatrixD ones = MatrixD::Ones(200, 50);
  auto x = t.constant(ones);
  CHECK(dropout(x, 0.0, rng).id == x.id);
  const double mean = dropout(x, 0.1, rng).value().mean();
  CHECK(mean == Catch::Approx(1.0).margin(0.02));
}

TEST_CASE("adam weight decay is decoupled and skips excluded parameters", "[autodiff]") {
  ParameterSet<double> ps;
  auto& w = ps.add("w", MatrixD::Constant(1, 2, 2.0));
  auto& s = ps.add("s", MatrixD::Constant(1, 1, 2.0));
  AdamOptions o;
  o.learning_rate = 0.1;
  o.weight_decay = 0.5;
  Adam<double> opt(ps.all(), o);
  opt.exclude_from_decay(s);
  opt.set_lr_scale(s, 3.0);
  ps.zero_grad();
  opt.step();
  // zero gradient: only the decay term moves w, and s stays put
  CHECK(w.value(0, 0) == Catch::Approx(2.0 * (1 - 0.1 * 0.5)));
  CHECK(w.value(0, 1) == w.value(0, 0));
  CHECK(s.value(0, 0) == 2.0);

  ParameterSet<double> other;
  auto& stray = other.add("x", MatrixD::Zero(1, 1));
  CHECK_THROWS_AS(opt.exclude_from_decay(stray), std::invalid_argument);
}
