#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "prl/autograd.hpp"
#include "prl/gradcheck.hpp"
#include "prl/ops.hpp"
#include "prl/weights_io.hpp"

using namespace prl;
using oracle::random_tensor;

namespace {

Tensor eye(int n) {
  Tensor t(Shape{n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1;
  return t;
}

}  // namespace

TEST_CASE("shape basics") {
  CHECK(Shape{2, 3, 4}.numel() == 24);
  CHECK(Shape{}.numel() == 1);
  CHECK_THROWS_AS(Shape({2, 0}), ShapeError);
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, std::vector<float>(3)), ShapeError);
  CHECK(Shape{1, 2} != Shape{2, 1});
}

TEST_CASE("conv2d") {
  Rng rng(1);
  SUBCASE("1x1 identity kernel") {
    const Tensor x = random_tensor<float>(Shape{2, 3, 5, 5}, rng);
    Tensor w(Shape{3, 3, 1, 1});
    for (int c = 0; c < 3; ++c) w.at(c, c, 0, 0) = 1;
    CHECK(bitwise_equal(ops::conv2d(x, w, Tensor(Shape{3}), 1, 0), x));
  }
  SUBCASE("constant field") {
    const int cin = 4;
    const Tensor x(Shape{1, cin, 6, 6}, 0.5f);
    const Tensor w(Shape{2, cin, 3, 3}, 1.0f);
    const Tensor y = ops::conv2d(x, w, Tensor{}, 1, 0);
    CHECK(y.shape() == Shape{1, 2, 4, 4});
    for (float v : y.data()) CHECK(v == doctest::Approx(9 * 0.5 * cin));
  }
  SUBCASE("loop oracle") {
    const Tensor x = random_tensor<float>(Shape{2, 5, 7, 7}, rng);
    const Tensor w = random_tensor<float>(Shape{4, 5, 3, 3}, rng);
    const Tensor b = random_tensor<float>(Shape{4}, rng);
    CHECK(max_abs_diff(ops::conv2d(x, w, b, 1, 0), oracle::conv2d(x, w, b, 1, 0)) <= 1e-5f);
    CHECK(max_abs_diff(ops::conv2d(x, w, b, 2, 1), oracle::conv2d(x, w, b, 2, 1)) <= 1e-5f);
    const Tensor w1 = random_tensor<float>(Shape{3, 5, 1, 1}, rng);
    CHECK(max_abs_diff(ops::conv2d(x, w1, Tensor{}, 1, 0), oracle::conv2d(x, w1, Tensor{}, 1, 0)) <=
          1e-5f);
  }
  SUBCASE("channel mismatch names both shapes") {
    const Tensor x(Shape{1, 3, 5, 5});
    const Tensor w(Shape{2, 4, 3, 3});
    try {
      ops::conv2d(x, w, Tensor{}, 1, 0);
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[1,3,5,5]") != std::string::npos);
      CHECK(msg.find("[2,4,3,3]") != std::string::npos);
    }
  }
  CHECK(ops::conv_out_extent(127, 11, 2, 0) == 59);
}

TEST_CASE("batch_norm") {
  Rng rng(2);
  const Tensor x = random_tensor<float>(Shape{2, 3, 4, 4}, rng);
  Tensor gamma(Shape{3}, 1.0f), beta(Shape{3}, 0.0f);
  SUBCASE("identity") {
    Tensor mean(Shape{3}, 0.0f), var(Shape{3}, 1.0f);
    const Tensor y = ops::batch_norm(x, gamma, beta, mean, var, {1e-12, 0.1, false});
    CHECK(max_abs_diff(y, x) <= 1e-6f);
  }
  SUBCASE("centering") {
    Tensor c(Shape{1, 3, 4, 4}, 2.5f);
    Tensor mean(Shape{3}, 2.5f), var(Shape{3}, 1.0f);
    const Tensor y = ops::batch_norm(c, gamma, beta, mean, var, {});
    for (float v : y.data()) CHECK(v == 0.0f);
  }
  SUBCASE("formula oracle, inference and training") {
    Tensor g = random_tensor<float>(Shape{3}, rng, 0.5, 1.5), b = random_tensor<float>(Shape{3}, rng);
    Tensor mean = random_tensor<float>(Shape{3}, rng), var = random_tensor<float>(Shape{3}, rng, 0.5, 2);
    const Tensor y = ops::batch_norm(x, g, b, mean, var, {1e-5, 0.1, false});
    double worst = 0;
    for (int n = 0; n < 2; ++n)
      for (int c = 0; c < 3; ++c)
        for (int h = 0; h < 4; ++h)
          for (int w = 0; w < 4; ++w) {
            const double ref = (x.at(n, c, h, w) - mean[c]) / std::sqrt(var[c] + 1e-5) * g[c] + b[c];
            worst = std::max(worst, std::abs(ref - y.at(n, c, h, w)));
          }
    CHECK(worst <= 1e-5);

    const Tensor mean0 = mean, var0 = var;
    const Tensor yt = ops::batch_norm(x, g, b, mean, var, {1e-5, 0.1, true});
    worst = 0;
    for (int c = 0; c < 3; ++c) {
      double m = 0, v = 0;
      for (int n = 0; n < 2; ++n)
        for (int h = 0; h < 4; ++h)
          for (int w = 0; w < 4; ++w) m += x.at(n, c, h, w);
      m /= 32;
      for (int n = 0; n < 2; ++n)
        for (int h = 0; h < 4; ++h)
          for (int w = 0; w < 4; ++w) v += (x.at(n, c, h, w) - m) * (x.at(n, c, h, w) - m);
      for (int n = 0; n < 2; ++n)
        for (int h = 0; h < 4; ++h)
          for (int w = 0; w < 4; ++w) {
            const double ref = (x.at(n, c, h, w) - m) / std::sqrt(v / 32 + 1e-5) * g[c] + b[c];
            worst = std::max(worst, std::abs(ref - yt.at(n, c, h, w)));
          }
      CHECK(mean[c] == doctest::Approx(0.9 * mean0[c] + 0.1 * m).epsilon(1e-5));
      CHECK(var[c] == doctest::Approx(0.9 * var0[c] + 0.1 * v / 31).epsilon(1e-5));
    }
    CHECK(worst <= 1e-5);
  }
  SUBCASE("channel mismatch") {
    Tensor mean(Shape{4}), var(Shape{4}, 1.0f), g4(Shape{4}, 1.0f), b4(Shape{4});
    CHECK_THROWS_AS(ops::batch_norm(x, g4, b4, mean, var, {}), ShapeError);
  }
}

TEST_CASE("pool") {
  Rng rng(3);
  SUBCASE("adaptive identity") {
    const Tensor x = random_tensor<float>(Shape{1, 2, 5, 7}, rng);
    CHECK(bitwise_equal(ops::pool(x, ops::PoolSpec::adaptive_max(5, 7)), x));
  }
  SUBCASE("max of four") {
    const Tensor x(Shape{1, 1, 2, 2}, {1, 2, 3, 4});
    const Tensor y = ops::pool(x, ops::PoolSpec::max_fixed(2, 2));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 4);
  }
  SUBCASE("window enumeration oracle") {
    for (auto [in, out] : {std::pair{29, 12}, std::pair{69, 32}, std::pair{7, 3}}) {
      const Tensor x = random_tensor<float>(Shape{1, 3, in, in}, rng);
      CHECK(bitwise_equal(ops::pool(x, ops::PoolSpec::adaptive_max(out, out)),
                          oracle::adaptive_max(x, out, out)));
    }
  }
  SUBCASE("fixed 3x3 stride 2") {
    const Tensor x = random_tensor<float>(Shape{1, 1, 59, 59}, rng);
    CHECK(ops::pool(x, ops::PoolSpec::max_fixed(3, 2)).shape() == Shape{1, 1, 29, 29});
  }
  CHECK_THROWS_AS(ops::pool(Tensor(Shape{1, 1, 4, 4}), ops::PoolSpec::adaptive_max(0, 2)), ShapeError);
}

TEST_CASE("relu") {
  const Tensor neg(Shape{3}, {-1, -2, -3});
  const Tensor rn = ops::relu(neg);
  for (float v : rn.data()) CHECK(v == 0);
  const Tensor pos(Shape{3}, {1, 2, 3});
  CHECK(bitwise_equal(ops::relu(pos), pos));
  const Tensor y = ops::relu(Tensor(Shape{3}, {-1, 0, 2}));
  CHECK(std::vector<float>(y.vec().begin(), y.vec().end()) == std::vector<float>{0, 0, 2});
}

TEST_CASE("bilinear_resize") {
  Rng rng(4);
  const Tensor x = random_tensor<float>(Shape{1, 2, 6, 6}, rng);
  CHECK(bitwise_equal(ops::bilinear_resize(x, 6, 6), x));
  const Tensor ramp(Shape{1, 1, 1, 4}, {0, 1, 2, 3});
  const Tensor up = ops::bilinear_resize(ramp, 1, 7);
  for (int j = 0; j < 7; ++j) CHECK(up[static_cast<std::size_t>(j)] == doctest::Approx(0.5 * j));
  CHECK(max_abs_diff(ops::bilinear_resize(x, 8, 8), oracle::bilinear(x, 8, 8)) <= 1e-5f);
  CHECK(max_abs_diff(ops::bilinear_resize(x, 4, 3), oracle::bilinear(x, 4, 3)) <= 1e-5f);
  // corners map exactly
  const Tensor z = ops::bilinear_resize(x, 11, 9);
  CHECK(z.at(0, 1, 0, 0) == x.at(0, 1, 0, 0));
  CHECK(z.at(0, 1, 10, 8) == x.at(0, 1, 5, 5));
  // degenerate extent samples the center
  const Tensor c = ops::bilinear_resize(Tensor(Shape{1, 1, 3, 3}, {0, 0, 0, 0, 5, 0, 0, 0, 0}), 1, 1);
  CHECK(c[0] == 5);
}

TEST_CASE("linear and matmul") {
  Rng rng(5);
  const Tensor x = random_tensor<float>(Shape{3, 4}, rng);
  CHECK(bitwise_equal(ops::linear(x, eye(4), Tensor(Shape{4})), x));
  const Tensor b = random_tensor<float>(Shape{2}, rng);
  const Tensor z = ops::linear(x, Tensor(Shape{4, 2}), b);
  for (int i = 0; i < 3; ++i) {
    CHECK(z.at(i, 0) == b[0]);
    CHECK(z.at(i, 1) == b[1]);
  }
  const Tensor w = random_tensor<float>(Shape{4, 2}, rng);
  CHECK(max_abs_diff(ops::linear(x, w, b), oracle::linear(x, w, b)) <= 1e-5f);
  const Tensor a = random_tensor<float>(Shape{5, 3}, rng);
  CHECK(max_abs_diff(ops::matmul(a, x, false, false), oracle::matmul(a, x)) <= 1e-5f);
  CHECK(max_abs_diff(ops::matmul(x, x, true, false), oracle::matmul(oracle::transpose(x), x)) <= 1e-5f);
  CHECK(max_abs_diff(ops::matmul(a, a, false, true), oracle::matmul(a, oracle::transpose(a))) <= 1e-5f);
  CHECK_THROWS_AS(ops::linear(x, Tensor(Shape{5, 2}), Tensor{}), ShapeError);
}

TEST_CASE("softmax_rows") {
  const Tensor u(Shape{2, 4}, 0.3f);
  const Tensor su = ops::softmax_rows(u);
  for (float v : su.data()) CHECK(v == doctest::Approx(0.25));
  Rng rng(6);
  const Tensor x = random_tensor<float>(Shape{3, 5}, rng, -3, 3);
  Tensor shifted = x;
  for (int j = 0; j < 5; ++j) shifted.at(1, j) += 7.0f;
  const Tensor a = ops::softmax_rows(x), b = ops::softmax_rows(shifted);
  for (int j = 0; j < 5; ++j) CHECK(a.at(1, j) == doctest::Approx(b.at(1, j)).epsilon(1e-6));
  const Tensor big = ops::softmax_rows(Tensor(Shape{1, 2}, {1000, 1000}));
  CHECK(big[0] == 0.5f);
  CHECK(big[1] == 0.5f);
  const Tensor huge = ops::softmax_rows(random_tensor<float>(Shape{4, 9}, rng, -1000, 1000));
  for (int i = 0; i < 4; ++i) {
    double s = 0;
    for (int j = 0; j < 9; ++j) {
      CHECK(huge.at(i, j) >= 0);
      s += huge.at(i, j);
    }
    CHECK(std::abs(s - 1) <= 1e-5);
  }
}

TEST_CASE("layer_norm") {
  Tensor g(Shape{6}, 1.0f), b(Shape{6}, 0.0f);
  const Tensor c = ops::layer_norm(Tensor(Shape{1, 6}, 3.0f), g, b, 1e-5);
  for (float v : c.data()) CHECK(v == 0.0f);
  // zero-mean unit-variance token shrinks by sqrt(1 / (1 + eps))
  const Tensor t(Shape{1, 6}, {1, -1, 1, -1, 1, -1});
  const Tensor y = ops::layer_norm(t, g, b, 1e-5);
  const double shrink = std::sqrt(1.0 / (1.0 + 1e-5));
  for (int j = 0; j < 6; ++j) {
    CHECK(std::abs(y[j] - t[j]) <= 1e-3);
    CHECK(y[j] == doctest::Approx(t[j] * shrink).epsilon(1e-6));
  }
  Rng rng(7);
  const Tensor x = random_tensor<float>(Shape{5, 6}, rng, -2, 2);
  const Tensor gr = random_tensor<float>(Shape{6}, rng), br = random_tensor<float>(Shape{6}, rng);
  CHECK(max_abs_diff(ops::layer_norm(x, gr, br, 1e-5), oracle::layer_norm(x, gr, br, 1e-5)) <= 1e-5f);
}

TEST_CASE("depthwise_xcorr") {
  Rng rng(8);
  const Tensor s = random_tensor<float>(Shape{1, 3, 7, 7}, rng);
  CHECK(bitwise_equal(ops::depthwise_xcorr(s, Tensor(Shape{1, 3, 1, 1}, 1.0f)), s));
  const Tensor y = ops::depthwise_xcorr(Tensor(Shape{1, 2, 26, 26}, 0.5f), Tensor(Shape{1, 2, 6, 6}, 2.0f));
  CHECK(y.shape() == Shape{1, 2, 21, 21});
  for (float v : y.data()) CHECK(v == doctest::Approx(0.5 * 2.0 * 36));
  CHECK_THROWS_AS(ops::depthwise_xcorr(Tensor(Shape{1, 2, 4, 4}), Tensor(Shape{1, 2, 5, 5})), ShapeError);
}

TEST_CASE("layout helpers") {
  Rng rng(9);
  const Tensor m = random_tensor<float>(Shape{1, 4, 3, 5}, rng);
  const Tensor tok = ops::map_to_tokens(m);
  CHECK(tok.shape() == Shape{15, 4});
  for (int t = 0; t < 15; ++t)
    for (int c = 0; c < 4; ++c) CHECK(tok.at(t, c) == m.at(0, c, t / 5, t % 5));
  CHECK(bitwise_equal(ops::tokens_to_map(tok, 3, 5), m));
  const Tensor a = ops::slice(m, 1, 0, 1), b = ops::slice(m, 1, 1, 4);
  CHECK(bitwise_equal(ops::concat<float>({&a, &b}, 1), m));
}

TEST_CASE("finite outputs over random shapes") {
  Rng rng(10);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = rng.uniform_int(1, 2), c = rng.uniform_int(1, 3);
    const int h = rng.uniform_int(3, 7), w = rng.uniform_int(3, 7);
    const double mag = trial % 10 == 0 ? 1e3 : 3;
    const Tensor x = random_tensor<float>(Shape{n, c, h, w}, rng, -mag, mag);
    const int k = rng.uniform_int(1, 3);
    const Tensor wt = random_tensor<float>(Shape{2, c, k, k}, rng);
    REQUIRE(all_finite(ops::conv2d(x, wt, Tensor(Shape{2}), 1, rng.uniform_int(0, 1))));
    Tensor mean(Shape{c}), var(Shape{c}, 1.0f);
    REQUIRE(all_finite(ops::batch_norm(x, Tensor(Shape{c}, 1.0f), Tensor(Shape{c}), mean, var,
                                       {1e-5, 0.1, trial % 2 == 0})));
    REQUIRE(all_finite(ops::pool(x, ops::PoolSpec::adaptive_max(rng.uniform_int(1, h), rng.uniform_int(1, w)))));
    REQUIRE(all_finite(ops::pool(x, ops::PoolSpec::max_fixed(2, 1))));
    REQUIRE(all_finite(ops::relu(x)));
    REQUIRE(all_finite(ops::bilinear_resize(x, rng.uniform_int(1, 9), rng.uniform_int(1, 9))));
    const Tensor rows = x.reshaped(Shape{n * c * h, w});
    REQUIRE(all_finite(ops::softmax_rows(rows)));
    REQUIRE(all_finite(ops::layer_norm(rows, Tensor(Shape{w}, 1.0f), Tensor(Shape{w}), 1e-5)));
    REQUIRE(all_finite(ops::linear(rows, random_tensor<float>(Shape{w, 3}, rng), Tensor(Shape{3}))));
    REQUIRE(all_finite(ops::depthwise_xcorr(x, ops::slice(ops::slice(x, 2, 0, 2), 3, 0, 2))));
  }
}

TEST_CASE("value_and_grad") {
  SUBCASE("sum of squares") {
    Parameter<float> p("x", Tensor(Shape{4}, {1, -2, 3, 0.5f}));
    Graph<float> g;
    Var<float> x = g.param(p);
    const auto grads = value_and_grad(g, ag::sum(ag::mul(x, x)), {&p});
    for (std::size_t i = 0; i < 4; ++i) CHECK(grads[0][i] == 2 * p.value[i]);
  }
  SUBCASE("relu flat region") {
    Parameter<float> p("x", Tensor(Shape{2}, {-1.5f, 2.0f}));
    Graph<float> g;
    const auto grads = value_and_grad(g, ag::sum(ag::relu(g.param(p))), {&p});
    CHECK(grads[0][0] == 0);
    CHECK(grads[0][1] == 1);
  }
  SUBCASE("unreached parameter gets zeros") {
    Parameter<float> p("p", Tensor(Shape{2}, 1.0f)), q("q", Tensor(Shape{3}, 1.0f));
    Graph<float> g;
    const auto grads = value_and_grad(g, ag::sum(g.param(p)), {&p, &q});
    CHECK(grads[1].shape() == Shape{3});
    for (float v : grads[1].data()) CHECK(v == 0);
  }
  SUBCASE("non-scalar loss rejected") {
    Parameter<float> p("p", Tensor(Shape{2}, 1.0f));
    Graph<float> g;
    CHECK_THROWS_AS(value_and_grad(g, g.param(p), {&p}), ShapeError);
  }
  SUBCASE("replay is bitwise deterministic") {
    Rng rng(11);
    Parameter<float> w("w", random_tensor<float>(Shape{3, 2, 3, 3}, rng));
    const Tensor input = random_tensor<float>(Shape{1, 2, 6, 6}, rng);
    Graph<float> g;
    Var<float> y = ag::softmax_rows(ag::reshape(
        ag::conv2d(g.constant(input), g.param(w), Var<float>{}, 1, 0), Shape{3, 16}));
    Var<float> loss = ag::weighted_sum(y, random_tensor<float>(Shape{3, 16}, rng));
    g.backward(loss);
    const Tensor first = g.grad(g.param(w).id());
    g.backward(loss);
    CHECK(bitwise_equal(first, g.grad(g.param(w).id())));
  }
}

TEST_CASE("grad_check examples") {
  Rng rng(12);
  SUBCASE("affine map is exact") {
    const BasicTensor<double> w = random_tensor<double>(Shape{4, 3}, rng);
    const BasicTensor<double> b = random_tensor<double>(Shape{3}, rng);
    const auto r = grad_check<double>(
        [&](Graph<double>& g, Var<double> x) { return ag::linear(x, g.constant(w), g.constant(b)); },
        random_tensor<double>(Shape{2, 4}, rng), 1e-3);
    CHECK(r.max_rel_error <= 1e-6);
  }
  SUBCASE("softmax 4x5") {
    const auto r = grad_check<double>([](Graph<double>&, Var<double> x) { return ag::softmax_rows(x); },
                                      random_tensor<double>(Shape{4, 5}, rng), 1e-3);
    CHECK(r.max_rel_error <= 1e-3);
  }
  SUBCASE("relu away from the kink") {
    BasicTensor<double> x = random_tensor<double>(Shape{20}, rng);
    for (auto& v : x.data()) v = v < 0 ? v - 0.02 : v + 0.02;
    const auto r = grad_check<double>([](Graph<double>&, Var<double> v) { return ag::relu(v); }, x, 1e-3);
    CHECK(r.max_rel_error <= 1e-4);
  }
  CHECK(relative_error(0, 0) == 0);
  CHECK(relative_error(1, 0.5) == doctest::Approx(0.5));
}

TEST_CASE("PRLW container") {
  Rng rng(13);
  std::vector<NamedTensor> entries{{"a.weight", random_tensor<float>(Shape{2, 3, 1, 1}, rng)},
                                   {"b", random_tensor<float>(Shape{5}, rng)},
                                   {"s", Tensor::scalar(-0.0f)}};
  const auto bytes = encode_weights(entries);
  CHECK(bytes[0] == 'P');
  CHECK(bytes[3] == 'W');
  const auto back = decode_weights(bytes);
  REQUIRE(back.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back[i].name == entries[i].name);
    CHECK(bitwise_equal(back[i].value, entries[i].value));
  }
  CHECK(encode_weights(back) == bytes);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_weights(truncated), IoError);
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK_THROWS_AS(decode_weights(trailing), IoError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_weights(bad_magic), IoError);
  entries.push_back(entries[0]);
  CHECK_THROWS(encode_weights(entries));
}
