#include <algorithm>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "prl/head.hpp"
#include "prl/hmg.hpp"
#include "prl/train.hpp"

using namespace prl;
using oracle::random_tensor;

namespace {

HmgConfig small_hmg(int tier, int tokens, int blocks = 1) {
  HmgConfig c;
  c.in_channels = 6;
  c.d_model = 3 * tier;
  c.tier_dim = tier;
  c.ffn_hidden = 2 * c.d_model;
  c.attn_scale_dim = tier;
  c.tokens = tokens;
  c.num_blocks = blocks;
  return c;
}

Tensor permute_rows(const Tensor& x, const std::vector<int>& perm) {
  Tensor y(x.shape());
  for (int i = 0; i < x.dim(0); ++i)
    for (int j = 0; j < x.dim(1); ++j) y.at(i, j) = x.at(perm[static_cast<std::size_t>(i)], j);
  return y;
}

Tensor scaled(Tensor x, float s) {
  for (float& v : x.data()) v *= s;
  return x;
}

Tensor add(const Tensor& a, const Tensor& b) {
  Tensor y(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) y[i] = a[i] + b[i];
  return y;
}

// Step-by-step block on plain tensors, same operation order as the layer.
Tensor block_oracle(HmgBlock<float>& b, const Tensor& x, const HmgConfig& c) {
  auto lin = [](nn::Linear<float>& l, const Tensor& in) { return ops::linear(in, l.weight().value, l.bias().value); };
  const Tensor q = lin(b.qproj(), x), k = lin(b.kproj(), x), v = lin(b.vproj(), x);
  const int w = c.tier_dim;
  auto tier = [&](const Tensor& t, int i) { return ops::slice(t, 1, i * w, (i + 1) * w); };
  const float s = static_cast<float>(1.0 / std::sqrt(c.attn_scale_dim));
  auto attend = [&](int qi, int lo, int hi) {
    const Tensor kl = tier(k, lo), kh = tier(k, hi), vl = tier(v, lo), vh = tier(v, hi);
    const Tensor keys = ops::concat<float>({&kl, &kh}, 0), values = ops::concat<float>({&vl, &vh}, 0);
    return ops::matmul(ops::softmax_rows(scaled(ops::matmul(tier(q, qi), keys, false, true), s)), values);
  };
  const Tensor h34 = attend(1, 0, 1), h35 = attend(2, 0, 2), h45 = attend(2, 1, 2);
  const Tensor wc = ops::layer_norm(add(ops::concat<float>({&h34, &h35, &h45}, 1), x), b.ln1().gamma().value,
                                    b.ln1().beta().value, c.ln_eps);
  const Tensor ffn = lin(b.ffn2(), ops::relu(lin(b.ffn1(), wc)));
  return ops::layer_norm(add(ffn, wc), b.ln2().gamma().value, b.ln2().beta().value, c.ln_eps);
}

HeadOutputs flat_outputs(int grid, float reg_value) {
  HeadOutputs o{Tensor(Shape{1, grid, grid}, -8.0f), Tensor(Shape{4, grid, grid}, reg_value)};
  return o;
}

}  // namespace

TEST_CASE("depthwise correlation at the default geometry") {
  Rng rng(1);
  const Tensor s = random_tensor<float>(Shape{1, 4, 9, 9}, rng);
  CHECK(bitwise_equal(ops::depthwise_xcorr(s, Tensor(Shape{1, 4, 1, 1}, 1.0f)), s));
  for (auto [hs, ht] : {std::pair{30, 10}, std::pair{28, 8}, std::pair{26, 6}}) {
    CHECK(ops::depthwise_xcorr(Tensor(Shape{1, 2, hs, hs}), Tensor(Shape{1, 2, ht, ht})).shape() ==
          Shape{1, 2, 21, 21});
  }
  const Tensor r = ops::depthwise_xcorr(Tensor(Shape{1, 3, 26, 26}, 0.5f), Tensor(Shape{1, 3, 6, 6}, 2.0f));
  for (float v : r.data()) REQUIRE(v == doctest::Approx(0.5 * 2.0 * 36));
}

TEST_CASE("hierarchy attention matches the dense oracle") {
  Rng rng(2);
  double worst = 0, worst_row = 0;
  // 100 oracle instances, then 20 whose logits reach magnitude ~1e3 (row sums only)
  for (int trial = 0; trial < 120; ++trial) {
    const bool large = trial >= 100;
    const int t = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
    const double d = rng.uniform(0.5, 16);
    const double amp = large ? std::sqrt(2e3 * std::sqrt(d) / w) : 1.0;
    std::array<std::array<Tensor, 3>, 3> m;  // tier, (q,k,v)
    for (auto& tr : m)
      for (int j = 0; j < 3; ++j) tr[static_cast<std::size_t>(j)] = random_tensor<float>(Shape{t, w}, rng, -(j < 2 ? amp : 1), j < 2 ? amp : 1);
    Graph<float> g(false);
    auto tv = [&](int i) { return TierVars<float>{g.constant(m[i][0]), g.constant(m[i][1]), g.constant(m[i][2])}; };
    const auto h = hierarchy_cross_attention(tv(0), tv(1), tv(2), d);
    if (!large) {
      const Tensor e34 = oracle::attention(m[1][0], m[0][1], m[1][1], m[0][2], m[1][2], d);
      const Tensor e35 = oracle::attention(m[2][0], m[0][1], m[2][1], m[0][2], m[2][2], d);
      const Tensor e45 = oracle::attention(m[2][0], m[1][1], m[2][1], m[1][2], m[2][2], d);
      worst = std::max({worst, static_cast<double>(max_abs_diff(h.h34.value(), e34)),
                        static_cast<double>(max_abs_diff(h.h35.value(), e35)),
                        static_cast<double>(max_abs_diff(h.h45.value(), e45))});
    }
    for (const Var<float>* p : {&h.p34, &h.p35, &h.p45}) {
      CHECK(p->shape() == Shape{t, 2 * t});
      for (int i = 0; i < t; ++i) {
        double row = 0;
        for (int j = 0; j < 2 * t; ++j) {
          REQUIRE(std::isfinite(p->value().at(i, j)));
          row += p->value().at(i, j);
        }
        worst_row = std::max(worst_row, std::abs(row - 1.0));
      }
    }
  }
  CHECK(worst <= 1e-5);
  CHECK(worst_row <= 1e-5);
}

TEST_CASE("identical keys give uniform attention") {
  Rng rng(3);
  const int t = 5, w = 3;
  const Tensor key = random_tensor<float>(Shape{1, w}, rng);
  Tensor k(Shape{t, w});
  for (int i = 0; i < t; ++i)
    for (int j = 0; j < w; ++j) k.at(i, j) = key.at(0, j);
  const Tensor q = random_tensor<float>(Shape{t, w}, rng);
  const Tensor v3 = random_tensor<float>(Shape{t, w}, rng), v4 = random_tensor<float>(Shape{t, w}, rng);
  Graph<float> g(false);
  const TierVars<float> m3{g.constant(q), g.constant(k), g.constant(v3)}, m4{g.constant(q), g.constant(k), g.constant(v4)};
  const auto h = hierarchy_cross_attention(m3, m4, m4, 3.0);
  for (float p : h.p34.value().data()) CHECK(p == doctest::Approx(1.0 / (2 * t)).epsilon(1e-6));
  for (int j = 0; j < w; ++j) {
    double mean = 0;
    for (int i = 0; i < t; ++i) mean += v3.at(i, j) + v4.at(i, j);
    mean /= 2 * t;
    for (int i = 0; i < t; ++i) CHECK(h.h34.value().at(i, j) == doctest::Approx(mean).epsilon(1e-5));
  }
}

TEST_CASE("attention is token-permutation equivariant") {
  Rng rng(4);
  const int t = 7, w = 4;
  std::array<std::array<Tensor, 3>, 3> m;
  for (auto& tr : m)
    for (auto& x : tr) x = random_tensor<float>(Shape{t, w}, rng);
  std::vector<int> perm(t);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[0], perm[3]);
  Graph<float> g(false);
  auto tv = [&](int i, bool p) {
    auto c = [&](const Tensor& x) { return g.constant(p ? permute_rows(x, perm) : x); };
    return TierVars<float>{c(m[i][0]), c(m[i][1]), c(m[i][2])};
  };
  const auto a = hierarchy_cross_attention(tv(0, false), tv(1, false), tv(2, false), 4.0);
  const auto b = hierarchy_cross_attention(tv(0, true), tv(1, true), tv(2, true), 4.0);
  CHECK(max_abs_diff(permute_rows(a.h34.value(), perm), b.h34.value()) <= 1e-6f);
  CHECK(max_abs_diff(permute_rows(a.h35.value(), perm), b.h35.value()) <= 1e-6f);
  CHECK(max_abs_diff(permute_rows(a.h45.value(), perm), b.h45.value()) <= 1e-6f);
}

TEST_CASE("permuting correlation cells permutes the block output with zero positional embedding") {
  Rng rng(5);
  HmgConfig c = small_hmg(4, 9, 2);
  Hmg<float> hmg(c, rng);
  hmg.posembed().value.fill(0.0f);
  std::array<Tensor, 3> maps;
  for (auto& m : maps) m = random_tensor<float>(Shape{1, 2, 3, 3}, rng);
  // transpose the 3x3 grid: token (i,j) -> (j,i)
  std::vector<int> perm(9);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) perm[static_cast<std::size_t>(i * 3 + j)] = j * 3 + i;
  std::array<Tensor, 3> moved;
  for (int k = 0; k < 3; ++k) {
    moved[static_cast<std::size_t>(k)] = Tensor(maps[0].shape());
    for (int ch = 0; ch < 2; ++ch)
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) moved[k].at(0, ch, i, j) = maps[k].at(0, ch, j, i);
  }
  Graph<float> g(false);
  auto run = [&](const std::array<Tensor, 3>& ms) {
    return hmg.forward(g, {g.constant(ms[0]), g.constant(ms[1]), g.constant(ms[2])}).value();
  };
  CHECK(max_abs_diff(permute_rows(run(maps), perm), run(moved)) <= 1e-5f);
}

TEST_CASE("tier split") {
  Rng rng(6);
  const HmgConfig c = small_hmg(4, 5);
  HmgBlock<float> block(0, c, rng);
  const Tensor x = random_tensor<float>(Shape{5, 12}, rng);

  SUBCASE("re-concatenated tiers reproduce the projections bitwise") {
    Graph<float> g(false);
    const auto s = block.tier_split(g, g.constant(x));
    for (const auto& [hat, pick] : {std::pair{s.qhat, 0}, std::pair{s.khat, 1}, std::pair{s.vhat, 2}}) {
      auto part = [&](int i) {
        const TierVars<float>& tv = s.tiers[static_cast<std::size_t>(i)];
        return pick == 0 ? tv.q.value() : pick == 1 ? tv.k.value() : tv.v.value();
      };
      const Tensor a = part(0), b = part(1), d = part(2);
      CHECK(bitwise_equal(ops::concat<float>({&a, &b, &d}, 1), hat.value()));
    }
  }
  SUBCASE("identity projections hand tier 3 the first columns") {
    for (nn::Linear<float>* l : {&block.qproj(), &block.kproj(), &block.vproj()}) {
      l->weight().value.fill(0.0f);
      for (int i = 0; i < 12; ++i) l->weight().value.at(i, i) = 1.0f;
      l->bias().value.fill(0.0f);
    }
    Tensor labeled(Shape{5, 12});
    for (int i = 0; i < 5; ++i)
      for (int j = 0; j < 12; ++j) labeled.at(i, j) = static_cast<float>(j);
    Graph<float> g(false);
    const auto s = block.tier_split(g, g.constant(labeled));
    for (int tier = 0; tier < 3; ++tier)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 4; ++j) CHECK(s.tiers[static_cast<std::size_t>(tier)].q.value().at(i, j) == 4 * tier + j);
  }
  SUBCASE("projections match the loop oracle") {
    Graph<float> g(false);
    const auto s = block.tier_split(g, g.constant(x));
    CHECK(max_abs_diff(s.qhat.value(), oracle::linear(x, block.qproj().weight().value, block.qproj().bias().value)) <= 1e-5f);
    CHECK(max_abs_diff(s.vhat.value(), oracle::linear(x, block.vproj().weight().value, block.vproj().bias().value)) <= 1e-5f);
  }
  SUBCASE("wrong width rejected") {
    Graph<float> g(false);
    CHECK_THROWS_AS(block.tier_split(g, g.constant(Tensor(Shape{5, 11}))), ShapeError);
  }
}

TEST_CASE("hmg block") {
  Rng rng(7);
  const HmgConfig c = small_hmg(4, 6);
  HmgBlock<float> block(0, c, rng);
  const Tensor x = random_tensor<float>(Shape{6, 12}, rng);

  SUBCASE("matches the primitive composition bitwise") {
    Graph<float> g(false);
    CHECK(bitwise_equal(block.forward(g, g.constant(x)).value(), block_oracle(block, x, c)));
  }
  SUBCASE("shape preserved for any token count") {
    for (int t : {1, 2, 9, 17}) {
      Graph<float> g(false);
      CHECK(block.forward(g, g.constant(random_tensor<float>(Shape{t, 12}, rng))).shape() == Shape{t, 12});
    }
  }
  SUBCASE("zero FFN leaves layer_norm of W_c") {
    for (nn::Linear<float>* l : {&block.ffn1(), &block.ffn2()}) {
      l->weight().value.fill(0.0f);
      l->bias().value.fill(0.0f);
    }
    Graph<float> g(false);
    TokenBundle<float> bundle;
    const Tensor xo = block.forward(g, g.constant(x), &bundle).value();
    const Tensor expect = ops::layer_norm(bundle.wc.value(), block.ln2().gamma().value, block.ln2().beta().value, c.ln_eps);
    CHECK(bitwise_equal(xo, expect));
  }
}

TEST_CASE("tokenize and hmg forward") {
  Rng rng(8);
  SUBCASE("zero maps, embedding and bias give zero tokens") {
    HmgConfig c = small_hmg(4, 9, 0);
    Hmg<float> hmg(c, rng);
    hmg.posembed().value.fill(0.0f);
    hmg.embed().bias().value.fill(0.0f);
    Graph<float> g(false);
    const Tensor z(Shape{1, 2, 3, 3});
    const Tensor x = hmg.tokenize(g, {g.constant(z), g.constant(z), g.constant(z)}).value();
    for (float v : x.data()) CHECK(v == 0.0f);
  }
  SUBCASE("token t is location (t div W, t mod W)") {
    const Tensor m = random_tensor<float>(Shape{1, 3, 4, 5}, rng);
    const Tensor t = ops::map_to_tokens(m);
    CHECK(t.shape() == Shape{20, 3});
    for (int k = 0; k < 20; ++k)
      for (int c = 0; c < 3; ++c) CHECK(t.at(k, c) == m.at(0, c, k / 5, k % 5));
  }
  SUBCASE("zero blocks return the tokens") {
    HmgConfig c = small_hmg(4, 9, 0);
    Hmg<float> hmg(c, rng);
    std::array<Tensor, 3> ms;
    for (auto& m : ms) m = random_tensor<float>(Shape{1, 2, 3, 3}, rng);
    Graph<float> g(false);
    const CorrelationVars<float> cv{g.constant(ms[0]), g.constant(ms[1]), g.constant(ms[2])};
    CHECK(bitwise_equal(hmg.forward(g, cv).value(), hmg.tokenize(g, cv).value()));
  }
  SUBCASE("unequal extents rejected") {
    Hmg<float> hmg(small_hmg(4, 9), rng);
    Graph<float> g(false);
    CHECK_THROWS_AS(hmg.tokenize(g, {g.constant(Tensor(Shape{1, 2, 3, 3})), g.constant(Tensor(Shape{1, 2, 4, 4})),
                                     g.constant(Tensor(Shape{1, 2, 3, 3}))}),
                    ShapeError);
  }
  SUBCASE("default geometry and width") {
    HmgConfig c;
    Hmg<float> hmg(c, rng);
    Graph<float> g(false);
    std::array<Tensor, 3> ms;
    for (auto& m : ms) m = random_tensor<float>(Shape{1, 256, 21, 21}, rng);
    const CorrelationVars<float> cv{g.constant(ms[0]), g.constant(ms[1]), g.constant(ms[2])};
    CHECK(hmg.tokenize(g, cv).shape() == Shape{441, 384});
    CHECK(hmg.forward(g, cv).shape() == Shape{441, 384});
  }
  SUBCASE("config validation") {
    HmgConfig c = small_hmg(4, 9);
    c.d_model = 13;
    CHECK_THROWS_AS(c.validate(), ShapeError);
  }
}

TEST_CASE("attention cost accounting") {
  const AttentionCost c = attention_cost(441);
  CHECK(c.tiered_entries == 3ull * 2 * 441 * 441);
  CHECK(c.all_pairs_entries == 9ull * 441 * 441);
  CHECK(c.tiered_entries < c.all_pairs_entries);
}

TEST_CASE("predict_maps") {
  Rng rng(9);
  HeadConfig hc;
  hc.in_channels = 6;
  hc.hidden = 5;
  TrackingHead<float> head(hc, rng);
  const Tensor tokens = random_tensor<float>(Shape{441, 6}, rng);
  const HeadOutputs out = predict_maps(head, tokens);
  CHECK(out.cls.shape() == Shape{1, 21, 21});
  CHECK(out.reg.shape() == Shape{4, 21, 21});
  for (int trial = 0; trial < 5; ++trial) {
    const HeadOutputs o = predict_maps(head, random_tensor<float>(Shape{441, 6}, rng, -20, 20));
    for (float v : o.reg.data()) REQUIRE(v > 0.0f);
  }
  SUBCASE("zero raw regression is one stride") {
    head.reg_out().weight().value.fill(0.0f);
    head.reg_out().bias().value.fill(0.0f);
    const HeadOutputs zero = predict_maps(head, tokens);
    for (float v : zero.reg.data()) CHECK(v == 8.0f);
  }
  CHECK_THROWS_AS(predict_maps(head, Tensor(Shape{440, 6})), ShapeError);
}

TEST_CASE("hanning window") {
  const Tensor w = hanning_window(21);
  CHECK(w.at(10, 10) == doctest::Approx(1.0));
  for (int i = 0; i < 21; ++i)
    for (int j = 0; j < 21; ++j) {
      CHECK(w.at(i, j) >= 0.0f);
      CHECK(w.at(i, j) <= 1.0f);
      CHECK(w.at(i, j) == w.at(j, i));
      CHECK(w.at(i, j) == w.at(20 - i, 20 - j));
    }
}

TEST_CASE("decode_search_box") {
  const GridGeometry geo;
  const Tensor window = hanning_window(21);
  Rng rng(10);
  SUBCASE("full window influence picks the center cell") {
    for (int trial = 0; trial < 10; ++trial) {
      HeadOutputs o{random_tensor<float>(Shape{1, 21, 21}, rng, -10, 10), Tensor(Shape{4, 21, 21}, 8.0f)};
      const DecodeResult r = decode_search_box(o, window, 1.0, geo);
      CHECK(r.cell_i == 10);
      CHECK(r.cell_j == 10);
    }
  }
  SUBCASE("single peak at (4,16)") {
    HeadOutputs o = flat_outputs(21, 12.0f);
    o.cls[4 * 21 + 16] = 6.0f;
    const DecodeResult r = decode_search_box(o, window, 0.0, geo);
    CHECK(r.cell_i == 4);
    CHECK(r.cell_j == 16);
    CHECK(r.box.cx() == doctest::Approx(191.0));
    CHECK(r.box.cy() == doctest::Approx(95.0));
    CHECK(r.box.w == doctest::Approx(24.0));
    CHECK(r.peak_score == doctest::Approx(1.0 / (1.0 + std::exp(-6.0))));
  }
  SUBCASE("encode then decode reproduces the box") {
    for (int trial = 0; trial < 50; ++trial) {
      const double w = rng.uniform(20, 120), h = rng.uniform(20, 120);
      const BBox gt{rng.uniform(80, 200) - w / 2, rng.uniform(80, 200) - h / 2, w, h};
      Tensor cls(Shape{21, 21}), reg(Shape{4, 21, 21});
      assign_labels(gt, geo, cls, reg);
      const auto [ci, cj] = center_cell(gt, geo);
      HeadOutputs o{Tensor(Shape{1, 21, 21}, -5.0f), reg};
      o.cls[static_cast<std::size_t>(ci * 21 + cj)] = 5.0f;
      const DecodeResult r = decode_search_box(o, window, 0.0, geo);
      CHECK(r.box.x == doctest::Approx(gt.x).epsilon(1e-5));
      CHECK(r.box.y == doctest::Approx(gt.y).epsilon(1e-5));
      CHECK(r.box.w == doctest::Approx(gt.w).epsilon(1e-5));
      CHECK(r.box.h == doctest::Approx(gt.h).epsilon(1e-5));
    }
  }
  SUBCASE("window influence outside [0,1] rejected") {
    CHECK_THROWS_AS(decode_search_box(flat_outputs(21, 8), window, 1.5, geo), std::invalid_argument);
  }
}
