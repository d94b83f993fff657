#include "prl/hmg.hpp"

#include <cmath>

namespace prl {

void HmgConfig::validate() const {
  if (in_channels <= 0 || d_model <= 0 || tier_dim <= 0 || num_blocks < 0 || ffn_hidden <= 0 ||
      tokens <= 0) {
    throw ShapeError("hmg: extents must be positive");
  }
  if (d_model != 3 * tier_dim) {
    throw ShapeError("hmg: d_model " + std::to_string(d_model) + " must equal 3 * tier_dim (" +
                     std::to_string(3 * tier_dim) + ")");
  }
  if (!(attn_scale_dim > 0)) throw ShapeError("hmg: attn_scale_dim must be positive");
}

template <typename T>
CorrelationVars<T> correlate_levels(Var<T> s3, Var<T> s4, Var<T> s5, Var<T> t3, Var<T> t4, Var<T> t5) {
  return {ag::depthwise_xcorr(s3, t3), ag::depthwise_xcorr(s4, t4), ag::depthwise_xcorr(s5, t5)};
}

namespace {

template <typename T>
Var<T> attend(Var<T> q, const TierVars<T>& lo, const TierVars<T>& hi, T scale, Var<T>& probs) {
  Var<T> keys = ag::concat<T>({lo.k, hi.k}, 0);
  Var<T> values = ag::concat<T>({lo.v, hi.v}, 0);
  probs = ag::softmax_rows(ag::scale(ag::matmul(q, keys, false, true), scale));
  return ag::matmul(probs, values);
}

}  // namespace

template <typename T>
HierarchyAttentionVars<T> hierarchy_cross_attention(const TierVars<T>& m3, const TierVars<T>& m4,
                                                    const TierVars<T>& m5, double scale_dim) {
  const int width = m3.q.shape()[1];
  for (const TierVars<T>* m : {&m3, &m4, &m5}) {
    if (m->q.shape()[1] != width || m->k.shape()[1] != width || m->v.shape()[1] != width) {
      throw ShapeError("hierarchy_cross_attention: tier widths differ");
    }
  }
  const T scale = static_cast<T>(1.0 / std::sqrt(scale_dim));
  HierarchyAttentionVars<T> out;
  out.h34 = attend(m4.q, m3, m4, scale, out.p34);
  out.h35 = attend(m5.q, m3, m5, scale, out.p35);
  out.h45 = attend(m5.q, m4, m5, scale, out.p45);
  return out;
}

AttentionCost attention_cost(std::uint64_t tokens) {
  return {3 * tokens * 2 * tokens, 9 * tokens * tokens};
}

template <typename T>
HmgBlock<T>::HmgBlock(int index, const HmgConfig& config, Rng& rng) : config_(config) {
  const std::string p = "hmg.block" + std::to_string(index) + ".";
  qproj_ = nn::Linear<T>(p + "qproj", config.d_model, config.d_model, rng);
  kproj_ = nn::Linear<T>(p + "kproj", config.d_model, config.d_model, rng);
  vproj_ = nn::Linear<T>(p + "vproj", config.d_model, config.d_model, rng);
  ln1_ = nn::LayerNorm<T>(p + "ln1", config.d_model, config.ln_eps);
  ffn1_ = nn::Linear<T>(p + "ffn1", config.d_model, config.ffn_hidden, rng, nn::Init::kKaiming);
  ffn2_ = nn::Linear<T>(p + "ffn2", config.ffn_hidden, config.d_model, rng);
  ln2_ = nn::LayerNorm<T>(p + "ln2", config.d_model, config.ln_eps);
}

template <typename T>
TierSplitVars<T> HmgBlock<T>::tier_split(Graph<T>& g, Var<T> x) {
  if (x.shape().rank() != 2 || x.shape()[1] != config_.d_model) {
    throw ShapeError("tier_split: expected [T," + std::to_string(config_.d_model) + "] tokens, got " +
                     x.shape().str());
  }
  TierSplitVars<T> s;
  s.qhat = qproj_(g, x);
  s.khat = kproj_(g, x);
  s.vhat = vproj_(g, x);
  const int w = config_.tier_dim;
  for (int i = 0; i < 3; ++i) {
    s.tiers[static_cast<std::size_t>(i)] = {ag::slice(s.qhat, 1, i * w, (i + 1) * w),
                                            ag::slice(s.khat, 1, i * w, (i + 1) * w),
                                            ag::slice(s.vhat, 1, i * w, (i + 1) * w)};
  }
  return s;
}

template <typename T>
Var<T> HmgBlock<T>::forward(Graph<T>& g, Var<T> x, TokenBundle<T>* bundle) {
  TierSplitVars<T> split = tier_split(g, x);
  HierarchyAttentionVars<T> att =
      hierarchy_cross_attention(split.tiers[0], split.tiers[1], split.tiers[2], config_.attn_scale_dim);
  Var<T> wc = ln1_(g, ag::add(ag::concat<T>({att.h34, att.h35, att.h45}, 1), x));
  Var<T> ffn = ffn2_(g, ag::relu(ffn1_(g, wc)));
  Var<T> xo = ln2_(g, ag::add(ffn, wc));
  if (bundle) *bundle = {x, split, att, wc, xo};
  return xo;
}

template <typename T>
void HmgBlock<T>::collect(std::vector<Parameter<T>*>& out) {
  qproj_.collect(out);
  kproj_.collect(out);
  vproj_.collect(out);
  ln1_.collect(out);
  ffn1_.collect(out);
  ffn2_.collect(out);
  ln2_.collect(out);
}

template <typename T>
Hmg<T>::Hmg(const HmgConfig& config, Rng& rng)
    : config_(config), embed_("hmg.embed", config.in_channels, config.d_model, rng) {
  config.validate();
  BasicTensor<T> pos(Shape{config.tokens, config.d_model});
  for (T& v : pos.data()) v = static_cast<T>(rng.uniform(-0.02, 0.02));
  posembed_ = Parameter<T>("hmg.posembed", std::move(pos));
  blocks_.reserve(static_cast<std::size_t>(config.num_blocks));
  for (int k = 0; k < config.num_blocks; ++k) blocks_.emplace_back(k, config, rng);
}

template <typename T>
Var<T> Hmg<T>::tokenize(Graph<T>& g, const CorrelationVars<T>& maps) {
  const Shape a = maps.r3.shape();
  for (const Var<T>* r : {&maps.r4, &maps.r5}) {
    const Shape b = r->shape();
    if (b.rank() != 4 || a.rank() != 4 || a[0] != 1 || b[0] != 1 || a[2] != b[2] || a[3] != b[3]) {
      throw ShapeError("tokenize: correlation maps must be [1,C,H,W] with equal extents, got " +
                       a.str() + " and " + b.str());
    }
  }
  Var<T> tokens = ag::map_to_tokens(ag::concat<T>({maps.r3, maps.r4, maps.r5}, 1));
  if (tokens.shape()[0] != config_.tokens) {
    throw ShapeError("tokenize: " + std::to_string(tokens.shape()[0]) +
                     " tokens but the positional embedding has " + std::to_string(config_.tokens));
  }
  return ag::add(embed_(g, tokens), g.param(posembed_));
}

template <typename T>
Var<T> Hmg<T>::forward(Graph<T>& g, const CorrelationVars<T>& maps,
                       std::vector<TokenBundle<T>>* bundles) {
  Var<T> x = tokenize(g, maps);
  for (auto& block : blocks_) {
    TokenBundle<T> b;
    x = block.forward(g, x, bundles ? &b : nullptr);
    if (bundles) bundles->push_back(b);
  }
  return x;
}

template <typename T>
void Hmg<T>::collect(std::vector<Parameter<T>*>& out) {
  embed_.collect(out);
  out.push_back(&posembed_);
  for (auto& b : blocks_) b.collect(out);
}

template CorrelationVars<float> correlate_levels(Var<float>, Var<float>, Var<float>, Var<float>,
                                                 Var<float>, Var<float>);
template CorrelationVars<double> correlate_levels(Var<double>, Var<double>, Var<double>, Var<double>,
                                                  Var<double>, Var<double>);
template HierarchyAttentionVars<float> hierarchy_cross_attention(const TierVars<float>&,
                                                                 const TierVars<float>&,
                                                                 const TierVars<float>&, double);
template HierarchyAttentionVars<double> hierarchy_cross_attention(const TierVars<double>&,
                                                                  const TierVars<double>&,
                                                                  const TierVars<double>&, double);
template class HmgBlock<float>;
template class HmgBlock<double>;
template class Hmg<float>;
template class Hmg<double>;

}  // namespace prl
