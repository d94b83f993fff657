#pragma once

// Fine representation learning. Search and template coarse representations
// are matched per level by depthwise cross-correlation; the three correlation
// maps are tokenized together and refined by blocks of tier-split
// hierarchical cross-attention.

#include <array>
#include <cstdint>
#include <vector>

#include "prl/nn.hpp"

namespace prl {

struct HmgConfig {
  int in_channels = 768;  // channels of the three concatenated correlation maps
  int d_model = 384;
  int tier_dim = 128;
  int num_blocks = 2;
  int ffn_hidden = 768;
  double attn_scale_dim = 128;  // d in softmax(Q K^T / sqrt(d))
  int tokens = 441;             // positional embedding rows
  double ln_eps = 1e-5;

  /// Throws ShapeError unless d_model == 3 * tier_dim and all extents positive.
  void validate() const;
};

template <typename T>
struct CorrelationVars {
  Var<T> r3, r4, r5;
};

/// One tier's query/key/value triple, M_i = (Q_i, K_i, V_i).
template <typename T>
struct TierVars {
  Var<T> q, k, v;
};

template <typename T>
struct TierSplitVars {
  Var<T> qhat, khat, vhat;
  std::array<TierVars<T>, 3> tiers;  // levels 3, 4, 5
};

template <typename T>
struct HierarchyAttentionVars {
  Var<T> h34, h35, h45;
  Var<T> p34, p35, p45;  // row-stochastic attention matrices [T, 2T]
};

/// Everything one block computes, for inspection.
template <typename T>
struct TokenBundle {
  Var<T> x;
  TierSplitVars<T> split;
  HierarchyAttentionVars<T> attention;
  Var<T> wc, xo;
};

/// Per-level correlation of search against template (batched).
template <typename T>
CorrelationVars<T> correlate_levels(Var<T> s3, Var<T> s4, Var<T> s5, Var<T> t3, Var<T> t4, Var<T> t5);

/// Softmax(Q_j [K_i;K_j]^T / sqrt(d)) [V_i;V_j] for the (3,4), (3,5) and
/// (4,5) pairings; queries come from the higher tier only.
template <typename T>
HierarchyAttentionVars<T> hierarchy_cross_attention(const TierVars<T>& m3, const TierVars<T>& m4,
                                                    const TierVars<T>& m5, double scale_dim);

/// Score-matrix entries per block: tiered pairings vs all-pairs over three tiers.
struct AttentionCost {
  std::uint64_t tiered_entries;     // 3 * T * 2T
  std::uint64_t all_pairs_entries;  // 9 * T * T
};
AttentionCost attention_cost(std::uint64_t tokens);

template <typename T>
class HmgBlock {
 public:
  HmgBlock(int index, const HmgConfig& config, Rng& rng);

  TierSplitVars<T> tier_split(Graph<T>& g, Var<T> x);
  /// W_c = LN(Concat(H34, H35, H45) + X); X_o = LN(FFN(W_c) + W_c).
  Var<T> forward(Graph<T>& g, Var<T> x, TokenBundle<T>* bundle = nullptr);

  void collect(std::vector<Parameter<T>*>& out);
  nn::Linear<T>& qproj() { return qproj_; }
  nn::Linear<T>& kproj() { return kproj_; }
  nn::Linear<T>& vproj() { return vproj_; }
  nn::Linear<T>& ffn1() { return ffn1_; }
  nn::Linear<T>& ffn2() { return ffn2_; }
  nn::LayerNorm<T>& ln1() { return ln1_; }
  nn::LayerNorm<T>& ln2() { return ln2_; }

 private:
  HmgConfig config_;
  nn::Linear<T> qproj_, kproj_, vproj_;
  nn::LayerNorm<T> ln1_;
  nn::Linear<T> ffn1_, ffn2_;
  nn::LayerNorm<T> ln2_;
};

template <typename T>
class Hmg {
 public:
  Hmg(const HmgConfig& config, Rng& rng);

  /// Channel-concatenates R3, R4, R5 ([1,C,H,W] each), one token per cell,
  /// projects to d_model and adds the positional embedding.
  Var<T> tokenize(Graph<T>& g, const CorrelationVars<T>& maps);
  /// tokenize, then num_blocks blocks in sequence.
  Var<T> forward(Graph<T>& g, const CorrelationVars<T>& maps,
                 std::vector<TokenBundle<T>>* bundles = nullptr);

  void collect(std::vector<Parameter<T>*>& out);
  const HmgConfig& config() const { return config_; }
  nn::Linear<T>& embed() { return embed_; }
  Parameter<T>& posembed() { return posembed_; }
  std::vector<HmgBlock<T>>& blocks() { return blocks_; }

 private:
  HmgConfig config_;
  nn::Linear<T> embed_;
  Parameter<T> posembed_;
  std::vector<HmgBlock<T>> blocks_;
};

}  // namespace prl
