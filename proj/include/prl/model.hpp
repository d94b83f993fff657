#pragma once

// The complete Siamese tracker network and its configuration.

#include <map>
#include <memory>
#include <string>

#include "prl/backbone.hpp"
#include "prl/coarse.hpp"
#include "prl/head.hpp"
#include "prl/hmg.hpp"
#include "prl/weights_io.hpp"

namespace prl {

/// Ablation ladder. Baseline correlates level 5 only and feeds the heads
/// directly; FLP adds the hierarchical modeling generator over three levels.
enum class Variant { kBaseline, kBaselineFlp, kBaselineSrFlp, kBaselineArFlp, kFull };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ModelConfig {
  BackboneConfig backbone;
  int coarse_width = 256;
  int gate_width = 256;
  int d_model = 384;
  int tier_dim = 128;
  int num_blocks = 2;
  int ffn_hidden = 768;
  double attn_scale_dim = 128;
  int head_hidden = 192;
  Variant variant = Variant::kFull;
  int template_size = 127;
  int search_size = 287;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  double ln_eps = 1e-5;
  std::uint64_t seed = 1;

  /// Full-width configuration (AlexNet channel counts, 384-wide generator).
  static ModelConfig standard();
  /// Narrow configuration for CPU training runs; same geometry and topology.
  static ModelConfig desk();

  bool uses_flp() const { return variant != Variant::kBaseline; }
  bool uses_ar() const { return variant == Variant::kBaselineArFlp || variant == Variant::kFull; }
  bool uses_sr() const { return variant == Variant::kBaselineSrFlp || variant == Variant::kFull; }

  /// Side of the correlation grid; throws if the levels disagree.
  int grid() const;
  GridGeometry geometry() const;
  void validate() const;

  CoarseConfig coarse_config() const;
  HmgConfig hmg_config() const;
  HeadConfig head_config() const;

  std::map<std::string, std::string> to_kv() const;
  static ModelConfig from_kv(const std::map<std::string, std::string>& kv);
};

template <typename T>
class PrlModel {
 public:
  explicit PrlModel(const ModelConfig& config);
  PrlModel(const PrlModel&) = delete;
  PrlModel& operator=(const PrlModel&) = delete;

  const ModelConfig& config() const { return config_; }

  /// Backbone and coarse stage for a batch of patches of one branch.
  CoarseRepsVars<T> encode(Graph<T>& g, Var<T> patch, bool training);

  /// Correlation, optional generator, heads. Both branches share the batch size.
  HeadVars<T> predict(Graph<T>& g, const CoarseRepsVars<T>& search, const CoarseRepsVars<T>& templ);

  /// All parameters and buffers, in construction order.
  std::vector<Parameter<T>*> parameters();
  std::vector<Parameter<T>*> trainable_parameters();

  Backbone<T>& backbone() { return backbone_; }
  CoarseStage<T>& coarse() { return coarse_; }
  Hmg<T>* hmg() { return hmg_.get(); }
  TrackingHead<T>& head() { return head_; }

  std::vector<NamedTensor> state();
  /// Every parameter must be present with a matching shape.
  void load_state(const std::vector<NamedTensor>& entries);

 private:
  ModelConfig config_;
  Rng rng_;
  Backbone<T> backbone_;
  CoarseStage<T> coarse_;
  std::unique_ptr<Hmg<T>> hmg_;
  TrackingHead<T> head_;
};

}  // namespace prl
