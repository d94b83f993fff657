#pragma once

// Coarse representation learning: the gating controller and appearance-aware
// regulator turn F1..F3 into W3; two semantic-aware regulators carry W3 into
// W4 (with F4) and W4 into W5 (with F5).

#include <optional>

#include "prl/backbone.hpp"

namespace prl {

template <typename T>
struct GateVars {
  Var<T> i1;     // pooled, normalized projection of F1 at F2's extent
  Var<T> i2;     // projection of F2
  Var<T> alpha;  // nonnegative weight map with F3's extent and channels
};

template <typename T>
struct CoarseRepsVars {
  Var<T> w3, w4, w5;  // w3/w4 are unset for the level-5-only baseline
};

struct CoarseReps {
  Tensor w3, w4, w5;
};

/// I1 = Pool(BN(Conv1x1(F1))), I2 = Conv1x1(F2),
/// alpha = ReLU(Conv3x3_valid(Concat(I1, I2))).
template <typename T>
class GatingController {
 public:
  GatingController(int f1_channels, int f2_channels, int f3_channels, int width, Rng& rng,
                   double bn_eps = 1e-5, double bn_momentum = 0.1);

  GateVars<T> forward(Graph<T>& g, Var<T> f1, Var<T> f2, bool training);
  void collect(std::vector<Parameter<T>*>& out);
  nn::Conv2d<T>& fuse() { return fuse_; }

 private:
  nn::Conv2d<T> f1_proj_;
  nn::BatchNorm<T> f1_norm_;
  nn::Conv2d<T> f2_proj_;
  nn::Conv2d<T> fuse_;
};

/// W3 = CNR(F3 + alpha * F3). An unset alpha is the identity gate.
template <typename T>
class AppearanceRegulator {
 public:
  AppearanceRegulator(int f3_channels, int width, Rng& rng, double bn_eps = 1e-5,
                      double bn_momentum = 0.1);

  Var<T> forward(Graph<T>& g, Var<T> f3, Var<T> alpha, bool training);
  void collect(std::vector<Parameter<T>*>& out);
  nn::Cnr<T>& cnr() { return cnr_; }

 private:
  nn::Cnr<T> cnr_;
};

/// W = CNR(F + F * Conv1x1(BLI(W_prev))). Constructed without modulation it
/// reduces to CNR(F) and ignores W_prev.
template <typename T>
class SemanticRegulator {
 public:
  SemanticRegulator(const std::string& name, int prev_channels, int f_channels, int width,
                    bool modulate, Rng& rng, double bn_eps = 1e-5, double bn_momentum = 0.1);

  Var<T> forward(Graph<T>& g, Var<T> w_prev, Var<T> f, bool training);
  void collect(std::vector<Parameter<T>*>& out);
  bool modulates() const { return modulation_.has_value(); }
  nn::Conv2d<T>& modulation() { return *modulation_; }
  nn::Cnr<T>& cnr() { return cnr_; }

 private:
  std::optional<nn::Conv2d<T>> modulation_;
  nn::Cnr<T> cnr_;
};

struct CoarseConfig {
  int width = 256;       // channels of W3, W4, W5
  int gate_width = 256;  // channels of I1 and I2
  bool use_ar = true;
  bool use_sr = true;
  bool level5_only = false;  // baseline: only W5 = CNR(F5) is produced
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

/// The whole coarse stage for one branch, honoring the ablation switches.
template <typename T>
class CoarseStage {
 public:
  CoarseStage(const BackboneConfig& backbone, const CoarseConfig& config, Rng& rng);

  CoarseRepsVars<T> forward(Graph<T>& g, const PyramidVars<T>& pyramid, bool training,
                            GateVars<T>* gate_out = nullptr);
  void collect(std::vector<Parameter<T>*>& out);
  const CoarseConfig& config() const { return config_; }

 private:
  CoarseConfig config_;
  std::optional<GatingController<T>> gate_;
  std::optional<AppearanceRegulator<T>> ar_;
  std::optional<SemanticRegulator<T>> sr4_;
  SemanticRegulator<T> sr5_;
};

}  // namespace prl
