#pragma once

// Five-stage AlexNet-style feature extractor producing the pyramid F1..F5.

#include <array>
#include <string>

#include "prl/nn.hpp"

namespace prl {

struct BackboneConfig {
  int in_channels = 3;
  std::array<int, 5> channels{96, 256, 384, 384, 256};
  std::array<int, 5> kernels{11, 5, 3, 3, 3};
  std::array<int, 5> strides{2, 1, 1, 1, 1};
  std::array<bool, 5> pool_after{true, true, false, false, false};
  int pool_kernel = 3;
  int pool_stride = 2;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
};

/// Spatial extents of F1..F5 for a square S x S input. Throws ShapeError
/// naming the first layer ("conv1", "pool1", ...) whose extent is not positive.
std::array<int, 5> trace_pyramid_extents(const BackboneConfig& config, int input_size);

/// F1..F5 as plain tensors.
struct FeaturePyramid {
  std::array<Tensor, 5> levels;
  const Tensor& operator[](int i) const { return levels[static_cast<std::size_t>(i - 1)]; }
};

template <typename T>
struct PyramidVars {
  std::array<Var<T>, 5> levels;
  Var<T> operator[](int i) const { return levels[static_cast<std::size_t>(i - 1)]; }
};

template <typename T>
class Backbone {
 public:
  Backbone(const BackboneConfig& config, Rng& rng);

  const BackboneConfig& config() const { return config_; }

  /// patch [N,in_channels,S,S]. Each stage: conv (valid) + batch norm + relu,
  /// pooled after the configured stages.
  PyramidVars<T> forward(Graph<T>& g, Var<T> patch, bool training);

  void collect(std::vector<Parameter<T>*>& out);

 private:
  BackboneConfig config_;
  std::array<nn::Conv2d<T>, 5> convs_;
  std::array<nn::BatchNorm<T>, 5> norms_;
};

/// Inference-mode extraction on plain tensors.
FeaturePyramid extract_pyramid(Backbone<float>& backbone, const Tensor& patch);

}  // namespace prl
