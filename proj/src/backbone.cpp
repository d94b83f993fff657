#include "prl/backbone.hpp"

namespace prl {

std::array<int, 5> trace_pyramid_extents(const BackboneConfig& config, int input_size) {
  std::array<int, 5> out{};
  int extent = input_size;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string layer = std::to_string(i + 1);
    if (config.kernels[i] > extent) {
      throw ShapeError("input " + std::to_string(input_size) + " too small: conv" + layer +
                       " kernel " + std::to_string(config.kernels[i]) + " exceeds extent " +
                       std::to_string(extent));
    }
    extent = ops::conv_out_extent(extent, config.kernels[i], config.strides[i], 0);
    if (config.pool_after[i]) {
      if (config.pool_kernel > extent) {
        throw ShapeError("input " + std::to_string(input_size) + " too small: pool" + layer +
                         " kernel " + std::to_string(config.pool_kernel) + " exceeds extent " +
                         std::to_string(extent));
      }
      extent = ops::conv_out_extent(extent, config.pool_kernel, config.pool_stride, 0);
    }
    out[i] = extent;
  }
  return out;
}

template <typename T>
Backbone<T>::Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  int cin = config.in_channels;
  for (std::size_t i = 0; i < 5; ++i) {
    const std::string name = "backbone.conv" + std::to_string(i + 1);
    convs_[i] = nn::Conv2d<T>(name, cin, config.channels[i], config.kernels[i], config.strides[i], 0,
                              false, rng);
    norms_[i] = nn::BatchNorm<T>("backbone.bn" + std::to_string(i + 1), config.channels[i],
                                 config.bn_eps, config.bn_momentum);
    cin = config.channels[i];
  }
}

template <typename T>
PyramidVars<T> Backbone<T>::forward(Graph<T>& g, Var<T> patch, bool training) {
  const Shape s = patch.shape();
  if (s.rank() != 4 || s[1] != config_.in_channels || s[2] != s[3]) {
    throw ShapeError("backbone: expected square [N," + std::to_string(config_.in_channels) +
                     ",S,S] patch, got " + s.str());
  }
  trace_pyramid_extents(config_, s[2]);
  PyramidVars<T> out;
  Var<T> x = patch;
  for (std::size_t i = 0; i < 5; ++i) {
    x = ag::relu(norms_[i](g, convs_[i](g, x), training));
    if (config_.pool_after[i]) {
      x = ag::pool(x, ops::PoolSpec::max_fixed(config_.pool_kernel, config_.pool_stride));
    }
    out.levels[i] = x;
  }
  return out;
}

template <typename T>
void Backbone<T>::collect(std::vector<Parameter<T>*>& out) {
  for (std::size_t i = 0; i < 5; ++i) {
    convs_[i].collect(out);
    norms_[i].collect(out);
  }
}

FeaturePyramid extract_pyramid(Backbone<float>& backbone, const Tensor& patch) {
  Graph<float> g(false);
  const auto vars = backbone.forward(g, g.constant(patch), false);
  FeaturePyramid out;
  for (std::size_t i = 0; i < 5; ++i) out.levels[i] = vars.levels[i].value();
  return out;
}

template class Backbone<float>;
template class Backbone<double>;

}  // namespace prl
