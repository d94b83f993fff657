#pragma once

// Anchor-free classification / regression heads over the fused
// representation, and score-map decoding.

#include "prl/bbox.hpp"
#include "prl/nn.hpp"

namespace prl {

struct HeadConfig {
  int in_channels = 384;
  int hidden = 192;
  double stride = 8.0;  // search-patch pixels per grid cell
};

template <typename T>
struct HeadVars {
  Var<T> cls;  // [N,1,G,G] logits
  Var<T> reg;  // [N,4,G,G] positive (l,t,r,b) distances in search-patch pixels
};

struct HeadOutputs {
  Tensor cls;  // [1,G,G]
  Tensor reg;  // [4,G,G]
  int grid() const { return cls.dim(1); }
};

template <typename T>
class TrackingHead {
 public:
  TrackingHead(const HeadConfig& config, Rng& rng);

  /// features [N,C,G,G]; both branches are conv3x3+relu+conv3x3 with padding 1,
  /// regression mapped through exp(raw) * stride.
  HeadVars<T> forward(Graph<T>& g, Var<T> features);

  void collect(std::vector<Parameter<T>*>& out);
  const HeadConfig& config() const { return config_; }
  nn::Conv2d<T>& reg_out() { return reg2_; }
  nn::Conv2d<T>& cls_out() { return cls2_; }

 private:
  HeadConfig config_;
  nn::Conv2d<T> cls1_, cls2_, reg1_, reg2_;
};

/// Reshapes [G*G,C] tokens to a [1,C,G,G] map; rejects non-square counts.
template <typename T>
Var<T> tokens_to_grid(Var<T> tokens);

/// predict_maps on tokens [G*G,C] for a single sample.
HeadOutputs predict_maps(TrackingHead<float>& head, const Tensor& tokens);

/// Geometry linking grid cells to search-patch pixels.
struct GridGeometry {
  int grid = 21;
  double stride = 8.0;
  double center = 143.0;  // search-patch coordinate of the middle cell

  int center_cell() const { return grid / 2; }
  double cell_x(int j) const { return center + stride * (j - center_cell()); }
  double cell_y(int i) const { return center + stride * (i - center_cell()); }
};

/// Outer product of two symmetric Hann tapers, values in [0,1], peak 1 at the center.
Tensor hanning_window(int grid);

struct DecodeResult {
  BBox box;             // in search-patch pixel coordinates
  double peak_score;    // sigmoid(cls) at the selected cell
  int cell_i, cell_j;
};

/// Picks the cell maximizing sigmoid(cls) * (1 - wi) + window * wi and reads
/// its (l,t,r,b) distances.
DecodeResult decode_search_box(const HeadOutputs& outputs, const Tensor& window,
                               double window_influence, const GridGeometry& geometry);

}  // namespace prl
