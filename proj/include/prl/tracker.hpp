#pragma once

// Patch cropping and the frame-by-frame tracking loop.

#include <optional>
#include <vector>

#include "prl/dataset.hpp"
#include "prl/image.hpp"
#include "prl/model.hpp"

namespace prl {

/// Per-channel mean of the frame in [0,1] units.
std::array<float, 3> channel_means(const Image& frame);

/// Square crop of side `side` centered at (cx, cy), resampled bilinearly to
/// out_size x out_size. Pixel (i, j) of the frame covers [i, i+1) x [j, j+1);
/// samples outside the frame read the per-channel mean. Values in [0,1].
Tensor crop_patch(const Image& frame, double cx, double cy, double side, int out_size,
                  const std::array<float, 3>* means = nullptr);

/// sqrt((w+p)(h+p)) with p = (w+h)/2.
double template_side(double w, double h);
/// template_side scaled by search_size / template_size.
double search_side(double w, double h, int template_size = 127, int search_size = 287);

struct TrackerConfig {
  double window_influence = 0.40;
  double smooth_lr_k = 0.30;
  double min_size = 4.0;  // pixels
};

struct TrackerState {
  double cx = 0, cy = 0, w = 0, h = 0;
  CoarseReps templ;
  Tensor window;
  double last_score = 0;
};

/// Maps a box decoded in search-patch coordinates back to the frame and
/// applies size smoothing. `scale` is frame pixels per patch pixel.
BBox search_to_frame(const BBox& in_search, double scale, double center_x, double center_y,
                     const GridGeometry& geometry);

class Tracker {
 public:
  Tracker(PrlModel<float>& model, const TrackerConfig& config = {});

  void init(const Image& frame, const BBox& box);
  /// Returns the box for this frame, clipped to the frame.
  BBox update(const Image& frame);

  const TrackerState& state() const { return state_; }
  const TrackerConfig& config() const { return config_; }

  /// Raw head outputs for a search patch against the cached template.
  HeadOutputs predict(const Tensor& search_patch);

 private:
  PrlModel<float>& model_;
  TrackerConfig config_;
  GridGeometry geometry_;
  TrackerState state_;
};

/// Clips a box to [0,width] x [0,height]; extents stay positive.
BBox clip_box(const BBox& b, int width, int height);

/// output[0] is init_box verbatim. A frame that cannot be read aborts with
/// IoError naming its index.
std::vector<BBox> track_sequence(const std::vector<std::filesystem::path>& frames, const BBox& init_box,
                                 PrlModel<float>& model, const TrackerConfig& config = {});

/// Inference-mode encoding of one patch.
CoarseReps encode_patch(PrlModel<float>& model, const Tensor& patch);

}  // namespace prl
