#pragma once

// Deterministic synthetic sequences: a textured object moving over a
// cluttered static background, with optional scale and aspect drift,
// partial occluders and an illumination ramp.

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "prl/dataset.hpp"
#include "prl/image.hpp"

namespace prl {

inline constexpr int kSynthSpecVersion = 1;

struct OccluderSpan {
  int start = 0;  // first covered frame
  int end = 0;    // one past the last covered frame
  double coverage = 0.5;  // fraction of the gt box area
};

struct SynthSpec {
  std::string name = "synth";
  std::uint64_t seed = 1;
  int frame_width = 320;
  int frame_height = 240;
  int frames = 20;
  std::uint64_t texture_seed = 1;
  double object_width = 48, object_height = 36;
  double start_x = -1, start_y = -1;  // initial center; negative means frame center
  double velocity_x = 2.0, velocity_y = 1.0;   // pixels per frame
  double jitter_x = 3.0, jitter_y = 3.0;       // sinusoidal amplitude, pixels
  double jitter_period = 12.0;                 // frames
  double aspect_drift = 0.0;  // log(w/h) change per frame
  double scale_drift = 0.0;   // log(sqrt(w*h)) change per frame
  std::vector<OccluderSpan> occluders;
  double gain_start = 1.0, gain_end = 1.0;
  double clutter_density = 0.5;  // background rectangles per 1000 px^2

  /// Throws DataError naming the offending field.
  void validate() const;
  /// Tags derived from the active drifts and occluders (ARC, SV, POC, IV).
  std::vector<std::string> sequence_tags() const;
  std::vector<std::string> frame_tags(int frame) const;
};

/// Parses one sequence spec; `defaults` supplies fields the object omits.
SynthSpec synth_spec_from_json(const nlohmann::json& j, const SynthSpec& defaults = {});
nlohmann::json synth_spec_to_json(const SynthSpec& spec);

/// Config file: either a single spec or {"version":1,"defaults":{...},"sequences":[...]}.
std::vector<SynthSpec> load_synth_config(const std::filesystem::path& path);

/// Ground-truth boxes of the spec, without rendering.
std::vector<BBox> synth_boxes(const SynthSpec& spec);
Image render_frame(const SynthSpec& spec, int frame);

/// Writes img/%06d.png (1-based), groundtruth_rect.txt, att.txt and
/// frame_tags.txt under out_dir, then loads it back.
Sequence generate_sequence(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace prl
