#include "prl/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <set>

#include "prl/rng.hpp"

namespace prl {
namespace fs = std::filesystem;
using nlohmann::json;

void SynthSpec::validate() const {
  auto bad = [&](const std::string& what) { throw DataError("synth spec '" + name + "': " + what); };
  if (name.empty() || name.find('/') != std::string::npos) bad("name must be a plain directory name");
  if (frame_width < 16 || frame_height < 16) bad("frame size must be at least 16x16");
  if (frames < 1) bad("frames must be >= 1");
  if (!(object_width >= 4) || !(object_height >= 4)) bad("object extents must be >= 4");
  if (object_width > frame_width - 2 || object_height > frame_height - 2) bad("object larger than the frame");
  if (!(jitter_period > 0)) bad("jitter_period must be positive");
  if (!(gain_start > 0) || !(gain_end > 0)) bad("illumination gains must be positive");
  if (clutter_density < 0) bad("clutter_density must be >= 0");
  for (const auto& o : occluders) {
    if (o.start < 0 || o.end <= o.start || o.end > frames) {
      bad("occluder interval [" + std::to_string(o.start) + "," + std::to_string(o.end) +
          ") outside [0," + std::to_string(frames) + ")");
    }
    if (!(o.coverage > 0) || o.coverage > 1) bad("occluder coverage must lie in (0,1]");
  }
}

std::vector<std::string> SynthSpec::sequence_tags() const {
  std::set<std::string> tags;
  if (aspect_drift != 0) tags.insert("ARC");
  if (scale_drift != 0) tags.insert("SV");
  if (gain_start != gain_end) tags.insert("IV");
  for (const auto& o : occluders) tags.insert(o.coverage >= 1 ? "FOC" : "POC");
  return {tags.begin(), tags.end()};
}

std::vector<std::string> SynthSpec::frame_tags(int frame) const {
  std::set<std::string> tags;
  for (const auto& o : occluders) {
    if (frame >= o.start && frame < o.end) tags.insert(o.coverage >= 1 ? "FOC" : "POC");
  }
  return {tags.begin(), tags.end()};
}

// ---------------------------------------------------------------------------

namespace {

const std::set<std::string> kSpecKeys{"version", "name", "seed", "frame_size", "frames", "object", "motion",
                                      "aspect_drift", "scale_drift", "occluders", "illumination",
                                      "clutter_density"};

template <typename V>
void get(const json& j, const char* key, V& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<V>();
  } catch (const json::exception& e) {
    throw DataError(where + ": field '" + key + "': " + e.what());
  }
}

void get_pair(const json& j, const char* key, double& a, double& b, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
    throw DataError(where + ": field '" + key + "' must be a two-number array");
  }
  a = v[0].get<double>();
  b = v[1].get<double>();
}

}  // namespace

SynthSpec synth_spec_from_json(const json& j, const SynthSpec& defaults) {
  if (!j.is_object()) throw DataError("synth spec must be a JSON object");
  SynthSpec s = defaults;
  get(j, "name", s.name, "synth spec");
  const std::string where = "synth spec '" + s.name + "'";
  for (const auto& [k, v] : j.items()) {
    if (!kSpecKeys.count(k)) throw DataError(where + ": unknown field '" + k + "'");
  }
  get(j, "seed", s.seed, where);
  get(j, "frames", s.frames, where);
  if (j.contains("frame_size")) {
    double w = s.frame_width, h = s.frame_height;
    get_pair(j, "frame_size", w, h, where);
    s.frame_width = static_cast<int>(w);
    s.frame_height = static_cast<int>(h);
  }
  if (j.contains("object")) {
    const json& o = j.at("object");
    get(o, "width", s.object_width, where);
    get(o, "height", s.object_height, where);
    get(o, "texture_seed", s.texture_seed, where);
  }
  if (j.contains("motion")) {
    const json& m = j.at("motion");
    get_pair(m, "start", s.start_x, s.start_y, where);
    get_pair(m, "velocity", s.velocity_x, s.velocity_y, where);
    get_pair(m, "jitter", s.jitter_x, s.jitter_y, where);
    get(m, "jitter_period", s.jitter_period, where);
  }
  get(j, "aspect_drift", s.aspect_drift, where);
  get(j, "scale_drift", s.scale_drift, where);
  if (j.contains("occluders")) {
    s.occluders.clear();
    for (const json& o : j.at("occluders")) {
      OccluderSpan span;
      get(o, "start", span.start, where);
      get(o, "end", span.end, where);
      get(o, "coverage", span.coverage, where);
      s.occluders.push_back(span);
    }
  }
  if (j.contains("illumination")) {
    get(j.at("illumination"), "gain_start", s.gain_start, where);
    get(j.at("illumination"), "gain_end", s.gain_end, where);
  }
  get(j, "clutter_density", s.clutter_density, where);
  s.validate();
  return s;
}

json synth_spec_to_json(const SynthSpec& s) {
  json occ = json::array();
  for (const auto& o : s.occluders) occ.push_back({{"start", o.start}, {"end", o.end}, {"coverage", o.coverage}});
  return {{"version", kSynthSpecVersion},
          {"name", s.name},
          {"seed", s.seed},
          {"frame_size", {s.frame_width, s.frame_height}},
          {"frames", s.frames},
          {"object", {{"width", s.object_width}, {"height", s.object_height}, {"texture_seed", s.texture_seed}}},
          {"motion",
           {{"start", {s.start_x, s.start_y}},
            {"velocity", {s.velocity_x, s.velocity_y}},
            {"jitter", {s.jitter_x, s.jitter_y}},
            {"jitter_period", s.jitter_period}}},
          {"aspect_drift", s.aspect_drift},
          {"scale_drift", s.scale_drift},
          {"occluders", occ},
          {"illumination", {{"gain_start", s.gain_start}, {"gain_end", s.gain_end}}},
          {"clutter_density", s.clutter_density}};
}

std::vector<SynthSpec> load_synth_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("version")) throw DataError(path.string() + ": missing \"version\"");
  if (j.at("version") != kSynthSpecVersion) {
    throw DataError(path.string() + ": unsupported version " + j.at("version").dump() + " (expected " +
                    std::to_string(kSynthSpecVersion) + ")");
  }
  if (!j.contains("sequences")) return {synth_spec_from_json(j)};
  for (const auto& [k, v] : j.items()) {
    if (k != "version" && k != "defaults" && k != "sequences") {
      throw DataError(path.string() + ": unknown top-level field '" + k + "'");
    }
  }
  SynthSpec defaults;
  if (j.contains("defaults")) {
    json d = j.at("defaults");
    if (!d.contains("name")) d["name"] = "defaults";
    defaults = synth_spec_from_json(d);
  }
  std::vector<SynthSpec> out;
  std::set<std::string> names;
  for (const json& s : j.at("sequences")) {
    out.push_back(synth_spec_from_json(s, defaults));
    if (!names.insert(out.back().name).second) {
      throw DataError(path.string() + ": duplicate sequence name '" + out.back().name + "'");
    }
  }
  if (out.empty()) throw DataError(path.string() + ": no sequences");
  return out;
}

// ---------------------------------------------------------------------------

std::vector<BBox> synth_boxes(const SynthSpec& s) {
  s.validate();
  const double sx = s.start_x < 0 ? s.frame_width / 2.0 : s.start_x;
  const double sy = s.start_y < 0 ? s.frame_height / 2.0 : s.start_y;
  std::vector<BBox> out;
  for (int t = 0; t < s.frames; ++t) {
    const double phase = 2 * std::numbers::pi * t / s.jitter_period;
    const double cx = sx + s.velocity_x * t + s.jitter_x * std::sin(phase);
    const double cy = sy + s.velocity_y * t + s.jitter_y * std::cos(phase);
    const double grow = std::exp(s.scale_drift * t), stretch = std::exp(s.aspect_drift * t / 2);
    const double w = std::clamp(std::round(s.object_width * grow * stretch), 4.0, s.frame_width - 2.0);
    const double h = std::clamp(std::round(s.object_height * grow / stretch), 4.0, s.frame_height - 2.0);
    const double x = std::clamp(std::round(cx - w / 2), 0.0, s.frame_width - w);
    const double y = std::clamp(std::round(cy - h / 2), 0.0, s.frame_height - h);
    out.push_back({x, y, w, h});
  }
  return out;
}

namespace {

struct Color {
  double r, g, b;
};

Color random_color(Rng& rng) { return {rng.uniform(20, 235), rng.uniform(20, 235), rng.uniform(20, 235)}; }

struct Texture {
  static constexpr int kCells = 4;
  Color cells[kCells][kCells];
  Color stripe;
  double stripe_offset;

  explicit Texture(std::uint64_t seed) {
    Rng rng(seed * 0x2545F4914F6CDD1DULL + 17);
    for (auto& row : cells)
      for (auto& c : row) c = random_color(rng);
    stripe = random_color(rng);
    stripe_offset = rng.uniform(0, 1);
  }

  // u, v in [0,1)
  Color at(double u, double v) const {
    const double d = u + v - stripe_offset;
    if (d > 0 && d < 0.18) return stripe;
    const int i = std::clamp(static_cast<int>(v * kCells), 0, kCells - 1);
    const int j = std::clamp(static_cast<int>(u * kCells), 0, kCells - 1);
    return cells[i][j];
  }
};

Image render_background(const SynthSpec& s) {
  Rng rng(s.seed);
  Image img(s.frame_width, s.frame_height);
  const Color a = random_color(rng), b = random_color(rng);
  for (int y = 0; y < s.frame_height; ++y) {
    for (int x = 0; x < s.frame_width; ++x) {
      const double t = (x + y) / static_cast<double>(s.frame_width + s.frame_height);
      img.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(a.r * (1 - t) + b.r * t) / 2 + 40);
      img.at(x, y, 1) = static_cast<std::uint8_t>(std::lround(a.g * (1 - t) + b.g * t) / 2 + 40);
      img.at(x, y, 2) = static_cast<std::uint8_t>(std::lround(a.b * (1 - t) + b.b * t) / 2 + 40);
    }
  }
  const int count = static_cast<int>(std::lround(s.clutter_density * s.frame_width * s.frame_height / 1000.0));
  for (int k = 0; k < count; ++k) {
    const int w = rng.uniform_int(3, 18), h = rng.uniform_int(3, 18);
    const int x0 = rng.uniform_int(0, s.frame_width - 1), y0 = rng.uniform_int(0, s.frame_height - 1);
    const Color c = random_color(rng);
    for (int y = y0; y < std::min(y0 + h, s.frame_height); ++y) {
      for (int x = x0; x < std::min(x0 + w, s.frame_width); ++x) {
        img.at(x, y, 0) = static_cast<std::uint8_t>(std::lround(c.r));
        img.at(x, y, 1) = static_cast<std::uint8_t>(std::lround(c.g));
        img.at(x, y, 2) = static_cast<std::uint8_t>(std::lround(c.b));
      }
    }
  }
  return img;
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

Image render_with(const SynthSpec& s, const Image& background, const BBox& box, int frame) {
  Image img = background;
  const Texture tex(s.texture_seed);
  const int x0 = static_cast<int>(box.x), y0 = static_cast<int>(box.y);
  const int w = static_cast<int>(box.w), h = static_cast<int>(box.h);
  for (int y = y0; y < y0 + h; ++y) {
    for (int x = x0; x < x0 + w; ++x) {
      const Color c = tex.at((x - x0 + 0.5) / w, (y - y0 + 0.5) / h);
      img.at(x, y, 0) = to_byte(c.r);
      img.at(x, y, 1) = to_byte(c.g);
      img.at(x, y, 2) = to_byte(c.b);
    }
  }
  for (std::size_t k = 0; k < s.occluders.size(); ++k) {
    const OccluderSpan& o = s.occluders[k];
    if (frame < o.start || frame >= o.end) continue;
    const int ow = std::max(1, static_cast<int>(std::lround(o.coverage * w)));
    Rng rng(s.seed ^ (0xA5A5ULL + k));
    const Color c1 = random_color(rng), c2 = random_color(rng);
    for (int y = y0; y < y0 + h; ++y) {
      for (int x = x0; x < x0 + ow; ++x) {
        const Color& c = ((x + y) / 4) % 2 ? c1 : c2;
        img.at(x, y, 0) = to_byte(c.r);
        img.at(x, y, 1) = to_byte(c.g);
        img.at(x, y, 2) = to_byte(c.b);
      }
    }
  }
  const double gain = s.frames > 1 ? s.gain_start + (s.gain_end - s.gain_start) * frame / (s.frames - 1.0)
                                   : s.gain_start;
  if (gain != 1.0) {
    for (auto& v : img.rgb) v = to_byte(v * gain);
  }
  return img;
}

}  // namespace

Image render_frame(const SynthSpec& s, int frame) {
  const auto boxes = synth_boxes(s);
  if (frame < 0 || frame >= s.frames) throw std::out_of_range("render_frame: frame out of range");
  return render_with(s, render_background(s), boxes[static_cast<std::size_t>(frame)], frame);
}

Sequence generate_sequence(const SynthSpec& s, const fs::path& out_dir) {
  const auto boxes = synth_boxes(s);
  std::error_code ec;
  fs::create_directories(out_dir / "img", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "img").string() + ": " + ec.message());
  const Image background = render_background(s);
  for (int t = 0; t < s.frames; ++t) {
    char name[32];
    std::snprintf(name, sizeof name, "%06d.png", t + 1);
    save_png(out_dir / "img" / name, render_with(s, background, boxes[static_cast<std::size_t>(t)], t));
  }
  write_boxes(out_dir / "groundtruth_rect.txt", boxes);
  auto write_tags = [&](const fs::path& p, const std::vector<std::vector<std::string>>& lines) {
    std::ofstream out(p);
    if (!out) throw IoError("cannot write " + p.string());
    for (const auto& tags : lines) {
      for (std::size_t i = 0; i < tags.size(); ++i) out << (i ? "," : "") << tags[i];
      out << '\n';
    }
  };
  write_tags(out_dir / "att.txt", {s.sequence_tags()});
  std::vector<std::vector<std::string>> per_frame;
  for (int t = 0; t < s.frames; ++t) per_frame.push_back(s.frame_tags(t));
  write_tags(out_dir / "frame_tags.txt", per_frame);
  {
    std::ofstream spec(out_dir / "spec.json");
    if (!spec) throw IoError("cannot write " + (out_dir / "spec.json").string());
    spec << synth_spec_to_json(s).dump(2) << '\n';
  }
  Sequence seq = load_sequence(out_dir);
  seq.name = s.name;
  return seq;
}

}  // namespace prl
