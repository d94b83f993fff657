#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "prl/synth.hpp"

using namespace prl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("prl_test_synth_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

SynthSpec busy_spec() {
  SynthSpec s;
  s.name = "busy";
  s.frames = 24;
  s.seed = 17;
  s.texture_seed = 4;
  s.aspect_drift = 0.01;
  s.scale_drift = -0.005;
  s.occluders = {{10, 20, 0.6}};
  s.gain_start = 0.8;
  s.gain_end = 1.1;
  return s;
}

}  // namespace

TEST_CASE("generated sequences are byte-identical for identical specs") {
  const SynthSpec s = busy_spec();
  const Sequence a = generate_sequence(s, scratch("a"));
  const Sequence b = generate_sequence(s, scratch("b"));
  REQUIRE(a.size() == 24);
  REQUIRE(b.size() == 24);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(slurp(a.frames[i]) == slurp(b.frames[i]));
  CHECK(slurp(a.dir / "groundtruth_rect.txt") == slurp(b.dir / "groundtruth_rect.txt"));
  CHECK(a.frames.front().filename() == "000001.png");

  SynthSpec other = s;
  other.seed = 18;
  const Sequence c = generate_sequence(other, scratch("c"));
  CHECK(slurp(a.frames[0]) != slurp(c.frames[0]));
}

TEST_CASE("tags follow the schedule") {
  const SynthSpec s = busy_spec();
  const Sequence seq = generate_sequence(s, scratch("tags"));
  CHECK(seq.attributes == std::set<std::string>{"ARC", "SV", "POC", "IV"});
  REQUIRE(seq.frame_tags.size() == 24);
  for (int t = 0; t < 24; ++t) {
    INFO("frame " << t);
    CHECK(static_cast<bool>(seq.frame_tags[static_cast<std::size_t>(t)].count("POC")) == (t >= 10 && t < 20));
  }

  SynthSpec plain;
  plain.gain_end = plain.gain_start;
  CHECK(plain.sequence_tags().empty());
  plain.occluders = {{0, 3, 1.0}};
  CHECK(plain.sequence_tags() == std::vector<std::string>{"FOC"});
}

TEST_CASE("ground truth") {
  SUBCASE("zero drift keeps the size") {
    SynthSpec s;
    s.frames = 40;
    const auto boxes = synth_boxes(s);
    for (const BBox& b : boxes) {
      CHECK(b.w == boxes[0].w);
      CHECK(b.h == boxes[0].h);
    }
  }
  SUBCASE("boxes stay inside the frame under fast motion") {
    SynthSpec s;
    s.frames = 200;
    s.velocity_x = 9;
    s.velocity_y = -7;
    s.scale_drift = 0.02;
    for (const BBox& b : synth_boxes(s)) {
      CHECK(b.x >= 0);
      CHECK(b.y >= 0);
      CHECK(b.x + b.w <= s.frame_width);
      CHECK(b.y + b.h <= s.frame_height);
      CHECK(b.valid());
    }
  }
  SUBCASE("aspect drift widens and scale drift grows") {
    SynthSpec s;
    s.frames = 30;
    s.aspect_drift = 0.02;
    const auto ar = synth_boxes(s);
    CHECK(ar.back().w / ar.back().h > ar.front().w / ar.front().h);
    s.aspect_drift = 0;
    s.scale_drift = 0.02;
    const auto sv = synth_boxes(s);
    CHECK(sv.back().w * sv.back().h > sv.front().w * sv.front().h);
  }
  SUBCASE("written file matches the in-memory boxes") {
    const SynthSpec s = busy_spec();
    const Sequence seq = generate_sequence(s, scratch("gt"));
    const auto boxes = synth_boxes(s);
    REQUIRE(seq.gt.size() == boxes.size());
    for (std::size_t i = 0; i < boxes.size(); ++i) {
      CHECK(seq.gt[i].x == boxes[i].x);
      CHECK(seq.gt[i].h == boxes[i].h);
    }
  }
}

TEST_CASE("rendering") {
  SynthSpec s = busy_spec();
  const Image f = render_frame(s, 3);
  CHECK(f.width == 320);
  CHECK(f.height == 240);
  CHECK(f.rgb.size() == 320u * 240 * 3);
  // the object region differs from the same region with the object elsewhere
  const BBox b = synth_boxes(s)[3];
  SynthSpec moved = s;
  moved.start_x = 40;
  moved.start_y = 40;
  const Image g = render_frame(moved, 3);
  long diff = 0;
  for (int y = static_cast<int>(b.y); y < static_cast<int>(b.y + b.h); ++y)
    for (int x = static_cast<int>(b.x); x < static_cast<int>(b.x + b.w); ++x) diff += f.at(x, y, 0) != g.at(x, y, 0);
  CHECK(diff > 0);
  CHECK_THROWS_AS(render_frame(s, 24), std::out_of_range);
}

TEST_CASE("spec validation") {
  auto bad = [](auto mutate) {
    SynthSpec s;
    mutate(s);
    CHECK_THROWS_AS(s.validate(), DataError);
  };
  bad([](SynthSpec& s) { s.name = "a/b"; });
  bad([](SynthSpec& s) { s.frames = 0; });
  bad([](SynthSpec& s) { s.frame_width = 8; });
  bad([](SynthSpec& s) { s.object_width = 2; });
  bad([](SynthSpec& s) { s.object_width = 400; });
  bad([](SynthSpec& s) { s.occluders = {{5, 30, 0.5}}; });
  bad([](SynthSpec& s) { s.occluders = {{5, 8, 0.0}}; });
  bad([](SynthSpec& s) { s.occluders = {{5, 8, 1.5}}; });
  bad([](SynthSpec& s) { s.clutter_density = -1; });
  SynthSpec ok;
  CHECK_NOTHROW(ok.validate());
}

TEST_CASE("config files") {
  const fs::path dir = scratch("cfg");

  SUBCASE("json round trip") {
    const SynthSpec s = busy_spec();
    const SynthSpec back = synth_spec_from_json(synth_spec_to_json(s));
    CHECK(synth_spec_to_json(back) == synth_spec_to_json(s));
  }
  SUBCASE("defaults and a sequence list") {
    std::ofstream(dir / "set.json") << R"({
      "version": 1,
      "defaults": {"frames": 12, "seed": 3},
      "sequences": [{"name": "one"}, {"name": "two", "seed": 4, "scale_drift": 0.01}]
    })";
    const auto specs = load_synth_config(dir / "set.json");
    REQUIRE(specs.size() == 2);
    CHECK(specs[0].frames == 12);
    CHECK(specs[0].seed == 3);
    CHECK(specs[1].seed == 4);
    CHECK(specs[1].scale_drift == 0.01);
  }
  SUBCASE("errors") {
    std::ofstream(dir / "noversion.json") << R"({"name": "x"})";
    CHECK_THROWS_AS(load_synth_config(dir / "noversion.json"), DataError);
    std::ofstream(dir / "unknown.json") << R"({"version": 1, "name": "x", "colour": 3})";
    CHECK_THROWS_AS(load_synth_config(dir / "unknown.json"), DataError);
    std::ofstream(dir / "dup.json") << R"({"version": 1, "sequences": [{"name": "a"}, {"name": "a"}]})";
    CHECK_THROWS_AS(load_synth_config(dir / "dup.json"), DataError);
    CHECK_THROWS_AS(load_synth_config(dir / "absent.json"), IoError);
  }
  SUBCASE("the documented example loads") {
    const auto specs = load_synth_config(fs::path(PRL_SOURCE_DIR) / "docs" / "synth_example.json");
    CHECK(specs.size() == 4);
  }
}
