#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "oracles.hpp"
#include "prl/image.hpp"
#include "prl/metrics.hpp"

using namespace prl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("prl_test_eval_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream out(p);
  out << s;
}

// A benchmark-layout sequence with `frames` blank images and the given boxes.
fs::path make_sequence(const fs::path& root, const std::string& name, int frames, const std::vector<BBox>& gt,
                       const std::string& att = "") {
  const fs::path dir = root / name;
  fs::create_directories(dir / "img");
  const Image blank(16, 16, 100);
  for (int i = 1; i <= frames; ++i) {
    char file[16];
    std::snprintf(file, sizeof file, "%06d.png", i);
    save_png(dir / "img" / file, blank);
  }
  write_boxes(dir / "groundtruth_rect.txt", gt);
  if (!att.empty()) write_text(dir / "att.txt", att + "\n");
  return dir;
}

std::vector<BBox> shifted(const std::vector<BBox>& boxes, double dx) {
  std::vector<BBox> out = boxes;
  for (BBox& b : out) b.x += dx;
  return out;
}

void check_monotone(const OpeResult& r) {
  for (int i = 1; i < kPrecisionPoints; ++i) CHECK(r.precision[i] >= r.precision[i - 1]);
  for (int i = 1; i < kSuccessPoints; ++i) CHECK(r.success[i] <= r.success[i - 1]);
  for (double v : r.precision) CHECK((v >= 0 && v <= 1));
  for (double v : r.success) CHECK((v >= 0 && v <= 1));
}

}  // namespace

TEST_CASE("iou") {
  const BBox a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BBox{20, 20, 5, 5}) == 0.0);
  CHECK(iou(a, BBox{10, 0, 10, 10}) == 0.0);
  CHECK(iou(a, BBox{5, 0, 10, 10}) == doctest::Approx(1.0 / 3));

  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const int ax = rng.uniform_int(0, 40), ay = rng.uniform_int(0, 40), aw = rng.uniform_int(1, 30),
              ah = rng.uniform_int(1, 30);
    const int bx = rng.uniform_int(0, 40), by = rng.uniform_int(0, 40), bw = rng.uniform_int(1, 30),
              bh = rng.uniform_int(1, 30);
    const BBox p{double(ax), double(ay), double(aw), double(ah)}, q{double(bx), double(by), double(bw), double(bh)};
    REQUIRE(iou(p, q) == oracle::raster_iou(ax, ay, aw, ah, bx, by, bw, bh));
    REQUIRE(iou(p, q) == iou(q, p));
  }
}

TEST_CASE("cle") {
  CHECK(cle(BBox{0, 0, 10, 10}, BBox{2, 2, 6, 6}) == 0.0);
  CHECK(cle(BBox::from_center(0, 0, 2, 2), BBox::from_center(3, 4, 8, 1)) == doctest::Approx(5.0));
  Rng rng(2);
  for (int i = 0; i < 1000; ++i) {
    const BBox a{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(1, 40), rng.uniform(1, 40)};
    const BBox b{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(1, 40), rng.uniform(1, 40)};
    const double dx = (a.x + a.w / 2) - (b.x + b.w / 2), dy = (a.y + a.h / 2) - (b.y + b.h / 2);
    REQUIRE(std::abs(cle(a, b) - std::sqrt(dx * dx + dy * dy)) <= 1e-9);
    REQUIRE(cle(a, b) == cle(b, a));
    REQUIRE(cle(a, b) >= 0);
  }
}

TEST_CASE("ope_curves") {
  std::vector<BBox> gt;
  for (int i = 0; i < 40; ++i) gt.push_back(BBox{10.0 + i, 20, 30, 30});

  SUBCASE("perfect tracking") {
    const OpeResult r = ope_curves(gt, gt);
    CHECK(r.precision20 == 1.0);
    CHECK(r.success[kSuccessPoints - 1] == 0.0);
    CHECK(r.auc == doctest::Approx(20.0 / 21));
  }
  SUBCASE("constant 10 px error") {
    const OpeResult r = ope_curves(shifted(gt, 10), gt);
    CHECK(r.precision20 == 1.0);
    CHECK(r.precision[9] == 0.0);
    CHECK(r.precision[10] == 1.0);
  }
  SUBCASE("uniformly spaced overlaps give half the area") {
    // a w x 1 box against a box of width w*iou sharing its left edge has IoU = iou
    std::vector<BBox> pred, ref;
    for (int k = 0; k < 40; ++k) {
      const double target = 0.025 + 0.05 * (k % 20);  // 20 values, each twice
      ref.push_back(BBox{0, 0, 100, 1});
      pred.push_back(BBox{0, 0, 100 * target, 1});
    }
    const OpeResult r = ope_curves(pred, ref);
    CHECK(std::abs(r.auc - 0.5) <= 0.025);
  }
  SUBCASE("monotone for arbitrary boxes") {
    Rng rng(3);
    std::vector<BBox> p, q;
    for (int i = 0; i < 200; ++i) {
      p.push_back(BBox{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 60), rng.uniform(1, 60)});
      q.push_back(BBox{rng.uniform(0, 100), rng.uniform(0, 100), rng.uniform(1, 60), rng.uniform(1, 60)});
    }
    check_monotone(ope_curves(p, q));
  }
  SUBCASE("length mismatch rejected") {
    CHECK_THROWS_AS(ope_curves(std::vector<BBox>(gt.begin(), gt.end() - 1), gt), std::invalid_argument);
    CHECK_THROWS_AS(ope_curves({}, {}), std::invalid_argument);
  }
}

TEST_CASE("box files") {
  CHECK(parse_box("1.0,2.0,30.0,40.0", "t").x == 1.0);
  const BBox tab = parse_box("1\t2\t30\t40", "t");
  CHECK(tab.y == 2.0);
  CHECK(tab.h == 40.0);
  CHECK_THROWS_AS(parse_box("1,2,3", "t"), DataError);
  CHECK_THROWS_AS(parse_box("1,2,x,4", "t"), DataError);
  CHECK_THROWS_AS(parse_box("1,2,0,4", "t"), DataError);

  const fs::path dir = scratch("boxes");
  write_text(dir / "bad.txt", "1,2,3,4\n1,2,3,4\n5,6,oops,8\n");
  try {
    read_boxes(dir / "bad.txt");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  CHECK_THROWS_AS(read_boxes(dir / "absent.txt"), IoError);

  Rng rng(4);
  std::vector<BBox> boxes;
  for (int i = 0; i < 100; ++i) boxes.push_back(BBox{rng.uniform(0, 500), rng.uniform(0, 500), rng.uniform(1, 90), rng.uniform(1, 90)});
  write_boxes(dir / "rt.txt", boxes);
  const auto back = read_boxes(dir / "rt.txt");
  REQUIRE(back.size() == boxes.size());
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    CHECK(back[i].x == boxes[i].x);
    CHECK(back[i].h == boxes[i].h);
  }
}

TEST_CASE("load_sequence") {
  const fs::path root = scratch("layout");
  const std::vector<BBox> gt(5, BBox{1, 2, 8, 6});

  SUBCASE("frames, boxes and attributes") {
    const fs::path dir = make_sequence(root, "named", 5, gt, "ARC,POC");
    const Sequence s = load_sequence(dir);
    CHECK(s.name == "named");
    CHECK(s.size() == 5);
    CHECK(s.frames.front().filename() == "000001.png");
    CHECK(s.attributes == std::set<std::string>{"ARC", "POC"});
  }
  SUBCASE("0/1 attribute flags follow the UAV order") {
    const auto& order = uav_attribute_order();
    std::string flags;
    for (std::size_t i = 0; i < order.size(); ++i) flags += std::string(i ? "," : "") + (i == 1 ? "1" : "0");
    const Sequence s = load_sequence(make_sequence(root, "flags", 5, gt, flags));
    CHECK(s.attributes == std::set<std::string>{order[1]});
  }
  SUBCASE("count mismatch names both counts") {
    const fs::path dir = make_sequence(root, "short", 10, std::vector<BBox>(9, BBox{1, 2, 8, 6}));
    try {
      load_sequence(dir);
      FAIL("expected DataError");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("frames=10 gt=9") != std::string::npos);
    }
  }
  SUBCASE("dataset discovery is sorted") {
    make_sequence(root, "b", 5, gt);
    make_sequence(root, "a", 5, gt);
    fs::create_directories(root / "not_a_sequence");
    const auto all = load_dataset(root);
    REQUIRE(all.size() == 2);
    CHECK(all[0].name == "a");
    CHECK(all[1].name == "b");
  }
}

TEST_CASE("evaluate_benchmark") {
  const fs::path root = scratch("bench");
  const fs::path results = root / "results";
  fs::create_directories(results);
  std::vector<BBox> gt;
  for (int i = 0; i < 6; ++i) gt.push_back(BBox{2.0 + i, 3, 20, 10});
  const Sequence good = load_sequence(make_sequence(root / "data", "good", 6, gt, "ARC"));
  const Sequence bad = load_sequence(make_sequence(root / "data", "bad", 6, gt, "SV"));
  write_boxes(results / "good.txt", gt);
  write_boxes(results / "bad.txt", shifted(gt, 100));

  SUBCASE("one sequence aggregates to itself") {
    const BenchmarkReport r = evaluate_benchmark({good}, results);
    REQUIRE(r.sequences.size() == 1);
    CHECK(r.aggregate.precision == r.sequences[0].ope.precision);
    CHECK(r.aggregate.auc == r.sequences[0].ope.auc);
  }
  SUBCASE("aggregate is the mean over sequences, attributes filter") {
    const BenchmarkReport r = evaluate_benchmark({good, bad}, results);
    CHECK(r.aggregate.precision20 == doctest::Approx(0.5));
    CHECK(r.attributes.at("ARC").sequences == 1);
    CHECK(r.attributes.at("ARC").ope.precision20 == 1.0);
    CHECK(r.attributes.at("SV").ope.precision20 == 0.0);
    check_monotone(r.aggregate);
  }
  SUBCASE("reading a written results file reproduces the in-memory curves bitwise") {
    Rng rng(5);
    std::vector<BBox> pred;
    for (const BBox& b : gt) pred.push_back(BBox{b.x + rng.uniform(-4, 4), b.y + rng.uniform(-4, 4), b.w * rng.uniform(0.8, 1.2), b.h});
    write_boxes(results / "good.txt", pred);
    const OpeResult direct = ope_curves(pred, gt);
    const BenchmarkReport r = evaluate_benchmark({good}, results);
    CHECK(r.sequences[0].ope.precision == direct.precision);
    CHECK(r.sequences[0].ope.success == direct.success);
    CHECK(r.sequences[0].ope.auc == direct.auc);
  }
  SUBCASE("missing results are skipped with a warning") {
    fs::remove(results / "bad.txt");
    const BenchmarkReport r = evaluate_benchmark({good, bad}, results);
    CHECK(r.sequences.size() == 1);
    REQUIRE(r.warnings.size() == 1);
    CHECK(r.warnings[0].find("bad") != std::string::npos);
  }
  SUBCASE("frame count mismatch rejected") {
    write_boxes(results / "bad.txt", std::vector<BBox>(gt.begin(), gt.begin() + 4));
    CHECK_THROWS_AS(evaluate_benchmark({bad}, results), DataError);
  }
  SUBCASE("report files") {
    const BenchmarkReport r = evaluate_benchmark({good, bad}, results);
    const fs::path out = root / "report";
    write_report(out, r);
    std::ifstream in(out / "report.json");
    const nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j["aggregate"]["precision_at_20"].get<double>() == doctest::Approx(0.5));
    CHECK(j["sequences"].size() == 2);
    CHECK(fs::exists(out / "aggregate_precision.csv"));
    CHECK(fs::exists(out / "attr_ARC_success.csv"));
    std::ifstream csv(out / "aggregate_success.csv");
    int lines = 0;
    for (std::string l; std::getline(csv, l);) ++lines;
    CHECK(lines == kSuccessPoints + 1);
  }
}
