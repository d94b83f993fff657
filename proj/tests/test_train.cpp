#include <filesystem>

#include "doctest.h"
#include "prl/synth.hpp"
#include "prl/train.hpp"

using namespace prl;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("prl_test_train_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const Sequence& synth_sequence() {
  static const Sequence seq = [] {
    SynthSpec s;
    s.name = "drift";
    s.frames = 8;
    s.seed = 9;
    s.aspect_drift = 0.01;
    return generate_sequence(s, scratch("seq"));
  }();
  return seq;
}

ModelConfig desk(Variant v = Variant::kFull) {
  ModelConfig m = ModelConfig::desk();
  m.variant = v;
  return m;
}

int positives(const Tensor& cls) {
  int n = 0;
  for (float v : cls.data()) n += v > 0.5f;
  return n;
}

}  // namespace

TEST_CASE("learning-rate schedule") {
  TrainConfig c;
  c.epochs = 6;
  c.steps_per_epoch = 50;
  const int total = c.total_steps();
  const int peak = c.warmup_steps(total) - 1;
  REQUIRE(peak == 49);
  CHECK(lr_at(0, total, c) == 5e-4);
  CHECK(lr_at(peak, total, c) == 1e-2);
  CHECK(lr_at(total - 1, total, c) == 1e-4);
  // decay phase spans 250 steps, so its midpoint is step 174
  CHECK(lr_at(peak + 125, total, c) == doctest::Approx(1e-3).epsilon(1e-12));
  for (int s = 1; s <= peak; ++s) CHECK(lr_at(s, total, c) > lr_at(s - 1, total, c));
  for (int s = peak + 1; s < total; ++s) CHECK(lr_at(s, total, c) < lr_at(s - 1, total, c));
  // continuity: neighbours of the peak are one geometric step away
  CHECK(lr_at(peak - 1, total, c) / 1e-2 == doctest::Approx(std::pow(5e-4 / 1e-2, 1.0 / peak)));
  CHECK(lr_at(peak + 1, total, c) / 1e-2 == doctest::Approx(std::pow(1e-4 / 1e-2, 1.0 / 250)));
  CHECK_THROWS_AS(lr_at(total, total, c), std::invalid_argument);
  CHECK_THROWS_AS(lr_at(-1, total, c), std::invalid_argument);

  TrainConfig bad;
  bad.warmup_lr_start = 2e-2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = TrainConfig{};
  bad.final_lr = 1.0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("label assignment") {
  const GridGeometry geo;
  Tensor cls, reg;
  SUBCASE("centered box has the 13 cells of a radius-2 disk") {
    const BBox gt = BBox::from_center(143, 143, 60, 40);
    assign_labels(gt, geo, cls, reg);
    CHECK(positives(cls) == 13);
    CHECK(cls.at(10, 10) == 1.0f);
    CHECK(cls.at(10, 12) == 1.0f);
    CHECK(cls.at(11, 11) == 1.0f);
    CHECK(cls.at(11, 12) == 0.0f);
    const std::size_t c = 10 * 21 + 10;
    CHECK(reg[c] == 30.0f);
    CHECK(reg[441 + c] == 20.0f);
    CHECK(reg[2 * 441 + c] == 30.0f);
    CHECK(reg[3 * 441 + c] == 20.0f);
  }
  SUBCASE("positives are exactly the cells within the radius") {
    Rng rng(1);
    for (int trial = 0; trial < 50; ++trial) {
      const BBox gt = BBox::from_center(rng.uniform(0, 287), rng.uniform(0, 287), 30, 30);
      assign_labels(gt, geo, cls, reg);
      const auto [ci, cj] = center_cell(gt, geo);
      for (int i = 0; i < 21; ++i)
        for (int j = 0; j < 21; ++j)
          REQUIRE((cls.at(i, j) > 0.5f) == ((i - ci) * (i - ci) + (j - cj) * (j - cj) <= 4));
    }
  }
}

TEST_CASE("losses") {
  const GridGeometry geo;
  const std::vector<BBox> gts{BBox::from_center(150, 130, 50, 70), BBox::from_center(120, 160, 40, 30)};
  Tensor labels(Shape{2, 1, 21, 21}), reg(Shape{2, 4, 21, 21}), logits(Shape{2, 1, 21, 21});
  for (int k = 0; k < 2; ++k) {
    Tensor c, r;
    assign_labels(gts[static_cast<std::size_t>(k)], geo, c, r);
    std::copy(c.data().begin(), c.data().end(), labels.data().begin() + k * 441);
    std::copy(r.data().begin(), r.data().end(), reg.data().begin() + k * 4 * 441);
  }
  for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = labels[i] > 0.5f ? 15.0f : -15.0f;

  SUBCASE("saturated correct predictions cost almost nothing") {
    Graph<float> g(false);
    const double bce = balanced_bce(g.constant(logits), labels).value()[0];
    const double iou = iou_loss(g.constant(reg), labels, gts, geo).value()[0];
    CHECK(bce <= 1e-4);
    CHECK(std::abs(iou) <= 1e-4);
    CHECK(bce + 1.2 * iou <= 1e-4);
  }
  SUBCASE("no positives: zero regression term, negative-only classification") {
    Tensor none(labels.shape());
    Graph<float> g(false);
    CHECK(iou_loss(g.constant(reg), none, gts, geo).value()[0] == 0.0f);
    const Tensor zeros(logits.shape());
    CHECK(balanced_bce(g.constant(zeros), none).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
  SUBCASE("balanced weighting gives each class half the mass") {
    Graph<float> g(false);
    const Tensor zeros(logits.shape());
    CHECK(balanced_bce(g.constant(zeros), labels).value()[0] == doctest::Approx(std::log(2.0)).epsilon(1e-6));
  }
}

TEST_CASE("training steps") {
  const Sequence& seq = synth_sequence();
  const ModelConfig mc = desk();
  const SampleSource source({seq}, mc);
  TrainConfig tc;
  tc.batch_size = 2;
  tc.grad_clip = 5;

  SUBCASE("samples carry search-frame labels") {
    Rng rng(2);
    for (int k = 0; k < 10; ++k) {
      const TrainSample s = source.draw(rng, tc);
      CHECK(s.templ.shape() == Shape{1, 3, 127, 127});
      CHECK(s.search.shape() == Shape{1, 3, 287, 287});
      const auto [ci, cj] = center_cell(s.gt, mc.geometry());
      CHECK(s.cls.at(ci, cj) == 1.0f);
      CHECK(positives(s.cls) >= 6);
    }
  }
  SUBCASE("every trainable parameter receives gradient") {
    for (Variant v : {Variant::kFull, Variant::kBaseline, Variant::kBaselineSrFlp, Variant::kBaselineArFlp}) {
      PrlModel<float> model(desk(v));
      Rng rng(3);
      const auto batch = source.batch(rng, tc);
      Sgd<float> opt(model.trainable_parameters(), tc.momentum, 0);
      training_step(batch, model, opt, 0.0, tc);
      for (Parameter<float>* p : model.trainable_parameters()) {
        double norm = 0;
        for (float gv : p->grad.data()) norm += std::abs(gv);
        INFO(to_string(v) << " " << p->name);
        CHECK(norm > 0);
      }
    }
  }
  SUBCASE("overfits one fixed batch") {
    PrlModel<float> model(mc);
    Rng rng(4);
    const auto batch = source.batch(rng, tc);
    Sgd<float> opt(model.trainable_parameters(), tc.momentum, 0);
    const double first = training_step(batch, model, opt, 5e-3, tc).total;
    double last = first;
    for (int s = 1; s < 200; ++s) last = training_step(batch, model, opt, 5e-3, tc).total;
    MESSAGE("overfit loss " << first << " -> " << last);
    CHECK(last < first);
    CHECK(last < 0.1);
  }
}

TEST_CASE("training runs are reproducible and checkpoints round-trip") {
  const Sequence& seq = synth_sequence();
  ModelConfig mc = desk();
  const SampleSource source({seq}, mc);
  TrainConfig tc;
  tc.epochs = 1;
  tc.steps_per_epoch = 4;
  tc.batch_size = 2;
  tc.grad_clip = 5;

  PrlModel<float> a(mc), b(mc);
  const TrainLog la = train(a, source, tc), lb = train(b, source, tc);
  REQUIRE(la.loss.size() == 4);
  for (std::size_t i = 0; i < la.loss.size(); ++i) {
    CHECK(la.loss[i] == lb.loss[i]);
    CHECK(std::isfinite(la.loss[i]));
  }

  const fs::path dir = scratch("ckpt");
  const fs::path path = dir / "model.prlw";
  CheckpointMeta meta{4, la.lr.back(), la.loss.back(), mc, {{"note", "unit"}}};
  save_checkpoint(path, a, meta);
  CHECK(fs::exists(checkpoint_meta_path(path)));
  const CheckpointMeta back = read_checkpoint_meta(path);
  CHECK(back.step == 4);
  CHECK(back.lr == meta.lr);
  CHECK(back.loss == meta.loss);
  CHECK(back.extra.at("note") == "unit");
  CHECK(back.model.to_kv() == mc.to_kv());

  const auto loaded = load_checkpoint(path);
  const auto pa = a.parameters(), pl = loaded->parameters();
  REQUIRE(pa.size() == pl.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i]->name == pl[i]->name);
    CHECK(bitwise_equal(pa[i]->value, pl[i]->value));
  }
  // same weights, same predictions
  Rng rng(5);
  const auto batch = source.batch(rng, tc);
  Graph<float> g1(false), g2(false);
  CHECK(training_loss(g1, a, batch, tc, false).total.value()[0] ==
        training_loss(g2, *loaded, batch, tc, false).total.value()[0]);
}
