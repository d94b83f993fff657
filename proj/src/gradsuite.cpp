#include "prl/gradsuite.hpp"

#include <chrono>
#include <functional>

#include "prl/model.hpp"
#include "prl/train.hpp"

namespace prl {
namespace {

using D = double;
using DT = BasicTensor<double>;
using DV = Var<double>;
using DG = Graph<double>;
using MultiFn = std::function<DV(DG&, const std::vector<DV>&)>;

DT random(Shape s, Rng& rng, double lo = -1, double hi = 1) {
  DT t(s);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

DV flat(DV v) { return ag::reshape(v, Shape{static_cast<int>(v.value().size())}); }

DV flat_concat(const std::vector<DV>& parts) {
  std::vector<DV> f;
  for (const DV& p : parts) f.push_back(flat(p));
  return ag::concat(f, 0);
}

void merge(GradCheckReport& into, const GradCheckReport& r) {
  if (r.max_rel_error >= into.max_rel_error) {
    into.max_rel_error = r.max_rel_error;
    into.analytic = r.analytic;
    into.numeric = r.numeric;
  }
  into.probes += r.probes;
}

// Checks fn against each input in turn (the others held constant) and
// against every trainable parameter.
GradCheckReport check(const MultiFn& fn, const std::vector<DT>& inputs, const std::vector<Parameter<D>*>& params,
                      const GradSuiteOptions& o) {
  GradCheckReport worst;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto one = [&](DG& g, DV x) {
      std::vector<DV> vs;
      for (std::size_t j = 0; j < inputs.size(); ++j) vs.push_back(j == k ? x : g.constant(inputs[j]));
      return fn(g, vs);
    };
    merge(worst, grad_check<D>(one, inputs[k], o.step, {o.max_probes, o.seed + k}));
  }
  std::vector<Parameter<D>*> trainable;
  for (Parameter<D>* p : params) {
    if (p->trainable) trainable.push_back(p);
  }
  if (!trainable.empty()) {
    auto all = [&](DG& g) {
      std::vector<DV> vs;
      for (const DT& t : inputs) vs.push_back(g.constant(t));
      return fn(g, vs);
    };
    merge(worst, grad_check_params<D>(all, trainable, o.step, {o.max_probes, o.seed + 101}));
  }
  return worst;
}

struct Case {
  std::string name;
  std::function<GradCheckReport(const GradSuiteOptions&)> run;
};

template <typename Module>
std::vector<Parameter<D>*> params_of(Module& m) {
  std::vector<Parameter<D>*> out;
  m.collect(out);
  return out;
}

std::vector<Case> primitive_cases() {
  std::vector<Case> cs;
  auto add = [&](std::string name, MultiFn fn, std::function<std::vector<DT>(Rng&)> make) {
    cs.push_back({std::move(name), [fn, make](const GradSuiteOptions& o) {
                    Rng rng(o.seed);
                    return check(fn, make(rng), {}, o);
                  }});
  };

  add("conv2d", [](DG&, const std::vector<DV>& v) { return ag::conv2d(v[0], v[1], v[2], 2, 1); },
      [](Rng& r) { return std::vector{random({2, 3, 6, 6}, r), random({4, 3, 3, 3}, r), random({4}, r)}; });
  add("conv2d.nobias", [](DG&, const std::vector<DV>& v) { return ag::conv2d(v[0], v[1], DV(), 1, 0); },
      [](Rng& r) { return std::vector{random({1, 2, 5, 5}, r), random({3, 2, 3, 3}, r)}; });
  add("batch_norm.train",
      [](DG&, const std::vector<DV>& v) {
        DT mean(Shape{4}), var(Shape{4});
        var.fill(1.0);
        return ag::batch_norm(v[0], v[1], v[2], mean, var, {1e-5, 0.1, true});
      },
      [](Rng& r) { return std::vector{random({3, 4, 3, 3}, r), random({4}, r, 0.5, 1.5), random({4}, r)}; });
  add("batch_norm.eval",
      [](DG&, const std::vector<DV>& v) {
        DT mean(Shape{4}), var(Shape{4});
        for (int c = 0; c < 4; ++c) {
          mean[static_cast<std::size_t>(c)] = 0.1 * c - 0.2;
          var[static_cast<std::size_t>(c)] = 0.5 + 0.3 * c;
        }
        return ag::batch_norm(v[0], v[1], v[2], mean, var, {1e-5, 0.1, false});
      },
      [](Rng& r) { return std::vector{random({2, 4, 3, 3}, r), random({4}, r, 0.5, 1.5), random({4}, r)}; });
  add("pool.max_fixed", [](DG&, const std::vector<DV>& v) { return ag::pool(v[0], ops::PoolSpec::max_fixed(3, 2)); },
      [](Rng& r) { return std::vector{random({2, 3, 7, 7}, r)}; });
  add("pool.adaptive_max",
      [](DG&, const std::vector<DV>& v) { return ag::pool(v[0], ops::PoolSpec::adaptive_max(4, 5)); },
      [](Rng& r) { return std::vector{random({1, 3, 9, 11}, r)}; });
  add("relu", [](DG&, const std::vector<DV>& v) { return ag::relu(v[0]); },
      [](Rng& r) { return std::vector{random({3, 5}, r)}; });
  add("bilinear_resize.up", [](DG&, const std::vector<DV>& v) { return ag::bilinear_resize(v[0], 7, 9); },
      [](Rng& r) { return std::vector{random({1, 2, 4, 5}, r)}; });
  add("bilinear_resize.down", [](DG&, const std::vector<DV>& v) { return ag::bilinear_resize(v[0], 4, 3); },
      [](Rng& r) { return std::vector{random({2, 2, 9, 8}, r)}; });
  add("linear", [](DG&, const std::vector<DV>& v) { return ag::linear(v[0], v[1], v[2]); },
      [](Rng& r) { return std::vector{random({5, 4}, r), random({4, 3}, r), random({3}, r)}; });
  for (int mode = 0; mode < 4; ++mode) {
    const bool ta = mode & 1, tb = mode & 2;
    add(std::string("matmul") + (ta ? ".ta" : "") + (tb ? ".tb" : ""),
        [ta, tb](DG&, const std::vector<DV>& v) { return ag::matmul(v[0], v[1], ta, tb); },
        [ta, tb](Rng& r) {
          return std::vector{random(ta ? Shape{4, 3} : Shape{3, 4}, r), random(tb ? Shape{5, 4} : Shape{4, 5}, r)};
        });
  }
  add("softmax_rows", [](DG&, const std::vector<DV>& v) { return ag::softmax_rows(v[0]); },
      [](Rng& r) { return std::vector{random({4, 6}, r, -3, 3)}; });
  add("layer_norm", [](DG&, const std::vector<DV>& v) { return ag::layer_norm(v[0], v[1], v[2], 1e-5); },
      [](Rng& r) { return std::vector{random({4, 6}, r), random({6}, r, 0.5, 1.5), random({6}, r)}; });
  add("depthwise_xcorr", [](DG&, const std::vector<DV>& v) { return ag::depthwise_xcorr(v[0], v[1]); },
      [](Rng& r) { return std::vector{random({2, 3, 6, 6}, r), random({2, 3, 3, 3}, r)}; });
  add("concat.axis0", [](DG&, const std::vector<DV>& v) { return ag::concat(std::vector<DV>{v[0], v[1]}, 0); },
      [](Rng& r) { return std::vector{random({2, 3}, r), random({4, 3}, r)}; });
  add("concat.axis1", [](DG&, const std::vector<DV>& v) { return ag::concat(std::vector<DV>{v[0], v[1]}, 1); },
      [](Rng& r) { return std::vector{random({1, 2, 3, 3}, r), random({1, 4, 3, 3}, r)}; });
  add("slice", [](DG&, const std::vector<DV>& v) { return ag::slice(v[0], 1, 1, 4); },
      [](Rng& r) { return std::vector{random({4, 5}, r)}; });
  add("add", [](DG&, const std::vector<DV>& v) { return ag::add(v[0], v[1]); },
      [](Rng& r) { return std::vector{random({3, 4}, r), random({3, 4}, r)}; });
  add("mul", [](DG&, const std::vector<DV>& v) { return ag::mul(v[0], v[1]); },
      [](Rng& r) { return std::vector{random({3, 4}, r), random({3, 4}, r)}; });
  add("scale", [](DG&, const std::vector<DV>& v) { return ag::scale(v[0], 0.7); },
      [](Rng& r) { return std::vector{random({3, 4}, r)}; });
  add("exp", [](DG&, const std::vector<DV>& v) { return ag::exp(v[0]); },
      [](Rng& r) { return std::vector{random({3, 4}, r)}; });
  add("sum", [](DG&, const std::vector<DV>& v) { return ag::sum(v[0]); },
      [](Rng& r) { return std::vector{random({3, 4}, r)}; });
  add("weighted_sum",
      [](DG&, const std::vector<DV>& v) {
        DT w(Shape{3, 4});
        for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.25 * static_cast<double>(i) - 1.0;
        return ag::weighted_sum(v[0], w);
      },
      [](Rng& r) { return std::vector{random({3, 4}, r)}; });
  add("reshape", [](DG&, const std::vector<DV>& v) { return ag::reshape(v[0], Shape{2, 6}); },
      [](Rng& r) { return std::vector{random({3, 4}, r)}; });
  add("map_to_tokens", [](DG&, const std::vector<DV>& v) { return ag::map_to_tokens(v[0]); },
      [](Rng& r) { return std::vector{random({1, 3, 2, 4}, r)}; });
  add("tokens_to_map", [](DG&, const std::vector<DV>& v) { return ag::tokens_to_map(v[0], 2, 4); },
      [](Rng& r) { return std::vector{random({8, 3}, r)}; });
  return cs;
}

BackboneConfig tiny_backbone() {
  BackboneConfig b;
  b.channels = {4, 5, 6, 6, 4};
  return b;
}

ModelConfig tiny_model() {
  ModelConfig m;
  m.backbone = tiny_backbone();
  m.coarse_width = 3;
  m.gate_width = 3;
  m.d_model = 6;
  m.tier_dim = 2;
  m.num_blocks = 1;
  m.ffn_hidden = 8;
  m.attn_scale_dim = 2;
  m.head_hidden = 3;
  m.template_size = 87;
  m.search_size = 103;  // grid 3 at every level
  m.variant = Variant::kFull;
  return m;
}

std::vector<Case> composite_cases() {
  std::vector<Case> cs;

  cs.push_back({"gating_controller", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  GatingController<D> gc(4, 5, 6, 3, rng);
                  auto fn = [&](DG& g, const std::vector<DV>& v) { return gc.forward(g, v[0], v[1], true).alpha; };
                  return check(fn, {random({2, 4, 15, 15}, rng), random({2, 5, 7, 7}, rng)}, params_of(gc), o);
                }});
  cs.push_back({"appearance_regulator", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  AppearanceRegulator<D> ar(6, 3, rng);
                  auto fn = [&](DG& g, const std::vector<DV>& v) { return ar.forward(g, v[0], v[1], true); };
                  return check(fn, {random({2, 6, 5, 5}, rng), random({2, 6, 5, 5}, rng, 0, 1)}, params_of(ar), o);
                }});
  cs.push_back({"semantic_regulator", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  SemanticRegulator<D> sr("sr", 3, 6, 3, true, rng);
                  auto fn = [&](DG& g, const std::vector<DV>& v) { return sr.forward(g, v[0], v[1], true); };
                  return check(fn, {random({2, 3, 5, 5}, rng), random({2, 6, 3, 3}, rng)}, params_of(sr), o);
                }});
  cs.push_back({"backbone+coarse_stage", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  Backbone<D> bb(tiny_backbone(), rng);
                  CoarseConfig cc;
                  cc.width = 3;
                  cc.gate_width = 3;
                  CoarseStage<D> stage(tiny_backbone(), cc, rng);
                  auto fn = [&](DG& g, const std::vector<DV>& v) {
                    const CoarseRepsVars<D> w = stage.forward(g, bb.forward(g, v[0], true), true);
                    return flat_concat({w.w3, w.w4, w.w5});
                  };
                  auto params = params_of(bb);
                  stage.collect(params);
                  return check(fn, {random({2, 3, 87, 87}, rng, 0, 1)}, params, o);
                }});
  cs.push_back({"hierarchy_cross_attention", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  std::vector<DT> in;
                  for (int k = 0; k < 9; ++k) in.push_back(random({5, 4}, rng));
                  auto fn = [](DG&, const std::vector<DV>& v) {
                    const auto h = hierarchy_cross_attention<D>({v[0], v[1], v[2]}, {v[3], v[4], v[5]},
                                                                {v[6], v[7], v[8]}, 4.0);
                    return ag::concat(std::vector<DV>{h.h34, h.h35, h.h45}, 1);
                  };
                  return check(fn, in, {}, o);
                }});
  cs.push_back({"hmg_block", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  HmgConfig hc;
                  hc.in_channels = 6;
                  hc.d_model = 12;
                  hc.tier_dim = 4;
                  hc.ffn_hidden = 16;
                  hc.attn_scale_dim = 4;
                  hc.tokens = 9;
                  HmgBlock<D> block(0, hc, rng);
                  auto fn = [&](DG& g, const std::vector<DV>& v) { return block.forward(g, v[0]); };
                  return check(fn, {random({9, 12}, rng)}, params_of(block), o);
                }});
  cs.push_back({"hmg", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  HmgConfig hc;
                  hc.in_channels = 6;
                  hc.d_model = 12;
                  hc.tier_dim = 4;
                  hc.ffn_hidden = 16;
                  hc.attn_scale_dim = 4;
                  hc.tokens = 9;
                  hc.num_blocks = 2;
                  Hmg<D> hmg(hc, rng);
                  auto fn = [&](DG& g, const std::vector<DV>& v) { return hmg.forward(g, {v[0], v[1], v[2]}); };
                  return check(fn, {random({1, 2, 3, 3}, rng), random({1, 2, 3, 3}, rng), random({1, 2, 3, 3}, rng)},
                               params_of(hmg), o);
                }});
  cs.push_back({"tracking_head", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  HeadConfig hc;
                  hc.in_channels = 5;
                  hc.hidden = 4;
                  TrackingHead<D> head(hc, rng);
                  auto fn = [&](DG& g, const std::vector<DV>& v) {
                    const HeadVars<D> h = head.forward(g, v[0]);
                    return flat_concat({h.cls, h.reg});
                  };
                  return check(fn, {random({2, 5, 5, 5}, rng, -0.5, 0.5)}, params_of(head), o);
                }});
  cs.push_back({"balanced_bce", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  DT labels(Shape{2, 1, 5, 5});
                  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = (i % 7 == 3) ? 1.0 : 0.0;
                  auto fn = [labels](DG&, const std::vector<DV>& v) { return balanced_bce<D>(v[0], labels); };
                  return check(fn, {random({2, 1, 5, 5}, rng, -3, 3)}, {}, o);
                }});
  cs.push_back({"iou_loss", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  const GridGeometry geo{5, 8.0, 40.0};
                  const std::vector<BBox> gt{{25, 28, 30, 26}, {30, 22, 22, 34}};
                  DT labels(Shape{2, 1, 5, 5});
                  for (int n = 0; n < 2; ++n) {
                    Tensor cls(Shape{5, 5}), reg(Shape{4, 5, 5});
                    assign_labels(gt[static_cast<std::size_t>(n)], geo, cls, reg, 1.0);
                    for (int c = 0; c < 25; ++c) labels[static_cast<std::size_t>(n * 25 + c)] = cls[static_cast<std::size_t>(c)];
                  }
                  auto fn = [labels, gt, geo](DG&, const std::vector<DV>& v) { return iou_loss<D>(v[0], labels, gt, geo); };
                  return check(fn, {random({2, 4, 5, 5}, rng, 8, 24)}, {}, o);
                }});
  cs.push_back({"model.full", [](const GradSuiteOptions& o) {
                  Rng rng(o.seed);
                  PrlModel<D> model(tiny_model());
                  auto fn = [&](DG& g, const std::vector<DV>& v) {
                    const auto t = model.encode(g, v[0], true);
                    const auto s = model.encode(g, v[1], true);
                    const HeadVars<D> h = model.predict(g, s, t);
                    return flat_concat({h.cls, h.reg});
                  };
                  return check(fn, {random({2, 3, 87, 87}, rng, 0, 1), random({2, 3, 103, 103}, rng, 0, 1)},
                               model.parameters(), o);
                }});
  return cs;
}

std::vector<Case> all_cases() {
  std::vector<Case> cs = primitive_cases();
  for (Case& c : composite_cases()) cs.push_back(std::move(c));
  return cs;
}

}  // namespace

std::vector<std::string> grad_suite_names() {
  std::vector<std::string> names;
  for (const Case& c : all_cases()) names.push_back(c.name);
  return names;
}

std::vector<GradSuiteCase> run_grad_suite(const GradSuiteOptions& options) {
  std::vector<GradSuiteCase> out;
  for (const Case& c : all_cases()) {
    if (!options.filter.empty() && c.name.find(options.filter) == std::string::npos) continue;
    const auto t0 = std::chrono::steady_clock::now();
    GradSuiteCase r;
    r.name = c.name;
    r.report = c.run(options);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace prl
