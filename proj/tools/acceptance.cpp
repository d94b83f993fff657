// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance [--work DIR] [--only 1,2,...]
//
// Criteria 6, 7 and 9 train desk-preset models on four synthetic sequences
// and take several minutes on one core.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "prl/gradsuite.hpp"
#include "prl/pipeline.hpp"

using namespace prl;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// ---------------------------------------------------------------------------

Outcome shape_trace() {
  const auto t0 = Clock::now();
  Rng rng(1);
  Backbone<float> bb(BackboneConfig{}, rng);
  const FeaturePyramid t = extract_pyramid(bb, oracle::random_tensor<float>(Shape{1, 3, 127, 127}, rng, 0, 1));
  const FeaturePyramid s = extract_pyramid(bb, oracle::random_tensor<float>(Shape{1, 3, 287, 287}, rng, 0, 1));
  const std::array<int, 5> et{29, 12, 10, 8, 6}, es{69, 32, 30, 28, 26};
  bool ok = true;
  for (int k = 1; k <= 5; ++k) {
    ok = ok && t[k].dim(2) == et[static_cast<std::size_t>(k - 1)] && t[k].dim(3) == et[static_cast<std::size_t>(k - 1)];
    ok = ok && s[k].dim(2) == es[static_cast<std::size_t>(k - 1)] && s[k].dim(3) == es[static_cast<std::size_t>(k - 1)];
  }
  std::string xc;
  for (int k = 3; k <= 5; ++k) {
    const Tensor r = ops::depthwise_xcorr(s[k], t[k]);
    ok = ok && r.dim(2) == 21 && r.dim(3) == 21;
    xc += (k > 3 ? "," : "") + std::to_string(r.dim(2)) + "x" + std::to_string(r.dim(3));
  }
  const double secs = since(t0);
  return {ok && secs < 1.0, "extents match, xcorr " + xc + ", " + fmt("%.2f s", secs)};
}

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  const auto cases = run_grad_suite();
  const double secs = since(t0);
  double worst = 0;
  std::string worst_name;
  for (const auto& c : cases) {
    if (c.report.max_rel_error >= worst) {
      worst = c.report.max_rel_error;
      worst_name = c.name;
    }
  }
  return {worst <= 1e-3 && secs < 120,
          std::to_string(cases.size()) + " cases, worst " + fmt("%.2e", worst) + " (" + worst_name + "), " +
              fmt("%.1f s", secs)};
}

Outcome attention_oracle() {
  Rng rng(3);
  double worst = 0, worst_row = 0, max_logit = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const bool large = trial >= 100;
    const int t = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
    const double d = rng.uniform(0.5, 16);
    const double amp = large ? std::sqrt(2e3 * std::sqrt(d) / w) : 1.0;
    std::array<std::array<Tensor, 3>, 3> m;
    for (auto& tier : m)
      for (int j = 0; j < 3; ++j) {
        const double a = j < 2 ? amp : 1.0;
        tier[static_cast<std::size_t>(j)] = oracle::random_tensor<float>(Shape{t, w}, rng, -a, a);
      }
    Graph<float> g(false);
    auto tv = [&](int i) { return TierVars<float>{g.constant(m[i][0]), g.constant(m[i][1]), g.constant(m[i][2])}; };
    const auto h = hierarchy_cross_attention(tv(0), tv(1), tv(2), d);
    if (!large) {
      worst = std::max<double>(worst, max_abs_diff(h.h34.value(), oracle::attention(m[1][0], m[0][1], m[1][1], m[0][2], m[1][2], d)));
      worst = std::max<double>(worst, max_abs_diff(h.h35.value(), oracle::attention(m[2][0], m[0][1], m[2][1], m[0][2], m[2][2], d)));
      worst = std::max<double>(worst, max_abs_diff(h.h45.value(), oracle::attention(m[2][0], m[1][1], m[2][1], m[1][2], m[2][2], d)));
    } else {
      const Tensor logits = ops::matmul(m[2][0], ops::concat<float>({&m[1][1], &m[2][1]}, 0), false, true);
      for (float v : logits.data()) max_logit = std::max(max_logit, std::abs(v / std::sqrt(d)));
    }
    for (const Var<float>* p : {&h.p34, &h.p35, &h.p45}) {
      for (int i = 0; i < t; ++i) {
        double row = 0;
        for (int j = 0; j < 2 * t; ++j) row += p->value().at(i, j);
        worst_row = std::isfinite(row) ? std::max(worst_row, std::abs(row - 1)) : 1e9;
      }
    }
  }
  return {worst <= 1e-5 && worst_row <= 1e-5 && max_logit >= 1e3,
          "100 instances max |diff| " + fmt("%.2e", worst) + ", row-sum error " + fmt("%.2e", worst_row) +
              ", largest logit " + fmt("%.0f", max_logit)};
}

Tensor cnr_oracle(nn::Cnr<float>& cnr, const Tensor& x, bool training) {
  BasicTensor<float> mean = cnr.norm().running_mean().value, var = cnr.norm().running_var().value;
  const Tensor y = ops::conv2d(x, cnr.conv().weight().value, cnr.conv().bias().value, 1, 0);
  return ops::relu(ops::batch_norm(y, cnr.norm().gamma().value, cnr.norm().beta().value, mean, var,
                                   {1e-5, 0.1, training}));
}

Outcome gating_identities() {
  Rng rng(4);
  bool ar_ok = true, sr_ok = true;
  AppearanceRegulator<float> ar(384, 256, rng);
  SemanticRegulator<float> sr4("sr4", 256, 384, 256, true, rng), sr5("sr5", 256, 256, 256, true, rng);
  for (auto* s : {&sr4, &sr5}) {
    s->modulation().weight().value.fill(0.0f);
    s->modulation().bias().value.fill(0.0f);
  }
  for (bool training : {false, true}) {
    const Tensor f3 = oracle::random_tensor<float>(Shape{1, 384, 10, 10}, rng, -1, 2);
    const Tensor f4 = oracle::random_tensor<float>(Shape{1, 384, 8, 8}, rng, -1, 2);
    const Tensor f5 = oracle::random_tensor<float>(Shape{1, 256, 6, 6}, rng, -1, 2);
    const Tensor w3 = cnr_oracle(ar.cnr(), f3, training);
    const Tensor w4 = cnr_oracle(sr4.cnr(), f4, training);
    const Tensor w5 = cnr_oracle(sr5.cnr(), f5, training);
    Graph<float> g(training);
    const Var<float> a3 = ar.forward(g, g.constant(f3), g.constant(Tensor(f3.shape())), training);
    ar_ok = ar_ok && bitwise_equal(a3.value(), w3);
    const Var<float> a4 = sr4.forward(g, a3, g.constant(f4), training);
    sr_ok = sr_ok && bitwise_equal(a4.value(), w4);
    sr_ok = sr_ok && bitwise_equal(sr5.forward(g, a4, g.constant(f5), training).value(), w5);
  }
  return {ar_ok && sr_ok, std::string("AR zero gate ") + (ar_ok ? "bitwise" : "differs") + ", SR zero modulation " +
                              (sr_ok ? "bitwise" : "differs") + " (levels 3-5, train and eval)"};
}

Outcome metric_oracles() {
  Rng rng(5);
  int iou_mismatch = 0;
  double cle_err = 0;
  for (int i = 0; i < 1000; ++i) {
    int v[8];
    for (int k = 0; k < 8; ++k) v[k] = k % 4 < 2 ? rng.uniform_int(0, 40) : rng.uniform_int(1, 30);
    const BBox a{double(v[0]), double(v[1]), double(v[2]), double(v[3])};
    const BBox b{double(v[4]), double(v[5]), double(v[6]), double(v[7])};
    iou_mismatch += iou(a, b) != oracle::raster_iou(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]);
    const BBox c{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(1, 40), rng.uniform(1, 40)};
    const BBox d{rng.uniform(-50, 50), rng.uniform(-50, 50), rng.uniform(1, 40), rng.uniform(1, 40)};
    cle_err = std::max(cle_err, std::abs(cle(c, d) - std::hypot(c.x + c.w / 2 - d.x - d.w / 2, c.y + c.h / 2 - d.y - d.h / 2)));
  }
  std::vector<BBox> gt;
  for (int i = 0; i < 30; ++i) gt.push_back(BBox{3.0 * i, 5, 20.0 + i, 15});
  const OpeResult perfect = ope_curves(gt, gt);
  const bool ok = iou_mismatch == 0 && cle_err <= 1e-9 && perfect.precision20 == 1.0 &&
                  std::abs(perfect.auc - 20.0 / 21) <= 1e-12;
  return {ok, "IoU mismatches " + std::to_string(iou_mismatch) + "/1000, CLE error " + fmt("%.1e", cle_err) +
                  ", perfect p20 " + fmt("%.3f", perfect.precision20) + " AUC " + fmt("%.6f", perfect.auc)};
}

Outcome schedule_endpoints() {
  TrainConfig c;
  const int total = c.total_steps();
  const int peak = c.warmup_steps(total) - 1;
  const bool ok = lr_at(0, total, c) == 5e-4 && lr_at(peak, total, c) == 1e-2 && lr_at(total - 1, total, c) == 1e-4;
  return {ok, "lr(0)=" + fmt("%g", lr_at(0, total, c)) + " lr(" + std::to_string(peak) + ")=" +
                  fmt("%g", lr_at(peak, total, c)) + " lr(" + std::to_string(total - 1) + ")=" +
                  fmt("%g", lr_at(total - 1, total, c))};
}

Outcome cost_report(const fs::path& cli, const fs::path& work) {
  const fs::path out = work / "bench.txt";
  const std::string cmd = "\"" + cli.string() + "\" bench --frames 10 > \"" + out.string() + "\"";
  if (std::system(cmd.c_str()) != 0) return {false, "bench command failed"};
  const std::string text = slurp(out);
  const AttentionCost c = attention_cost(441);
  const bool reported = text.find("tokens 441") != std::string::npos &&
                        text.find("attention_entries tiered " + std::to_string(c.tiered_entries) + " all_pairs " +
                                  std::to_string(c.all_pairs_entries)) != std::string::npos &&
                        text.find("latency_ms mean") != std::string::npos;
  auto line = [&](const std::string& key) {
    const auto p = text.find(key);
    return p == std::string::npos ? std::string() : text.substr(p, text.find('\n', p) - p);
  };
  return {reported && c.tiered_entries < c.all_pairs_entries,
          std::to_string(c.tiered_entries) + " < " + std::to_string(c.all_pairs_entries) + " entries; " +
              line("latency_ms") + "; " + line("attention_time_ratio")};
}

// ---------------------------------------------------------------------------
// Desk-scale runs shared by criteria 6, 7 and 9.

struct Protocol {
  fs::path cli, work, synth_config;
  std::map<std::string, std::string> train_kv{{"model.preset", "desk"},
                                              {"train.epochs", "6"},
                                              {"train.steps_per_epoch", "50"},
                                              {"train.batch_size", "4"},
                                              {"train.grad_clip", "5"}};
};

int run(const std::string& cmd, const fs::path& log) {
  const std::string full = cmd + " >> \"" + log.string() + "\" 2>&1";
  return std::system(full.c_str());
}

// synth -> train -> track -> eval through the command-line tool alone.
bool cli_pipeline(const Protocol& p, const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
  write_kv_file(dir / "train.kv", p.train_kv);
  const std::string exe = "\"" + p.cli.string() + "\"";
  const fs::path log = dir / "log.txt";
  auto q = [](const fs::path& x) { return " \"" + x.string() + "\""; };
  return run(exe + " synth --config" + q(p.synth_config) + " --out" + q(dir / "data"), log) == 0 &&
         run(exe + " train --data" + q(dir / "data") + " --out" + q(dir / "model.prlw") + " --config" +
                 q(dir / "train.kv") + " --log" + q(dir / "loss.csv"),
             log) == 0 &&
         run(exe + " track --checkpoint" + q(dir / "model.prlw") + " --data" + q(dir / "data") + " --out" +
                 q(dir / "results"),
             log) == 0 &&
         run(exe + " eval --data" + q(dir / "data") + " --results" + q(dir / "results") + " --out" + q(dir / "report"),
             log) == 0;
}

BenchmarkReport library_run(const Protocol& p, const std::vector<Sequence>& seqs, const fs::path& data,
                            const std::string& variant, const fs::path& dir) {
  auto kv = p.train_kv;
  kv["model.variant"] = variant;
  fs::create_directories(dir);
  train_to_checkpoint(data, run_config_from_kv(kv), dir / "model.prlw", dir / "loss.csv");
  const auto model = load_checkpoint(dir / "model.prlw");
  track_dataset(*model, seqs, dir / "results");
  return evaluate_to_report(seqs, dir / "results", dir / "report");
}

std::string per_sequence(const BenchmarkReport& r) {
  std::string s;
  for (const auto& q : r.sequences) s += " " + q.name + " " + fmt("%.2f", q.ope.precision20) + "/" + fmt("%.3f", q.ope.auc);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::string work = PRL_BUILD_DIR "/acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "scratch directory")->capture_default_str();
  app.add_option("--only", only, "criteria to run")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const std::set<int> selected(only.begin(), only.end());
  auto want = [&](int k) { return selected.empty() || selected.count(k); };

  Protocol p;
  p.cli = PRL_CLI_PATH;
  p.work = work;
  p.synth_config = fs::path(PRL_SOURCE_DIR) / "docs" / "synth_example.json";
  fs::create_directories(p.work);

  int failed = 0;
  auto report = [&](int k, const std::string& name, const Outcome& o) {
    std::printf("criterion %2d %s  %-22s %s\n", k, o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };
  auto guarded = [&](int k, const std::string& name, const std::function<Outcome()>& fn) {
    if (!want(k)) return;
    try {
      report(k, name, fn());
    } catch (const std::exception& e) {
      report(k, name, {false, std::string("exception: ") + e.what()});
    }
  };

  guarded(1, "shape trace", shape_trace);
  guarded(2, "gradient suite", gradient_suite);
  guarded(3, "attention oracle", attention_oracle);
  guarded(4, "gating identities", gating_identities);
  guarded(5, "metric oracles", metric_oracles);

  if (want(6) || want(7) || want(9)) {
    const auto t0 = Clock::now();
    const bool run_a = cli_pipeline(p, p.work / "run_a");
    const double secs_a = since(t0);
    std::optional<BenchmarkReport> full;
    std::vector<Sequence> seqs;
    if (run_a) {
      seqs = load_sequences(p.work / "run_a" / "data");
      full = evaluate_benchmark(seqs, p.work / "run_a" / "results");
    }
    guarded(6, "overfit closure", [&]() -> Outcome {
      if (!full) return {false, "pipeline failed, see " + (p.work / "run_a" / "log.txt").string()};
      bool ok = full->sequences.size() == 4 && secs_a <= 1800;
      for (const auto& s : full->sequences) ok = ok && s.ope.precision20 >= 0.9 && s.ope.auc >= 0.5;
      return {ok, "p20/AUC" + per_sequence(*full) + ", " + fmt("%.0f s", secs_a)};
    });
    guarded(7, "ablation ladder", [&]() -> Outcome {
      if (!full) return {false, "full run failed"};
      std::string detail = "full AUC " + fmt("%.3f", full->aggregate.auc);
      double baseline_auc = 0;
      bool ran = true;
      for (const char* v : {"baseline", "baseline+flp", "baseline+ar+flp"}) {
        const BenchmarkReport r = library_run(p, seqs, p.work / "run_a" / "data", v, p.work / ("ladder_" + std::string(v)));
        ran = ran && r.sequences.size() == 4;
        if (std::string(v) == "baseline") baseline_auc = r.aggregate.auc;
        detail += std::string(", ") + v + " " + fmt("%.3f", r.aggregate.auc);
      }
      return {ran && full->aggregate.auc >= baseline_auc, detail};
    });
    guarded(9, "determinism", [&]() -> Outcome {
      if (!run_a) return {false, "first run failed"};
      if (!cli_pipeline(p, p.work / "run_b")) return {false, "second run failed"};
      const fs::path a = p.work / "run_a", b = p.work / "run_b";
      int same = 0, total = 0;
      for (const auto& s : seqs) {
        ++total;
        same += slurp(a / "results" / (s.name + ".txt")) == slurp(b / "results" / (s.name + ".txt"));
      }
      const bool loss_same = slurp(a / "loss.csv") == slurp(b / "loss.csv") && !slurp(a / "loss.csv").empty();
      const bool weights_same = slurp(a / "model.prlw") == slurp(b / "model.prlw");
      return {same == total && loss_same,
              std::to_string(same) + "/" + std::to_string(total) + " results files identical, loss trace " +
                  (loss_same ? "identical" : "differs") + ", checkpoint " + (weights_same ? "identical" : "differs")};
    });
  }

  guarded(8, "schedule endpoints", schedule_endpoints);
  guarded(10, "cost report", [&] { return cost_report(p.cli, p.work); });

  std::printf("%s\n", failed ? "acceptance: FAILED" : "acceptance: all criteria passed");
  return failed ? 1 : 0;
}
