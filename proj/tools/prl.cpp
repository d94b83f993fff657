// Command-line front end: synth, train, track, eval, gradcheck, shapes, bench.
// Exit codes: 0 success, 1 validation failure, 2 I/O failure.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "prl/gradsuite.hpp"
#include "prl/pipeline.hpp"

using namespace prl;
namespace fs = std::filesystem;

namespace {

constexpr int kValidation = 1;
constexpr int kIo = 2;

std::map<std::string, std::string> settings(const std::string& file, const std::vector<std::string>& overrides) {
  std::map<std::string, std::string> kv;
  if (!file.empty()) kv = read_kv_file(file);
  for (const std::string& s : overrides) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw DataError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
  return kv;
}

int cmd_gradcheck(const GradSuiteOptions& o) {
  int failed = 0;
  for (const auto& c : run_grad_suite(o)) {
    const bool ok = c.report.max_rel_error <= 1e-3;
    failed += !ok;
    std::printf("%-28s %s rel %.3e probes %zu (%.2fs)\n", c.name.c_str(), ok ? "ok  " : "FAIL", c.report.max_rel_error,
                c.report.probes, c.seconds);
  }
  if (failed) std::fprintf(stderr, "gradcheck: %d case(s) above 1e-3\n", failed);
  return failed ? kValidation : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Siamese tracker with progressive representation learning"};
  app.require_subcommand(1);

  std::string config_path, out, data, results, checkpoint, loss_log, filter, variant;
  std::vector<std::string> overrides;
  TrackerConfig tcfg;
  GradSuiteOptions gopts;
  int frames = 20;
  std::string preset = "desk";

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset from a JSON config");
  synth->add_option("--config", config_path, "synth config (JSON)")->required();
  synth->add_option("--out", out, "dataset root")->required();

  auto* train = app.add_subcommand("train", "train on a dataset and write a checkpoint");
  train->add_option("--data", data, "sequence directory or dataset root")->required();
  train->add_option("--out", checkpoint, "checkpoint path")->required();
  train->add_option("--config", config_path, "key=value settings file");
  train->add_option("--set", overrides, "key=value override, repeatable");
  train->add_option("--log", loss_log, "loss trace CSV (default <out>.loss.csv)");

  auto* track = app.add_subcommand("track", "track every sequence of a dataset");
  track->add_option("--checkpoint", checkpoint)->required();
  track->add_option("--data", data, "sequence directory or dataset root")->required();
  track->add_option("--out", results, "results directory")->required();
  track->add_option("--window-influence", tcfg.window_influence)->capture_default_str();
  track->add_option("--smooth-lr-k", tcfg.smooth_lr_k)->capture_default_str();

  auto* eval = app.add_subcommand("eval", "one-pass evaluation of a results directory");
  eval->add_option("--data", data, "sequence directory or dataset root")->required();
  eval->add_option("--results", results)->required();
  eval->add_option("--out", out, "report directory")->required();

  auto* grad = app.add_subcommand("gradcheck", "run the gradient-check suite");
  grad->add_option("--filter", gopts.filter, "only cases whose name contains this");
  grad->add_option("--probes", gopts.max_probes)->capture_default_str();
  grad->add_option("--step", gopts.step)->capture_default_str();
  grad->add_option("--seed", gopts.seed)->capture_default_str();

  auto* shapes = app.add_subcommand("shapes", "print the template/search shape trace");
  shapes->add_option("--preset", preset, "desk or standard")->capture_default_str();

  auto* bench = app.add_subcommand("bench", "per-frame latency and attention cost");
  bench->add_option("--checkpoint", checkpoint, "weights to time (default: fresh model from --preset)");
  bench->add_option("--preset", preset, "desk or standard")->capture_default_str();
  bench->add_option("--variant", variant, "ablation variant for a fresh model");
  bench->add_option("--frames", frames)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidation;
  }

  try {
    if (*synth) {
      const auto seqs = synthesize_dataset(config_path, out);
      for (const auto& s : seqs) std::printf("%s %zu frames\n", s.name.c_str(), s.size());
    } else if (*train) {
      const RunConfig rc = run_config_from_kv(settings(config_path, overrides));
      if (loss_log.empty()) loss_log = checkpoint + ".loss.csv";
      const int total = rc.train.total_steps();
      const TrainLog log = train_to_checkpoint(data, rc, checkpoint, loss_log, [&](int step, double lr, const LossTerms& l) {
        if (step % 25 == 0 || step == total - 1) {
          std::fprintf(stderr, "step %d/%d lr %.3g loss %.4f (cls %.4f reg %.4f)\n", step, total, lr, l.total, l.cls, l.reg);
        }
      });
      std::printf("trained %zu steps, final loss %.6g\n", log.loss.size(), log.loss.back());
    } else if (*track) {
      const auto model = load_checkpoint(checkpoint);
      const auto seqs = load_sequences(data);
      track_dataset(*model, seqs, results, tcfg);
      std::printf("tracked %zu sequence(s) into %s\n", seqs.size(), results.c_str());
    } else if (*eval) {
      const BenchmarkReport r = evaluate_to_report(load_sequences(data), results, out);
      for (const auto& w : r.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
      for (const auto& s : r.sequences) std::printf("%-16s p20 %.3f auc %.3f\n", s.name.c_str(), s.ope.precision20, s.ope.auc);
      std::printf("%-16s p20 %.3f auc %.3f\n", "aggregate", r.aggregate.precision20, r.aggregate.auc);
    } else if (*grad) {
      return cmd_gradcheck(gopts);
    } else if (*shapes) {
      const RunConfig rc = run_config_from_kv({{"model.preset", preset}});
      std::fputs(shape_table(rc.model).c_str(), stdout);
    } else if (*bench) {
      std::unique_ptr<PrlModel<float>> model;
      if (!checkpoint.empty()) {
        model = load_checkpoint(checkpoint);
      } else {
        std::map<std::string, std::string> kv{{"model.preset", preset}};
        if (!variant.empty()) kv["model.variant"] = variant;
        model = std::make_unique<PrlModel<float>>(run_config_from_kv(kv).model);
      }
      std::fputs(format_bench(run_bench(*model, frames)).c_str(), stdout);
    }
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kValidation;
  }
  return 0;
}
