#include "prl/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "prl/synth.hpp"

namespace prl {

namespace fs = std::filesystem;

std::vector<Sequence> load_sequences(const fs::path& path) {
  if (!fs::is_directory(path)) throw IoError("not a directory: " + path.string());
  if (fs::exists(path / "groundtruth_rect.txt")) return {load_sequence(path)};
  auto all = load_dataset(path);
  if (all.empty()) throw DataError("no sequences under " + path.string());
  return all;
}

std::vector<Sequence> synthesize_dataset(const fs::path& config, const fs::path& out_dir) {
  std::vector<Sequence> out;
  for (const SynthSpec& s : load_synth_config(config)) out.push_back(generate_sequence(s, out_dir / s.name));
  return out;
}

RunConfig run_config_from_kv(const std::map<std::string, std::string>& kv) {
  RunConfig rc;
  std::map<std::string, std::string> model_kv, train_kv;
  if (auto it = kv.find("model.preset"); it != kv.end()) {
    if (it->second == "desk") {
      rc.model = ModelConfig::desk();
    } else if (it->second == "standard") {
      rc.model = ModelConfig::standard();
    } else {
      throw DataError("model.preset must be desk or standard, got '" + it->second + "'");
    }
  }
  model_kv = rc.model.to_kv();
  train_kv = rc.train.to_kv();
  const auto known_model = model_kv;
  const auto known_train = train_kv;
  for (const auto& [k, v] : kv) {
    if (k == "model.preset") continue;
    if (known_model.count(k)) {
      model_kv[k] = v;
    } else if (known_train.count(k)) {
      train_kv[k] = v;
    } else {
      throw DataError("unknown setting '" + k + "'");
    }
  }
  try {
    rc.model = ModelConfig::from_kv(model_kv);
    rc.train = TrainConfig::from_kv(train_kv);
  } catch (const std::logic_error& e) {
    // stoi/stod failures and validation errors alike
    throw DataError(std::string("invalid setting: ") + e.what());
  }
  rc.train.validate();
  return rc;
}

TrainLog train_to_checkpoint(const fs::path& data, const RunConfig& config, const fs::path& checkpoint,
                             const fs::path& loss_log, const StepCallback& on_step) {
  config.train.validate();
  const auto sequences = load_sequences(data);
  PrlModel<float> model(config.model);
  const SampleSource source(sequences, config.model);
  std::vector<LossTerms> terms;
  const TrainLog log = train(model, source, config.train, [&](int step, double lr, const LossTerms& l) {
    terms.push_back(l);
    if (on_step) on_step(step, lr, l);
  });
  if (checkpoint.has_parent_path()) fs::create_directories(checkpoint.parent_path());
  CheckpointMeta meta;
  meta.step = static_cast<int>(log.loss.size());
  meta.lr = log.lr.empty() ? 0 : log.lr.back();
  meta.loss = log.loss.empty() ? 0 : log.loss.back();
  meta.model = config.model;
  meta.extra = config.train.to_kv();
  save_checkpoint(checkpoint, model, meta);

  std::ofstream out(loss_log);
  if (!out) throw IoError("cannot write " + loss_log.string());
  out << "step,lr,loss,cls,reg\n";
  char line[160];
  for (std::size_t i = 0; i < terms.size(); ++i) {
    std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g,%.17g\n", i, log.lr[i], terms[i].total, terms[i].cls,
                  terms[i].reg);
    out << line;
  }
  return log;
}

void track_dataset(PrlModel<float>& model, const std::vector<Sequence>& sequences, const fs::path& results_dir,
                   const TrackerConfig& config) {
  std::error_code ec;
  fs::create_directories(results_dir, ec);
  if (ec) throw IoError("cannot create " + results_dir.string() + ": " + ec.message());
  for (const Sequence& seq : sequences) {
    const auto boxes = track_sequence(seq.frames, seq.gt.front(), model, config);
    write_boxes(results_dir / (seq.name + ".txt"), boxes);
  }
}

BenchmarkReport evaluate_to_report(const std::vector<Sequence>& sequences, const fs::path& results_dir,
                                   const fs::path& report_dir) {
  const BenchmarkReport report = evaluate_benchmark(sequences, results_dir);
  if (report.sequences.empty()) throw DataError("no results found in " + results_dir.string());
  write_report(report_dir, report);
  return report;
}

std::string shape_table(const ModelConfig& config) {
  const auto t = trace_pyramid_extents(config.backbone, config.template_size);
  const auto s = trace_pyramid_extents(config.backbone, config.search_size);
  std::ostringstream os;
  os << "input " << config.template_size << "×" << config.template_size << " / " << config.search_size << "×"
     << config.search_size << "\n";
  for (int k = 0; k < 5; ++k) {
    const int a = t[static_cast<std::size_t>(k)], b = s[static_cast<std::size_t>(k)];
    os << "F" << k + 1 << " " << a << "×" << a << " / " << b << "×" << b;
    if (k >= 2) os << " → xcorr " << b - a + 1 << "×" << b - a + 1;
    os << "\n";
  }
  return os.str();
}

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Best of `reps` timings of fn.
template <typename F>
double best_ms(int reps, F&& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    best = std::min(best, elapsed_ms(t0));
  }
  return best;
}

Tensor random_matrix(int rows, int cols, Rng& rng) {
  Tensor t(Shape{rows, cols});
  for (float& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

}  // namespace

BenchResult run_bench(PrlModel<float>& model, int frames, std::uint64_t seed) {
  if (frames < 1) throw std::invalid_argument("bench: need at least one frame");
  SynthSpec spec;
  spec.name = "bench";
  spec.seed = seed;
  spec.frames = frames + 2;
  const auto boxes = synth_boxes(spec);
  Tracker tracker(model);
  tracker.init(render_frame(spec, 0), boxes[0]);
  tracker.update(render_frame(spec, 1));  // warm-up

  BenchResult r;
  r.frames = frames;
  r.min_ms = 1e300;
  double total = 0;
  for (int i = 0; i < frames; ++i) {
    const Image im = render_frame(spec, i + 2);
    const auto t0 = std::chrono::steady_clock::now();
    tracker.update(im);
    const double ms = elapsed_ms(t0);
    total += ms;
    r.min_ms = std::min(r.min_ms, ms);
  }
  r.mean_ms = total / frames;
  r.fps = 1000.0 / r.mean_ms;

  const int grid = model.config().grid();
  const int w = model.config().tier_dim;
  r.tokens = grid * grid;
  r.cost = attention_cost(static_cast<std::uint64_t>(r.tokens));
  Rng rng(seed);
  std::array<Tensor, 3> q, k, v;
  for (int i = 0; i < 3; ++i) {
    q[static_cast<std::size_t>(i)] = random_matrix(r.tokens, w, rng);
    k[static_cast<std::size_t>(i)] = random_matrix(r.tokens, w, rng);
    v[static_cast<std::size_t>(i)] = random_matrix(r.tokens, w, rng);
  }
  const float scale = static_cast<float>(1.0 / std::sqrt(model.config().attn_scale_dim));
  auto attend = [&](const Tensor& query, const std::vector<const Tensor*>& keys, const std::vector<const Tensor*>& vals) {
    Tensor s = ops::matmul(query, ops::concat(keys, 0), false, true);
    for (float& e : s.data()) e *= scale;
    return ops::matmul(ops::softmax_rows(s), ops::concat(vals, 0));
  };
  r.tiered_attention_ms = best_ms(5, [&] {
    attend(q[1], {&k[0], &k[1]}, {&v[0], &v[1]});
    attend(q[2], {&k[0], &k[2]}, {&v[0], &v[2]});
    attend(q[2], {&k[1], &k[2]}, {&v[1], &v[2]});
  });
  r.all_pairs_attention_ms = best_ms(5, [&] {
    for (int i = 0; i < 3; ++i) attend(q[static_cast<std::size_t>(i)], {&k[0], &k[1], &k[2]}, {&v[0], &v[1], &v[2]});
  });
  return r;
}

std::string format_bench(const BenchResult& r) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << "frames " << r.frames << "\n";
  os << "latency_ms mean " << r.mean_ms << " min " << r.min_ms << "\n";
  os << "fps " << r.fps << "\n";
  os << "tokens " << r.tokens << "\n";
  os << "attention_entries tiered " << r.cost.tiered_entries << " all_pairs " << r.cost.all_pairs_entries << "\n";
  os.precision(3);
  os << "attention_entry_ratio " << static_cast<double>(r.cost.tiered_entries) / r.cost.all_pairs_entries << "\n";
  os << "attention_ms tiered " << r.tiered_attention_ms << " all_pairs " << r.all_pairs_attention_ms << "\n";
  os << "attention_time_ratio " << r.tiered_attention_ms / r.all_pairs_attention_ms << "\n";
  return os.str();
}

}  // namespace prl
