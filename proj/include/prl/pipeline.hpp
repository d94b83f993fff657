#pragma once

// The end-to-end steps behind the command-line tool: dataset synthesis,
// training from a dataset directory, tracking a dataset, evaluation, the
// shape-trace table and the latency benchmark.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prl/metrics.hpp"
#include "prl/tracker.hpp"
#include "prl/train.hpp"

namespace prl {

/// A sequence directory (holding groundtruth_rect.txt) or a dataset root.
std::vector<Sequence> load_sequences(const std::filesystem::path& path);

std::vector<Sequence> synthesize_dataset(const std::filesystem::path& config, const std::filesystem::path& out_dir);

struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
};

/// key=value settings. "model.preset" (desk or standard) picks the base model
/// configuration; other keys come from ModelConfig::to_kv and
/// TrainConfig::to_kv. Unknown keys throw DataError.
RunConfig run_config_from_kv(const std::map<std::string, std::string>& kv);

/// Trains on every sequence of `data`, writes the checkpoint and a
/// step,lr,loss,cls,reg CSV with round-trip precision.
TrainLog train_to_checkpoint(const std::filesystem::path& data, const RunConfig& config,
                             const std::filesystem::path& checkpoint, const std::filesystem::path& loss_log,
                             const StepCallback& on_step = {});

/// Tracks every sequence from its first ground-truth box; results go to
/// <results_dir>/<name>.txt.
void track_dataset(PrlModel<float>& model, const std::vector<Sequence>& sequences,
                   const std::filesystem::path& results_dir, const TrackerConfig& config = {});

/// evaluate_benchmark + write_report; throws DataError when nothing was evaluated.
BenchmarkReport evaluate_to_report(const std::vector<Sequence>& sequences, const std::filesystem::path& results_dir,
                                   const std::filesystem::path& report_dir);

/// Template/search extents per level and the correlation size.
std::string shape_table(const ModelConfig& config);

struct BenchResult {
  int frames = 0;
  double mean_ms = 0, min_ms = 0;
  double fps = 0;
  int tokens = 0;
  AttentionCost cost{};
  // one block's score computation, softmax and value product at the model's widths
  double tiered_attention_ms = 0, all_pairs_attention_ms = 0;
};

/// Times `frames` tracker updates on a synthetic sequence after one warm-up frame.
BenchResult run_bench(PrlModel<float>& model, int frames, std::uint64_t seed = 1);
std::string format_bench(const BenchResult& r);

}  // namespace prl
