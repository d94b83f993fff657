#pragma once

// Desk-scale training: label assignment, losses, SGD with momentum, the
// log-space learning-rate schedule, sample generation and checkpoints.

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <vector>

#include "prl/dataset.hpp"
#include "prl/image.hpp"
#include "prl/model.hpp"

namespace prl {

struct TrainConfig {
  int epochs = 10;
  int steps_per_epoch = 50;
  /// Negative means one sixth of the epochs.
  double warmup_epochs = -1;
  double warmup_lr_start = 5e-4;
  double peak_lr = 1e-2;
  double final_lr = 1e-4;
  int batch_size = 4;
  double lambda_cls = 1.0;
  double lambda_reg = 1.2;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double grad_clip = 0.0;  // global norm; 0 disables
  /// Search-crop center jitter, in search-patch pixels, and log-scale jitter of its side.
  double shift_jitter = 32.0;
  double scale_jitter = 0.15;
  std::uint64_t seed = 7;

  int total_steps() const { return epochs * steps_per_epoch; }
  /// Steps spent rising from warmup_lr_start to peak_lr (at least 2).
  int warmup_steps(int total) const;
  /// Throws std::invalid_argument when the fields are inconsistent.
  void validate() const;

  std::map<std::string, std::string> to_kv() const;
  static TrainConfig from_kv(const std::map<std::string, std::string>& kv);
};

/// Geometric interpolation warmup_lr_start -> peak_lr over the warmup, then
/// peak_lr -> final_lr over the remaining steps. Exact at the three boundaries.
double lr_at(int step, int total_steps, const TrainConfig& config);

struct TrainSample {
  Tensor templ;   // [1,3,Zt,Zt]
  Tensor search;  // [1,3,Zs,Zs]
  BBox gt;        // in search-patch coordinates
  Tensor cls;     // [G,G] in {0,1}
  Tensor reg;     // [4,G,G] target (l,t,r,b) distances from each cell
};

/// Cell of the box center, clamped to the grid.
std::pair<int, int> center_cell(const BBox& gt, const GridGeometry& geometry);

/// Positives are the cells within Euclidean radius `radius` cells of the
/// center cell. Targets are filled for every cell.
void assign_labels(const BBox& gt, const GridGeometry& geometry, Tensor& cls, Tensor& reg,
                   double radius = 2.0);

/// 0.5 * mean softplus(-z) over positives + 0.5 * mean softplus(z) over
/// negatives; just the negative mean when a batch has no positives.
/// logits [N,1,G,G], labels of the same element count.
template <typename T>
Var<T> balanced_bce(Var<T> logits, const BasicTensor<T>& labels);

/// Mean over positive cells of 1 - IoU(predicted box, gt). reg [N,4,G,G]
/// holds (l,t,r,b) distances; gt[n] is sample n's box in search coordinates.
/// Returns a zero scalar when there are no positives.
template <typename T>
Var<T> iou_loss(Var<T> reg, const BasicTensor<T>& labels, const std::vector<BBox>& gt,
                const GridGeometry& geometry);

struct LossTerms {
  double total = 0, cls = 0, reg = 0;
};

template <typename T>
struct LossVars {
  Var<T> total, cls, reg;
};

/// Stacks training samples and evaluates both losses on one graph.
template <typename T>
LossVars<T> training_loss(Graph<T>& g, PrlModel<T>& model, const std::vector<TrainSample>& batch,
                          const TrainConfig& config, bool training);

template <typename T>
class Sgd {
 public:
  Sgd(std::vector<Parameter<T>*> params, double momentum, double weight_decay);
  /// Global-norm clipping (if max_norm > 0) then v = mu v + g + wd w; w -= lr v.
  /// Returns the gradient norm before clipping.
  double step(double lr, double max_norm = 0);
  void zero_grad();

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<BasicTensor<T>> velocity_;
  double momentum_, weight_decay_;
};

/// One forward/backward/update on a batch.
LossTerms training_step(const std::vector<TrainSample>& batch, PrlModel<float>& model, Sgd<float>& opt,
                        double lr, const TrainConfig& config);

/// Frames held in memory with their boxes; draws jittered training pairs.
class SampleSource {
 public:
  SampleSource(const std::vector<Sequence>& sequences, const ModelConfig& model);

  TrainSample draw(Rng& rng, const TrainConfig& config) const;
  std::vector<TrainSample> batch(Rng& rng, const TrainConfig& config) const;
  std::size_t sequences() const { return data_.size(); }

 private:
  struct Entry {
    std::vector<Image> frames;
    std::vector<BBox> gt;
    Tensor templ;
  };
  ModelConfig model_;
  GridGeometry geometry_;
  std::vector<Entry> data_;
};

struct TrainLog {
  std::vector<double> loss;
  std::vector<double> lr;
};

using StepCallback = std::function<void(int step, double lr, const LossTerms& loss)>;

TrainLog train(PrlModel<float>& model, const SampleSource& source, const TrainConfig& config,
               const StepCallback& on_step = {});

struct CheckpointMeta {
  int step = 0;
  double lr = 0;
  double loss = 0;
  ModelConfig model;
  std::map<std::string, std::string> extra;
};

/// Writes `path` (PRLW) and a key=value side file with the meta record.
void save_checkpoint(const std::filesystem::path& path, PrlModel<float>& model, const CheckpointMeta& meta);
std::filesystem::path checkpoint_meta_path(const std::filesystem::path& path);
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);
std::unique_ptr<PrlModel<float>> load_checkpoint(const std::filesystem::path& path);

/// key=value lines; '#' starts a comment.
std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path);
void write_kv_file(const std::filesystem::path& path, const std::map<std::string, std::string>& kv);

}  // namespace prl
