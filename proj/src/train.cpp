#include "prl/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "prl/tracker.hpp"
#include "prl/weights_io.hpp"

namespace prl {

int TrainConfig::warmup_steps(int total) const {
  const double we = warmup_epochs < 0 ? epochs / 6.0 : warmup_epochs;
  const int w = static_cast<int>(std::lround(we * steps_per_epoch));
  return std::clamp(w, 2, std::max(2, total - 1));
}

void TrainConfig::validate() const {
  if (epochs < 1 || steps_per_epoch < 1) throw std::invalid_argument("train: epochs and steps_per_epoch must be >= 1");
  if (total_steps() < 3) throw std::invalid_argument("train: at least 3 steps are needed for the schedule");
  if (!(warmup_lr_start > 0) || warmup_lr_start > peak_lr) {
    throw std::invalid_argument("train: need 0 < warmup_lr_start <= peak_lr");
  }
  if (!(final_lr > 0) || final_lr > peak_lr) throw std::invalid_argument("train: need 0 < final_lr <= peak_lr");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train: momentum must lie in [0,1)");
  if (lambda_cls < 0 || lambda_reg < 0) throw std::invalid_argument("train: loss weights must be nonnegative");
}

namespace {

std::string num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

std::map<std::string, std::string> TrainConfig::to_kv() const {
  return {{"train.epochs", std::to_string(epochs)},
          {"train.steps_per_epoch", std::to_string(steps_per_epoch)},
          {"train.warmup_epochs", num(warmup_epochs)},
          {"train.warmup_lr_start", num(warmup_lr_start)},
          {"train.peak_lr", num(peak_lr)},
          {"train.final_lr", num(final_lr)},
          {"train.batch_size", std::to_string(batch_size)},
          {"train.lambda_cls", num(lambda_cls)},
          {"train.lambda_reg", num(lambda_reg)},
          {"train.momentum", num(momentum)},
          {"train.weight_decay", num(weight_decay)},
          {"train.grad_clip", num(grad_clip)},
          {"train.shift_jitter", num(shift_jitter)},
          {"train.scale_jitter", num(scale_jitter)},
          {"train.seed", std::to_string(seed)}};
}

TrainConfig TrainConfig::from_kv(const std::map<std::string, std::string>& kv) {
  TrainConfig c;
  auto d = [&](const char* k, double& dst) {
    if (auto it = kv.find(k); it != kv.end()) dst = std::stod(it->second);
  };
  auto i = [&](const char* k, int& dst) {
    if (auto it = kv.find(k); it != kv.end()) dst = std::stoi(it->second);
  };
  i("train.epochs", c.epochs);
  i("train.steps_per_epoch", c.steps_per_epoch);
  d("train.warmup_epochs", c.warmup_epochs);
  d("train.warmup_lr_start", c.warmup_lr_start);
  d("train.peak_lr", c.peak_lr);
  d("train.final_lr", c.final_lr);
  i("train.batch_size", c.batch_size);
  d("train.lambda_cls", c.lambda_cls);
  d("train.lambda_reg", c.lambda_reg);
  d("train.momentum", c.momentum);
  d("train.weight_decay", c.weight_decay);
  d("train.grad_clip", c.grad_clip);
  d("train.shift_jitter", c.shift_jitter);
  d("train.scale_jitter", c.scale_jitter);
  if (auto it = kv.find("train.seed"); it != kv.end()) c.seed = std::stoull(it->second);
  c.validate();
  return c;
}

double lr_at(int step, int total_steps, const TrainConfig& c) {
  if (step < 0 || step >= total_steps) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0," +
                                std::to_string(total_steps) + ")");
  }
  const int w = c.warmup_steps(total_steps);
  const int peak_step = w - 1;
  if (step == 0) return c.warmup_lr_start;
  if (step == peak_step) return c.peak_lr;
  if (step == total_steps - 1) return c.final_lr;
  if (step < peak_step) {
    const double t = static_cast<double>(step) / peak_step;
    return std::exp(std::log(c.warmup_lr_start) + t * (std::log(c.peak_lr) - std::log(c.warmup_lr_start)));
  }
  const double t = static_cast<double>(step - peak_step) / (total_steps - 1 - peak_step);
  return std::exp(std::log(c.peak_lr) + t * (std::log(c.final_lr) - std::log(c.peak_lr)));
}

// ---------------------------------------------------------------------------

std::pair<int, int> center_cell(const BBox& gt, const GridGeometry& geo) {
  auto cell = [&](double p) {
    const int k = static_cast<int>(std::lround((p - geo.center) / geo.stride)) + geo.center_cell();
    return std::clamp(k, 0, geo.grid - 1);
  };
  return {cell(gt.cy()), cell(gt.cx())};
}

void assign_labels(const BBox& gt, const GridGeometry& geo, Tensor& cls, Tensor& reg, double radius) {
  const int g = geo.grid;
  cls = Tensor(Shape{g, g});
  reg = Tensor(Shape{4, g, g});
  const auto [ci, cj] = center_cell(gt, geo);
  const std::size_t cells = static_cast<std::size_t>(g) * g;
  for (int i = 0; i < g; ++i) {
    for (int j = 0; j < g; ++j) {
      const std::size_t c = static_cast<std::size_t>(i) * g + j;
      const double di = i - ci, dj = j - cj;
      cls[c] = di * di + dj * dj <= radius * radius ? 1.f : 0.f;
      const double px = geo.cell_x(j), py = geo.cell_y(i);
      reg[c] = static_cast<float>(px - gt.x);
      reg[cells + c] = static_cast<float>(py - gt.y);
      reg[2 * cells + c] = static_cast<float>(gt.x + gt.w - px);
      reg[3 * cells + c] = static_cast<float>(gt.y + gt.h - py);
    }
  }
}

template <typename T>
Var<T> balanced_bce(Var<T> logits, const BasicTensor<T>& labels) {
  if (labels.size() != logits.value().size()) {
    throw ShapeError("balanced_bce: " + std::to_string(labels.size()) + " labels for logits " +
                     logits.shape().str());
  }
  const BasicTensor<T>& z = logits.value();
  std::size_t npos = 0;
  for (T l : labels.data()) npos += l > T(0.5);
  const std::size_t nneg = labels.size() - npos;
  const double wpos = npos ? 0.5 / static_cast<double>(npos) : 0.0;
  const double wneg = nneg ? (npos ? 0.5 : 1.0) / static_cast<double>(nneg) : 0.0;
  auto softplus = [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); };
  double loss = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = z[i];
    loss += labels[i] > T(0.5) ? wpos * softplus(-v) : wneg * softplus(v);
  }
  const int zi = logits.id();
  return logits.graph().record(
      BasicTensor<T>::scalar(static_cast<T>(loss)), {zi}, [=](Graph<T>& gr, int self) {
        const double go = gr.grad(self)[0];
        const BasicTensor<T>& zv = gr.value(zi);
        BasicTensor<T> gz(zv.shape());
        for (std::size_t i = 0; i < zv.size(); ++i) {
          const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(zv[i])));
          gz[i] = static_cast<T>(go * (labels[i] > T(0.5) ? wpos * (s - 1.0) : wneg * s));
        }
        gr.add_grad(zi, gz);
      });
}

namespace {

struct IouTerms {
  double iou;
  double d[4];  // d IoU / d (l,t,r,b)
};

IouTerms iou_with_grad(double px, double py, double l, double t, double r, double b, const BBox& gt) {
  const double x0 = px - l, y0 = py - t, x1 = px + r, y1 = py + b;
  const double gx0 = gt.x, gy0 = gt.y, gx1 = gt.x + gt.w, gy1 = gt.y + gt.h;
  const double iw = std::min(x1, gx1) - std::max(x0, gx0);
  const double ih = std::min(y1, gy1) - std::max(y0, gy0);
  const double ap = (l + r) * (t + b);
  const double ag = gt.w * gt.h;
  IouTerms out{};
  if (iw <= 0 || ih <= 0) return out;  // disjoint: flat
  const double inter = iw * ih;
  const double u = ap + ag - inter;
  out.iou = inter / u;
  const double di = (u + inter) / (u * u);  // d IoU / d I
  const double da = -inter / (u * u);       // d IoU / d Ap
  const double dl_i = x0 > gx0 ? ih : 0.0, dr_i = x1 < gx1 ? ih : 0.0;
  const double dt_i = y0 > gy0 ? iw : 0.0, db_i = y1 < gy1 ? iw : 0.0;
  out.d[0] = di * dl_i + da * (t + b);
  out.d[1] = di * dt_i + da * (l + r);
  out.d[2] = di * dr_i + da * (t + b);
  out.d[3] = di * db_i + da * (l + r);
  return out;
}

}  // namespace

template <typename T>
Var<T> iou_loss(Var<T> reg, const BasicTensor<T>& labels, const std::vector<BBox>& gt,
                const GridGeometry& geo) {
  const Shape s = reg.shape();
  if (s.rank() != 4 || s[1] != 4 || s[2] != geo.grid || s[3] != geo.grid) {
    throw ShapeError("iou_loss: expected [N,4," + std::to_string(geo.grid) + "," + std::to_string(geo.grid) +
                     "] regression, got " + s.str());
  }
  const int n = s[0];
  const std::size_t cells = static_cast<std::size_t>(geo.grid) * geo.grid;
  if (labels.size() != cells * static_cast<std::size_t>(n) || gt.size() != static_cast<std::size_t>(n)) {
    throw ShapeError("iou_loss: labels or boxes do not match batch " + std::to_string(n));
  }
  std::size_t npos = 0;
  for (T l : labels.data()) npos += l > T(0.5);
  const BasicTensor<T>& v = reg.value();
  double loss = 0;
  BasicTensor<T> grad(s);
  for (int k = 0; k < n; ++k) {
    for (std::size_t c = 0; c < cells; ++c) {
      if (!(labels[k * cells + c] > T(0.5))) continue;
      const int i = static_cast<int>(c / static_cast<std::size_t>(geo.grid));
      const int j = static_cast<int>(c % static_cast<std::size_t>(geo.grid));
      const std::size_t base = static_cast<std::size_t>(k) * 4 * cells + c;
      const IouTerms it = iou_with_grad(geo.cell_x(j), geo.cell_y(i), v[base], v[base + cells],
                                        v[base + 2 * cells], v[base + 3 * cells], gt[static_cast<std::size_t>(k)]);
      loss += 1.0 - it.iou;
      for (int q = 0; q < 4; ++q) grad[base + q * cells] = static_cast<T>(-it.d[q] / static_cast<double>(npos));
    }
  }
  if (npos) loss /= static_cast<double>(npos);
  const int ri = reg.id();
  return reg.graph().record(BasicTensor<T>::scalar(static_cast<T>(loss)), {ri},
                            [=](Graph<T>& gr, int self) {
                              const T go = gr.grad(self)[0];
                              BasicTensor<T> g = grad;
                              for (auto& e : g.data()) e *= go;
                              gr.add_grad(ri, g);
                            });
}

namespace {

template <typename T>
Var<T> stack_patches(Graph<T>& g, const std::vector<TrainSample>& batch, bool templ) {
  const Tensor& first = templ ? batch.front().templ : batch.front().search;
  const int side = first.dim(2);
  BasicTensor<T> out(Shape{static_cast<int>(batch.size()), 3, side, side});
  const std::size_t each = first.size();
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const Tensor& p = templ ? batch[k].templ : batch[k].search;
    require_shape(p.shape(), first.shape(), "training batch patch");
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(k * each));
  }
  return g.constant(std::move(out));
}

}  // namespace

template <typename T>
LossVars<T> training_loss(Graph<T>& g, PrlModel<T>& model, const std::vector<TrainSample>& batch,
                          const TrainConfig& config, bool training) {
  if (batch.empty()) throw std::invalid_argument("training_step: empty batch");
  const GridGeometry geo = model.config().geometry();
  const CoarseRepsVars<T> t = model.encode(g, stack_patches(g, batch, true), training);
  const CoarseRepsVars<T> s = model.encode(g, stack_patches(g, batch, false), training);
  const HeadVars<T> out = model.predict(g, s, t);
  const std::size_t cells = static_cast<std::size_t>(geo.grid) * geo.grid;
  BasicTensor<T> labels(Shape{static_cast<int>(batch.size()), 1, geo.grid, geo.grid});
  std::vector<BBox> boxes;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    require_shape(batch[k].cls.shape(), Shape{geo.grid, geo.grid}, "training labels");
    for (std::size_t c = 0; c < cells; ++c) labels[k * cells + c] = static_cast<T>(batch[k].cls[c]);
    boxes.push_back(batch[k].gt);
  }
  LossVars<T> lv;
  lv.cls = balanced_bce(out.cls, labels);
  lv.reg = iou_loss(out.reg, labels, boxes, geo);
  lv.total = ag::add(ag::scale(lv.cls, static_cast<T>(config.lambda_cls)),
                     ag::scale(lv.reg, static_cast<T>(config.lambda_reg)));
  return lv;
}

// ---------------------------------------------------------------------------

template <typename T>
Sgd<T>::Sgd(std::vector<Parameter<T>*> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
  for (Parameter<T>* p : params_) velocity_.emplace_back(p->value.shape());
}

template <typename T>
void Sgd<T>::zero_grad() {
  for (Parameter<T>* p : params_) p->zero_grad();
}

template <typename T>
double Sgd<T>::step(double lr, double max_norm) {
  double sq = 0;
  for (Parameter<T>* p : params_) {
    for (T g : p->grad.data()) sq += static_cast<double>(g) * g;
  }
  const double norm = std::sqrt(sq);
  const double clip = max_norm > 0 && norm > max_norm ? max_norm / norm : 1.0;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Parameter<T>& p = *params_[k];
    BasicTensor<T>& v = velocity_[k];
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double g = clip * p.grad[i] + weight_decay_ * p.value[i];
      v[i] = static_cast<T>(momentum_ * v[i] + g);
      p.value[i] = static_cast<T>(p.value[i] - lr * v[i]);
    }
  }
  return norm;
}

LossTerms training_step(const std::vector<TrainSample>& batch, PrlModel<float>& model, Sgd<float>& opt,
                        double lr, const TrainConfig& config) {
  opt.zero_grad();
  Graph<float> g;
  const LossVars<float> lv = training_loss(g, model, batch, config, true);
  value_and_grad(g, lv.total, model.trainable_parameters());
  opt.step(lr, config.grad_clip);
  return {lv.total.value()[0], lv.cls.value()[0], lv.reg.value()[0]};
}

// ---------------------------------------------------------------------------

SampleSource::SampleSource(const std::vector<Sequence>& sequences, const ModelConfig& model)
    : model_(model), geometry_(model.geometry()) {
  if (sequences.empty()) throw std::invalid_argument("training: no sequences");
  for (const Sequence& seq : sequences) {
    Entry e;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      try {
        e.frames.push_back(load_image(seq.frames[i]));
      } catch (const IoError& err) {
        throw IoError(seq.name + " frame " + std::to_string(i) + ": " + err.what());
      }
    }
    e.gt = seq.gt;
    const BBox& b = e.gt.front();
    e.templ = crop_patch(e.frames.front(), b.cx(), b.cy(), template_side(b.w, b.h), model.template_size);
    data_.push_back(std::move(e));
  }
}

TrainSample SampleSource::draw(Rng& rng, const TrainConfig& config) const {
  const Entry& e = data_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data_.size()) - 1))];
  const std::size_t t = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(e.frames.size()) - 1));
  const BBox& b = e.gt[t];
  const double side = search_side(b.w, b.h, model_.template_size, model_.search_size) *
                      std::exp(rng.uniform(-config.scale_jitter, config.scale_jitter));
  const double scale = side / model_.search_size;
  const double dx = rng.uniform(-config.shift_jitter, config.shift_jitter) * scale;
  const double dy = rng.uniform(-config.shift_jitter, config.shift_jitter) * scale;
  const double cx = b.cx() + dx, cy = b.cy() + dy;
  TrainSample s;
  s.templ = e.templ;
  s.search = crop_patch(e.frames[t], cx, cy, side, model_.search_size);
  s.gt = BBox::from_center(geometry_.center + (b.cx() - cx) / scale, geometry_.center + (b.cy() - cy) / scale,
                           b.w / scale, b.h / scale);
  assign_labels(s.gt, geometry_, s.cls, s.reg);
  return s;
}

std::vector<TrainSample> SampleSource::batch(Rng& rng, const TrainConfig& config) const {
  std::vector<TrainSample> out;
  for (int k = 0; k < config.batch_size; ++k) out.push_back(draw(rng, config));
  return out;
}

TrainLog train(PrlModel<float>& model, const SampleSource& source, const TrainConfig& config,
               const StepCallback& on_step) {
  config.validate();
  Rng rng(config.seed);
  Sgd<float> opt(model.trainable_parameters(), config.momentum, config.weight_decay);
  TrainLog log;
  const int total = config.total_steps();
  for (int step = 0; step < total; ++step) {
    const double lr = lr_at(step, total, config);
    const LossTerms l = training_step(source.batch(rng, config), model, opt, lr, config);
    if (!std::isfinite(l.total)) throw std::runtime_error("training diverged at step " + std::to_string(step));
    log.loss.push_back(l.total);
    log.lr.push_back(lr);
    if (on_step) on_step(step, lr, l);
  }
  return log;
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw DataError(path.string() + " line " + std::to_string(lineno) + ": expected key=value");
    }
    auto strip = [](std::string s) {
      const auto x = s.find_first_not_of(" \t\r");
      const auto y = s.find_last_not_of(" \t\r");
      return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
    };
    kv[strip(line.substr(0, eq))] = strip(line.substr(eq + 1));
  }
  return kv;
}

void write_kv_file(const std::filesystem::path& path, const std::map<std::string, std::string>& kv) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& [k, v] : kv) out << k << '=' << v << '\n';
  if (!out) throw IoError("cannot write " + path.string());
}

std::filesystem::path checkpoint_meta_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".meta";
  return p;
}

void save_checkpoint(const std::filesystem::path& path, PrlModel<float>& model, const CheckpointMeta& meta) {
  save_weights(path, model.state());
  auto kv = model.config().to_kv();
  kv["step"] = std::to_string(meta.step);
  kv["lr"] = num(meta.lr);
  kv["loss"] = num(meta.loss);
  for (const auto& [k, v] : meta.extra) kv[k] = v;
  write_kv_file(checkpoint_meta_path(path), kv);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
  const auto kv = read_kv_file(checkpoint_meta_path(path));
  CheckpointMeta m;
  if (auto it = kv.find("step"); it != kv.end()) m.step = std::stoi(it->second);
  if (auto it = kv.find("lr"); it != kv.end()) m.lr = std::stod(it->second);
  if (auto it = kv.find("loss"); it != kv.end()) m.loss = std::stod(it->second);
  m.model = ModelConfig::from_kv(kv);
  for (const auto& [k, v] : kv) {
    if (k.rfind("model.", 0) != 0 && k != "step" && k != "lr" && k != "loss") m.extra[k] = v;
  }
  return m;
}

std::unique_ptr<PrlModel<float>> load_checkpoint(const std::filesystem::path& path) {
  const CheckpointMeta meta = read_checkpoint_meta(path);
  auto model = std::make_unique<PrlModel<float>>(meta.model);
  model->load_state(load_weights(path));
  return model;
}

template Var<float> balanced_bce(Var<float>, const BasicTensor<float>&);
template Var<double> balanced_bce(Var<double>, const BasicTensor<double>&);
template Var<float> iou_loss(Var<float>, const BasicTensor<float>&, const std::vector<BBox>&, const GridGeometry&);
template Var<double> iou_loss(Var<double>, const BasicTensor<double>&, const std::vector<BBox>&,
                              const GridGeometry&);
template LossVars<float> training_loss(Graph<float>&, PrlModel<float>&, const std::vector<TrainSample>&,
                                       const TrainConfig&, bool);
template LossVars<double> training_loss(Graph<double>&, PrlModel<double>&, const std::vector<TrainSample>&,
                                        const TrainConfig&, bool);
template class Sgd<float>;
template class Sgd<double>;

}  // namespace prl
