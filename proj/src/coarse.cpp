#include "prl/coarse.hpp"

namespace prl {

template <typename T>
GatingController<T>::GatingController(int f1_channels, int f2_channels, int f3_channels, int width,
                                      Rng& rng, double bn_eps, double bn_momentum)
    : f1_proj_("coarse.gc.f1_proj", f1_channels, width, 1, 1, 0, false, rng),
      f1_norm_("coarse.gc.f1_bn", width, bn_eps, bn_momentum),
      f2_proj_("coarse.gc.f2_proj", f2_channels, width, 1, 1, 0, true, rng),
      fuse_("coarse.gc.fuse", 2 * width, f3_channels, 3, 1, 0, true, rng) {}

template <typename T>
GateVars<T> GatingController<T>::forward(Graph<T>& g, Var<T> f1, Var<T> f2, bool training) {
  const Shape s1 = f1.shape();
  const Shape s2 = f2.shape();
  if (s1.rank() != 4 || s2.rank() != 4 || s1[0] != s2[0] || s1[2] < s2[2] || s1[3] < s2[3]) {
    throw ShapeError("gating_controller: misaligned pyramid levels F1 " + s1.str() + " and F2 " +
                     s2.str());
  }
  GateVars<T> out;
  out.i1 = ag::pool(f1_norm_(g, f1_proj_(g, f1), training),
                    ops::PoolSpec::adaptive_max(s2[2], s2[3]));
  out.i2 = f2_proj_(g, f2);
  out.alpha = ag::relu(fuse_(g, ag::concat<T>({out.i1, out.i2}, 1)));
  return out;
}

template <typename T>
void GatingController<T>::collect(std::vector<Parameter<T>*>& out) {
  f1_proj_.collect(out);
  f1_norm_.collect(out);
  f2_proj_.collect(out);
  fuse_.collect(out);
}

template <typename T>
AppearanceRegulator<T>::AppearanceRegulator(int f3_channels, int width, Rng& rng, double bn_eps,
                                            double bn_momentum)
    : cnr_("coarse.ar.cnr", f3_channels, width, rng, bn_eps, bn_momentum) {}

template <typename T>
Var<T> AppearanceRegulator<T>::forward(Graph<T>& g, Var<T> f3, Var<T> alpha, bool training) {
  if (!alpha.valid()) return cnr_(g, f3, training);
  if (alpha.shape() != f3.shape()) {
    throw ShapeError("appearance_regulator: gate " + alpha.shape().str() + " does not match F3 " +
                     f3.shape().str());
  }
  return cnr_(g, ag::add(f3, ag::mul(alpha, f3)), training);
}

template <typename T>
void AppearanceRegulator<T>::collect(std::vector<Parameter<T>*>& out) {
  cnr_.collect(out);
}

template <typename T>
SemanticRegulator<T>::SemanticRegulator(const std::string& name, int prev_channels, int f_channels,
                                        int width, bool modulate, Rng& rng, double bn_eps,
                                        double bn_momentum)
    : cnr_(name + ".cnr", f_channels, width, rng, bn_eps, bn_momentum) {
  if (modulate) modulation_.emplace(name + ".mod", prev_channels, f_channels, 1, 1, 0, true, rng);
}

template <typename T>
Var<T> SemanticRegulator<T>::forward(Graph<T>& g, Var<T> w_prev, Var<T> f, bool training) {
  if (!modulation_) return cnr_(g, f, training);
  const Shape sp = w_prev.shape();
  const Shape sf = f.shape();
  if (sp.rank() != 4 || sf.rank() != 4 || sp[0] != sf[0] || sp[2] < sf[2] || sp[3] < sf[3]) {
    throw ShapeError("semantic_regulator: previous representation " + sp.str() +
                     " cannot be aligned to " + sf.str());
  }
  Var<T> aligned = ag::bilinear_resize(w_prev, sf[2], sf[3]);
  Var<T> gate = (*modulation_)(g, aligned);
  if (gate.shape()[1] != sf[1]) {
    throw ShapeError("semantic_regulator: modulation has " + std::to_string(gate.shape()[1]) +
                     " channels but the current level has " + std::to_string(sf[1]));
  }
  return cnr_(g, ag::add(f, ag::mul(f, gate)), training);
}

template <typename T>
void SemanticRegulator<T>::collect(std::vector<Parameter<T>*>& out) {
  if (modulation_) modulation_->collect(out);
  cnr_.collect(out);
}

template <typename T>
CoarseStage<T>::CoarseStage(const BackboneConfig& bb, const CoarseConfig& config, Rng& rng)
    : config_(config),
      sr5_("coarse.sr5", config.width, bb.channels[4], config.width,
           config.use_sr && !config.level5_only, rng, config.bn_eps, config.bn_momentum) {
  if (config.level5_only) return;
  if (config.use_ar) {
    gate_.emplace(bb.channels[0], bb.channels[1], bb.channels[2], config.gate_width, rng,
                  config.bn_eps, config.bn_momentum);
  }
  ar_.emplace(bb.channels[2], config.width, rng, config.bn_eps, config.bn_momentum);
  sr4_.emplace("coarse.sr4", config.width, bb.channels[3], config.width, config.use_sr, rng,
               config.bn_eps, config.bn_momentum);
}

template <typename T>
CoarseRepsVars<T> CoarseStage<T>::forward(Graph<T>& g, const PyramidVars<T>& p, bool training,
                                          GateVars<T>* gate_out) {
  CoarseRepsVars<T> out;
  if (config_.level5_only) {
    out.w5 = sr5_.forward(g, Var<T>(), p[5], training);
    return out;
  }
  Var<T> alpha;
  if (gate_) {
    GateVars<T> gv = gate_->forward(g, p[1], p[2], training);
    alpha = gv.alpha;
    if (gate_out) *gate_out = gv;
  }
  out.w3 = ar_->forward(g, p[3], alpha, training);
  out.w4 = sr4_->forward(g, out.w3, p[4], training);
  out.w5 = sr5_.forward(g, out.w4, p[5], training);
  return out;
}

template <typename T>
void CoarseStage<T>::collect(std::vector<Parameter<T>*>& out) {
  if (gate_) gate_->collect(out);
  if (ar_) ar_->collect(out);
  if (sr4_) sr4_->collect(out);
  sr5_.collect(out);
}

template class GatingController<float>;
template class GatingController<double>;
template class AppearanceRegulator<float>;
template class AppearanceRegulator<double>;
template class SemanticRegulator<float>;
template class SemanticRegulator<double>;
template class CoarseStage<float>;
template class CoarseStage<double>;

}  // namespace prl
