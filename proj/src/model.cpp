#include "prl/model.hpp"

#include <set>
#include <sstream>
#include <unordered_map>

namespace prl {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kBaseline: return "baseline";
    case Variant::kBaselineFlp: return "baseline+flp";
    case Variant::kBaselineSrFlp: return "baseline+sr+flp";
    case Variant::kBaselineArFlp: return "baseline+ar+flp";
    case Variant::kFull: return "full";
  }
  return "full";
}

Variant parse_variant(const std::string& s) {
  for (Variant v : {Variant::kBaseline, Variant::kBaselineFlp, Variant::kBaselineSrFlp,
                    Variant::kBaselineArFlp, Variant::kFull}) {
    if (to_string(v) == s) return v;
  }
  throw std::invalid_argument("unknown model variant '" + s +
                              "' (expected baseline, baseline+flp, baseline+sr+flp, "
                              "baseline+ar+flp or full)");
}

ModelConfig ModelConfig::standard() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.backbone.channels = {16, 32, 48, 48, 32};
  c.coarse_width = 32;
  c.gate_width = 32;
  c.d_model = 48;
  c.tier_dim = 16;
  c.ffn_hidden = 96;
  c.attn_scale_dim = 16;
  c.head_hidden = 32;
  return c;
}

int ModelConfig::grid() const {
  const auto t = trace_pyramid_extents(backbone, template_size);
  const auto s = trace_pyramid_extents(backbone, search_size);
  const int g5 = s[4] - t[4] + 1;
  if (g5 <= 0) throw ShapeError("template level 5 larger than search level 5");
  if (uses_flp()) {
    for (int k = 2; k < 4; ++k) {
      const int gk = s[static_cast<std::size_t>(k)] - t[static_cast<std::size_t>(k)] + 1;
      if (gk != g5) {
        throw ShapeError("correlation extents differ between levels: level " + std::to_string(k + 1) +
                         " gives " + std::to_string(gk) + ", level 5 gives " + std::to_string(g5));
      }
    }
  }
  return g5;
}

GridGeometry ModelConfig::geometry() const {
  int total_stride = 1;
  for (std::size_t i = 0; i < 5; ++i) {
    total_stride *= backbone.strides[i];
    if (backbone.pool_after[i]) total_stride *= backbone.pool_stride;
  }
  return {grid(), static_cast<double>(total_stride), (search_size - 1) / 2.0};
}

void ModelConfig::validate() const {
  if (template_size >= search_size) throw ShapeError("template patch must be smaller than search patch");
  grid();
  if (uses_flp()) hmg_config().validate();
  if (coarse_width <= 0 || gate_width <= 0 || head_hidden <= 0) {
    throw ShapeError("model widths must be positive");
  }
}

CoarseConfig ModelConfig::coarse_config() const {
  CoarseConfig c;
  c.width = coarse_width;
  c.gate_width = gate_width;
  c.use_ar = uses_ar();
  c.use_sr = uses_sr();
  c.level5_only = !uses_flp();
  c.bn_eps = bn_eps;
  c.bn_momentum = bn_momentum;
  return c;
}

HmgConfig ModelConfig::hmg_config() const {
  HmgConfig h;
  h.in_channels = 3 * coarse_width;
  h.d_model = d_model;
  h.tier_dim = tier_dim;
  h.num_blocks = num_blocks;
  h.ffn_hidden = ffn_hidden;
  h.attn_scale_dim = attn_scale_dim;
  const int g = grid();
  h.tokens = g * g;
  h.ln_eps = ln_eps;
  return h;
}

HeadConfig ModelConfig::head_config() const {
  HeadConfig h;
  h.in_channels = uses_flp() ? d_model : coarse_width;
  h.hidden = head_hidden;
  h.stride = geometry().stride;
  return h;
}

namespace {

template <typename A>
std::string join(const A& a) {
  std::ostringstream os;
  for (std::size_t i = 0; i < a.size(); ++i) os << (i ? "," : "") << a[i];
  return os.str();
}

template <typename V>
void split_into(const std::string& s, std::array<V, 5>& out, const std::string& key) {
  std::istringstream is(s);
  std::string tok;
  std::size_t i = 0;
  while (std::getline(is, tok, ',')) {
    if (i >= 5) throw std::invalid_argument(key + ": expected 5 values");
    out[i++] = static_cast<V>(std::stoi(tok));
  }
  if (i != 5) throw std::invalid_argument(key + ": expected 5 values");
}

}  // namespace

std::map<std::string, std::string> ModelConfig::to_kv() const {
  std::map<std::string, std::string> kv;
  kv["model.variant"] = to_string(variant);
  kv["model.backbone.in_channels"] = std::to_string(backbone.in_channels);
  kv["model.backbone.channels"] = join(backbone.channels);
  kv["model.backbone.kernels"] = join(backbone.kernels);
  kv["model.backbone.strides"] = join(backbone.strides);
  kv["model.backbone.pool_after"] = join(backbone.pool_after);
  kv["model.backbone.pool_kernel"] = std::to_string(backbone.pool_kernel);
  kv["model.backbone.pool_stride"] = std::to_string(backbone.pool_stride);
  kv["model.coarse_width"] = std::to_string(coarse_width);
  kv["model.gate_width"] = std::to_string(gate_width);
  kv["model.d_model"] = std::to_string(d_model);
  kv["model.tier_dim"] = std::to_string(tier_dim);
  kv["model.num_blocks"] = std::to_string(num_blocks);
  kv["model.ffn_hidden"] = std::to_string(ffn_hidden);
  std::ostringstream d;
  d.precision(17);
  d << attn_scale_dim;
  kv["model.attn_scale_dim"] = d.str();
  kv["model.head_hidden"] = std::to_string(head_hidden);
  kv["model.template_size"] = std::to_string(template_size);
  kv["model.search_size"] = std::to_string(search_size);
  kv["model.seed"] = std::to_string(seed);
  return kv;
}

ModelConfig ModelConfig::from_kv(const std::map<std::string, std::string>& kv) {
  ModelConfig c;
  auto get = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto* v = get("model.variant")) c.variant = parse_variant(*v);
  if (auto* v = get("model.backbone.in_channels")) c.backbone.in_channels = std::stoi(*v);
  if (auto* v = get("model.backbone.channels")) split_into(*v, c.backbone.channels, "channels");
  if (auto* v = get("model.backbone.kernels")) split_into(*v, c.backbone.kernels, "kernels");
  if (auto* v = get("model.backbone.strides")) split_into(*v, c.backbone.strides, "strides");
  if (auto* v = get("model.backbone.pool_after")) split_into(*v, c.backbone.pool_after, "pool_after");
  if (auto* v = get("model.backbone.pool_kernel")) c.backbone.pool_kernel = std::stoi(*v);
  if (auto* v = get("model.backbone.pool_stride")) c.backbone.pool_stride = std::stoi(*v);
  if (auto* v = get("model.coarse_width")) c.coarse_width = std::stoi(*v);
  if (auto* v = get("model.gate_width")) c.gate_width = std::stoi(*v);
  if (auto* v = get("model.d_model")) c.d_model = std::stoi(*v);
  if (auto* v = get("model.tier_dim")) c.tier_dim = std::stoi(*v);
  if (auto* v = get("model.num_blocks")) c.num_blocks = std::stoi(*v);
  if (auto* v = get("model.ffn_hidden")) c.ffn_hidden = std::stoi(*v);
  if (auto* v = get("model.attn_scale_dim")) c.attn_scale_dim = std::stod(*v);
  if (auto* v = get("model.head_hidden")) c.head_hidden = std::stoi(*v);
  if (auto* v = get("model.template_size")) c.template_size = std::stoi(*v);
  if (auto* v = get("model.search_size")) c.search_size = std::stoi(*v);
  if (auto* v = get("model.seed")) c.seed = std::stoull(*v);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

template <typename T>
PrlModel<T>::PrlModel(const ModelConfig& config)
    : config_((config.validate(), config)),
      rng_(config.seed),
      backbone_(config.backbone, rng_),
      coarse_(config.backbone, config.coarse_config(), rng_),
      hmg_(config.uses_flp() ? std::make_unique<Hmg<T>>(config.hmg_config(), rng_) : nullptr),
      head_(config.head_config(), rng_) {
  std::set<std::string> names;
  for (Parameter<T>* p : parameters()) {
    if (!names.insert(p->name).second) throw std::logic_error("duplicate parameter name " + p->name);
  }
}

template <typename T>
CoarseRepsVars<T> PrlModel<T>::encode(Graph<T>& g, Var<T> patch, bool training) {
  return coarse_.forward(g, backbone_.forward(g, patch, training), training);
}

template <typename T>
HeadVars<T> PrlModel<T>::predict(Graph<T>& g, const CoarseRepsVars<T>& search,
                                 const CoarseRepsVars<T>& templ) {
  if (!hmg_) return head_.forward(g, ag::depthwise_xcorr(search.w5, templ.w5));
  CorrelationVars<T> maps =
      correlate_levels(search.w3, search.w4, search.w5, templ.w3, templ.w4, templ.w5);
  const int batch = maps.r3.shape()[0];
  std::vector<Var<T>> fused;
  for (int n = 0; n < batch; ++n) {
    CorrelationVars<T> one = maps;
    if (batch > 1) {
      one = {ag::slice(maps.r3, 0, n, n + 1), ag::slice(maps.r4, 0, n, n + 1),
             ag::slice(maps.r5, 0, n, n + 1)};
    }
    fused.push_back(tokens_to_grid(hmg_->forward(g, one)));
  }
  return head_.forward(g, batch > 1 ? ag::concat(fused, 0) : fused.front());
}

template <typename T>
std::vector<Parameter<T>*> PrlModel<T>::parameters() {
  std::vector<Parameter<T>*> out;
  backbone_.collect(out);
  coarse_.collect(out);
  if (hmg_) hmg_->collect(out);
  head_.collect(out);
  return out;
}

template <typename T>
std::vector<Parameter<T>*> PrlModel<T>::trainable_parameters() {
  std::vector<Parameter<T>*> out;
  for (Parameter<T>* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

template <typename T>
std::vector<NamedTensor> PrlModel<T>::state() {
  std::vector<NamedTensor> out;
  for (Parameter<T>* p : parameters()) out.push_back({p->name, p->value.template cast<float>()});
  return out;
}

template <typename T>
void PrlModel<T>::load_state(const std::vector<NamedTensor>& entries) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const NamedTensor& e : entries) by_name.emplace(e.name, &e.value);
  for (Parameter<T>* p : parameters()) {
    auto it = by_name.find(p->name);
    if (it == by_name.end()) throw IoError("weights: missing entry " + p->name);
    if (it->second->shape() != p->value.shape()) {
      throw IoError("weights: entry " + p->name + " has shape " + it->second->shape().str() +
                    ", model expects " + p->value.shape().str());
    }
    p->value = it->second->template cast<T>();
  }
}

template class PrlModel<float>;
template class PrlModel<double>;

}  // namespace prl
