#include "detco/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "detco/augment.hpp"
#include "detco/errors.hpp"
#include "detco/nn/ops.hpp"
#include "detco/rng.hpp"

namespace detco {

Matrix tensor_to_matrix(const Tensor& t) {
  if (t.rank() != 2) throw InputError("expected an N x D tensor, got " + shape_string(t.shape()));
  Matrix m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = t[i];
  return m;
}

Tensor matrix_to_tensor(const Matrix& m) {
  Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(m.data()[i]);
  return t;
}

}  // namespace detco

namespace detco::model {
namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string stage_key(int stage) { return "stage" + std::to_string(kStageNames[stage]); }

const nn::Var& param(const ParamVars& p, const std::string& name) {
  auto it = p.find(name);
  if (it == p.end()) throw StructuralError("missing parameter '" + name + "'");
  return it->second;
}

nn::Var optional_param(const ParamVars& p, const std::string& name) {
  auto it = p.find(name);
  return it == p.end() ? nullptr : it->second;
}

int group_count(int channels, int configured) { return std::gcd(channels, configured); }

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Parameter layout collected while building the architecture so init and
// forward share one description.
struct ParamSpec {
  std::string name;
  std::vector<int> shape;
  enum Kind { kConv, kGamma, kBeta, kLinearWeight, kLinearBias } kind;
  int fan_in = 1;
};

void add_conv(std::vector<ParamSpec>& specs, const std::string& prefix, int cin, int cout, int k) {
  specs.push_back({prefix + ".weight", {cout, cin, k, k}, ParamSpec::kConv, cin * k * k});
}

void add_gn(std::vector<ParamSpec>& specs, const std::string& prefix, int channels) {
  specs.push_back({prefix + ".gamma", {channels}, ParamSpec::kGamma});
  specs.push_back({prefix + ".beta", {channels}, ParamSpec::kBeta});
}

void add_linear(std::vector<ParamSpec>& specs, const std::string& prefix, int din, int dout, bool bias) {
  specs.push_back({prefix + ".weight", {dout, din}, ParamSpec::kLinearWeight, din});
  if (bias) specs.push_back({prefix + ".bias", {dout}, ParamSpec::kLinearBias, din});
}

int toy_downsamples(const EncoderConfig& cfg, int stage) {
  const int prev = stage == 0 ? 1 : cfg.stage_strides[stage - 1];
  const int ratio = cfg.stage_strides[stage] / prev;
  int n = 0;
  while ((1 << n) < ratio) ++n;
  return n;
}

constexpr int kResNetStemWidth = 64;

std::vector<ParamSpec> parameter_specs(const DetcoModel& model) {
  const EncoderConfig& cfg = model.config();
  std::vector<ParamSpec> specs;
  if (cfg.arch == Arch::kToyCnn) {
    int in = 3;
    for (int s = 0; s < kNumStages; ++s) {
      const std::string pre = "encoder." + stage_key(s);
      const int c = cfg.stage_channels[s];
      const int convs = toy_downsamples(cfg, s) + 1;
      for (int j = 0; j < convs; ++j) {
        add_conv(specs, pre + ".conv" + std::to_string(j), in, c, 3);
        add_gn(specs, pre + ".gn" + std::to_string(j), c);
        in = c;
      }
    }
  } else {
    add_conv(specs, "encoder.stem.conv", 3, kResNetStemWidth, 7);
    add_gn(specs, "encoder.stem.gn", kResNetStemWidth);
    int in = kResNetStemWidth;
    for (int s = 0; s < kNumStages; ++s) {
      const int out = cfg.stage_channels[s];
      const int mid = std::max(1, out / 4);
      for (int b = 0; b < cfg.stage_blocks[s]; ++b) {
        const std::string pre = "encoder." + stage_key(s) + ".block" + std::to_string(b);
        add_conv(specs, pre + ".conv1", in, mid, 1);
        add_gn(specs, pre + ".gn1", mid);
        add_conv(specs, pre + ".conv2", mid, mid, 3);
        add_gn(specs, pre + ".gn2", mid);
        add_conv(specs, pre + ".conv3", mid, out, 1);
        add_gn(specs, pre + ".gn3", out);
        if (b == 0) {
          add_conv(specs, pre + ".down.conv", in, out, 1);
          add_gn(specs, pre + ".down.gn", out);
        }
        in = out;
      }
    }
  }
  const int hidden_cfg = cfg.head_hidden_dim;
  for (int s = 0; s < kNumStages; ++s) {
    const int gin = model.global_head_input(s);
    const int gh = hidden_cfg > 0 ? hidden_cfg : gin;
    add_linear(specs, global_head_prefix(s) + ".fc1", gin, gh, cfg.head_bias);
    add_linear(specs, global_head_prefix(s) + ".fc2", gh, cfg.embed_dim, cfg.head_bias);
    const int lin = model.local_head_input(s);
    const int lh = hidden_cfg > 0 ? hidden_cfg : lin;
    add_linear(specs, local_head_prefix(s) + ".fc1", lin, lh, cfg.head_bias);
    add_linear(specs, local_head_prefix(s) + ".fc2", lh, cfg.embed_dim, cfg.head_bias);
  }
  return specs;
}

}  // namespace

std::string arch_name(Arch arch) { return arch == Arch::kToyCnn ? "toy-cnn" : "resnet50-like"; }

Arch parse_arch(const std::string& name) {
  if (name == "toy-cnn") return Arch::kToyCnn;
  if (name == "resnet50-like") return Arch::kResNet50Like;
  throw ConfigError("model.arch: expected one of {resnet50-like, toy-cnn}, got '" + name + "'");
}

void EncoderConfig::validate() const {
  for (int s = 0; s < kNumStages; ++s) {
    if (stage_channels[s] <= 0) throw ConfigError("model.stage_channels: entries must be positive");
    if (stage_strides[s] <= 0 || !is_power_of_two(stage_strides[s])) {
      throw ConfigError("model.stage_strides: entries must be powers of two");
    }
    if (s > 0 && stage_strides[s] <= stage_strides[s - 1]) {
      throw ConfigError("model.stage_strides: must be strictly increasing");
    }
    if (stage_blocks[s] <= 0) throw ConfigError("model.stage_blocks: entries must be positive");
  }
  if (stage_strides[0] < 2) throw ConfigError("model.stage_strides: first stride must be at least 2");
  if (embed_dim < 2) throw ConfigError("model.embed_dim: must be >= 2, got " + std::to_string(embed_dim));
  if (head_hidden_dim < 0) throw ConfigError("model.head_hidden_dim: must be >= 0");
  if (norm_groups <= 0) throw ConfigError("model.norm_groups: must be positive");
  if (arch == Arch::kResNet50Like && stage_strides != std::array<int, kNumStages>{4, 8, 16, 32}) {
    throw ConfigError("model.stage_strides: resnet50-like requires strides 4,8,16,32");
  }
}

EncoderConfig EncoderConfig::resnet50() {
  EncoderConfig cfg;
  cfg.arch = Arch::kResNet50Like;
  cfg.stage_channels = {256, 512, 1024, 2048};
  cfg.stage_blocks = {3, 4, 6, 3};
  cfg.norm_groups = 32;
  return cfg;
}

void ParameterSet::set(const std::string& name, Tensor value) { entries_[name] = std::move(value); }

const Tensor& ParameterSet::at(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructuralError("unknown parameter '" + name + "'");
  return it->second;
}

Tensor& ParameterSet::at(const std::string& name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw StructuralError("unknown parameter '" + name + "'");
  return it->second;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(entries_.size());
  for (const auto& [name, _] : entries_) out.push_back(name);
  return out;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.size();
  return n;
}

std::vector<std::string> structure_mismatches(const ParameterSet& a, const ParameterSet& b) {
  std::vector<std::string> out;
  for (const auto& [name, t] : a) {
    if (!b.contains(name)) {
      out.push_back("missing in second set: " + name);
    } else if (b.at(name).shape() != t.shape()) {
      out.push_back("shape mismatch for " + name + ": " + shape_string(t.shape()) + " vs " +
                    shape_string(b.at(name).shape()));
    }
  }
  for (const auto& [name, _] : b) {
    if (!a.contains(name)) out.push_back("missing in first set: " + name);
  }
  return out;
}

std::string global_head_prefix(int stage) { return "head.global." + stage_key(stage); }
std::string local_head_prefix(int stage) { return "head.local." + stage_key(stage); }

ParamRole param_role(const std::string& name) {
  for (int s = 0; s < kNumStages; ++s) {
    if (name.rfind(global_head_prefix(s) + ".", 0) == 0) return {ParamGroup::kGlobalHead, s};
    if (name.rfind(local_head_prefix(s) + ".", 0) == 0) return {ParamGroup::kLocalHead, s};
  }
  return {ParamGroup::kEncoder, -1};
}

ParamVars bind_parameters(nn::Tape& tape, const ParameterSet& params,
                          const std::function<bool(const std::string&)>& trainable) {
  ParamVars vars;
  vars.reserve(params.size());
  for (const auto& [name, t] : params) {
    const bool grad = tape.recording() && (!trainable || trainable(name));
    vars.emplace(name, grad ? tape.variable(t) : tape.constant(t));
  }
  return vars;
}

ParameterSet collect_gradients(const ParamVars& vars) {
  ParameterSet grads;
  for (const auto& [name, var] : vars) {
    if (var->requires_grad && var->has_grad()) grads.set(name, var->grad);
  }
  return grads;
}

DetcoModel::DetcoModel(EncoderConfig cfg) : cfg_(cfg) { cfg_.validate(); }

void DetcoModel::check_input_side(int side) const {
  if (side <= 0 || side % max_stride() != 0) {
    throw ConfigError("input side " + std::to_string(side) + " is not divisible by the maximum stride " +
                      std::to_string(max_stride()));
  }
}

int DetcoModel::local_head_input(int stage) const {
  return augment::kJigsawPatches * cfg_.stage_channels[stage];
}

ParameterSet DetcoModel::init_parameters(std::uint64_t seed) const {
  ParameterSet params;
  for (const ParamSpec& spec : parameter_specs(*this)) {
    Tensor t(spec.shape);
    Rng rng(derive_seed(seed, {fnv1a(spec.name)}));
    switch (spec.kind) {
      case ParamSpec::kConv: {
        // Kaiming normal, fan-out mode.
        const double fan_out = static_cast<double>(spec.shape[0]) * spec.shape[2] * spec.shape[3];
        const double std = std::sqrt(2.0 / fan_out);
        for (float& v : t.values()) v = static_cast<float>(rng.normal(0.0, std));
        break;
      }
      case ParamSpec::kGamma: t.fill(1.0f); break;
      case ParamSpec::kBeta: t.fill(0.0f); break;
      case ParamSpec::kLinearWeight:
      case ParamSpec::kLinearBias: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (float& v : t.values()) v = static_cast<float>(rng.uniform(-bound, bound));
        break;
      }
    }
    params.set(spec.name, std::move(t));
  }
  return params;
}

void DetcoModel::toy_stages(nn::Tape& tape, const ParamVars& p, nn::Var x,
                            std::array<nn::Var, kNumStages>& out) const {
  for (int s = 0; s < kNumStages; ++s) {
    const std::string pre = "encoder." + stage_key(s);
    const int downs = toy_downsamples(cfg_, s);
    const int groups = group_count(cfg_.stage_channels[s], cfg_.norm_groups);
    for (int j = 0; j <= downs; ++j) {
      const std::string idx = std::to_string(j);
      auto y = nn::conv2d(tape, x, param(p, pre + ".conv" + idx + ".weight"), nullptr, {j < downs ? 2 : 1, 1});
      y = nn::group_norm(tape, y, param(p, pre + ".gn" + idx + ".gamma"), param(p, pre + ".gn" + idx + ".beta"),
                         groups);
      // The last conv of a stage is residual and its sum is left unrectified.
      x = j < downs ? nn::relu(tape, y) : nn::add(tape, y, x);
    }
    out[s] = x;
  }
}

void DetcoModel::resnet_stages(nn::Tape& tape, const ParamVars& p, nn::Var x,
                               std::array<nn::Var, kNumStages>& out) const {
  auto conv_gn = [&](const nn::Var& in, const std::string& conv, const std::string& gn, int stride, int pad,
                     int channels) {
    auto y = nn::conv2d(tape, in, param(p, conv + ".weight"), nullptr, {stride, pad});
    return nn::group_norm(tape, y, param(p, gn + ".gamma"), param(p, gn + ".beta"),
                          group_count(channels, cfg_.norm_groups));
  };
  x = nn::relu(tape, conv_gn(x, "encoder.stem.conv", "encoder.stem.gn", 2, 3, kResNetStemWidth));
  x = nn::max_pool2d(tape, x, 3, 2, 1);
  for (int s = 0; s < kNumStages; ++s) {
    const int outc = cfg_.stage_channels[s];
    const int mid = std::max(1, outc / 4);
    for (int b = 0; b < cfg_.stage_blocks[s]; ++b) {
      const std::string pre = "encoder." + stage_key(s) + ".block" + std::to_string(b);
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      auto y = nn::relu(tape, conv_gn(x, pre + ".conv1", pre + ".gn1", 1, 0, mid));
      y = nn::relu(tape, conv_gn(y, pre + ".conv2", pre + ".gn2", stride, 1, mid));
      y = conv_gn(y, pre + ".conv3", pre + ".gn3", 1, 0, outc);
      auto shortcut = b == 0 ? conv_gn(x, pre + ".down.conv", pre + ".down.gn", stride, 0, outc) : x;
      x = nn::relu(tape, nn::add(tape, y, shortcut));
    }
    out[s] = x;
  }
}

std::array<nn::Var, kNumStages> DetcoModel::forward_stages(nn::Tape& tape, const ParamVars& p,
                                                           const nn::Var& images) const {
  const auto& s = images->value.shape();
  if (s.size() != 4 || s[1] != 3) throw InputError("encoder expects N x 3 x S x S input, got " + shape_string(s));
  if (s[2] != s[3]) throw InputError("encoder expects square inputs, got " + shape_string(s));
  check_input_side(s[2]);
  std::array<nn::Var, kNumStages> out;
  if (cfg_.arch == Arch::kToyCnn) {
    toy_stages(tape, p, images, out);
  } else {
    resnet_stages(tape, p, images, out);
  }
  return out;
}

nn::Var DetcoModel::head(nn::Tape& tape, const ParamVars& p, const std::string& prefix, const nn::Var& x) const {
  auto h = nn::linear(tape, x, param(p, prefix + ".fc1.weight"), optional_param(p, prefix + ".fc1.bias"));
  if (cfg_.head_relu) h = nn::relu(tape, h);
  h = nn::linear(tape, h, param(p, prefix + ".fc2.weight"), optional_param(p, prefix + ".fc2.bias"));
  return nn::l2_normalize_rows(tape, h);
}

nn::Var DetcoModel::global_head(nn::Tape& tape, const ParamVars& p, int stage, const nn::Var& pooled) const {
  return head(tape, p, global_head_prefix(stage), pooled);
}

nn::Var DetcoModel::local_head(nn::Tape& tape, const ParamVars& p, int stage,
                               const nn::Var& concatenated) const {
  return head(tape, p, local_head_prefix(stage), concatenated);
}

nn::Var DetcoModel::concat_patch_features(nn::Tape& tape, const nn::Var& patch_maps) const {
  const int n = patch_maps->value.dim(0);
  if (n % augment::kJigsawPatches != 0) {
    throw InputError("stacked patch batch of " + std::to_string(n) + " is not a multiple of 9");
  }
  const int c = patch_maps->value.dim(1);
  auto pooled = nn::global_avg_pool(tape, patch_maps);
  return nn::reshape(tape, pooled, {n / augment::kJigsawPatches, augment::kJigsawPatches * c});
}

StageFeatures encode_stages(const DetcoModel& model, const ParameterSet& params, const Tensor& images) {
  nn::Tape tape(false);
  auto vars = bind_parameters(tape, params);
  auto taps = model.forward_stages(tape, vars, tape.constant(images));
  StageFeatures out;
  for (int s = 0; s < kNumStages; ++s) out.maps[s] = std::move(taps[s]->value);
  return out;
}

Matrix pool_stage(const Tensor& feature_map) {
  nn::Tape tape(false);
  return tensor_to_matrix(nn::global_avg_pool(tape, tape.constant(feature_map))->value);
}

std::array<Matrix, kNumStages> project_global(const DetcoModel& model, const ParameterSet& params,
                                              const StageFeatures& feats) {
  nn::Tape tape(false);
  auto vars = bind_parameters(tape, params);
  std::array<Matrix, kNumStages> out;
  for (int s = 0; s < kNumStages; ++s) {
    auto pooled = nn::global_avg_pool(tape, tape.constant(feats.maps[s]));
    out[s] = tensor_to_matrix(model.global_head(tape, vars, s, pooled)->value);
  }
  return out;
}

std::array<Matrix, kNumStages> project_local(const DetcoModel& model, const ParameterSet& params,
                                             std::span<const StageFeatures> patch_feats) {
  if (patch_feats.size() != static_cast<std::size_t>(augment::kJigsawPatches)) {
    throw InputError("project_local expects 9 patch feature sets, got " + std::to_string(patch_feats.size()));
  }
  nn::Tape tape(false);
  auto vars = bind_parameters(tape, params);
  std::array<Matrix, kNumStages> out;
  for (int s = 0; s < kNumStages; ++s) {
    const Eigen::Index batch = patch_feats[0].maps[s].dim(0);
    const int c = patch_feats[0].maps[s].dim(1);
    Matrix concat(batch, augment::kJigsawPatches * c);
    for (int j = 0; j < augment::kJigsawPatches; ++j) {
      Matrix pooled = pool_stage(patch_feats[j].maps[s]);
      if (pooled.rows() != batch || pooled.cols() != c) {
        throw InputError("patch feature sets disagree in batch or channel size");
      }
      concat.middleCols(static_cast<Eigen::Index>(j) * c, c) = pooled;
    }
    auto emb = model.local_head(tape, vars, s, tape.constant(matrix_to_tensor(concat)));
    out[s] = tensor_to_matrix(emb->value);
  }
  return out;
}

void momentum_update_inplace(ParameterSet& key, const ParameterSet& query, double m) {
  if (!(m >= 0.0 && m <= 1.0)) throw InputError("momentum must lie in [0,1], got " + std::to_string(m));
  const auto mismatches = structure_mismatches(key, query);
  if (!mismatches.empty()) {
    std::ostringstream os;
    os << "key/query parameter sets are not aligned:";
    for (const auto& line : mismatches) os << "\n  " << line;
    throw StructuralError(os.str());
  }
  const double step = 1.0 - m;
  for (auto& [name, k] : key) {
    const Tensor& q = query.at(name);
    float* kv = k.data();
    const float* qv = q.data();
    // m*k + (1-m)*q written as k + (1-m)(q-k): exact fixed points at m == 1 or q == k.
    for (std::size_t i = 0; i < k.size(); ++i) {
      kv[i] = static_cast<float>(kv[i] + step * (static_cast<double>(qv[i]) - kv[i]));
    }
  }
}

ParameterSet momentum_update(const ParameterSet& key, const ParameterSet& query, double m) {
  ParameterSet out = key;
  momentum_update_inplace(out, query, m);
  return out;
}

}  // namespace detco::model
