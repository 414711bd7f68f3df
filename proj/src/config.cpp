#include "detco/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <json.hpp>
#include <map>
#include <sstream>

#include "detco/errors.hpp"

namespace detco {
namespace {

using json = nlohmann::json;

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string describe(const json& v) { return v.dump(); }

[[noreturn]] void type_error(const std::string& key, const std::string& expected, const json& got) {
  throw ConfigError(key + ": expected " + expected + ", got " + describe(got));
}

long long expect_int(const std::string& key, const json& v) {
  if (v.is_number_integer()) return v.get<long long>();
  type_error(key, "int", v);
}

double expect_number(const std::string& key, const json& v) {
  if (v.is_number()) return v.get<double>();
  type_error(key, "number", v);
}

bool expect_bool(const std::string& key, const json& v) {
  if (v.is_boolean()) return v.get<bool>();
  type_error(key, "bool", v);
}

std::string expect_string(const std::string& key, const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number() || v.is_boolean()) return v.dump();
  type_error(key, "string", v);
}

json as_list(const json& v) {
  if (v.is_array()) return v;
  return json::array({v});
}

struct Field {
  std::string key;
  std::string type;
  std::string description;
  std::function<json(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, const json&)> set;
};

template <typename Access>
Field int_field(std::string key, std::string desc, Access access) {
  return {key, "int", std::move(desc), [access](const ExperimentConfig& c) { return json(access(c)); },
          [key, access](ExperimentConfig& c, const json& v) {
            const long long x = expect_int(key, v);
            if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) type_error(key, "int", v);
            access(c) = static_cast<int>(x);
          }};
}

template <typename Access>
Field seed_field(std::string key, std::string desc, Access access) {
  return {key, "uint64", std::move(desc), [access](const ExperimentConfig& c) { return json(access(c)); },
          [key, access](ExperimentConfig& c, const json& v) {
            if (v.is_number_unsigned()) {
              access(c) = v.get<std::uint64_t>();
            } else if (v.is_number_integer() && v.get<long long>() >= 0) {
              access(c) = static_cast<std::uint64_t>(v.get<long long>());
            } else {
              type_error(key, "non-negative int", v);
            }
          }};
}

template <typename Access>
Field number_field(std::string key, std::string desc, Access access) {
  return {key, "number", std::move(desc), [access](const ExperimentConfig& c) { return json(access(c)); },
          [key, access](ExperimentConfig& c, const json& v) { access(c) = expect_number(key, v); }};
}

template <typename Access>
Field bool_field(std::string key, std::string desc, Access access) {
  return {key, "bool", std::move(desc), [access](const ExperimentConfig& c) { return json(access(c)); },
          [key, access](ExperimentConfig& c, const json& v) { access(c) = expect_bool(key, v); }};
}

template <typename Access>
Field string_field(std::string key, std::string desc, Access access) {
  return {key, "string", std::move(desc), [access](const ExperimentConfig& c) { return json(access(c)); },
          [key, access](ExperimentConfig& c, const json& v) { access(c) = expect_string(key, v); }};
}

template <typename T, std::size_t N, typename Access>
Field array_field(std::string key, std::string desc, Access access) {
  constexpr bool is_int = std::is_integral_v<T>;
  std::string type = std::string(is_int ? "int" : "number") + "[" + std::to_string(N) + "]";
  return {key, type, std::move(desc),
          [access](const ExperimentConfig& c) {
            json arr = json::array();
            for (const T& x : access(c)) arr.push_back(x);
            return arr;
          },
          [key, type, access](ExperimentConfig& c, const json& raw) {
            const json v = as_list(raw);
            if (v.size() != N) type_error(key, type, raw);
            std::array<T, N> out{};
            for (std::size_t i = 0; i < N; ++i) {
              if constexpr (is_int) {
                out[i] = static_cast<T>(expect_int(key, v[i]));
              } else {
                out[i] = static_cast<T>(expect_number(key, v[i]));
              }
            }
            access(c) = out;
          }};
}

std::vector<Field> build_fields() {
  std::vector<Field> f;
  f.push_back(int_field("schema_version", "config schema version", [](auto& c) -> auto& { return c.schema_version; }));

  // augment
  f.push_back({"augment.preset", "enum{desk,full}",
               "geometry preset; explicit side keys override it",
               [](const ExperimentConfig& c) { return json(c.augment_preset); },
               [](ExperimentConfig& c, const json& v) {
                 const std::string p = expect_string("augment.preset", v);
                 if (p != "desk" && p != "full") type_error("augment.preset", "one of {desk, full}", v);
                 c.augment_preset = p;
                 const augment::AugmentConfig g = p == "full" ? augment::AugmentConfig::full_geometry()
                                                               : augment::AugmentConfig{};
                 c.augment.global_side = g.global_side;
                 c.augment.patch_side = g.patch_side;
                 c.augment.jigsaw_intermediate_side = g.jigsaw_intermediate_side;
               }});
  f.push_back(int_field("augment.global_side", "side of the global views", [](auto& c) -> auto& { return c.augment.global_side; }));
  f.push_back(int_field("augment.patch_side", "side of each jigsaw patch", [](auto& c) -> auto& { return c.augment.patch_side; }));
  f.push_back(int_field("augment.jigsaw_intermediate_side", "jigsaw crop is resized to this side, then split 3x3",
                        [](auto& c) -> auto& { return c.augment.jigsaw_intermediate_side; }));
  f.push_back(number_field("augment.global_crop_scale_min", "min area fraction of the global crop",
                           [](auto& c) -> auto& { return c.augment.global_crop_scale_min; }));
  f.push_back(number_field("augment.global_crop_scale_max", "max area fraction of the global crop",
                           [](auto& c) -> auto& { return c.augment.global_crop_scale_max; }));
  f.push_back(number_field("augment.crop_area_min", "min area fraction of the jigsaw crop",
                           [](auto& c) -> auto& { return c.augment.crop_area_min; }));
  f.push_back(number_field("augment.crop_ratio_min", "min crop aspect ratio", [](auto& c) -> auto& { return c.augment.crop_ratio_min; }));
  f.push_back(number_field("augment.crop_ratio_max", "max crop aspect ratio", [](auto& c) -> auto& { return c.augment.crop_ratio_max; }));
  f.push_back(number_field("augment.flip_prob", "horizontal flip probability", [](auto& c) -> auto& { return c.augment.flip_prob; }));
  f.push_back(number_field("augment.jitter_prob", "color jitter probability", [](auto& c) -> auto& { return c.augment.jitter_prob; }));
  f.push_back(number_field("augment.brightness", "brightness jitter strength", [](auto& c) -> auto& { return c.augment.brightness; }));
  f.push_back(number_field("augment.contrast", "contrast jitter strength", [](auto& c) -> auto& { return c.augment.contrast; }));
  f.push_back(number_field("augment.saturation", "saturation jitter strength", [](auto& c) -> auto& { return c.augment.saturation; }));
  f.push_back(number_field("augment.hue", "hue jitter strength (turns)", [](auto& c) -> auto& { return c.augment.hue; }));
  f.push_back(number_field("augment.grayscale_prob", "grayscale probability (global views)",
                           [](auto& c) -> auto& { return c.augment.grayscale_prob; }));
  f.push_back(number_field("augment.blur_prob", "gaussian blur probability", [](auto& c) -> auto& { return c.augment.blur_prob; }));
  f.push_back(number_field("augment.blur_sigma_min", "blur sigma lower bound at 224 px",
                           [](auto& c) -> auto& { return c.augment.blur_sigma_min; }));
  f.push_back(number_field("augment.blur_sigma_max", "blur sigma upper bound at 224 px",
                           [](auto& c) -> auto& { return c.augment.blur_sigma_max; }));
  f.push_back(int_field("augment.randaug_ops", "RandAugment ops per global view", [](auto& c) -> auto& { return c.augment.randaug_ops; }));
  f.push_back(int_field("augment.randaug_magnitude", "RandAugment magnitude (0..30)",
                        [](auto& c) -> auto& { return c.augment.randaug_magnitude; }));

  // model
  f.push_back({"model.arch", "enum{resnet50-like,toy-cnn}", "encoder architecture",
               [](const ExperimentConfig& c) { return json(model::arch_name(c.model.arch)); },
               [](ExperimentConfig& c, const json& v) {
                 c.model.arch = model::parse_arch(expect_string("model.arch", v));
               }});
  f.push_back(array_field<int, 4>("model.stage_channels", "output channels of Res2..Res5",
                                  [](auto& c) -> auto& { return c.model.stage_channels; }));
  f.push_back(array_field<int, 4>("model.stage_strides", "strides of Res2..Res5",
                                  [](auto& c) -> auto& { return c.model.stage_strides; }));
  f.push_back(array_field<int, 4>("model.stage_blocks", "bottleneck blocks per stage (resnet50-like)",
                                  [](auto& c) -> auto& { return c.model.stage_blocks; }));
  f.push_back(int_field("model.embed_dim", "embedding dimension d", [](auto& c) -> auto& { return c.model.embed_dim; }));
  f.push_back(int_field("model.head_hidden_dim", "MLP hidden width; 0 = pooled input width",
                        [](auto& c) -> auto& { return c.model.head_hidden_dim; }));
  f.push_back(bool_field("model.head_relu", "ReLU between the two head layers", [](auto& c) -> auto& { return c.model.head_relu; }));
  f.push_back(bool_field("model.head_bias", "bias terms in the head layers", [](auto& c) -> auto& { return c.model.head_bias; }));
  f.push_back(int_field("model.norm_groups", "group-norm group count (gcd with channels)",
                        [](auto& c) -> auto& { return c.model.norm_groups; }));

  // memory
  f.push_back(int_field("memory.capacity", "queue capacity K", [](auto& c) -> auto& { return c.memory.capacity; }));

  // contrast
  f.push_back(number_field("contrast.tau_gg", "temperature of the global<->global branch",
                           [](auto& c) -> auto& { return c.temperatures.tau_gg; }));
  f.push_back(number_field("contrast.tau_ll", "temperature of the local<->local branch",
                           [](auto& c) -> auto& { return c.temperatures.tau_ll; }));
  f.push_back(number_field("contrast.tau_gl", "temperature of the global<->local branch",
                           [](auto& c) -> auto& { return c.temperatures.tau_gl; }));
  f.push_back(array_field<double, 4>("contrast.loss_weights", "per-stage loss weights, Res2..Res5",
                                     [](auto& c) -> auto& { return c.loss_weights.w; }));

  // trainer
  f.push_back(int_field("trainer.batch_size", "images per step", [](auto& c) -> auto& { return c.trainer.batch_size; }));
  f.push_back(int_field("trainer.total_steps", "optimizer steps", [](auto& c) -> auto& { return c.trainer.total_steps; }));
  f.push_back(number_field("trainer.learning_rate", "base lr; negative means 0.03*batch/256",
                           [](auto& c) -> auto& { return c.trainer.learning_rate; }));
  f.push_back({"trainer.lr_schedule", "enum{cosine,constant}", "learning-rate schedule",
               [](const ExperimentConfig& c) {
                 return json(c.trainer.lr_schedule == LrSchedule::kCosine ? "cosine" : "constant");
               },
               [](ExperimentConfig& c, const json& v) {
                 const std::string s = expect_string("trainer.lr_schedule", v);
                 if (s == "cosine") {
                   c.trainer.lr_schedule = LrSchedule::kCosine;
                 } else if (s == "constant") {
                   c.trainer.lr_schedule = LrSchedule::kConstant;
                 } else {
                   type_error("trainer.lr_schedule", "one of {cosine, constant}", v);
                 }
               }});
  f.push_back(number_field("trainer.weight_decay", "SGD weight decay", [](auto& c) -> auto& { return c.trainer.weight_decay; }));
  f.push_back(number_field("trainer.sgd_momentum", "SGD momentum", [](auto& c) -> auto& { return c.trainer.sgd_momentum; }));
  f.push_back(number_field("trainer.momentum", "key-encoder EMA coefficient m", [](auto& c) -> auto& { return c.trainer.momentum; }));
  f.push_back(seed_field("trainer.seed", "root seed of the run", [](auto& c) -> auto& { return c.trainer.seed; }));
  f.push_back(bool_field("trainer.mls_enabled", "multi-level supervision", [](auto& c) -> auto& { return c.trainer.mls_enabled; }));
  f.push_back(bool_field("trainer.glc_enabled", "global/local contrastive branches",
                         [](auto& c) -> auto& { return c.trainer.glc_enabled; }));
  f.push_back(int_field("trainer.checkpoint_every", "steps between checkpoints; 0 = final only",
                        [](auto& c) -> auto& { return c.trainer.checkpoint_every; }));

  // data
  f.push_back(string_field("data.root", "image-folder root; empty = synthetic toy data",
                           [](auto& c) -> auto& { return c.data.root; }));
  f.push_back(int_field("data.toy.num_classes", "toy classes", [](auto& c) -> auto& { return c.data.toy.num_classes; }));
  f.push_back(int_field("data.toy.samples_per_class", "toy images per class",
                        [](auto& c) -> auto& { return c.data.toy.samples_per_class; }));
  f.push_back(int_field("data.toy.image_side", "toy image side", [](auto& c) -> auto& { return c.data.toy.image_side; }));
  f.push_back(seed_field("data.toy.seed", "toy generator seed", [](auto& c) -> auto& { return c.data.toy.seed; }));

  // eval
  f.push_back({"eval.probe_type", "enum{linear-softmax,linear-hinge}", "linear probe loss",
               [](const ExperimentConfig& c) { return json(probe_type_name(c.eval.probe_type)); },
               [](ExperimentConfig& c, const json& v) {
                 c.eval.probe_type = parse_probe_type(expect_string("eval.probe_type", v));
               }});
  f.push_back(number_field("eval.val_fraction", "held-out fraction", [](auto& c) -> auto& { return c.eval.val_fraction; }));
  f.push_back(int_field("eval.epochs", "full-batch probe iterations", [](auto& c) -> auto& { return c.eval.epochs; }));
  f.push_back(number_field("eval.learning_rate", "probe learning rate", [](auto& c) -> auto& { return c.eval.learning_rate; }));
  f.push_back(number_field("eval.weight_decay", "probe L2 penalty", [](auto& c) -> auto& { return c.eval.weight_decay; }));
  f.push_back({"eval.stages", "list<int>", "stages to probe (subset of 2,3,4,5)",
               [](const ExperimentConfig& c) { return json(c.eval.stages); },
               [](ExperimentConfig& c, const json& raw) {
                 std::vector<int> out;
                 for (const auto& v : as_list(raw)) out.push_back(static_cast<int>(expect_int("eval.stages", v)));
                 c.eval.stages = out;
               }});
  f.push_back(seed_field("eval.seed", "probe split/initialization seed", [](auto& c) -> auto& { return c.eval.seed; }));
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = build_fields();
  return f;
}

std::size_t edit_distance(const std::string& a, const std::string& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

[[noreturn]] void unknown_key(const std::string& key) {
  std::string best;
  std::size_t best_d = std::string::npos;
  for (const auto& f : fields()) {
    const std::size_t d = edit_distance(key, f.key);
    if (d < best_d) {
      best_d = d;
      best = f.key;
    }
  }
  std::string msg = "unknown key '" + key + "'";
  if (best_d <= std::max<std::size_t>(2, key.size() / 4)) msg += " (did you mean '" + best + "'?)";
  throw ConfigError(msg);
}

json parse_scalar(const std::string& raw) {
  const std::string s = trim(raw);
  if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\''))) {
    return s.substr(1, s.size() - 2);
  }
  if (s == "true") return true;
  if (s == "false") return false;
  long long iv = 0;
  auto [ip, iec] = std::from_chars(s.data(), s.data() + s.size(), iv);
  if (iec == std::errc() && ip == s.data() + s.size() && !s.empty()) return iv;
  unsigned long long uv = 0;  // seeds may exceed the signed range
  auto [up, uec] = std::from_chars(s.data(), s.data() + s.size(), uv);
  if (uec == std::errc() && up == s.data() + s.size() && !s.empty()) return uv;
  double dv = 0.0;
  auto [dp, dec] = std::from_chars(s.data(), s.data() + s.size(), dv);
  if (dec == std::errc() && dp == s.data() + s.size() && !s.empty()) return dv;
  return s;
}

json parse_value(const std::string& raw) {
  std::string s = trim(raw);
  bool bracketed = false;
  if (s.size() >= 2 && s.front() == '[' && s.back() == ']') {
    s = s.substr(1, s.size() - 2);
    bracketed = true;
  }
  const bool quoted = !s.empty() && (s.front() == '"' || s.front() == '\'');
  if (!quoted && (bracketed || s.find(',') != std::string::npos)) {
    json arr = json::array();
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!trim(item).empty()) arr.push_back(parse_scalar(item));
    }
    return arr;
  }
  return parse_scalar(s);
}

using Entries = std::vector<std::pair<std::string, json>>;

Entries parse_kv(const std::string& text) {
  Entries out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(key, parse_value(line.substr(eq + 1)));
  }
  return out;
}

void flatten(const json& node, const std::string& prefix, Entries& out) {
  for (auto it = node.begin(); it != node.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, *it);
    }
  }
}

Entries parse_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("malformed JSON config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("JSON config must be an object");
  Entries out;
  flatten(doc, "", out);
  return out;
}

std::string kv_value(const json& v) {
  if (v.is_array()) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ", ";
      s += kv_value(v[i]);
    }
    return s;
  }
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const json reparsed = parse_value(s);
    if (s.empty() || !reparsed.is_string() || reparsed.get<std::string>() != s) return "\"" + s + "\"";
    return s;
  }
  if (v.is_number_float()) return format_number(v.get<double>());
  return v.dump();
}

json to_json(const ExperimentConfig& cfg) {
  json flat = json::object();
  for (const auto& f : fields()) flat[f.key] = f.get(cfg);
  return flat;
}

}  // namespace

double TrainConfig::base_learning_rate() const {
  return learning_rate >= 0.0 ? learning_rate : 0.03 * batch_size / 256.0;
}

double TrainConfig::learning_rate_at(int step) const {
  const double base = base_learning_rate();
  if (lr_schedule == LrSchedule::kConstant || total_steps <= 0) return base;
  const double t = static_cast<double>(step) / total_steps;
  return base * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}

void TrainConfig::validate() const {
  if (batch_size < 2) throw ConfigError("trainer.batch_size: must be >= 2, got " + std::to_string(batch_size));
  if (total_steps < 0) throw ConfigError("trainer.total_steps: must be >= 0, got " + std::to_string(total_steps));
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    throw ConfigError("trainer.momentum: expected value in [0,1], got " + format_number(momentum));
  }
  if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("trainer.sgd_momentum: expected value in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("trainer.weight_decay: must be non-negative");
  if (!std::isfinite(learning_rate)) throw ConfigError("trainer.learning_rate: must be finite");
  if (checkpoint_every < 0) throw ConfigError("trainer.checkpoint_every: must be >= 0");
}

void ProbeConfig::validate() const {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ConfigError("eval.val_fraction: expected value in (0,1), got " + format_number(val_fraction));
  }
  if (epochs <= 0) throw ConfigError("eval.epochs: must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("eval.learning_rate: must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("eval.weight_decay: must be non-negative");
  if (stages.empty()) throw ConfigError("eval.stages: must not be empty");
  for (int s : stages) {
    if (s < 2 || s > 5) throw ConfigError("eval.stages: stage " + std::to_string(s) + " not in {2,3,4,5}");
  }
}

ProbeType parse_probe_type(const std::string& name) {
  if (name == "linear-softmax") return ProbeType::kSoftmax;
  if (name == "linear-hinge" || name == "linear-svm") return ProbeType::kHinge;
  throw ConfigError("eval.probe_type: expected one of {linear-softmax, linear-hinge}, got '" + name + "'");
}

std::string probe_type_name(ProbeType t) { return t == ProbeType::kSoftmax ? "linear-softmax" : "linear-hinge"; }

void ExperimentConfig::validate() const {
  if (schema_version != kConfigSchemaVersion) {
    throw ConfigError("schema_version: expected " + std::to_string(kConfigSchemaVersion) + ", got " +
                      std::to_string(schema_version));
  }
  augment.validate();
  model.validate();
  temperatures.validate();
  loss_weights.validate();
  trainer.validate();
  data.toy.validate();
  eval.validate();
  if (memory.capacity <= 0) throw ConfigError("memory.capacity: must be positive");
  if (trainer.batch_size > memory.capacity) {
    throw ConfigError("trainer.batch_size: must not exceed memory.capacity (" + std::to_string(memory.capacity) + ")");
  }
  const int stride = model.stage_strides.back();
  if (augment.global_side % stride != 0) {
    throw ConfigError("augment.global_side: " + std::to_string(augment.global_side) +
                      " is not divisible by the maximum stride " + std::to_string(stride));
  }
  if (augment.patch_side % stride != 0) {
    throw ConfigError("augment.patch_side: " + std::to_string(augment.patch_side) +
                      " is not divisible by the maximum stride " + std::to_string(stride));
  }
}

contrast::LossWeights ExperimentConfig::effective_loss_weights() const {
  return trainer.mls_enabled ? loss_weights : contrast::LossWeights::deepest_only();
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) { return to_json(a) == to_json(b); }

std::vector<ConfigKeyDoc> config_schema() {
  const ExperimentConfig defaults;
  std::vector<ConfigKeyDoc> out;
  for (const auto& f : fields()) out.push_back({f.key, f.type, kv_value(f.get(defaults)), f.description});
  return out;
}

ExperimentConfig parse_config_text(const std::string& text) {
  const std::string t = trim(text);
  const Entries entries = (!t.empty() && t.front() == '{') ? parse_json(t) : parse_kv(text);
  std::map<std::string, const Field*> index;
  for (const auto& f : fields()) index[f.key] = &f;

  ExperimentConfig cfg;
  // The preset only seeds defaults, so it goes first.
  for (const auto& [key, value] : entries) {
    if (key == "augment.preset") index.at(key)->set(cfg, value);
  }
  for (const auto& [key, value] : entries) {
    auto it = index.find(key);
    if (it == index.end()) unknown_key(key);
    if (key == "augment.preset") continue;
    it->second->set(cfg, value);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw FileNotFoundError("config file not found: " + path.string());
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string serialize_config(const ExperimentConfig& cfg) {
  std::ostringstream os;
  os << "# effective configuration (every key materialized)\n";
  for (const auto& f : fields()) os << f.key << " = " << kv_value(f.get(cfg)) << '\n';
  return os.str();
}

std::string serialize_config_json(const ExperimentConfig& cfg) { return to_json(cfg).dump(2); }

std::vector<std::string> config_differences(const ExperimentConfig& a, const ExperimentConfig& b) {
  std::vector<std::string> out;
  for (const auto& f : fields()) {
    if (f.get(a) != f.get(b)) out.push_back(f.key);
  }
  return out;
}

}  // namespace detco
