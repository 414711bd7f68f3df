#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "detco/augment.hpp"
#include "detco/contrast.hpp"
#include "detco/data.hpp"
#include "detco/model.hpp"

namespace detco {

enum class LrSchedule { kCosine, kConstant };

struct TrainConfig {
  int batch_size = 32;
  int total_steps = 300;
  /// Base learning rate; negative selects 0.03 * batch_size / 256.
  double learning_rate = -1.0;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  double weight_decay = 1e-4;
  double sgd_momentum = 0.9;
  /// EMA coefficient of the key encoder.
  double momentum = 0.999;
  std::uint64_t seed = 0;
  bool mls_enabled = true;
  bool glc_enabled = true;
  int checkpoint_every = 100;

  double base_learning_rate() const;
  double learning_rate_at(int step) const;  // step counted from 0
  void validate() const;
};

struct MemoryConfig {
  int capacity = 4096;
};

enum class ProbeType { kSoftmax, kHinge };

struct ProbeConfig {
  ProbeType probe_type = ProbeType::kSoftmax;
  double val_fraction = 0.3;
  int epochs = 300;
  double learning_rate = 0.5;
  double weight_decay = 1e-4;
  std::vector<int> stages{2, 3, 4, 5};
  std::uint64_t seed = 0;
  void validate() const;
};

struct DataConfig {
  /// Image-folder root; empty means "generate the toy dataset".
  std::string root;
  data::ToySpec toy;
};

inline constexpr int kConfigSchemaVersion = 1;

struct ExperimentConfig {
  int schema_version = kConfigSchemaVersion;
  std::string augment_preset = "desk";
  augment::AugmentConfig augment;
  model::EncoderConfig model;
  MemoryConfig memory;
  contrast::Temperatures temperatures;
  contrast::LossWeights loss_weights;
  TrainConfig trainer;
  DataConfig data;
  ProbeConfig eval;

  /// Validates every block plus cross-block constraints.
  void validate() const;
  /// Loss weights after applying the MLS ablation flag.
  contrast::LossWeights effective_loss_weights() const;
};

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

/// Documented key list: (dotted key, type, default, description).
struct ConfigKeyDoc {
  std::string key;
  std::string type;
  std::string default_value;
  std::string description;
};
std::vector<ConfigKeyDoc> config_schema();

/// Parses a flat `key = value` document, or JSON (nested objects or dotted
/// keys) when the text starts with '{'. Empty input yields all defaults.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Every key with its effective value, one `key = value` per line.
std::string serialize_config(const ExperimentConfig& cfg);
std::string serialize_config_json(const ExperimentConfig& cfg);

/// Dotted keys whose effective values differ between two configs.
std::vector<std::string> config_differences(const ExperimentConfig& a, const ExperimentConfig& b);

ProbeType parse_probe_type(const std::string& name);
std::string probe_type_name(ProbeType t);

}  // namespace detco
