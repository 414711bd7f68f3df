#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "detco/matrix.hpp"
#include "detco/nn/tape.hpp"
#include "detco/tensor.hpp"

namespace detco::model {

inline constexpr int kNumStages = 4;
/// Stage index 0..3 corresponds to the Res2..Res5 taps.
inline constexpr std::array<int, kNumStages> kStageNames{2, 3, 4, 5};

enum class Arch { kResNet50Like, kToyCnn };
std::string arch_name(Arch arch);
Arch parse_arch(const std::string& name);

struct EncoderConfig {
  Arch arch = Arch::kToyCnn;
  std::array<int, kNumStages> stage_channels{16, 32, 64, 64};
  std::array<int, kNumStages> stage_strides{4, 8, 16, 32};
  /// Bottleneck blocks per stage; used by the resnet50-like encoder only.
  std::array<int, kNumStages> stage_blocks{3, 4, 6, 3};
  int embed_dim = 128;
  /// 0 means "same as the pooled input width".
  int head_hidden_dim = 0;
  bool head_relu = true;
  bool head_bias = true;
  int norm_groups = 16;

  void validate() const;
  static EncoderConfig resnet50();
};

/// Ordered name -> array map holding every learnable tensor of the
/// encoder and the eight projection heads.
class ParameterSet {
 public:
  void set(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  const Tensor& at(const std::string& name) const;
  Tensor& at(const std::string& name);
  std::vector<std::string> names() const;
  std::size_t size() const { return entries_.size(); }
  std::size_t element_count() const;
  bool empty() const { return entries_.empty(); }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  friend bool operator==(const ParameterSet&, const ParameterSet&) = default;

 private:
  std::map<std::string, Tensor> entries_;
};

/// Name/shape differences between two sets, one line per mismatch.
std::vector<std::string> structure_mismatches(const ParameterSet& a, const ParameterSet& b);

enum class ParamGroup { kEncoder, kGlobalHead, kLocalHead };
struct ParamRole {
  ParamGroup group = ParamGroup::kEncoder;
  int stage = -1;  // 0..3 for heads
};
ParamRole param_role(const std::string& name);

std::string global_head_prefix(int stage);
std::string local_head_prefix(int stage);

/// Feature maps tapped after each stage, N x C_i x (side/stride_i)^2.
struct StageFeatures {
  std::array<Tensor, kNumStages> maps;
};

/// Per-stage unit-norm embeddings, each B x d.
struct EmbeddingSet {
  std::array<Matrix, kNumStages> global;
  std::array<Matrix, kNumStages> local;
};

using ParamVars = std::unordered_map<std::string, nn::Var>;

/// Binds parameters into tape variables. Names for which `trainable`
/// returns false become constants and receive no gradient.
ParamVars bind_parameters(nn::Tape& tape, const ParameterSet& params,
                          const std::function<bool(const std::string&)>& trainable = {});
/// Gradients of the bound variables; parameters that received none are omitted.
ParameterSet collect_gradients(const ParamVars& vars);

class DetcoModel {
 public:
  explicit DetcoModel(EncoderConfig cfg);

  const EncoderConfig& config() const { return cfg_; }
  int max_stride() const { return cfg_.stage_strides.back(); }
  /// Throws ConfigError when `side` is not a positive multiple of the max stride.
  void check_input_side(int side) const;

  ParameterSet init_parameters(std::uint64_t seed) const;

  int global_head_input(int stage) const { return cfg_.stage_channels[stage]; }
  int local_head_input(int stage) const;

  std::array<nn::Var, kNumStages> forward_stages(nn::Tape& tape, const ParamVars& p,
                                                 const nn::Var& images) const;
  /// Pooled features (N x C) -> unit-norm embedding through the stage's global head.
  nn::Var global_head(nn::Tape& tape, const ParamVars& p, int stage, const nn::Var& pooled) const;
  /// Concatenated patch features (B x 9C) -> unit-norm embedding via the local head.
  nn::Var local_head(nn::Tape& tape, const ParamVars& p, int stage, const nn::Var& concatenated) const;
  /// (B*9) x C x h x w stacked patch maps, sample-major, -> B x 9C.
  nn::Var concat_patch_features(nn::Tape& tape, const nn::Var& patch_maps) const;

 private:
  nn::Var head(nn::Tape& tape, const ParamVars& p, const std::string& prefix, const nn::Var& x) const;
  void toy_stages(nn::Tape& tape, const ParamVars& p, nn::Var x,
                  std::array<nn::Var, kNumStages>& out) const;
  void resnet_stages(nn::Tape& tape, const ParamVars& p, nn::Var x,
                     std::array<nn::Var, kNumStages>& out) const;

  EncoderConfig cfg_;
};

/// Inference-only stage taps for an N x 3 x S x S batch.
StageFeatures encode_stages(const DetcoModel& model, const ParameterSet& params, const Tensor& images);

/// Global-average-pooled stage features, N x C.
Matrix pool_stage(const Tensor& feature_map);

std::array<Matrix, kNumStages> project_global(const DetcoModel& model, const ParameterSet& params,
                                              const StageFeatures& feats);

/// Pools each of the 9 patch feature sets, concatenates them in the given
/// order and applies the local heads.
std::array<Matrix, kNumStages> project_local(const DetcoModel& model, const ParameterSet& params,
                                             std::span<const StageFeatures> patch_feats);

/// key' = m * key + (1 - m) * query for every parameter.
ParameterSet momentum_update(const ParameterSet& key, const ParameterSet& query, double m);
void momentum_update_inplace(ParameterSet& key, const ParameterSet& query, double m);

}  // namespace detco::model
