#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "detco/augment.hpp"
#include "detco/config.hpp"
#include "detco/contrast.hpp"
#include "detco/data.hpp"
#include "detco/memory.hpp"
#include "detco/model.hpp"

namespace detco::trainer {

/// Everything that evolves during pretraining. Augmentation and sampling
/// randomness is derived from (seed, step), so no generator state is kept.
struct TrainState {
  int step = 0;
  model::ParameterSet query;
  model::ParameterSet key;
  model::ParameterSet velocity;  // SGD momentum buffers, same names as `query`
  memory::QueueBank bank;
};

/// Query params from the seed, key params as an exact copy, zero
/// velocity, queues filled with random unit vectors.
TrainState init_state(const ExperimentConfig& cfg);

/// Names of the parameters the optimizer touches under the config's
/// ablation flags: the encoder plus the heads of stages whose loss weight
/// is positive (local heads only with GLC enabled).
bool is_active_parameter(const std::string& name, const ExperimentConfig& cfg);

struct StepRecord {
  int step = 0;  // 1-based index of the completed step
  double lr = 0.0;
  contrast::DetcoLossReport report;
};

/// Number of worker threads used for augmentation: DETCO_NUM_WORKERS when
/// set to a positive integer, otherwise the hardware concurrency.
int worker_count();

/// Augmented views for one batch; sample j of step t uses seed
/// derive_seed(seed, {t, j}).
std::vector<augment::ViewBundle> build_bundles(std::span<const Image* const> batch, const ExperimentConfig& cfg,
                                               int step, int workers);

/// One optimization step: views -> query/key embeddings -> loss -> SGD on
/// the active query parameters -> EMA of the key parameters -> enqueue.
StepRecord train_step(const model::DetcoModel& model, const ExperimentConfig& cfg, TrainState& state,
                      std::span<const Image* const> batch, int workers = 1);

/// Dataset indices of the batch used at `step`. Epochs are reshuffled with
/// a permutation derived from (seed, epoch) and batches may straddle epochs.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed, int step);

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const TrainState& state);
struct LoadedCheckpoint {
  ExperimentConfig config;
  TrainState state;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// JSON line for the metrics log.
std::string metrics_line(const StepRecord& rec);
/// Parses one metrics line; throws FormatError on malformed input.
StepRecord parse_metrics_line(const std::string& line);

struct RunOptions {
  /// Experiment directory receiving config, metrics and checkpoints.
  std::filesystem::path out_dir;
  /// Continue from this checkpoint instead of initializing.
  std::filesystem::path resume_from;
  /// Stop after this step (exclusive of the schedule length); < 0 runs to
  /// total_steps. The schedule still follows total_steps.
  int stop_at = -1;
  int workers = 0;  // 0 = worker_count()
  bool write_files = true;
  std::function<void(const StepRecord&)> on_step;
};

struct RunResult {
  std::filesystem::path final_checkpoint;
  std::filesystem::path metrics_path;
  TrainState state;
  std::vector<StepRecord> records;  // steps executed by this call
};

/// Pretraining loop with periodic checkpoints and a JSONL metrics log.
/// Resuming with an identical config continues bit-identically.
RunResult run(const ExperimentConfig& cfg, const data::LabeledDataset& dataset, const RunOptions& opts);

inline constexpr const char* kMetricsFile = "metrics.jsonl";
inline constexpr const char* kEffectiveConfigFile = "config.effective.txt";
inline constexpr const char* kCheckpointDir = "checkpoints";
inline constexpr const char* kFinalCheckpoint = "final.ckpt";

}  // namespace detco::trainer
