#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "detco/config.hpp"
#include "detco/data.hpp"
#include "detco/matrix.hpp"
#include "detco/model.hpp"

namespace detco::eval {

/// Pooled stage features, one row per dataset item in dataset order.
struct FeatureMatrix {
  Matrix features;
  std::vector<int> labels;
  int num_classes = 0;
};

/// Index 0..3 of a stage name 2..5; throws InputError otherwise.
int stage_index(int stage_name);

/// Frozen-encoder features of every item: the whole image is resized to
/// `side` (no augmentation) and each requested stage is average-pooled.
/// Keys of the result are stage names (2..5).
std::map<int, FeatureMatrix> extract_stage_features(const model::DetcoModel& model, const model::ParameterSet& params,
                                                     const data::LabeledDataset& dataset, const std::vector<int>& stages,
                                                     int side);
FeatureMatrix extract_features(const model::DetcoModel& model, const model::ParameterSet& params,
                               const data::LabeledDataset& dataset, int stage, int side);
/// Same, reading the query encoder and eval side from a checkpoint.
FeatureMatrix extract_features(const std::filesystem::path& checkpoint, const data::LabeledDataset& dataset, int stage);

struct ProbeResult {
  double accuracy = 0.0;
  double chance = 0.0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
};

/// Trains one linear layer on the train split of standardized features and
/// returns held-out accuracy. Rows are assigned to splits by a hash of
/// their content and the probe seed, so identical rows always land in the
/// same split.
ProbeResult linear_probe(const MatrixRef& features, const std::vector<int>& labels, int num_classes,
                         const ProbeConfig& cfg);

struct ProbeReport {
  std::map<int, double> stage_accuracy;  // stage name -> accuracy
  double chance = 0.0;
  std::size_t train_size = 0;
  std::size_t val_size = 0;
  ProbeConfig config;
};

ProbeReport probe_stages(const model::DetcoModel& model, const model::ParameterSet& params,
                         const data::LabeledDataset& dataset, const ProbeConfig& cfg, int side);
std::string probe_report_json(const ProbeReport& report);
std::string probe_report_table(const ProbeReport& report);

struct AblationRow {
  std::string label;  // "(a)".."(d)"
  bool mls = false;
  bool glc = false;
  ProbeReport probe;
  double final_loss = 0.0;       // total loss of the last step
  double final_loss_mean = 0.0;  // mean total over the last 10 steps
  std::filesystem::path run_dir;
};

struct AblationGrid {
  std::vector<AblationRow> rows;
};

/// Four pretraining runs that differ only in the (MLS, GLC) flags, in the
/// order (a) neither, (b) MLS, (c) GLC, (d) both, each probed on every
/// configured stage. Runs are written below `out_dir`.
AblationGrid ablation_grid(const data::LabeledDataset& dataset, const ExperimentConfig& base,
                           const std::filesystem::path& out_dir, int workers = 0);
std::string ablation_json(const AblationGrid& grid);
std::string ablation_table(const AblationGrid& grid);

}  // namespace detco::eval
