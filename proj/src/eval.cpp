#include "detco/eval.hpp"

#include <cmath>
#include <cstring>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "detco/errors.hpp"
#include "detco/rng.hpp"
#include "detco/trainer.hpp"

namespace detco::eval {
namespace {

using json = nlohmann::json;

constexpr int kExtractBatch = 64;
constexpr double kProbeMomentum = 0.9;

std::uint64_t row_hash(const double* row, Eigen::Index cols, int label) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ bytes[i]) * 1099511628211ull;
  };
  feed(row, static_cast<std::size_t>(cols) * sizeof(double));
  feed(&label, sizeof(label));
  return h;
}

int argmax_row(const Matrix& s, Eigen::Index i) {
  Eigen::Index best = 0;
  s.row(i).maxCoeff(&best);
  return static_cast<int>(best);
}

Matrix softmax_gradient(const Matrix& scores, const std::vector<int>& y) {
  Matrix g = scores;
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    const double mx = g.row(i).maxCoeff();
    g.row(i) = (g.row(i).array() - mx).exp().matrix();
    g.row(i) /= g.row(i).sum();
    g(i, y[i]) -= 1.0;
  }
  return g / static_cast<double>(g.rows());
}

// Crammer-Singer multiclass hinge: max(0, 1 + max_{j != y} s_j - s_y).
Matrix hinge_gradient(const Matrix& scores, const std::vector<int>& y) {
  Matrix g = Matrix::Zero(scores.rows(), scores.cols());
  const double inv_n = 1.0 / static_cast<double>(scores.rows());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    int rival = -1;
    for (int j = 0; j < scores.cols(); ++j) {
      if (j != y[i] && (rival < 0 || scores(i, j) > scores(i, rival))) rival = j;
    }
    if (rival >= 0 && 1.0 + scores(i, rival) - scores(i, y[i]) > 0.0) {
      g(i, rival) += inv_n;
      g(i, y[i]) -= inv_n;
    }
  }
  return g;
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

json probe_to_json(const ProbeReport& r) {
  json acc = json::object();
  for (const auto& [stage, a] : r.stage_accuracy) acc["res" + std::to_string(stage)] = a;
  return {{"stage_accuracy", acc},
          {"chance", r.chance},
          {"train_size", r.train_size},
          {"val_size", r.val_size},
          {"config",
           {{"probe_type", probe_type_name(r.config.probe_type)},
            {"val_fraction", r.config.val_fraction},
            {"epochs", r.config.epochs},
            {"learning_rate", r.config.learning_rate},
            {"weight_decay", r.config.weight_decay},
            {"stages", r.config.stages},
            {"seed", r.config.seed}}}};
}

}  // namespace

int stage_index(int stage_name) {
  if (stage_name < 2 || stage_name > 5) {
    throw InputError("stage must be one of 2,3,4,5, got " + std::to_string(stage_name));
  }
  return stage_name - 2;
}

std::map<int, FeatureMatrix> extract_stage_features(const model::DetcoModel& model, const model::ParameterSet& params,
                                                     const data::LabeledDataset& dataset, const std::vector<int>& stages,
                                                     int side) {
  dataset.validate();
  for (int s : stages) stage_index(s);
  model.check_input_side(side);
  std::map<int, FeatureMatrix> out;
  for (int s : stages) {
    FeatureMatrix& fm = out[s];
    fm.num_classes = dataset.num_classes;
    fm.features.resize(static_cast<Eigen::Index>(dataset.size()), model.config().stage_channels[stage_index(s)]);
    for (const auto& item : dataset.items) fm.labels.push_back(item.label);
  }
  for (std::size_t start = 0; start < dataset.size(); start += kExtractBatch) {
    const std::size_t stop = std::min(dataset.size(), start + kExtractBatch);
    std::vector<Image> resized;
    resized.reserve(stop - start);
    for (std::size_t i = start; i < stop; ++i) resized.push_back(resize_bilinear(*dataset.items[i].image, side, side));
    std::vector<const Image*> ptrs;
    for (const auto& img : resized) ptrs.push_back(&img);
    const model::StageFeatures feats = model::encode_stages(model, params, images_to_tensor(ptrs));
    for (auto& [s, fm] : out) {
      fm.features.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(stop - start)) =
          model::pool_stage(feats.maps[stage_index(s)]);
    }
  }
  return out;
}

FeatureMatrix extract_features(const model::DetcoModel& model, const model::ParameterSet& params,
                               const data::LabeledDataset& dataset, int stage, int side) {
  return std::move(extract_stage_features(model, params, dataset, {stage}, side).at(stage));
}

FeatureMatrix extract_features(const std::filesystem::path& checkpoint, const data::LabeledDataset& dataset,
                               int stage) {
  stage_index(stage);
  const trainer::LoadedCheckpoint ck = trainer::load_checkpoint(checkpoint);
  const model::DetcoModel model(ck.config.model);
  return extract_features(model, ck.state.query, dataset, stage, ck.config.augment.global_side);
}

ProbeResult linear_probe(const MatrixRef& features, const std::vector<int>& labels, int num_classes,
                         const ProbeConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = features.rows();
  if (static_cast<std::size_t>(n) != labels.size()) throw InputError("feature/label count mismatch");
  if (num_classes < 2) throw InputError("probe needs at least 2 classes");
  if (n < 2 * num_classes) {
    throw InputError("probe needs at least " + std::to_string(2 * num_classes) + " rows, got " + std::to_string(n));
  }
  for (int y : labels) {
    if (y < 0 || y >= num_classes) throw InputError("label " + std::to_string(y) + " out of range");
  }

  std::vector<Eigen::Index> train, val;
  for (Eigen::Index i = 0; i < n; ++i) {
    const Matrix row = features.row(i);
    const std::uint64_t h = mix64(row_hash(row.data(), row.cols(), labels[i]) ^ mix64(cfg.seed));
    const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
    (u < cfg.val_fraction ? val : train).push_back(i);
  }
  if (train.empty() || val.empty()) {
    throw InputError("degenerate split: " + std::to_string(train.size()) + " train / " + std::to_string(val.size()) +
                     " val rows");
  }

  const Eigen::Index d = features.cols();
  Matrix xtr(static_cast<Eigen::Index>(train.size()), d), xva(static_cast<Eigen::Index>(val.size()), d);
  std::vector<int> ytr, yva;
  for (std::size_t i = 0; i < train.size(); ++i) {
    xtr.row(static_cast<Eigen::Index>(i)) = features.row(train[i]);
    ytr.push_back(labels[train[i]]);
  }
  for (std::size_t i = 0; i < val.size(); ++i) {
    xva.row(static_cast<Eigen::Index>(i)) = features.row(val[i]);
    yva.push_back(labels[val[i]]);
  }

  // Standardize with train statistics; constant columns are only centered.
  const Eigen::RowVectorXd mean = xtr.colwise().mean();
  Eigen::RowVectorXd sd = ((xtr.rowwise() - mean).array().square().colwise().sum() / xtr.rows()).sqrt().matrix();
  for (Eigen::Index j = 0; j < d; ++j) {
    if (!(sd[j] > 1e-12)) sd[j] = 1.0;
  }
  xtr = ((xtr.rowwise() - mean).array().rowwise() / sd.array()).matrix();
  xva = ((xva.rowwise() - mean).array().rowwise() / sd.array()).matrix();

  Matrix w = Matrix::Zero(d, num_classes), vw = Matrix::Zero(d, num_classes);
  Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(num_classes), vb = Eigen::RowVectorXd::Zero(num_classes);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const Matrix scores = (xtr * w).rowwise() + b;
    const Matrix g = cfg.probe_type == ProbeType::kSoftmax ? softmax_gradient(scores, ytr) : hinge_gradient(scores, ytr);
    const Matrix gw = xtr.transpose() * g + cfg.weight_decay * w;
    vw = kProbeMomentum * vw + gw;
    vb = kProbeMomentum * vb + g.colwise().sum();
    w -= cfg.learning_rate * vw;
    b -= cfg.learning_rate * vb;
  }

  const Matrix scores = (xva * w).rowwise() + b;
  std::size_t correct = 0;
  for (Eigen::Index i = 0; i < scores.rows(); ++i) correct += argmax_row(scores, i) == yva[i];

  ProbeResult r;
  r.accuracy = static_cast<double>(correct) / static_cast<double>(val.size());
  r.chance = 1.0 / num_classes;
  r.train_size = train.size();
  r.val_size = val.size();
  return r;
}

ProbeReport probe_stages(const model::DetcoModel& model, const model::ParameterSet& params,
                         const data::LabeledDataset& dataset, const ProbeConfig& cfg, int side) {
  cfg.validate();
  ProbeReport report;
  report.config = cfg;
  const auto feats = extract_stage_features(model, params, dataset, cfg.stages, side);
  for (const auto& [stage, fm] : feats) {
    const ProbeResult r = linear_probe(fm.features, fm.labels, fm.num_classes, cfg);
    report.stage_accuracy[stage] = r.accuracy;
    report.chance = r.chance;
    report.train_size = r.train_size;
    report.val_size = r.val_size;
  }
  return report;
}

std::string probe_report_json(const ProbeReport& report) { return probe_to_json(report).dump(2); }

std::string probe_report_table(const ProbeReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "stage" << "accuracy\n";
  for (const auto& [stage, acc] : report.stage_accuracy) {
    os << std::setw(8) << ("Res" + std::to_string(stage)) << fixed(acc) << '\n';
  }
  os << std::setw(8) << "chance" << fixed(report.chance) << '\n';
  return os.str();
}

AblationGrid ablation_grid(const data::LabeledDataset& dataset, const ExperimentConfig& base,
                           const std::filesystem::path& out_dir, int workers) {
  base.validate();
  struct Flags {
    const char* label;
    bool mls;
    bool glc;
  };
  const Flags rows[] = {{"(a)", false, false}, {"(b)", true, false}, {"(c)", false, true}, {"(d)", true, true}};
  AblationGrid grid;
  for (const Flags& f : rows) {
    ExperimentConfig cfg = base;
    cfg.trainer.mls_enabled = f.mls;
    cfg.trainer.glc_enabled = f.glc;
    AblationRow row;
    row.label = f.label;
    row.mls = f.mls;
    row.glc = f.glc;
    row.run_dir = out_dir / (std::string("row_") + f.label[1]);
    trainer::RunOptions opts;
    opts.out_dir = row.run_dir;
    opts.workers = workers;
    const trainer::RunResult run = trainer::run(cfg, dataset, opts);
    if (!run.records.empty()) {
      row.final_loss = run.records.back().report.total;
      const std::size_t k = std::min<std::size_t>(10, run.records.size());
      double sum = 0.0;
      for (std::size_t i = run.records.size() - k; i < run.records.size(); ++i) sum += run.records[i].report.total;
      row.final_loss_mean = sum / static_cast<double>(k);
    }
    const model::DetcoModel model(cfg.model);
    row.probe = probe_stages(model, run.state.query, dataset, cfg.eval, cfg.augment.global_side);
    grid.rows.push_back(std::move(row));
  }
  return grid;
}

std::string ablation_json(const AblationGrid& grid) {
  json rows = json::array();
  for (const auto& r : grid.rows) {
    rows.push_back({{"row", r.label},
                    {"mls", r.mls},
                    {"glc", r.glc},
                    {"final_loss", r.final_loss},
                    {"final_loss_mean10", r.final_loss_mean},
                    {"run_dir", r.run_dir.string()},
                    {"probe", probe_to_json(r.probe)}});
  }
  return json{{"rows", rows}}.dump(2);
}

std::string ablation_table(const AblationGrid& grid) {
  std::ostringstream os;
  os << std::left << std::setw(5) << "row" << std::setw(5) << "MLS" << std::setw(5) << "GLC";
  std::vector<int> stages;
  if (!grid.rows.empty()) {
    for (const auto& [s, a] : grid.rows.front().probe.stage_accuracy) stages.push_back(s);
  }
  for (int s : stages) os << std::setw(8) << ("Res" + std::to_string(s));
  os << "final_loss\n";
  for (const auto& r : grid.rows) {
    os << std::setw(5) << r.label << std::setw(5) << (r.mls ? "yes" : "no") << std::setw(5) << (r.glc ? "yes" : "no");
    for (int s : stages) os << std::setw(8) << fixed(r.probe.stage_accuracy.at(s));
    os << fixed(r.final_loss) << '\n';
  }
  return os.str();
}

}  // namespace detco::eval
