#include "detco/cli.hpp"

#include <CLI11.hpp>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "detco/config.hpp"
#include "detco/data.hpp"
#include "detco/errors.hpp"
#include "detco/eval.hpp"
#include "detco/trainer.hpp"
#include "detco/viz.hpp"

namespace detco::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

const char* const kCommands[] = {"pretrain", "probe", "ablate", "attention", "plot", "synth-data"};

ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? parse_config_text("") : parse_config(path);
}

data::LabeledDataset load_dataset(const std::string& override_root, const ExperimentConfig& cfg, std::ostream& err) {
  const std::string root = override_root.empty() ? cfg.data.root : override_root;
  if (root.empty()) {
    err << "[detco] generating toy dataset (" << cfg.data.toy.num_classes << " classes x "
        << cfg.data.toy.samples_per_class << ")\n";
    return data::generate_toy(cfg.data.toy);
  }
  data::LoadReport report;
  data::LabeledDataset ds = data::load_image_folder(root, &report);
  err << "[detco] loaded " << report.loaded << " images from " << root << " (" << ds.num_classes << " classes, "
      << report.skipped << " skipped)\n";
  return ds;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

std::vector<int> parse_stage_list(const std::string& text) {
  std::vector<int> stages;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      const int s = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      eval::stage_index(s);
      stages.push_back(s);
    } catch (const std::logic_error&) {
      throw InputError("--stages: cannot parse '" + item + "'");
    }
  }
  if (stages.empty()) throw InputError("--stages: empty list");
  return stages;
}

struct PretrainArgs {
  std::string config, out = "runs", data, resume;
  int stop_at = -1;
};

int run_pretrain(const PretrainArgs& a, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = load_config(a.config);
  const data::LabeledDataset ds = load_dataset(a.data, cfg, err);
  trainer::RunOptions opts;
  opts.stop_at = a.stop_at;
  opts.workers = trainer::worker_count();
  if (!a.resume.empty()) {
    opts.resume_from = a.resume;
    // Continue inside the run that produced the checkpoint when possible.
    const fs::path owner = fs::path(a.resume).parent_path().parent_path();
    opts.out_dir = fs::exists(owner / trainer::kMetricsFile) ? owner : make_experiment_dir(a.out, "pretrain");
  } else {
    opts.out_dir = make_experiment_dir(a.out, "pretrain");
  }
  const int total = cfg.trainer.total_steps;
  opts.on_step = [&](const trainer::StepRecord& r) {
    if (r.step == 1 || r.step % 10 == 0 || r.step == total) {
      err << "[detco] step=" << r.step << "/" << total << " total=" << std::setprecision(6) << r.report.total
          << " lr=" << r.lr << '\n';
    }
  };
  const trainer::RunResult res = trainer::run(cfg, ds, opts);
  json summary{{"experiment_dir", opts.out_dir.string()},
               {"final_checkpoint", res.final_checkpoint.string()},
               {"metrics", res.metrics_path.string()},
               {"steps", res.state.step}};
  write_text(opts.out_dir / "run.json", summary.dump(2) + "\n");
  out << "experiment: " << opts.out_dir.string() << "\n"
      << "checkpoint: " << res.final_checkpoint.string() << "\n"
      << "metrics: " << res.metrics_path.string() << "\n";
  return 0;
}

struct ProbeArgs {
  std::string checkpoint, data, stages = "2,3,4,5", out, probe_type;
  bool random_init = false;
};

int run_probe(const ProbeArgs& a, std::ostream& out, std::ostream& err) {
  const trainer::LoadedCheckpoint ck = trainer::load_checkpoint(a.checkpoint);
  ProbeConfig pc = ck.config.eval;
  pc.stages = parse_stage_list(a.stages);
  if (!a.probe_type.empty()) pc.probe_type = parse_probe_type(a.probe_type);
  const data::LabeledDataset ds = load_dataset(a.data, ck.config, err);
  const model::DetcoModel model(ck.config.model);
  const model::ParameterSet params =
      a.random_init ? trainer::init_state(ck.config).query : ck.state.query;
  const eval::ProbeReport report = eval::probe_stages(model, params, ds, pc, ck.config.augment.global_side);

  const fs::path dir = a.out.empty() ? make_experiment_dir(fs::path(a.checkpoint).parent_path(), "probe") : fs::path(a.out);
  fs::create_directories(dir);
  json doc = json::parse(eval::probe_report_json(report));
  doc["checkpoint"] = a.checkpoint;
  doc["random_init"] = a.random_init;
  write_text(dir / "probe.json", doc.dump(2) + "\n");
  write_text(dir / "probe.txt", eval::probe_report_table(report));
  out << eval::probe_report_table(report) << "report: " << (dir / "probe.json").string() << "\n";
  return 0;
}

struct AblateArgs {
  std::string config, out = "runs", data;
};

int run_ablate(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const ExperimentConfig cfg = load_config(a.config);
  const data::LabeledDataset ds = load_dataset(a.data, cfg, err);
  const fs::path dir = make_experiment_dir(a.out, "ablate");
  write_text(dir / trainer::kEffectiveConfigFile, serialize_config(cfg));
  const eval::AblationGrid grid = eval::ablation_grid(ds, cfg, dir, trainer::worker_count());
  write_text(dir / "ablation.json", eval::ablation_json(grid) + "\n");
  write_text(dir / "ablation.txt", eval::ablation_table(grid));
  out << eval::ablation_table(grid) << "report: " << (dir / "ablation.json").string() << "\n";
  return 0;
}

struct AttentionArgs {
  std::string checkpoint, image, out, reduction = "mean-abs";
  int side = 0;
  double alpha = 0.6;
};

int run_attention(const AttentionArgs& a, std::ostream& out, std::ostream&) {
  const Image img = load_image(a.image);
  Image resized;
  const viz::AttentionMap amap =
      viz::checkpoint_attention(a.checkpoint, img, a.side, viz::parse_reduction(a.reduction), &resized);
  viz::write_overlay(resized, amap, a.out, a.alpha);
  out << "attention " << amap.values.rows() << "x" << amap.values.cols() << " from " << amap.channels
      << " channels (" << viz::reduction_name(amap.reduction) << (amap.constant_input ? ", constant input" : "")
      << ") -> " << a.out << "\n";
  return 0;
}

int run_plot(const std::string& log, const std::string& dir, std::ostream& out) {
  const viz::PlotOutputs res = viz::plot_metrics(log, dir);
  out << "plotted " << res.records << " records:\n";
  for (const auto& p : res.charts) out << "  " << p.string() << "\n";
  for (const auto& p : res.series) out << "  " << p.string() << "\n";
  return 0;
}

// The spec file uses the toy keys either bare (`num_classes = 8`) or under
// their config names (`data.toy.num_classes = 8`).
data::ToySpec load_toy_spec(const std::string& path) {
  if (path.empty()) return data::ToySpec{};
  if (!fs::exists(path)) throw FileNotFoundError("spec file not found: " + path);
  std::ifstream in(path);
  std::ostringstream rewritten;
  for (std::string line; std::getline(in, line);) {
    const auto start = line.find_first_not_of(" \t");
    if (start != std::string::npos && line[start] != '#' && line.compare(start, 9, "data.toy.") != 0 &&
        line.find('=') != std::string::npos) {
      line.insert(start, "data.toy.");
    }
    rewritten << line << '\n';
  }
  return parse_config_text(rewritten.str()).data.toy;
}

int run_synth(const std::string& spec_path, const std::string& out_dir, std::ostream& out) {
  const data::ToySpec spec = load_toy_spec(spec_path);
  const data::LabeledDataset ds = data::generate_toy(spec);
  data::write_image_folder(ds, out_dir);
  out << "wrote " << ds.size() << " images in " << ds.num_classes << " classes to " << out_dir << "\n";
  return 0;
}

}  // namespace

std::string usage() {
  return "usage: detco <command> [options]\n"
         "\n"
         "commands:\n"
         "  pretrain    --config <file> --out <dir> [--data <dir>] [--resume <ckpt>] [--stop-at N]\n"
         "  probe       --checkpoint <file> [--data <dir>] [--stages 2,3,4,5] [--out <dir>]\n"
         "  ablate      --config <file> --out <dir> [--data <dir>]\n"
         "  attention   --checkpoint <file> --image <path> --out <png> [--side N] [--reduction mean-abs|max]\n"
         "  plot        --log <file> --out <dir>\n"
         "  synth-data  [--spec <file>] --out <dir>\n"
         "\n"
         "Run `detco <command> --help` for the options of one command.\n"
         "DETCO_NUM_WORKERS bounds the augmentation worker threads.\n";
}

fs::path make_experiment_dir(const fs::path& base, const std::string& prefix) {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  localtime_r(&now, &tm);
  std::ostringstream stamp;
  stamp << prefix << "-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  fs::create_directories(base);
  fs::path dir = base / stamp.str();
  for (int n = 1; !fs::create_directory(dir); ++n) dir = base / (stamp.str() + "-" + std::to_string(n));
  return dir;
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  if (args.empty() || std::find(std::begin(kCommands), std::end(kCommands), args[0]) == std::end(kCommands)) {
    if (!args.empty() && (args[0] == "--help" || args[0] == "-h")) {
      out << usage();
      return 0;
    }
    if (!args.empty()) err << "error: unknown command '" << args[0] << "'\n";
    err << usage();
    return 2;
  }

  CLI::App app{"desk-scale multi-level contrastive pretraining", "detco"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* c_pre = app.add_subcommand("pretrain", "run contrastive pretraining");
  c_pre->add_option("--config", pre.config, "experiment config (flat key = value or JSON)");
  c_pre->add_option("--out", pre.out, "parent directory of the timestamped experiment directory");
  c_pre->add_option("--data", pre.data, "image-folder dataset (overrides data.root)");
  c_pre->add_option("--resume", pre.resume, "checkpoint to continue from");
  c_pre->add_option("--stop-at", pre.stop_at, "stop after this step");

  ProbeArgs pr;
  auto* c_probe = app.add_subcommand("probe", "linear probes on frozen stage features");
  c_probe->add_option("--checkpoint", pr.checkpoint, "checkpoint file")->required();
  c_probe->add_option("--data", pr.data, "image-folder dataset (default: the checkpoint's data config)");
  c_probe->add_option("--stages", pr.stages, "comma-separated stage list");
  c_probe->add_option("--out", pr.out, "report directory");
  c_probe->add_option("--probe-type", pr.probe_type, "linear-softmax or linear-hinge");
  c_probe->add_flag("--random-init", pr.random_init, "probe the untrained encoder of the same config");

  AblateArgs ab;
  auto* c_ab = app.add_subcommand("ablate", "MLS x GLC ablation grid");
  c_ab->add_option("--config", ab.config, "base experiment config");
  c_ab->add_option("--out", ab.out, "parent directory of the ablation directory");
  c_ab->add_option("--data", ab.data, "image-folder dataset");

  AttentionArgs at;
  auto* c_at = app.add_subcommand("attention", "last-stage attention overlay");
  c_at->add_option("--checkpoint", at.checkpoint, "checkpoint file")->required();
  c_at->add_option("--image", at.image, "input image")->required();
  c_at->add_option("--out", at.out, "output PNG")->required();
  c_at->add_option("--side", at.side, "network input side (default: global view side)");
  c_at->add_option("--reduction", at.reduction, "mean-abs or max");
  c_at->add_option("--alpha", at.alpha, "overlay strength");

  std::string log_path, plot_dir;
  auto* c_plot = app.add_subcommand("plot", "charts and CSV series from a metrics log");
  c_plot->add_option("--log", log_path, "metrics.jsonl")->required();
  c_plot->add_option("--out", plot_dir, "output directory")->required();

  std::string spec_path, synth_dir;
  auto* c_synth = app.add_subcommand("synth-data", "write the synthetic toy dataset as an image folder");
  c_synth->add_option("--spec", spec_path, "toy spec file (num_classes, samples_per_class, image_side, seed)");
  c_synth->add_option("--out", synth_dir, "output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << usage();
    return 2;
  }

  try {
    if (c_pre->parsed()) return run_pretrain(pre, out, err);
    if (c_probe->parsed()) return run_probe(pr, out, err);
    if (c_ab->parsed()) return run_ablate(ab, out, err);
    if (c_at->parsed()) return run_attention(at, out, err);
    if (c_plot->parsed()) return run_plot(log_path, plot_dir, out);
    if (c_synth->parsed()) return run_synth(spec_path, synth_dir, out);
  } catch (const Error& e) {
    err << "error[" << e.kind() << "]: " << e.what() << "\n";
    return 1;
  } catch (const fs::filesystem_error& e) {
    err << "error[IoError]: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "error[InternalError]: " << e.what() << "\n";
    return 1;
  }
  err << usage();
  return 2;
}

int dispatch(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return dispatch(args, std::cout, std::cerr);
}

}  // namespace detco::cli
