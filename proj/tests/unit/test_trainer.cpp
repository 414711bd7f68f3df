#include <doctest.h>

#include <fstream>
#include <set>

#include "detco/errors.hpp"
#include "detco/trainer.hpp"
#include "helpers.hpp"

using namespace detco;
using namespace detco::trainer;

namespace {

std::vector<const Image*> first_batch(const data::LabeledDataset& ds, int n) {
  std::vector<const Image*> out;
  for (int i = 0; i < n; ++i) out.push_back(ds.items[static_cast<std::size_t>(i)].image.get());
  return out;
}

// Rows [ptr - b, ptr) of a ring buffer, oldest first.
Matrix newest_rows(const memory::FeatureQueue& q, int b) {
  Matrix out(b, q.dim());
  for (int i = 0; i < b; ++i) {
    const int row = ((q.ptr() - b + i) % q.capacity() + q.capacity()) % q.capacity();
    out.row(i) = q.storage().row(row);
  }
  return out;
}

bool same_params(const model::ParameterSet& a, const model::ParameterSet& b, double tol) {
  for (const auto& [name, t] : a) {
    const Tensor& u = b.at(name);
    for (std::size_t i = 0; i < t.size(); ++i) {
      if (std::abs(t[i] - u[i]) > tol) return false;
    }
  }
  return a.size() == b.size();
}

data::LabeledDataset tiny_data(const ExperimentConfig& cfg) { return data::generate_toy(cfg.data.toy); }

}  // namespace

TEST_CASE("zero learning rate isolates the query encoder") {
  ExperimentConfig cfg = testing::tiny_config();
  cfg.trainer.learning_rate = 0.0;
  const auto ds = tiny_data(cfg);
  const model::DetcoModel model(cfg.model);
  TrainState st = init_state(cfg);
  // Make the key encoder differ so the EMA has something to move.
  st.key = model.init_parameters(99);
  const model::ParameterSet q0 = st.query, k0 = st.key;
  const int ptr0 = st.bank.global(0).ptr();

  const StepRecord rec = train_step(model, cfg, st, first_batch(ds, cfg.trainer.batch_size));
  CHECK(rec.step == 1);
  CHECK(rec.lr == 0.0);
  CHECK(st.query == q0);
  CHECK_FALSE(st.key == k0);
  CHECK(same_params(st.key, model::momentum_update(k0, q0, cfg.trainer.momentum), 0.0));
  for (int s = 0; s < model::kNumStages; ++s) {
    CHECK(st.bank.global(s).ptr() == (ptr0 + cfg.trainer.batch_size) % cfg.memory.capacity);
    CHECK(st.bank.local(s).ptr() == (ptr0 + cfg.trainer.batch_size) % cfg.memory.capacity);
  }
}

TEST_CASE("disabling GLC zeroes local losses and freezes local heads") {
  ExperimentConfig cfg = testing::tiny_config();
  cfg.trainer.glc_enabled = false;
  const auto ds = tiny_data(cfg);
  const model::DetcoModel model(cfg.model);
  TrainState st = init_state(cfg);
  const model::ParameterSet q0 = st.query;
  const memory::QueueBank bank0 = st.bank;
  for (int step = 0; step < 2; ++step) {
    const StepRecord rec = train_step(model, cfg, st, first_batch(ds, cfg.trainer.batch_size));
    for (int s = 0; s < model::kNumStages; ++s) {
      CHECK(rec.report.per_stage[s].l_ll == 0.0);
      CHECK(rec.report.per_stage[s].l_gl == 0.0);
      CHECK(rec.report.per_stage[s].l_gg > 0.0);
    }
  }
  for (const auto& [name, t] : st.query) {
    const model::ParamRole role = model::param_role(name);
    if (role.group == model::ParamGroup::kLocalHead) {
      CHECK(t == q0.at(name));
    } else if (role.group == model::ParamGroup::kEncoder) {
      CHECK_FALSE(t == q0.at(name));
    }
  }
  for (int s = 0; s < model::kNumStages; ++s) CHECK(st.bank.local(s).storage() == bank0.local(s).storage());
}

TEST_CASE("disabling MLS leaves shallow heads untouched and trains the deepest") {
  ExperimentConfig cfg = testing::tiny_config();
  cfg.trainer.mls_enabled = false;
  const auto ds = tiny_data(cfg);
  const model::DetcoModel model(cfg.model);
  TrainState st = init_state(cfg);
  const model::ParameterSet q0 = st.query;
  const StepRecord rec = train_step(model, cfg, st, first_batch(ds, cfg.trainer.batch_size));
  CHECK(rec.report.total == doctest::Approx(rec.report.per_stage[3].sum()));
  for (const auto& [name, t] : st.query) {
    const model::ParamRole role = model::param_role(name);
    if (role.group != model::ParamGroup::kEncoder) CHECK((t == q0.at(name)) == (role.stage != 3));
  }
}

TEST_CASE("key parameters follow the EMA closed form of the query trajectory") {
  ExperimentConfig cfg = testing::tiny_config();
  const auto ds = tiny_data(cfg);
  const model::DetcoModel model(cfg.model);
  TrainState st = init_state(cfg);
  std::map<std::string, std::vector<double>> expect;
  for (const auto& [name, t] : st.key) expect[name].assign(t.values().begin(), t.values().end());
  for (int step = 0; step < 5; ++step) {
    const auto idx = batch_indices(ds.size(), cfg.trainer.batch_size, cfg.trainer.seed, step);
    std::vector<const Image*> batch;
    for (auto i : idx) batch.push_back(ds.items[i].image.get());
    train_step(model, cfg, st, batch);
    const double m = cfg.trainer.momentum;
    for (auto& [name, v] : expect) {
      const Tensor& q = st.query.at(name);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] = m * v[i] + (1 - m) * q[i];
    }
  }
  double worst = 0.0;
  for (const auto& [name, v] : expect) {
    const Tensor& k = st.key.at(name);
    for (std::size_t i = 0; i < v.size(); ++i) worst = std::max(worst, std::abs(k[i] - v[i]));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("the newest queue rows are the key embeddings of the step's key views") {
  ExperimentConfig cfg = testing::tiny_config();
  const auto ds = tiny_data(cfg);
  const model::DetcoModel model(cfg.model);
  TrainState st = init_state(cfg);
  const auto batch = first_batch(ds, cfg.trainer.batch_size);
  train_step(model, cfg, st, batch);  // key != query from here on

  const model::ParameterSet key_before = st.key;
  const int step = st.step;
  train_step(model, cfg, st, batch);

  // Recompute the step's views and embed them with the pre-step key encoder.
  const auto bundles = build_bundles(batch, cfg, step, 1);
  std::vector<const Image*> globals;
  for (const auto& b : bundles) globals.push_back(&b.i_k.pixels);
  const auto kg = model::project_global(model, key_before,
                                        model::encode_stages(model, key_before, images_to_tensor(globals)));
  std::vector<model::StageFeatures> patches;
  for (int j = 0; j < augment::kJigsawPatches; ++j) {
    std::vector<const Image*> pj;
    for (const auto& b : bundles) pj.push_back(&b.p_k.patches[static_cast<std::size_t>(j)]);
    patches.push_back(model::encode_stages(model, key_before, images_to_tensor(pj)));
  }
  const auto kl = model::project_local(model, key_before, patches);
  for (int s = 0; s < model::kNumStages; ++s) {
    CHECK((newest_rows(st.bank.global(s), cfg.trainer.batch_size) - kg[s]).cwiseAbs().maxCoeff() < 1e-5);
    CHECK((newest_rows(st.bank.local(s), cfg.trainer.batch_size) - kl[s]).cwiseAbs().maxCoeff() < 1e-5);
  }
}

TEST_CASE("batch indices cover each epoch exactly once") {
  for (std::size_t n : {7u, 16u, 33u}) {
    std::vector<std::size_t> seen;
    const int b = 4;
    const int steps = static_cast<int>((3 * n + b - 1) / b);
    for (int step = 0; step < steps; ++step) {
      const auto idx = batch_indices(n, b, 5, step);
      seen.insert(seen.end(), idx.begin(), idx.end());
    }
    for (int epoch = 0; epoch < 3; ++epoch) {
      std::vector<std::size_t> e(seen.begin() + epoch * n, seen.begin() + (epoch + 1) * n);
      std::sort(e.begin(), e.end());
      for (std::size_t i = 0; i < n; ++i) REQUIRE(e[i] == i);
    }
  }
  CHECK(batch_indices(16, 4, 5, 3) == batch_indices(16, 4, 5, 3));
  CHECK(batch_indices(16, 4, 5, 0) != batch_indices(16, 4, 6, 0));
  CHECK_THROWS_AS(batch_indices(0, 4, 5, 0), InputError);
}

TEST_CASE("a run writes config, metrics and checkpoints") {
  ExperimentConfig cfg = testing::tiny_config();
  cfg.trainer.checkpoint_every = 2;
  const auto ds = tiny_data(cfg);
  const auto dir = testing::temp_dir("run");
  RunOptions opts;
  opts.out_dir = dir;
  opts.workers = 2;
  const RunResult r = run(cfg, ds, opts);
  CHECK(r.records.size() == 6);
  CHECK(r.final_checkpoint == dir / kCheckpointDir / kFinalCheckpoint);
  CHECK(std::filesystem::exists(dir / kCheckpointDir / "step_000002.ckpt"));
  CHECK(std::filesystem::exists(dir / kCheckpointDir / "step_000004.ckpt"));
  CHECK(parse_config(dir / kEffectiveConfigFile) == cfg);

  std::ifstream in(r.metrics_path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  REQUIRE(lines.size() == 6);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const StepRecord rec = parse_metrics_line(lines[i]);
    CHECK(rec.step == static_cast<int>(i) + 1);
    CHECK(rec.report.total == doctest::Approx(r.records[i].report.total).epsilon(1e-12));
    CHECK(rec.lr == doctest::Approx(cfg.trainer.learning_rate_at(static_cast<int>(i))));
  }

  const LoadedCheckpoint ck = load_checkpoint(r.final_checkpoint);
  CHECK(ck.config == cfg);
  CHECK(ck.state.step == 6);
  CHECK(ck.state.query == r.state.query);
  CHECK(ck.state.key == r.state.key);
  CHECK(ck.state.velocity == r.state.velocity);
  for (int s = 0; s < model::kNumStages; ++s) {
    CHECK(ck.state.bank.global(s).storage() == r.state.bank.global(s).storage());
    CHECK(ck.state.bank.local(s).ptr() == r.state.bank.local(s).ptr());
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("resuming continues the uninterrupted trajectory") {
  ExperimentConfig cfg = testing::tiny_config();
  cfg.trainer.total_steps = 8;
  const auto ds = tiny_data(cfg);
  const auto straight_dir = testing::temp_dir("straight"), split_dir = testing::temp_dir("split");

  RunOptions straight;
  straight.out_dir = straight_dir;
  const RunResult full = run(cfg, ds, straight);

  RunOptions first;
  first.out_dir = split_dir;
  first.stop_at = 4;
  const RunResult half = run(cfg, ds, first);
  CHECK(half.state.step == 4);
  RunOptions second;
  second.out_dir = split_dir;
  second.resume_from = half.final_checkpoint;
  const RunResult rest = run(cfg, ds, second);
  CHECK(rest.records.size() == 4);
  CHECK(same_params(rest.state.query, full.state.query, 1e-6));
  CHECK(same_params(rest.state.key, full.state.key, 1e-6));
  CHECK(rest.records.back().report.total == doctest::Approx(full.records.back().report.total).epsilon(1e-9));

  std::ifstream in(rest.metrics_path);
  int lines = 0;
  for (std::string line; std::getline(in, line);) lines += !line.empty();
  CHECK(lines == 8);

  ExperimentConfig other = cfg;
  other.temperatures.tau_gg = 0.3;
  CHECK_THROWS_WITH_AS(run(other, ds, second), doctest::Contains("contrast.tau_gg"), StructuralError);
  std::filesystem::remove_all(straight_dir);
  std::filesystem::remove_all(split_dir);
}

TEST_CASE("an empty run checkpoints the initialization") {
  ExperimentConfig cfg = testing::tiny_config();
  cfg.trainer.total_steps = 0;
  const auto dir = testing::temp_dir("empty_run");
  RunOptions opts;
  opts.out_dir = dir;
  const RunResult r = run(cfg, tiny_data(cfg), opts);
  CHECK(r.records.empty());
  const LoadedCheckpoint ck = load_checkpoint(r.final_checkpoint);
  CHECK(ck.state.step == 0);
  CHECK(ck.state.query == init_state(cfg).query);
  std::filesystem::remove_all(dir);
}

TEST_CASE("run and step input errors") {
  const ExperimentConfig cfg = testing::tiny_config();
  RunOptions opts;
  opts.write_files = false;
  CHECK_THROWS_AS(run(cfg, data::LabeledDataset{}, opts), InputError);
  const model::DetcoModel model(cfg.model);
  TrainState st = init_state(cfg);
  const auto ds = tiny_data(cfg);
  CHECK_THROWS_AS(train_step(model, cfg, st, first_batch(ds, 3)), InputError);
  CHECK_THROWS_AS(parse_metrics_line("{\"step\": 1}"), FormatError);
  CHECK_THROWS_AS(parse_metrics_line("garbage"), FormatError);
}

TEST_CASE("the active parameter set follows the ablation flags") {
  ExperimentConfig cfg = testing::tiny_config();
  CHECK(is_active_parameter("encoder.stage2.conv0.weight", cfg));
  CHECK(is_active_parameter("head.local.stage2.fc1.weight", cfg));
  cfg.trainer.glc_enabled = false;
  CHECK_FALSE(is_active_parameter("head.local.stage5.fc1.weight", cfg));
  CHECK(is_active_parameter("head.global.stage2.fc1.weight", cfg));
  cfg.trainer.mls_enabled = false;
  CHECK_FALSE(is_active_parameter("head.global.stage2.fc1.weight", cfg));
  CHECK(is_active_parameter("head.global.stage5.fc1.weight", cfg));
}

TEST_CASE("runs are bit-identical across worker counts") {
  ExperimentConfig cfg = testing::tiny_config();
  cfg.trainer.total_steps = 3;
  const auto ds = tiny_data(cfg);
  RunOptions one, three;
  one.write_files = three.write_files = false;
  one.workers = 1;
  three.workers = 3;
  const RunResult a = run(cfg, ds, one), b = run(cfg, ds, three);
  CHECK(a.state.query == b.state.query);
  CHECK(a.state.key == b.state.key);
  for (int s = 0; s < model::kNumStages; ++s) CHECK(a.state.bank.global(s).storage() == b.state.bank.global(s).storage());
}
