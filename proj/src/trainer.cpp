#include "detco/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <map>
#include <mutex>
#include <numeric>
#include <thread>

#include "detco/checkpoint.hpp"
#include "detco/errors.hpp"
#include "detco/nn/ops.hpp"
#include "detco/rng.hpp"

namespace detco::trainer {
namespace {

using json = nlohmann::json;

// Independent random streams hanging off the run seed.
enum Stream : std::uint64_t { kAugmentStream = 1, kSamplerStream = 2, kInitStream = 3, kQueueStream = 4 };

std::string stage_tag(int s) { return "stage" + std::to_string(model::kStageNames[s]); }

std::string step_checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "step_%06d.ckpt", step);
  return buf;
}

std::vector<const Image*> stack_globals(const std::vector<augment::ViewBundle>& bundles, bool query) {
  std::vector<const Image*> out;
  for (const auto& b : bundles) out.push_back(query ? &b.i_q.pixels : &b.i_k.pixels);
  return out;
}

std::vector<const Image*> stack_patches(const std::vector<augment::ViewBundle>& bundles, bool query) {
  std::vector<const Image*> out;
  for (const auto& b : bundles) {
    for (const auto& p : (query ? b.p_q : b.p_k).patches) out.push_back(&p);
  }
  return out;
}

struct Embedded {
  model::EmbeddingSet embeddings;
  std::array<nn::Var, model::kNumStages> global;
  std::array<nn::Var, model::kNumStages> local;
};

Embedded embed(const model::DetcoModel& model, nn::Tape& tape, const model::ParamVars& vars, const Tensor& globals,
               const Tensor* patches) {
  Embedded e;
  const auto maps = model.forward_stages(tape, vars, tape.constant(globals));
  for (int s = 0; s < model::kNumStages; ++s) {
    e.global[s] = model.global_head(tape, vars, s, nn::global_avg_pool(tape, maps[s]));
    e.embeddings.global[s] = tensor_to_matrix(e.global[s]->value);
  }
  if (patches) {
    const auto pmaps = model.forward_stages(tape, vars, tape.constant(*patches));
    for (int s = 0; s < model::kNumStages; ++s) {
      e.local[s] = model.local_head(tape, vars, s, model.concat_patch_features(tape, pmaps[s]));
      e.embeddings.local[s] = tensor_to_matrix(e.local[s]->value);
    }
  }
  return e;
}

void sgd_update(model::ParameterSet& params, model::ParameterSet& velocity, const model::ParameterSet& grads,
                double lr, double momentum, double weight_decay) {
  for (const auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    Tensor& v = velocity.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double d = static_cast<double>(g[i]) + weight_decay * p[i];
      v[i] = static_cast<float>(momentum * v[i] + d);
      p[i] = static_cast<float>(p[i] - lr * v[i]);
    }
  }
}

void put_queue(checkpoint::Archive& ar, const std::string& prefix, const memory::FeatureQueue& q) {
  ar.put(prefix + "/storage", q.storage());
  const std::array<std::int64_t, 2> cursor{q.ptr(), q.filled()};
  ar.put(prefix + "/cursor", std::span<const std::int64_t>(cursor));
}

memory::FeatureQueue get_queue(const checkpoint::Archive& ar, const std::string& prefix) {
  const auto cursor = ar.ints(prefix + "/cursor");
  if (cursor.size() != 2) throw FormatError(prefix + "/cursor must hold [ptr, filled]");
  return memory::FeatureQueue::restore(ar.matrix(prefix + "/storage"), static_cast<int>(cursor[0]),
                                       static_cast<int>(cursor[1]));
}

model::ParameterSet get_params(const checkpoint::Archive& ar, const std::string& prefix) {
  model::ParameterSet out;
  for (const auto& name : ar.names()) {
    if (name.rfind(prefix, 0) == 0) out.set(name.substr(prefix.size()), ar.tensor(name));
  }
  return out;
}

void require_aligned(const model::ParameterSet& expected, const model::ParameterSet& got, const std::string& what) {
  const auto mismatches = model::structure_mismatches(expected, got);
  if (mismatches.empty()) return;
  std::string msg = what + " parameters do not match the configured model:";
  for (const auto& m : mismatches) msg += "\n  " + m;
  throw StructuralError(msg);
}

std::vector<double> to_vector(const std::array<contrast::BranchLosses, model::kNumStages>& per_stage,
                              double contrast::BranchLosses::*field) {
  std::vector<double> out;
  for (const auto& b : per_stage) out.push_back(b.*field);
  return out;
}

}  // namespace

TrainState init_state(const ExperimentConfig& cfg) {
  const model::DetcoModel model(cfg.model);
  TrainState st;
  st.query = model.init_parameters(derive_seed(cfg.trainer.seed, {kInitStream}));
  st.key = st.query;
  st.velocity = st.query;
  for (auto& [name, t] : st.velocity) t.fill(0.0f);
  st.bank = memory::QueueBank::random_unit(cfg.memory.capacity, cfg.model.embed_dim,
                                           derive_seed(cfg.trainer.seed, {kQueueStream}));
  return st;
}

bool is_active_parameter(const std::string& name, const ExperimentConfig& cfg) {
  const model::ParamRole role = model::param_role(name);
  if (role.group == model::ParamGroup::kEncoder) return true;
  if (cfg.effective_loss_weights().w[role.stage] <= 0.0) return false;
  return role.group == model::ParamGroup::kGlobalHead || cfg.trainer.glc_enabled;
}

int worker_count() {
  if (const char* env = std::getenv("DETCO_NUM_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<augment::ViewBundle> build_bundles(std::span<const Image* const> batch, const ExperimentConfig& cfg,
                                               int step, int workers) {
  const int n = static_cast<int>(batch.size());
  std::vector<augment::ViewBundle> out(batch.size());
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (int j; (j = next.fetch_add(1)) < n;) {
      try {
        const std::uint64_t seed = derive_seed(cfg.trainer.seed, {kAugmentStream, static_cast<std::uint64_t>(step),
                                                                  static_cast<std::uint64_t>(j)});
        out[j] = augment::make_bundle(*batch[j], seed, cfg.augment);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(workers, 1, std::max(1, n));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

StepRecord train_step(const model::DetcoModel& model, const ExperimentConfig& cfg, TrainState& state,
                      std::span<const Image* const> batch, int workers) {
  if (static_cast<int>(batch.size()) != cfg.trainer.batch_size) {
    throw InputError("batch of " + std::to_string(batch.size()) + " images, config expects " +
                     std::to_string(cfg.trainer.batch_size));
  }
  const bool glc = cfg.trainer.glc_enabled;
  const contrast::LossWeights weights = cfg.effective_loss_weights();
  const auto bundles = build_bundles(batch, cfg, state.step, workers);

  const Tensor q_globals = images_to_tensor(stack_globals(bundles, true));
  const Tensor k_globals = images_to_tensor(stack_globals(bundles, false));
  Tensor q_patches, k_patches;
  if (glc) {
    q_patches = images_to_tensor(stack_patches(bundles, true));
    k_patches = images_to_tensor(stack_patches(bundles, false));
  }

  nn::Tape tape(true);
  const auto qvars =
      model::bind_parameters(tape, state.query, [&](const std::string& n) { return is_active_parameter(n, cfg); });
  const Embedded q = embed(model, tape, qvars, q_globals, glc ? &q_patches : nullptr);

  nn::Tape key_tape(false);
  const auto kvars = model::bind_parameters(key_tape, state.key);
  const Embedded k = embed(model, key_tape, kvars, k_globals, glc ? &k_patches : nullptr);

  auto loss = contrast::detco_loss_with_grad(q.embeddings, k.embeddings, state.bank, cfg.temperatures, weights, glc);
  loss.report.check_finite();

  std::vector<std::pair<nn::Var, Tensor>> seeds;
  for (int s = 0; s < model::kNumStages; ++s) {
    if (loss.grad_global[s].size()) seeds.emplace_back(q.global[s], matrix_to_tensor(loss.grad_global[s]));
    if (glc && loss.grad_local[s].size()) seeds.emplace_back(q.local[s], matrix_to_tensor(loss.grad_local[s]));
  }
  tape.backward(seeds);
  const model::ParameterSet grads = model::collect_gradients(qvars);

  const double lr = cfg.trainer.learning_rate_at(state.step);
  sgd_update(state.query, state.velocity, grads, lr, cfg.trainer.sgd_momentum, cfg.trainer.weight_decay);
  model::momentum_update_inplace(state.key, state.query, cfg.trainer.momentum);
  for (int s = 0; s < model::kNumStages; ++s) {
    state.bank.global(s).enqueue(k.embeddings.global[s]);
    if (glc) state.bank.local(s).enqueue(k.embeddings.local[s]);
  }
  ++state.step;
  return StepRecord{state.step, lr, loss.report};
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed, int step) {
  if (dataset_size == 0) throw InputError("dataset is empty");
  std::map<std::uint64_t, std::vector<std::size_t>> perms;
  auto permutation = [&](std::uint64_t epoch) -> const std::vector<std::size_t>& {
    auto it = perms.find(epoch);
    if (it != perms.end()) return it->second;
    std::vector<std::size_t> p(dataset_size);
    std::iota(p.begin(), p.end(), std::size_t{0});
    Rng rng(derive_seed(seed, {kSamplerStream, epoch}));
    std::shuffle(p.begin(), p.end(), rng.engine());
    return perms.emplace(epoch, std::move(p)).first->second;
  };
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  for (int j = 0; j < batch_size; ++j) {
    const std::uint64_t pos = static_cast<std::uint64_t>(step) * batch_size + j;
    out.push_back(permutation(pos / dataset_size)[pos % dataset_size]);
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ExperimentConfig& cfg, const TrainState& state) {
  checkpoint::Archive ar;
  json meta;
  meta["format"] = "detco-train-state";
  meta["step"] = state.step;
  meta["config"] = json::parse(serialize_config_json(cfg));
  ar.metadata = meta.dump();
  for (const auto& [name, t] : state.query) ar.put("query/" + name, t);
  for (const auto& [name, t] : state.key) ar.put("key/" + name, t);
  for (const auto& [name, t] : state.velocity) ar.put("velocity/" + name, t);
  for (int s = 0; s < model::kNumStages; ++s) {
    put_queue(ar, "queue/global/" + stage_tag(s), state.bank.global(s));
    put_queue(ar, "queue/local/" + stage_tag(s), state.bank.local(s));
  }
  ar.save(path);
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  const checkpoint::Archive ar = checkpoint::Archive::load(path);
  const json meta = json::parse(ar.metadata, nullptr, false);
  if (meta.is_discarded() || !meta.contains("config") || !meta.contains("step")) {
    throw FormatError(path.string() + ": checkpoint metadata lacks config/step");
  }
  LoadedCheckpoint out;
  out.config = parse_config_text(meta["config"].dump());
  out.state.step = meta["step"].get<int>();

  const model::ParameterSet expected = model::DetcoModel(out.config.model).init_parameters(0);
  out.state.query = get_params(ar, "query/");
  out.state.key = get_params(ar, "key/");
  out.state.velocity = get_params(ar, "velocity/");
  require_aligned(expected, out.state.query, "query");
  require_aligned(expected, out.state.key, "key");
  require_aligned(expected, out.state.velocity, "optimizer");
  for (int s = 0; s < model::kNumStages; ++s) {
    out.state.bank.global_queues.push_back(get_queue(ar, "queue/global/" + stage_tag(s)));
    out.state.bank.local_queues.push_back(get_queue(ar, "queue/local/" + stage_tag(s)));
  }
  return out;
}

std::string metrics_line(const StepRecord& rec) {
  json j;
  j["step"] = rec.step;
  j["l_gg"] = to_vector(rec.report.per_stage, &contrast::BranchLosses::l_gg);
  j["l_ll"] = to_vector(rec.report.per_stage, &contrast::BranchLosses::l_ll);
  j["l_gl"] = to_vector(rec.report.per_stage, &contrast::BranchLosses::l_gl);
  j["total"] = rec.report.total;
  j["lr"] = rec.lr;
  return j.dump();
}

StepRecord parse_metrics_line(const std::string& line) {
  const json j = json::parse(line, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError("not a JSON object");
  auto number = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_number()) throw FormatError(std::string("missing numeric field '") + key + "'");
    return j[key].get<double>();
  };
  auto series = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != model::kNumStages) {
      throw FormatError(std::string("field '") + key + "' must be an array of 4 numbers");
    }
    std::array<double, model::kNumStages> out{};
    for (int s = 0; s < model::kNumStages; ++s) {
      if (!j[key][s].is_number()) throw FormatError(std::string("field '") + key + "' must hold numbers");
      out[s] = j[key][s].get<double>();
    }
    return out;
  };
  StepRecord rec;
  if (!j.contains("step") || !j["step"].is_number_integer()) throw FormatError("missing integer field 'step'");
  rec.step = j["step"].get<int>();
  const auto gg = series("l_gg"), ll = series("l_ll"), gl = series("l_gl");
  for (int s = 0; s < model::kNumStages; ++s) rec.report.per_stage[s] = {gg[s], ll[s], gl[s]};
  rec.report.total = number("total");
  rec.lr = number("lr");
  return rec;
}

RunResult run(const ExperimentConfig& cfg, const data::LabeledDataset& dataset, const RunOptions& opts) {
  namespace fs = std::filesystem;
  cfg.validate();
  dataset.validate();
  const model::DetcoModel model(cfg.model);
  model.check_input_side(cfg.augment.global_side);
  model.check_input_side(cfg.augment.patch_side);

  RunResult result;
  TrainState& state = result.state;
  if (!opts.resume_from.empty()) {
    LoadedCheckpoint loaded = load_checkpoint(opts.resume_from);
    std::vector<std::string> diffs;
    for (const auto& key : config_differences(loaded.config, cfg)) {
      if (key != "trainer.checkpoint_every" && key != "data.root") diffs.push_back(key);
    }
    if (!diffs.empty()) {
      std::string msg = "checkpoint config differs from the run config in:";
      for (const auto& k : diffs) msg += " " + k;
      throw StructuralError(msg);
    }
    state = std::move(loaded.state);
  } else {
    state = init_state(cfg);
  }

  const int end = opts.stop_at >= 0 ? std::min(opts.stop_at, cfg.trainer.total_steps) : cfg.trainer.total_steps;
  const int workers = opts.workers > 0 ? opts.workers : worker_count();

  std::ofstream metrics;
  if (opts.write_files) {
    fs::create_directories(opts.out_dir / kCheckpointDir);
    std::ofstream(opts.out_dir / kEffectiveConfigFile) << serialize_config(cfg);
    std::ofstream(opts.out_dir / "config.effective.json") << serialize_config_json(cfg) << '\n';
    result.metrics_path = opts.out_dir / kMetricsFile;
    // On resume keep only the records the checkpoint already accounts for.
    std::vector<std::string> kept;
    if (!opts.resume_from.empty() && fs::exists(result.metrics_path)) {
      std::ifstream in(result.metrics_path);
      for (std::string line; std::getline(in, line);) {
        if (!line.empty() && parse_metrics_line(line).step <= state.step) kept.push_back(line);
      }
    }
    metrics.open(result.metrics_path, std::ios::trunc);
    for (const auto& line : kept) metrics << line << '\n';
    metrics.flush();
  }

  const int every = cfg.trainer.checkpoint_every;
  std::vector<const Image*> batch(static_cast<std::size_t>(cfg.trainer.batch_size));
  while (state.step < end) {
    const auto idx = batch_indices(dataset.size(), cfg.trainer.batch_size, cfg.trainer.seed, state.step);
    for (std::size_t j = 0; j < idx.size(); ++j) batch[j] = dataset.items[idx[j]].image.get();
    StepRecord rec = train_step(model, cfg, state, batch, workers);
    if (opts.write_files) {
      metrics << metrics_line(rec) << '\n';
      metrics.flush();
      if (every > 0 && state.step % every == 0 && state.step != end) {
        save_checkpoint(opts.out_dir / kCheckpointDir / step_checkpoint_name(state.step), cfg, state);
      }
    }
    if (opts.on_step) opts.on_step(rec);
    result.records.push_back(std::move(rec));
  }

  if (opts.write_files) {
    const bool complete = state.step >= cfg.trainer.total_steps;
    result.final_checkpoint =
        opts.out_dir / kCheckpointDir / (complete ? std::string(kFinalCheckpoint) : step_checkpoint_name(state.step));
    save_checkpoint(result.final_checkpoint, cfg, state);
  }
  return result;
}

}  // namespace detco::trainer
