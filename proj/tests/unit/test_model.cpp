#include <doctest.h>

#include <random>

#include "detco/errors.hpp"
#include "detco/model.hpp"
#include "detco/nn/ops.hpp"

using namespace detco;
using namespace detco::model;

namespace {

Tensor random_images(int n, int side, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor t({n, 3, side, side});
  for (float& v : t.values()) v = u(rng);
  return t;
}

EncoderConfig small_toy() {
  EncoderConfig cfg;
  cfg.stage_channels = {8, 16, 32, 64};
  cfg.norm_groups = 4;
  return cfg;
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("toy encoder taps follow side / stride") {
  const DetcoModel model(small_toy());
  const StageFeatures f = encode_stages(model, model.init_parameters(1), random_images(2, 64, 1));
  const int sides[] = {16, 8, 4, 2};
  for (int s = 0; s < kNumStages; ++s) {
    CHECK(f.maps[s].shape() == std::vector<int>{2, small_toy().stage_channels[s], sides[s], sides[s]});
    CHECK(f.maps[s].all_finite());
  }
}

TEST_CASE("resnet50-like encoder: 224 -> 7x7x2048 and 448 -> 14x14x2048") {
  const DetcoModel model(EncoderConfig::resnet50());
  const ParameterSet params = model.init_parameters(2);
  const StageFeatures a = encode_stages(model, params, random_images(1, 224, 2));
  CHECK(a.maps[3].shape() == std::vector<int>{1, 2048, 7, 7});
  CHECK(a.maps[0].shape() == std::vector<int>{1, 256, 56, 56});
  const StageFeatures b = encode_stages(model, params, random_images(1, 448, 3));
  CHECK(b.maps[3].shape() == std::vector<int>{1, 2048, 14, 14});
}

TEST_CASE("an input side not divisible by the max stride names the side") {
  const DetcoModel model(small_toy());
  CHECK_THROWS_WITH_AS(model.check_input_side(100), doctest::Contains("100"), ConfigError);
  CHECK_NOTHROW(model.check_input_side(96));
}

TEST_CASE("global embeddings are unit norm") {
  EncoderConfig cfg = small_toy();
  const DetcoModel model(cfg);
  const ParameterSet params = model.init_parameters(3);
  const auto emb = project_global(model, params, encode_stages(model, params, random_images(3, 64, 4)));
  for (const Matrix& e : emb) {
    CHECK(e.rows() == 3);
    CHECK(e.cols() == cfg.embed_dim);
    for (Eigen::Index i = 0; i < e.rows(); ++i) CHECK(std::abs(e.row(i).norm() - 1.0) < 1e-5);
  }
}

TEST_CASE("a zero feature map goes through the bias path or raises without bias") {
  EncoderConfig cfg = small_toy();
  StageFeatures zero;
  for (int s = 0; s < kNumStages; ++s) zero.maps[s] = Tensor({2, cfg.stage_channels[s], 2, 2}, 0.0f);

  const DetcoModel with_bias(cfg);
  const ParameterSet params = with_bias.init_parameters(4);
  const auto emb = project_global(with_bias, params, zero);
  for (const Matrix& e : emb) CHECK(std::abs(e.row(0).norm() - 1.0) < 1e-6);

  cfg.head_bias = false;
  const DetcoModel no_bias(cfg);
  CHECK_THROWS_AS(project_global(no_bias, no_bias.init_parameters(4), zero), DegenerateEmbeddingError);
}

TEST_CASE("a bias-free linear head is scale invariant") {
  EncoderConfig cfg = small_toy();
  cfg.head_bias = false;
  cfg.head_relu = false;
  const DetcoModel model(cfg);
  const ParameterSet params = model.init_parameters(5);
  StageFeatures f = encode_stages(model, params, random_images(4, 64, 5));
  StageFeatures doubled = f;
  for (auto& m : doubled.maps) {
    for (float& v : m.values()) v *= 2.0f;
  }
  const auto a = project_global(model, params, f), b = project_global(model, params, doubled);
  for (int s = 0; s < kNumStages; ++s) {
    // For unit vectors the chord length bounds the angle to first order.
    for (Eigen::Index i = 0; i < a[s].rows(); ++i) CHECK((a[s].row(i) - b[s].row(i)).norm() < 1e-5);
  }
}

TEST_CASE("identical patches concatenate to a tiled vector") {
  const DetcoModel model(small_toy());
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n;
  Tensor one({2, 64, 2, 2});
  for (float& v : one.values()) v = n(rng);
  // Stack 9 copies sample-major: rows b*9 + j.
  Tensor stacked({18, 64, 2, 2});
  const std::size_t per = 64 * 4;
  for (int b = 0; b < 2; ++b) {
    for (int j = 0; j < 9; ++j) {
      std::copy_n(one.data() + b * per, per, stacked.data() + (b * 9 + j) * per);
    }
  }
  nn::Tape tape(false);
  const Tensor concat = model.concat_patch_features(tape, tape.constant(stacked))->value;
  const Matrix pooled = pool_stage(one);
  REQUIRE(concat.shape() == std::vector<int>{2, 9 * 64});
  for (int b = 0; b < 2; ++b) {
    for (int j = 0; j < 9; ++j) {
      for (int c = 0; c < 64; ++c) CHECK(concat[b * 9 * 64 + j * 64 + c] == static_cast<float>(pooled(b, c)));
    }
  }
  CHECK_THROWS_AS(model.concat_patch_features(tape, tape.constant(Tensor({10, 64, 2, 2}))), InputError);
}

TEST_CASE("local embeddings are unit norm, order sensitive and need 9 patches") {
  const DetcoModel model(small_toy());
  const ParameterSet params = model.init_parameters(7);
  std::vector<StageFeatures> patches;
  for (int j = 0; j < 9; ++j) patches.push_back(encode_stages(model, params, random_images(2, 32, 10 + j)));
  const auto a = project_local(model, params, patches);
  for (const Matrix& e : a) {
    for (Eigen::Index i = 0; i < e.rows(); ++i) CHECK(std::abs(e.row(i).norm() - 1.0) < 1e-5);
  }
  std::swap(patches[0], patches[4]);
  const auto b = project_local(model, params, patches);
  for (int s = 0; s < kNumStages; ++s) CHECK(max_abs(a[s], b[s]) > 1e-6);
  patches.pop_back();
  CHECK_THROWS_AS(project_local(model, params, patches), InputError);
}

TEST_CASE("momentum update examples") {
  ParameterSet key, query;
  key.set("w", Tensor({3}, 0.0f));
  query.set("w", Tensor({3}, 1.0f));
  CHECK(momentum_update(key, query, 0.999).at("w")[0] == doctest::Approx(0.001).epsilon(1e-6));

  const DetcoModel model(small_toy());
  const ParameterSet k0 = model.init_parameters(1), q = model.init_parameters(2);
  CHECK(momentum_update(k0, q, 1.0) == k0);
  CHECK(momentum_update(k0, q, 0.0) == q);

  ParameterSet bad = q;
  bad.set("extra", Tensor({1}));
  CHECK_THROWS_WITH_AS(momentum_update(k0, bad, 0.9), doctest::Contains("extra"), StructuralError);
  CHECK_THROWS_AS(momentum_update(k0, q, 1.5), InputError);
}

TEST_CASE("momentum update matches the closed form after 50 steps") {
  const DetcoModel model(small_toy());
  const ParameterSet k0 = model.init_parameters(3), q = model.init_parameters(4);
  for (double m : {0.9, 0.99, 0.999}) {
    ParameterSet k = k0;
    for (int i = 0; i < 50; ++i) momentum_update_inplace(k, q, m);
    const double mn = std::pow(m, 50);
    double worst = 0.0;
    for (const auto& [name, t] : k) {
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double expect = mn * k0.at(name)[i] + (1.0 - mn) * q.at(name)[i];
        worst = std::max(worst, std::abs(t[i] - expect));
      }
    }
    CHECK(worst < 1e-6);
  }
}

TEST_CASE("perturbing one head changes only its own embedding") {
  const EncoderConfig cfg = small_toy();
  const DetcoModel model(cfg);
  const ParameterSet params = model.init_parameters(8);
  const StageFeatures g = encode_stages(model, params, random_images(2, 64, 8));
  std::vector<StageFeatures> patches;
  for (int j = 0; j < 9; ++j) patches.push_back(encode_stages(model, params, random_images(2, 32, 20 + j)));
  const auto g0 = project_global(model, params, g);
  const auto l0 = project_local(model, params, patches);

  for (int target = 0; target < kNumStages; ++target) {
    for (bool local : {false, true}) {
      ParameterSet p = params;
      const std::string prefix = local ? local_head_prefix(target) : global_head_prefix(target);
      for (float& v : p.at(prefix + ".fc2.weight").values()) v += 0.05f;
      const auto g1 = project_global(model, p, g);
      const auto l1 = project_local(model, p, patches);
      for (int s = 0; s < kNumStages; ++s) {
        CHECK((g1[s] == g0[s]) == (local || s != target));
        CHECK((l1[s] == l0[s]) == (!local || s != target));
      }
    }
  }
}

TEST_CASE("parameter roles and structure checks") {
  CHECK(param_role("head.global.stage3.fc1.weight").group == ParamGroup::kGlobalHead);
  CHECK(param_role("head.global.stage3.fc1.weight").stage == 1);
  CHECK(param_role("head.local.stage5.fc2.bias").stage == 3);
  CHECK(param_role("encoder.stage2.conv0.weight").group == ParamGroup::kEncoder);

  const DetcoModel model(small_toy());
  const ParameterSet a = model.init_parameters(1);
  CHECK(structure_mismatches(a, model.init_parameters(2)).empty());
  ParameterSet b = a;
  b.set("head.global.stage2.fc1.weight", Tensor({1, 1}));
  CHECK(structure_mismatches(a, b).size() == 1);

  EncoderConfig bad = small_toy();
  bad.stage_strides = {4, 8, 8, 32};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = small_toy();
  bad.embed_dim = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
