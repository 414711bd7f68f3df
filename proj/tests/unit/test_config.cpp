#include <doctest.h>

#include <fstream>

#include "detco/config.hpp"
#include "detco/errors.hpp"
#include "helpers.hpp"

using namespace detco;

TEST_CASE("an empty config yields documented defaults") {
  const ExperimentConfig cfg = parse_config_text("");
  CHECK(cfg == ExperimentConfig{});
  CHECK(cfg.temperatures.tau_gg == 0.2);
  CHECK(cfg.temperatures.tau_ll == 0.15);
  CHECK(cfg.temperatures.tau_gl == 0.5);
  CHECK(cfg.loss_weights.w == std::array<double, 4>{0.1, 0.4, 0.7, 1.0});
  CHECK(cfg.trainer.momentum == 0.999);
  CHECK(cfg.trainer.batch_size == 32);
  CHECK(cfg.memory.capacity == 4096);
  CHECK(cfg.model.embed_dim == 128);
  CHECK(cfg.data.toy.num_classes == 8);
  CHECK(cfg.data.toy.image_side == 96);

  const std::string echoed = serialize_config(cfg);
  CHECK(echoed.find("contrast.loss_weights = 0.1, 0.4, 0.7, 1") != std::string::npos);
  for (const auto& doc : config_schema()) {
    CHECK_FALSE(doc.description.empty());
    CHECK(echoed.find(doc.key + " = ") != std::string::npos);
  }
}

TEST_CASE("schema violations name the key") {
  CHECK_THROWS_WITH_AS(parse_config_text("contrast.tau_gg = -1"), doctest::Contains("contrast.tau_gg"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("contrast.tua_gg = 0.2"), doctest::Contains("did you mean 'contrast.tau_gg'"),
                       ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("trainer.batch_size = big"),
                       doctest::Contains("trainer.batch_size: expected int, got \"big\""), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("trainer.momentum = 1.5"), doctest::Contains("trainer.momentum"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("no equals sign"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("{\"trainer\": {\"batch_size\": 1}}"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("augment.global_side = 100"), doctest::Contains("100"), ConfigError);
}

TEST_CASE("serialize and parse round-trip losslessly") {
  ExperimentConfig cfg = parse_config_text(
      "trainer.learning_rate = 0.0123456789\n"
      "contrast.loss_weights = 0.5, 0, 0.25, 2\n"
      "trainer.glc_enabled = false\n"
      "eval.stages = 3, 5\n"
      "eval.probe_type = linear-hinge\n"
      "data.root = \"some dir/with spaces\"\n"
      "trainer.seed = 18446744073709551615\n");
  CHECK(cfg.trainer.seed == 18446744073709551615ull);
  const ExperimentConfig again = parse_config_text(serialize_config(cfg));
  CHECK(again == cfg);
  CHECK(config_differences(again, cfg).empty());
  CHECK(parse_config_text(serialize_config_json(cfg)) == cfg);
  CHECK(config_differences(cfg, ExperimentConfig{}).size() == 7);
}

TEST_CASE("JSON accepts nesting and dotted keys") {
  const ExperimentConfig nested = parse_config_text(R"({"contrast": {"tau_gg": 0.3}, "trainer": {"total_steps": 7}})");
  const ExperimentConfig dotted = parse_config_text(R"({"contrast.tau_gg": 0.3, "trainer.total_steps": 7})");
  CHECK(nested == dotted);
  CHECK(nested.temperatures.tau_gg == 0.3);
  CHECK_THROWS_AS(parse_config_text("{ not json"), ConfigError);
}

TEST_CASE("the full preset seeds geometry and explicit keys override it") {
  const ExperimentConfig full = parse_config_text("augment.preset = full");
  CHECK(full.augment.global_side == 224);
  CHECK(full.augment.patch_side == 64);
  CHECK(full.augment.jigsaw_intermediate_side == 255);
  const ExperimentConfig mixed = parse_config_text("augment.global_side = 96\naugment.preset = desk");
  CHECK(mixed.augment.global_side == 96);
}

TEST_CASE("learning rate scaling and schedule") {
  TrainConfig t;
  CHECK(t.base_learning_rate() == doctest::Approx(0.03 * 32 / 256));
  t.batch_size = 256;
  CHECK(t.base_learning_rate() == doctest::Approx(0.03));
  t.total_steps = 100;
  CHECK(t.learning_rate_at(0) == doctest::Approx(0.03));
  CHECK(t.learning_rate_at(50) == doctest::Approx(0.015));
  t.lr_schedule = LrSchedule::kConstant;
  CHECK(t.learning_rate_at(99) == doctest::Approx(0.03));
}

TEST_CASE("config files") {
  CHECK_THROWS_AS(parse_config("/nonexistent/detco.cfg"), FileNotFoundError);
  const auto dir = testing::temp_dir("config");
  std::ofstream(dir / "a.cfg") << "# comment\n\ntrainer.total_steps = 12  # trailing\n";
  CHECK(parse_config(dir / "a.cfg").trainer.total_steps == 12);
  std::filesystem::remove_all(dir);
}
