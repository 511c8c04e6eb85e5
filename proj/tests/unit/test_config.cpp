#include "doctest.h"
#include "app_fixtures.hpp"
#include "helpers.hpp"

#include "duacm/error.hpp"
#include "duacm/text.hpp"

using namespace duacm;
using namespace duacm::app;
using json = nlohmann::ordered_json;

TEST_SUITE("config") {

TEST_CASE("defaults round-trip through JSON") {
  const auto defaults = config_from_json(json::object());
  const json j = to_json(defaults);
  CHECK(to_json(config_from_json(j)) == j);
  CHECK(j["schema_version"] == kSchemaVersion);
  CHECK(j["seed"] == 1);
  CHECK(j["gam"]["inner_bags"] == 16);
  CHECK(j["gam"]["outer_bags"] == 4);
  CHECK(j["mlp"]["hidden"] == json::array({64, 64}));
  CHECK(j["predict"]["n_samples"] == 150);
  CHECK(j["predict"]["mode"] == "sampled");
  CHECK(j["serve"]["session_idle_seconds"] == 1800.0);
  CHECK(j["census"]["min_patients"] == 200);
}

TEST_CASE("missing keys keep defaults, unknown keys and bad types are schema errors") {
  const auto c = config_from_json(json{{"gam", {{"learning_rate", 0.02}}}});
  CHECK(c.gam.learning_rate == 0.02);
  CHECK(c.gam.inner_bags == 16);
  CHECK_THROWS_WITH_AS(config_from_json(json{{"gam", {{"learnin_rate", 0.02}}}}),
                       doctest::Contains("config.gam.learnin_rate"), SchemaError);
  CHECK_THROWS_AS(config_from_json(json{{"typo", 1}}), SchemaError);
  CHECK_THROWS_AS(config_from_json(json{{"gam", {{"inner_bags", "many"}}}}), SchemaError);
  CHECK_THROWS_AS(config_from_json(json{{"schema_version", 99}}), SchemaError);
  CHECK_THROWS_AS(config_from_json(json{{"predict", {{"mode", "fuzzy"}}}}), ValidationError);
  CHECK_THROWS_AS(config_from_json(json{{"cohort", {{"n_patients", 0}}}}), ValidationError);
  CHECK_THROWS_AS(config_from_json(json::array()), SchemaError);
}

TEST_CASE("gam patience accepts null to disable early stopping") {
  const auto c = config_from_json(json{{"gam", {{"patience", nullptr}}}});
  CHECK_FALSE(c.gam.patience.has_value());
  CHECK(to_json(c)["gam"]["patience"].is_null());
}

TEST_CASE("the master seed drives every component seed") {
  const auto a = config_from_json(json{{"seed", 5}});
  const auto b = config_from_json(json{{"seed", 6}});
  CHECK(a.cohort.seed != b.cohort.seed);
  CHECK(a.gam.seed != b.gam.seed);
  CHECK(a.mlp.seed != b.mlp.seed);
  CHECK(a.gam.seed != a.mlp.seed);
  CHECK(config_from_json(json{{"seed", 5}}).gam.seed == a.gam.seed);
}

TEST_CASE("dotted overrides") {
  json j = to_json(config_from_json(json::object()));
  apply_override(j, "gam.learning_rate=0.02");
  apply_override(j, "predict.mode=exact");
  apply_override(j, "mlp.hidden=[8,4]");
  apply_override(j, "cohort.beta_true={\"3\": 1.5}");
  const auto c = config_from_json(j);
  CHECK(c.gam.learning_rate == 0.02);
  CHECK(c.predict.mode == infer::Mode::kExact);
  CHECK(c.mlp.hidden == std::vector<std::size_t>{8, 4});
  CHECK(c.cohort.beta_true.at(3) == 1.5);

  CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ValidationError);
  CHECK_THROWS_AS(apply_override(j, "=3"), ValidationError);
  CHECK_THROWS_AS(apply_override(j, "gam..x=3"), ValidationError);
  CHECK_THROWS_AS(apply_override(j, "seed.x=3"), ValidationError);
  json k = to_json(config_from_json(json::object()));
  apply_override(k, "gam.not_a_field=1");
  CHECK_THROWS_AS(config_from_json(k), SchemaError);
}

TEST_CASE("config hash is stable and sensitive to every value") {
  const auto a = config_from_json(json::object());
  CHECK(config_hash(a) == config_hash(config_from_json(json::object())));
  CHECK(config_hash(a) != config_hash(config_from_json(json{{"seed", 2}})));
  CHECK(config_hash(a) != config_hash(config_from_json(json{{"serve", {{"port", 9}}}})));
  CHECK(config_hash(a).size() == 16);
}

TEST_CASE("load_config reads files and reports malformed JSON as a parse error") {
  const auto dir = testing::scratch_dir("config");
  write_file_atomically(dir / "ok.json", R"({"seed": 9, "gam": {"max_bins": 16}})");
  const auto c = load_config(dir / "ok.json");
  CHECK(c.seed == 9);
  CHECK(c.gam.max_bins == 16);
  write_file_atomically(dir / "bad.json", "{\"seed\": ");
  CHECK_THROWS_AS(load_config(dir / "bad.json"), ParseError);
  CHECK_THROWS_AS(load_config(dir / "missing.json"), Error);
}

TEST_CASE("mode names") {
  CHECK(mode_name(infer::Mode::kExact) == "exact");
  CHECK(parse_mode("sampled") == infer::Mode::kSampled);
  CHECK_THROWS_AS(parse_mode("EXACT"), ValidationError);
}

}  // TEST_SUITE
