#include "doctest.h"
#include "app_fixtures.hpp"
#include "helpers.hpp"

#include "duacm/error.hpp"
#include "duacm/text.hpp"

using namespace duacm;
using namespace duacm::app;
using json = nlohmann::ordered_json;

TEST_SUITE("bundle") {

TEST_CASE("save then load gives an equal bundle with bit-identical predictions") {
  const auto& demo = testing::trained_demo();
  const auto dir = testing::scratch_dir("bundle");
  save_bundle(demo.bundle, dir / "b.json");
  const auto back = load_bundle(dir / "b.json");
  CHECK(back == demo.bundle);
  for (std::size_t i = 0; i < 200; ++i) {
    const auto& r = demo.cohort.records[i];
    for (DiagnosisId d = 0; d < 3; ++d) {
      CHECK(gam::predict_gam(back.outcome_model, r.features, d).probability ==
            gam::predict_gam(demo.bundle.outcome_model, r.features, d).probability);
    }
    CHECK(diag::predict_diagnosis(back.diagnosis_model, r.features).probabilities ==
          diag::predict_diagnosis(demo.bundle.diagnosis_model, r.features).probabilities);
  }
  // Serializing again reproduces the same bytes.
  save_bundle(back, dir / "c.json");
  CHECK(read_file(dir / "b.json") == read_file(dir / "c.json"));
}

TEST_CASE("provenance records the config and the training data") {
  const auto& demo = testing::trained_demo();
  CHECK(demo.bundle.provenance.config_hash == config_hash(demo.config));
  CHECK(demo.bundle.provenance.data_fingerprint == cohort_fingerprint(demo.cohort));
  CHECK(config_from_json(demo.bundle.provenance.config).seed == demo.config.seed);
  auto other = demo.cohort;
  other.records[0].outcome = 1 - other.records[0].outcome;
  CHECK(cohort_fingerprint(other) != cohort_fingerprint(demo.cohort));
}

TEST_CASE("both models share the bundle's schema and vocabulary") {
  const auto& demo = testing::trained_demo();
  const auto& b = demo.bundle;
  CHECK_NOTHROW(b.validate());
  CHECK(b.outcome_model.n_features() == b.schema.size());
  CHECK(b.diagnosis_model.n_features() == b.schema.size());
  for (DiagnosisId d : b.diagnosis_model.vocabulary) CHECK(d < b.diagnosis_vocab.size());
  for (const auto& [d, beta] : b.outcome_model.diagnosis_offsets) CHECK(d < b.diagnosis_vocab.size());

  auto narrow = b;
  narrow.diagnosis_vocab.resize(1);
  CHECK_THROWS_AS(narrow.validate(), SchemaError);
  auto fewer = b;
  fewer.schema.names.pop_back();
  fewer.schema.min_values.pop_back();
  fewer.schema.max_values.pop_back();
  CHECK_THROWS_AS(fewer.validate(), SchemaError);
}

TEST_CASE("malformed bundles are rejected") {
  const auto& demo = testing::trained_demo();
  const json good = bundle_to_json(demo.bundle);
  CHECK(bundle_from_json(good) == demo.bundle);

  json j = good;
  j["format"] = "something-else";
  CHECK_THROWS_AS(bundle_from_json(j), SchemaError);
  j = good;
  j["schema_version"] = 42;
  CHECK_THROWS_AS(bundle_from_json(j), SchemaError);
  j = good;
  j.erase("outcome_model");
  CHECK_THROWS_AS(bundle_from_json(j), SchemaError);
  j = good;
  j["diagnosis_model"]["layers"][0]["weights"].erase(0);
  CHECK_THROWS_AS(bundle_from_json(j), SchemaError);

  const auto dir = testing::scratch_dir("bundle_bad");
  write_file_atomically(dir / "truncated.json", good.dump().substr(0, 100));
  CHECK_THROWS_AS(load_bundle(dir / "truncated.json"), ParseError);
  CHECK_THROWS_AS(load_bundle(dir / "absent.json"), Error);
}

}  // TEST_SUITE
