#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "npssl/config.hpp"

using namespace npssl;
using namespace npssl::io;
using nlohmann::json;

TEST_CASE("empty document yields the documented defaults") {
    const RunConfig cfg = config_from_json(json::object());
    CHECK(cfg.train.tau_c == 0.95);
    CHECK(cfg.train.tau_u == 0.4);
    CHECK(cfg.train.lambda_u == 1.0);
    CHECK(cfg.train.beta == 0.01);
    CHECK(cfg.train.t_samples == 10);
    CHECK(cfg.train.batch_size == 16);
    CHECK(cfg.train.mu_ratio == 7);
    CHECK(cfg.train.ema_momentum == 0.999);
    CHECK(cfg.train.bank_capacity == 256);
    CHECK(cfg.dataset.kind == "two_moons");
    CHECK(cfg.dataset.noise == 0.1);
    CHECK(cfg.dataset.labels_per_class == 3);
}

TEST_CASE("unknown keys are rejected by name at every level") {
    CHECK_THROWS_WITH_AS(config_from_json(json{{"tau_c", 0.9}}),
                         doctest::Contains("tau_c"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(json{{"train", {{"tau_typo", 0.9}}}}),
                         doctest::Contains("train.tau_typo"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(json{{"dataset", {{"size", 10}}}}),
                         doctest::Contains("dataset.size"), ConfigError);
}

TEST_CASE("bad value types and invariant violations name the key") {
    CHECK_THROWS_WITH_AS(config_from_json(json{{"train", {{"tau_c", "high"}}}}),
                         doctest::Contains("train.tau_c"), ConfigError);
    CHECK_THROWS_WITH_AS(config_from_json(json{{"train", {{"tau_c", 0.0}}}}),
                         doctest::Contains("train.tau_c"), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"dataset", {{"kind", "mnist"}}}}), ConfigError);
    CHECK_THROWS_AS(config_from_json(json{{"train", {{"uncertainty", "spread"}}}}),
                    ConfigError);
}

TEST_CASE("parse / serialize round trip is lossless") {
    json j = {{"train", {{"tau_c", 0.9}, {"seed", 123}, {"uncertainty", "variance"}}},
              {"dataset", {{"kind", "gaussian_blobs"}, {"classes", 4}, {"n", 400}}},
              {"out_dir", "runs/x"}};
    const RunConfig a = config_from_json(j);
    const json ja = config_to_json(a);
    const RunConfig b = config_from_json(ja);
    CHECK(config_to_json(b) == ja);
    CHECK(b.train.tau_c == 0.9);
    CHECK(b.train.seed == 123);
    CHECK(b.train.uncertainty == np::UncertaintyKind::Variance);
    CHECK(b.dataset.classes == 4);
    CHECK(b.out_dir == "runs/x");
}

TEST_CASE("overrides parse dotted paths and JSON literals") {
    json j = json::object();
    apply_override(j, "train.tau_c=0.9");
    apply_override(j, "dataset.kind=gaussian_blobs");
    apply_override(j, "dataset.n=64");
    apply_override(j, "dataset.classes=2");
    apply_override(j, "out_dir=tmp/run");
    const RunConfig cfg = config_from_json(j);
    CHECK(cfg.train.tau_c == 0.9);
    CHECK(cfg.dataset.kind == "gaussian_blobs");
    CHECK(cfg.dataset.n == 64);
    CHECK(cfg.out_dir == "tmp/run");
    CHECK_THROWS_AS(apply_override(j, "no_equals_sign"), ConfigError);
    CHECK_THROWS_AS(apply_override(j, "=5"), ConfigError);
}

TEST_CASE("build_dataset produces a split dataset per the config") {
    RunConfig cfg = config_from_json(json::object());
    cfg.dataset.n = 200;
    const data::Dataset ds = build_dataset(cfg.dataset);
    CHECK(ds.size() == 200);
    CHECK(ds.labeled_idx.size() == cfg.dataset.labels_per_class * ds.n_classes);
    CHECK(!ds.test_idx.empty());
    CHECK(!ds.unlabeled_idx.empty());

    // Deterministic in the dataset seed.
    const data::Dataset ds2 = build_dataset(cfg.dataset);
    CHECK(ds.test_idx == ds2.test_idx);
    CHECK(std::equal(ds.points.flat().begin(), ds.points.flat().end(),
                     ds2.points.flat().begin()));
}

TEST_CASE("config file loading reports missing files") {
    CHECK_THROWS_AS(load_config_file("/nonexistent/config.json"), IoError);
}
