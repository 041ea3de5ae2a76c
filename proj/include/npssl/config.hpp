#pragma once

#include <string>

#include <json.hpp>

#include "npssl/datagen.hpp"
#include "npssl/ssl.hpp"

namespace npssl::io {

struct DatasetConfig {
    std::string kind = "two_moons";  // or "gaussian_blobs"
    std::size_t n = 1000;
    double noise = 0.1;        // two_moons
    std::size_t classes = 3;   // gaussian_blobs
    double spread = 0.5;       // gaussian_blobs
    std::size_t labels_per_class = 3;
    double test_fraction = 0.2;
    std::uint64_t seed = 42;
};

/// The run configuration file: a JSON document mirroring TrainConfig plus
/// the dataset recipe and output directory. Unknown keys are rejected;
/// precedence is CLI flag > config file > built-in default.
struct RunConfig {
    DatasetConfig dataset;
    ssl::TrainConfig train;
    std::string out_dir = "runs/out";
};

/// Strict parse: every present key must be known and well-typed, and the
/// result passes validation. Round-trips losslessly through to_json.
RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);

RunConfig load_config_file(const std::string& path);

/// Applies one "dotted.key=value" override onto the JSON document before
/// parsing. Values parse as JSON literals where possible, else strings.
void apply_override(nlohmann::json& j, const std::string& key_eq_value);

/// Generates and splits the dataset described by the config.
data::Dataset build_dataset(const DatasetConfig& cfg);

}  // namespace npssl::io
