#pragma once

// Run configuration for the command-line front-end: a JSON document of sections whose keys
// mirror the library defaults. Values come from the defaults, then an optional config file,
// then `--section.key value` flags.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "roadsonar/beamform.hpp"
#include "roadsonar/pipeline.hpp"
#include "roadsonar/signal.hpp"
#include "roadsonar/simulate.hpp"

namespace roadsonar::cli {

using Json = nlohmann::ordered_json;

/// Every key with its default, grouped by section.
Json default_config();

/// Dotted names of every leaf key in `section` ("paths.dataset", ...).
std::vector<std::string> section_keys(const Json& config, const std::string& section);

/// Merges a config file over `config`. Unknown sections or keys and type mismatches throw.
void merge_config(Json& config, const Json& overlay, const std::string& source);
void merge_config_file(Json& config, const std::filesystem::path& path);

/// Sets one dotted key from command-line text, parsed to the type of the existing value.
void set_key(Json& config, const std::string& dotted, const std::string& text);

struct RunConfig {
    std::filesystem::path dataset_dir, scape_dir, feature_dir, model_path, split_path, output_dir;
    std::uint64_t seed = 0;

    DatasetSpec dataset;
    ChirpSpec chirp;
    std::uint64_t geometry_seed = 0;
    std::filesystem::path geometry_file; // empty: generated from geometry_seed
    CfarParams cfar;
    ExperimentConfig experiment; // task, seeds, folds, features and model options

    ModelKind model = ModelKind::Forest;
    int train_fold = -1;         // -1: train on every non-test sample
    std::string evaluate_subset = "test";

    ArrayGeometry geometry() const;
};

/// Validates and converts; throws ParameterError naming the offending key.
RunConfig resolve(const Json& config);

} // namespace roadsonar::cli
