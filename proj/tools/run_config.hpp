#pragma once

// Run configuration file for the command-line tool: a JSON object with the
// sections "dataset", "training", "generate" and "pose_eval" plus a
// top-level "seed". Unknown keys are rejected.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "scgan/dataset.hpp"
#include "scgan/pose_eval.hpp"
#include "scgan/trainer.hpp"

namespace scgan::cli {

// Bad flags, config files or environment; maps to exit code 1.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct GridConfig {
    geometry::AngleRange azimuth{-90, 90};
    geometry::AngleRange elevation{0, 15};
    double azimuth_step = 10;
    double elevation_step = 5;
};

struct RunConfig {
    std::uint64_t seed = 0;
    data::DatasetParams dataset;
    GridConfig grid;
    train::TrainingConfig training;
    int count_per_map = 5;
    pose::RegressorConfig regressor;
    int folds = 5;

    RunConfig();

    // Dataset parameters with the camera grid and seed filled in.
    data::DatasetParams dataset_params() const;
    // Training config carrying the run seed.
    train::TrainingConfig training_config() const;
    pose::RegressorConfig regressor_config() const;

    nlohmann::ordered_json to_json() const;
    // Overrides `base` with the keys present in j.
    static RunConfig from_json(const nlohmann::json& j, const RunConfig& base);
};

// Defaults, then the config file, then SCGAN_SEED, then --seed.
RunConfig resolve_run_config(const std::optional<std::string>& config_path, const std::optional<std::uint64_t>& cli_seed);

}  // namespace scgan::cli
