#pragma once

// Alternating schedule: several critic updates per joint generator update,
// with checkpoints, per-step metrics and exact resume.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>

#include <json.hpp>

#include "scgan/dataset.hpp"
#include "scgan/losses.hpp"
#include "scgan/networks.hpp"
#include "scgan/optim.hpp"

namespace scgan::train {

struct TrainingConfig {
    double alpha = 0.001;
    double beta1 = 0.5;
    double beta2 = 0.9;
    int batch_size = 16;
    int critic_steps_per_gen = 5;
    double sigma2 = 0.5;
    loss::LossWeights weights;
    bool normalize_cycle = true;
    nn::NetworkConfig network;  // holds appearance_dim n and resolution m
    data::AugmentParams augment;
    int total_gen_steps = 1000;
    int checkpoint_interval = 500;
    std::uint64_t seed = 0;
    bool disable_image_cycle = false;
    bool disable_appearance_discriminator = false;

    void validate() const;
    // Weights actually used: the image-cycle ablation zeroes lambda_I.
    loss::LossWeights effective_weights() const;

    nlohmann::ordered_json to_json() const;
    // Starts from `base`; keys present in j override it, unknown keys throw.
    static TrainingConfig from_json(const nlohmann::json& j, const TrainingConfig& base);
    static TrainingConfig from_json(const nlohmann::json& j) { return from_json(j, TrainingConfig{}); }

private:
    static void read_fields(const nlohmann::json& j, TrainingConfig& c);
};

struct TrainState {
    std::int64_t gen_steps = 0;
    std::int64_t d_image_steps = 0;
    std::int64_t d_normal_steps = 0;
    std::int64_t d_z_steps = 0;
};

// Raised when training meets a non-finite value.
class TrainingAborted : public std::runtime_error {
public:
    TrainingAborted(std::int64_t step, const std::string& term, const std::string& last_checkpoint);
    std::int64_t step() const { return step_; }
    const std::string& term() const { return term_; }

private:
    std::int64_t step_;
    std::string term_;
};

class Trainer {
public:
    Trainer(TrainingConfig cfg, const data::DatasetManifest& manifest);

    // Critic sub-steps for each enabled critic followed by one generator update.
    loss::LossReport step();

    const TrainingConfig& config() const { return cfg_; }
    const TrainState& state() const { return state_; }
    nn::NetworkBundle& networks() { return *nets_; }
    const nn::NetworkBundle& networks() const { return *nets_; }

    // Writes the parameter archive at `path` and the state sidecar at `path`.state.
    void save_checkpoint(const std::string& path) const;
    // Restores parameters, optimizer moments, counters and RNG streams. The
    // checkpoint's config must describe the same networks and schedule.
    void load_checkpoint(const std::string& path);

private:
    TrainingConfig cfg_;
    std::unique_ptr<nn::NetworkBundle> nets_;
    data::BatchSampler sampler_;
    Rng penalty_rng_;
    optim::Adam g_opt_, di_opt_, dn_opt_, dz_opt_;
    TrainState state_;
};

// Reads the training config stored beside a checkpoint.
TrainingConfig checkpoint_config(const std::string& path);
// Networks only, for inference.
nn::NetworkBundle load_networks(const std::string& path);

struct FitOptions {
    std::string out_dir;
    std::optional<std::string> resume_from;
    // Called after every generator step.
    std::function<void(std::int64_t step, const loss::LossReport&)> on_step;
};

struct FitResult {
    std::string checkpoint;  // final checkpoint
    std::string metrics;     // metrics.jsonl
    TrainState state;
    std::uint64_t parameter_checksum = 0;
};

// Metrics: one JSON object per generator step with "step", every LossReport
// field and "wall_time" seconds since the run started.
FitResult fit(const TrainingConfig& cfg, const data::DatasetManifest& manifest, const FitOptions& opts);

std::string checkpoint_name(std::int64_t step);

}  // namespace scgan::train
