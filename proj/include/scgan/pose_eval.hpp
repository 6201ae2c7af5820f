#pragma once

// Pose-estimation protocol: geodesic rotation error, a small convolutional
// pose regressor, the constant mean-pose baseline and model-grouped
// cross-validation.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "scgan/dataset.hpp"
#include "scgan/geometry.hpp"
#include "scgan/networks.hpp"
#include "scgan/rng.hpp"

namespace scgan::pose {

// Angle of R^T R_t in radians, in [0, pi]. Throws std::invalid_argument if
// either input is not a proper rotation within 1e-6.
double geodesic_distance(const geometry::RotationMatrix& r, const geometry::RotationMatrix& r_t);

// Geodesic distance between the rotations of two Euler poses, in degrees.
double pose_error_degrees(const geometry::CameraPose& predicted, const geometry::CameraPose& truth);

struct PoseRecord {
    geometry::ShadedImage image;
    std::string image_path;  // empty for in-memory samples
    std::string model_id;
    geometry::CameraPose pose;
    geometry::RotationMatrix rotation;  // pose_to_rotation(pose)

    static PoseRecord make(geometry::ShadedImage image, const geometry::CameraPose& pose, std::string model_id = {},
                           std::string image_path = {});
};

// Image records of the manifest, optionally restricted to one split.
std::vector<PoseRecord> load_pose_records(const data::DatasetManifest& manifest,
                                          std::optional<data::Split> split = std::nullopt);

using Predictor = std::function<geometry::CameraPose(const PoseRecord&)>;

// Component-wise mean Euler triple. Throws on an empty list.
geometry::CameraPose mean_pose(const std::vector<geometry::CameraPose>& poses);
Predictor naive_baseline(const std::vector<geometry::CameraPose>& train_poses);

struct RegressorConfig {
    int channels = 16;
    int max_channels = 64;
    int blocks = 4;
    int steps = 1500;
    int batch_size = 32;
    double alpha = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    // Random horizontal mirrors (azimuth and roll negated) and colour channel
    // permutations of training images; assumes a mirror-closed object class.
    bool augment = true;
    std::uint64_t seed = 0;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static RegressorConfig from_json(const nlohmann::json& j, const RegressorConfig& base);
};

// Stride-2 conv + ELU blocks, then a dense layer to the Euler triple divided by 180.
class PoseRegressor {
public:
    PoseRegressor(const RegressorConfig& cfg, int resolution);

    geometry::CameraPose predict(const geometry::ShadedImage& image) const;
    std::vector<geometry::CameraPose> predict(const std::vector<PoseRecord>& records) const;
    Predictor predictor() const;

    // Mean squared error between normalized predictions and targets. With
    // `augment`, images and targets are randomly mirrored and the colour
    // channels permuted.
    ag::Var loss(const std::vector<const PoseRecord*>& batch, Rng* augment = nullptr) const;

    const RegressorConfig& config() const { return cfg_; }
    int resolution() const { return resolution_; }
    const std::vector<nn::Param>& params() const { return params_; }
    std::size_t parameter_count() const;

    // Filled by train_pose_regressor.
    std::vector<double> training_losses;
    std::vector<std::string> warnings;

private:
    ag::Var forward(const Tensor& images) const;

    RegressorConfig cfg_;
    int resolution_;
    std::vector<nn::Param> params_;
};

// Adam on minibatches drawn uniformly with replacement; the whole set forms
// the batch when it is no larger than batch_size.
PoseRegressor train_pose_regressor(const std::vector<PoseRecord>& train_set, const RegressorConfig& cfg);

struct PoseEvalReport {
    double mean_error_deg = 0;
    std::vector<double> errors_deg;
    std::vector<int> folds;              // fold per sample; empty outside cross-validation
    std::vector<double> fold_means_deg;  // per-fold mean errors
    std::optional<double> baseline_error_deg;
    std::vector<double> baseline_errors_deg;

    nlohmann::ordered_json to_json() const;
};

// Per-sample geodesic error of the predictor in degrees.
PoseEvalReport evaluate(const Predictor& predictor, const std::vector<PoseRecord>& test_set);

// Seeded k-fold split that keeps every model_id inside one fold. Records
// without a model id form singleton groups. Groups go to the currently
// smallest fold.
std::vector<int> fold_assignment(const std::vector<PoseRecord>& records, int k, std::uint64_t seed);

// Trains on k-1 folds and tests on the remaining one, k times. The baseline
// for each fold is the mean pose of its training folds.
PoseEvalReport cross_validate(const std::vector<PoseRecord>& records, int k, const RegressorConfig& cfg);

// Trains on one source, tests on another; baseline from the training poses.
PoseEvalReport train_and_evaluate(const std::vector<PoseRecord>& train_set, const std::vector<PoseRecord>& test_set,
                                  const RegressorConfig& cfg);

// Baseline-only cross-validation over the same seeded folds.
PoseEvalReport cross_validate_baseline(const std::vector<PoseRecord>& records, int k, std::uint64_t seed);

// Baseline-only evaluation.
PoseEvalReport evaluate_baseline(const std::vector<PoseRecord>& train_set, const std::vector<PoseRecord>& test_set);

}  // namespace scgan::pose
