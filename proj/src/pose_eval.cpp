#include "scgan/pose_eval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "scgan/optim.hpp"
#include "scgan/rng.hpp"

namespace scgan::pose {

using geometry::CameraPose;
using geometry::RotationMatrix;

double geodesic_distance(const RotationMatrix& r, const RotationMatrix& r_t) {
    if (!r.is_rotation(1e-6) || !r_t.is_rotation(1e-6))
        throw std::invalid_argument("geodesic_distance: input is not a rotation matrix");
    // M = R^T R_t; sin from its skew part, cos from its trace. Same angle as
    // arccos((tr M - 1) / 2) but accurate near 0 and pi.
    double m[3][3];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i][j] = r.m[0][i] * r_t.m[0][j] + r.m[1][i] * r_t.m[1][j] + r.m[2][i] * r_t.m[2][j];
    const double sx = m[2][1] - m[1][2], sy = m[0][2] - m[2][0], sz = m[1][0] - m[0][1];
    const double s = 0.5 * std::sqrt(sx * sx + sy * sy + sz * sz);
    const double c = 0.5 * (m[0][0] + m[1][1] + m[2][2] - 1.0);
    return std::atan2(s, c);
}

double pose_error_degrees(const CameraPose& predicted, const CameraPose& truth) {
    return geometry::rad2deg(geodesic_distance(geometry::pose_to_rotation(predicted), geometry::pose_to_rotation(truth)));
}

PoseRecord PoseRecord::make(geometry::ShadedImage image, const CameraPose& pose, std::string model_id,
                            std::string image_path) {
    PoseRecord r;
    r.image = std::move(image);
    r.image_path = std::move(image_path);
    r.model_id = std::move(model_id);
    r.pose = pose;
    r.rotation = geometry::pose_to_rotation(pose);
    return r;
}

std::vector<PoseRecord> load_pose_records(const data::DatasetManifest& manifest, std::optional<data::Split> split) {
    std::vector<PoseRecord> out;
    for (const auto& rec : manifest.records) {
        if (rec.modality != data::Modality::image) continue;
        if (split && rec.split != *split) continue;
        const std::string path = manifest.resolve(rec);
        out.push_back(PoseRecord::make(data::load_image(path), rec.pose, rec.model_id, path));
    }
    return out;
}

CameraPose mean_pose(const std::vector<CameraPose>& poses) {
    if (poses.empty()) throw std::invalid_argument("mean pose of an empty set");
    CameraPose m;
    for (const auto& p : poses) {
        m.azimuth += p.azimuth;
        m.elevation += p.elevation;
        m.theta += p.theta;
    }
    const double n = static_cast<double>(poses.size());
    m.azimuth /= n;
    m.elevation /= n;
    m.theta /= n;
    return m;
}

Predictor naive_baseline(const std::vector<CameraPose>& train_poses) {
    const CameraPose m = mean_pose(train_poses);
    return [m](const PoseRecord&) { return m; };
}

void RegressorConfig::validate() const {
    if (channels < 1 || max_channels < channels) throw std::invalid_argument("regressor channels must be in [1, max]");
    if (blocks < 1) throw std::invalid_argument("regressor needs at least one block");
    if (steps < 0) throw std::invalid_argument("regressor steps must be non-negative");
    if (batch_size < 1) throw std::invalid_argument("regressor batch_size must be at least 1");
    optim::AdamConfig{alpha, beta1, beta2}.validate();
}

nlohmann::ordered_json RegressorConfig::to_json() const {
    return {{"channels", channels}, {"max_channels", max_channels}, {"blocks", blocks},
            {"steps", steps},       {"batch_size", batch_size},     {"alpha", alpha},
            {"beta1", beta1},       {"beta2", beta2},               {"augment", augment},
            {"seed", seed}};
}

RegressorConfig RegressorConfig::from_json(const nlohmann::json& j, const RegressorConfig& base) {
    if (!j.is_object()) throw std::invalid_argument("regressor config must be an object");
    RegressorConfig c = base;
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "channels") c.channels = v.get<int>();
            else if (key == "max_channels") c.max_channels = v.get<int>();
            else if (key == "blocks") c.blocks = v.get<int>();
            else if (key == "steps") c.steps = v.get<int>();
            else if (key == "batch_size") c.batch_size = v.get<int>();
            else if (key == "alpha") c.alpha = v.get<double>();
            else if (key == "beta1") c.beta1 = v.get<double>();
            else if (key == "beta2") c.beta2 = v.get<double>();
            else if (key == "augment") c.augment = v.get<bool>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else throw std::invalid_argument("unknown regressor config key '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("regressor config: ") + e.what());
    }
    c.validate();
    return c;
}

namespace {

Tensor normalized_target(const CameraPose& p) {
    return Tensor({1, 3}, {p.azimuth / 180.0, p.elevation / 180.0, p.theta / 180.0});
}

Tensor image_batch(const std::vector<const PoseRecord*>& recs, int resolution) {
    Tensor t({static_cast<int>(recs.size()), 3, resolution, resolution});
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const auto& img = recs[i]->image;
        if (img.width != resolution || img.height != resolution)
            throw std::invalid_argument("pose record image is " + std::to_string(img.width) + "x" +
                                        std::to_string(img.height) + ", regressor expects " +
                                        std::to_string(resolution));
        data::write_to_batch(img, t, static_cast<int>(i));
    }
    return t;
}

}  // namespace

PoseRegressor::PoseRegressor(const RegressorConfig& cfg, int resolution) : cfg_(cfg), resolution_(resolution) {
    cfg_.validate();
    if (resolution < (1 << cfg_.blocks))
        throw std::invalid_argument("resolution " + std::to_string(resolution) + " too small for " +
                                    std::to_string(cfg_.blocks) + " stride-2 blocks");
    Rng rng(derive_seed(cfg_.seed, "regressor"));
    auto he = [&](Shape s, double fan_in, double gain) {
        std::normal_distribution<double> g(0.0, std::sqrt(gain / fan_in));
        Tensor t(std::move(s));
        for (auto& v : t.storage()) v = g(rng);
        return t;
    };
    int cin = 3, size = resolution;
    int c = cfg_.channels;
    for (int b = 0; b < cfg_.blocks; ++b) {
        const std::string prefix = "regressor/conv" + std::to_string(b) + "/";
        params_.push_back({prefix + "w", ag::Var::leaf(he({c, cin, 4, 4}, cin * 16.0, 2.0))});
        params_.push_back({prefix + "b", ag::Var::leaf(Tensor({c}))});
        cin = c;
        c = std::min(2 * c, cfg_.max_channels);
        size = (size + 2 - 4) / 2 + 1;
    }
    const int flat = cin * size * size;
    params_.push_back({"regressor/dense/w", ag::Var::leaf(he({flat, 3}, flat, 1.0))});
    params_.push_back({"regressor/dense/b", ag::Var::leaf(Tensor({3}))});
}

std::size_t PoseRegressor::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().numel();
    return n;
}

ag::Var PoseRegressor::forward(const Tensor& images) const {
    ag::Var x = ag::Var::constant(images);
    std::size_t pi = 0;
    for (int b = 0; b < cfg_.blocks; ++b) {
        const ag::Var& w = params_[pi++].var;
        const ag::Var& bias = params_[pi++].var;
        x = ag::elu(ag::conv2d(x, w, {2, 1}) + ag::reshape(bias, {1, bias.dim(0), 1, 1}));
    }
    const int n = x.dim(0);
    x = ag::reshape(x, {n, static_cast<int>(x.value().numel()) / n});
    const ag::Var& w = params_[pi++].var;
    const ag::Var& bias = params_[pi++].var;
    return ag::matmul(x, w) + ag::reshape(bias, {1, 3});
}

ag::Var PoseRegressor::loss(const std::vector<const PoseRecord*>& batch, Rng* augment) const {
    if (batch.empty()) throw std::invalid_argument("empty regressor batch");
    Tensor images = image_batch(batch, resolution_);
    Tensor target({static_cast<int>(batch.size()), 3});
    const int m = resolution_, plane = m * m;
    std::bernoulli_distribution coin(0.5);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Tensor t = normalized_target(batch[i]->pose);
        for (int c = 0; c < 3; ++c) target[i * 3 + c] = t[c];
        if (!augment) continue;
        double* img = images.data() + i * 3 * plane;
        if (coin(*augment)) {
            // A horizontal mirror negates azimuth and roll.
            for (int c = 0; c < 3; ++c)
                for (int y = 0; y < m; ++y) std::reverse(img + c * plane + y * m, img + c * plane + (y + 1) * m);
            target[i * 3] = -target[i * 3];
            target[i * 3 + 2] = -target[i * 3 + 2];
        }
        std::array<int, 3> order{0, 1, 2};
        std::shuffle(order.begin(), order.end(), *augment);
        const std::vector<double> copy(img, img + 3 * plane);
        for (int c = 0; c < 3; ++c) std::copy_n(copy.begin() + order[c] * plane, plane, img + c * plane);
    }
    const ag::Var diff = forward(images) - ag::Var::constant(target);
    return ag::mean_all(diff * diff);
}

std::vector<CameraPose> PoseRegressor::predict(const std::vector<PoseRecord>& records) const {
    ag::NoGradGuard no_grad;
    std::vector<CameraPose> out;
    out.reserve(records.size());
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < records.size(); start += kChunk) {
        std::vector<const PoseRecord*> chunk;
        for (std::size_t i = start; i < std::min(records.size(), start + kChunk); ++i) chunk.push_back(&records[i]);
        const Tensor y = forward(image_batch(chunk, resolution_)).value();
        for (std::size_t i = 0; i < chunk.size(); ++i) {
            CameraPose p;
            p.azimuth = 180.0 * y[i * 3];
            p.elevation = 180.0 * y[i * 3 + 1];
            p.theta = 180.0 * y[i * 3 + 2];
            out.push_back(p);
        }
    }
    return out;
}

CameraPose PoseRegressor::predict(const geometry::ShadedImage& image) const {
    std::vector<PoseRecord> one;
    one.push_back(PoseRecord::make(image, {}));
    return predict(one).front();
}

Predictor PoseRegressor::predictor() const {
    return [this](const PoseRecord& r) { return predict(r.image); };
}

PoseRegressor train_pose_regressor(const std::vector<PoseRecord>& train_set, const RegressorConfig& cfg) {
    if (train_set.empty()) throw std::invalid_argument("pose regressor needs a non-empty training set");
    PoseRegressor reg(cfg, train_set.front().image.width);
    const bool single_pose = std::all_of(train_set.begin(), train_set.end(), [&](const PoseRecord& r) {
        return r.pose.azimuth == train_set.front().pose.azimuth &&
               r.pose.elevation == train_set.front().pose.elevation && r.pose.theta == train_set.front().pose.theta;
    });
    if (single_pose) reg.warnings.push_back("training set holds a single pose; the regressor can only learn a constant");

    optim::Adam opt(reg.params(), {cfg.alpha, cfg.beta1, cfg.beta2});
    std::vector<ag::Var> vars;
    for (const auto& p : reg.params()) vars.push_back(p.var);
    Rng rng(derive_seed(cfg.seed, "regressor-batches"));
    std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
    const bool full_batch = train_set.size() <= static_cast<std::size_t>(cfg.batch_size);
    std::vector<const PoseRecord*> batch;
    for (int s = 0; s < cfg.steps; ++s) {
        batch.clear();
        if (full_batch) {
            for (const auto& r : train_set) batch.push_back(&r);
        } else {
            for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(&train_set[pick(rng)]);
        }
        const ag::Var l = reg.loss(batch, cfg.augment ? &rng : nullptr);
        reg.training_losses.push_back(l.item());
        opt.step(ag::grad(l, vars));
    }
    return reg;
}

nlohmann::ordered_json PoseEvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["unit"] = "degrees";
    j["mean_error"] = mean_error_deg;
    j["count"] = errors_deg.size();
    if (baseline_error_deg) j["baseline_error"] = *baseline_error_deg;
    if (!fold_means_deg.empty()) j["fold_means"] = fold_means_deg;
    j["errors"] = errors_deg;
    if (!baseline_errors_deg.empty()) j["baseline_errors"] = baseline_errors_deg;
    if (!folds.empty()) j["folds"] = folds;
    return j;
}

namespace {

double mean_of(const std::vector<double>& v) {
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::vector<double> errors_of(const Predictor& predictor, const std::vector<PoseRecord>& test_set) {
    std::vector<double> e;
    e.reserve(test_set.size());
    for (const auto& r : test_set)
        e.push_back(geometry::rad2deg(geodesic_distance(geometry::pose_to_rotation(predictor(r)), r.rotation)));
    return e;
}

std::vector<double> errors_of(const std::vector<CameraPose>& predictions, const std::vector<PoseRecord>& test_set) {
    std::vector<double> e;
    e.reserve(test_set.size());
    for (std::size_t i = 0; i < test_set.size(); ++i)
        e.push_back(
            geometry::rad2deg(geodesic_distance(geometry::pose_to_rotation(predictions[i]), test_set[i].rotation)));
    return e;
}

std::vector<CameraPose> poses_of(const std::vector<PoseRecord>& records) {
    std::vector<CameraPose> p;
    for (const auto& r : records) p.push_back(r.pose);
    return p;
}

}  // namespace

PoseEvalReport evaluate(const Predictor& predictor, const std::vector<PoseRecord>& test_set) {
    if (test_set.empty()) throw std::invalid_argument("pose evaluation needs a non-empty test set");
    PoseEvalReport rep;
    rep.errors_deg = errors_of(predictor, test_set);
    rep.mean_error_deg = mean_of(rep.errors_deg);
    return rep;
}

std::vector<int> fold_assignment(const std::vector<PoseRecord>& records, int k, std::uint64_t seed) {
    if (k < 2) throw std::invalid_argument("cross-validation needs k >= 2");
    if (records.size() < static_cast<std::size_t>(k))
        throw std::invalid_argument("dataset of " + std::to_string(records.size()) + " samples is smaller than k = " +
                                    std::to_string(k));
    std::vector<std::vector<std::size_t>> groups;
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].model_id.empty()) {
            groups.push_back({i});
            continue;
        }
        auto [it, fresh] = index.try_emplace(records[i].model_id, groups.size());
        if (fresh) groups.emplace_back();
        groups[it->second].push_back(i);
    }
    if (groups.size() < static_cast<std::size_t>(k))
        throw std::invalid_argument("only " + std::to_string(groups.size()) + " distinct models for k = " +
                                    std::to_string(k) + " folds");
    Rng rng(derive_seed(seed, "folds"));
    std::shuffle(groups.begin(), groups.end(), rng);
    std::vector<int> fold(records.size());
    std::vector<std::size_t> sizes(k, 0);
    for (const auto& g : groups) {
        const int f = static_cast<int>(std::min_element(sizes.begin(), sizes.end()) - sizes.begin());
        for (std::size_t i : g) fold[i] = f;
        sizes[f] += g.size();
    }
    return fold;
}

PoseEvalReport cross_validate(const std::vector<PoseRecord>& records, int k, const RegressorConfig& cfg) {
    PoseEvalReport rep;
    rep.folds = fold_assignment(records, k, cfg.seed);
    rep.errors_deg.assign(records.size(), 0.0);
    rep.baseline_errors_deg.assign(records.size(), 0.0);
    for (int f = 0; f < k; ++f) {
        std::vector<PoseRecord> train, test;
        std::vector<std::size_t> test_index;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (rep.folds[i] == f) {
                test.push_back(records[i]);
                test_index.push_back(i);
            } else {
                train.push_back(records[i]);
            }
        }
        RegressorConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, "fold" + std::to_string(f));
        const PoseRegressor reg = train_pose_regressor(train, fold_cfg);
        const auto errors = errors_of(reg.predict(test), test);
        const auto base = errors_of(naive_baseline(poses_of(train)), test);
        for (std::size_t i = 0; i < test.size(); ++i) {
            rep.errors_deg[test_index[i]] = errors[i];
            rep.baseline_errors_deg[test_index[i]] = base[i];
        }
        rep.fold_means_deg.push_back(mean_of(errors));
    }
    rep.mean_error_deg = mean_of(rep.errors_deg);
    rep.baseline_error_deg = mean_of(rep.baseline_errors_deg);
    return rep;
}

PoseEvalReport train_and_evaluate(const std::vector<PoseRecord>& train_set, const std::vector<PoseRecord>& test_set,
                                  const RegressorConfig& cfg) {
    if (test_set.empty()) throw std::invalid_argument("pose evaluation needs a non-empty test set");
    const PoseRegressor reg = train_pose_regressor(train_set, cfg);
    PoseEvalReport rep;
    rep.errors_deg = errors_of(reg.predict(test_set), test_set);
    rep.mean_error_deg = mean_of(rep.errors_deg);
    rep.baseline_errors_deg = errors_of(naive_baseline(poses_of(train_set)), test_set);
    rep.baseline_error_deg = mean_of(rep.baseline_errors_deg);
    return rep;
}

PoseEvalReport cross_validate_baseline(const std::vector<PoseRecord>& records, int k, std::uint64_t seed) {
    PoseEvalReport rep;
    rep.folds = fold_assignment(records, k, seed);
    rep.errors_deg.assign(records.size(), 0.0);
    for (int f = 0; f < k; ++f) {
        std::vector<CameraPose> train;
        for (std::size_t i = 0; i < records.size(); ++i)
            if (rep.folds[i] != f) train.push_back(records[i].pose);
        const CameraPose m = mean_pose(train);
        double sum = 0;
        std::size_t count = 0;
        for (std::size_t i = 0; i < records.size(); ++i) {
            if (rep.folds[i] != f) continue;
            rep.errors_deg[i] = pose_error_degrees(m, records[i].pose);
            sum += rep.errors_deg[i];
            ++count;
        }
        rep.fold_means_deg.push_back(sum / static_cast<double>(count));
    }
    rep.mean_error_deg = mean_of(rep.errors_deg);
    rep.baseline_errors_deg = rep.errors_deg;
    rep.baseline_error_deg = rep.mean_error_deg;
    return rep;
}

PoseEvalReport evaluate_baseline(const std::vector<PoseRecord>& train_set, const std::vector<PoseRecord>& test_set) {
    PoseEvalReport rep = evaluate(naive_baseline(poses_of(train_set)), test_set);
    rep.baseline_errors_deg = rep.errors_deg;
    rep.baseline_error_deg = rep.mean_error_deg;
    return rep;
}

}  // namespace scgan::pose
