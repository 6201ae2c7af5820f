#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

namespace scgan::cli {

using nlohmann::json;
using nlohmann::ordered_json;

RunConfig::RunConfig() {
    dataset.num_models = 10;
    dataset.resolution = training.network.resolution;
}

data::DatasetParams RunConfig::dataset_params() const {
    data::DatasetParams p = dataset;
    p.seed = seed;
    p.poses = geometry::camera_grid(grid.azimuth, grid.elevation, grid.azimuth_step, grid.elevation_step);
    return p;
}

train::TrainingConfig RunConfig::training_config() const {
    train::TrainingConfig t = training;
    t.seed = seed;
    return t;
}

pose::RegressorConfig RunConfig::regressor_config() const {
    pose::RegressorConfig r = regressor;
    r.seed = seed;
    return r;
}

namespace {

ordered_json range_json(const geometry::AngleRange& r, double step) {
    return {{"min", r.lo}, {"max", r.hi}, {"step", step}};
}

void read_range(const json& j, const std::string& name, geometry::AngleRange& r, double& step) {
    if (!j.is_object()) throw UsageError("dataset." + name + " must be an object");
    for (const auto& [k, v] : j.items()) {
        if (k == "min") r.lo = v.get<double>();
        else if (k == "max") r.hi = v.get<double>();
        else if (k == "step") step = v.get<double>();
        else throw UsageError("unknown key dataset." + name + "." + k);
    }
}

void read_dataset(const json& j, RunConfig& c) {
    if (!j.is_object()) throw UsageError("dataset must be an object");
    auto& d = c.dataset;
    for (const auto& [k, v] : j.items()) {
        if (k == "num_models") d.num_models = v.get<int>();
        else if (k == "resolution") d.resolution = v.get<int>();
        else if (k == "class_name") d.class_name = v.get<std::string>();
        else if (k == "real_images") d.real_images = v.get<int>();
        else if (k == "test_images") d.test_images = v.get<int>();
        else if (k == "fill_fraction") d.fill_fraction = v.get<double>();
        else if (k == "kinds") {
            d.kinds.clear();
            for (const auto& name : v) d.kinds.push_back(geometry::parse_primitive_kind(name.get<std::string>()));
        } else if (k == "azimuth") read_range(v, k, c.grid.azimuth, c.grid.azimuth_step);
        else if (k == "elevation") read_range(v, k, c.grid.elevation, c.grid.elevation_step);
        else throw UsageError("unknown key dataset." + k);
    }
}

void read_pose_eval(const json& j, RunConfig& c) {
    if (!j.is_object()) throw UsageError("pose_eval must be an object");
    json reg = json::object();
    for (const auto& [k, v] : j.items()) {
        if (k == "folds") c.folds = v.get<int>();
        else if (k == "seed") throw UsageError("pose_eval.seed is not allowed; set the top-level seed");
        else reg[k] = v;
    }
    c.regressor = pose::RegressorConfig::from_json(reg, c.regressor);
    if (c.folds < 2) throw UsageError("pose_eval.folds must be at least 2");
}

}  // namespace

ordered_json RunConfig::to_json() const {
    ordered_json j;
    j["seed"] = seed;
    std::vector<std::string> kinds;
    for (auto k : dataset.kinds) kinds.push_back(geometry::to_string(k));
    j["dataset"] = {{"num_models", dataset.num_models},
                    {"resolution", dataset.resolution},
                    {"class_name", dataset.class_name},
                    {"kinds", kinds},
                    {"real_images", dataset.real_images},
                    {"test_images", dataset.test_images},
                    {"fill_fraction", dataset.fill_fraction},
                    {"azimuth", range_json(grid.azimuth, grid.azimuth_step)},
                    {"elevation", range_json(grid.elevation, grid.elevation_step)}};
    ordered_json t = training.to_json();
    t.erase("seed");
    j["training"] = t;
    j["generate"] = {{"count_per_map", count_per_map}};
    ordered_json p = regressor.to_json();
    p.erase("seed");
    p["folds"] = folds;
    j["pose_eval"] = p;
    return j;
}

RunConfig RunConfig::from_json(const json& j, const RunConfig& base) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    RunConfig c = base;
    try {
        for (const auto& [k, v] : j.items()) {
            if (k == "seed") c.seed = v.get<std::uint64_t>();
            else if (k == "dataset") read_dataset(v, c);
            else if (k == "training") {
                if (v.is_object() && v.contains("seed"))
                    throw UsageError("training.seed is not allowed; set the top-level seed");
                c.training = train::TrainingConfig::from_json(v, c.training);
            } else if (k == "generate") {
                if (!v.is_object()) throw UsageError("generate must be an object");
                for (const auto& [gk, gv] : v.items()) {
                    if (gk == "count_per_map") c.count_per_map = gv.get<int>();
                    else throw UsageError("unknown key generate." + gk);
                }
                if (c.count_per_map < 1) throw UsageError("generate.count_per_map must be at least 1");
            } else if (k == "pose_eval") read_pose_eval(v, c);
            else throw UsageError("unknown config key '" + k + "'");
        }
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return c;
}

namespace {

std::uint64_t parse_seed(const std::string& text, const std::string& origin) {
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(text, &used, 10);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != text.size() || text.front() == '-')
        throw UsageError(origin + " must be a non-negative integer, got '" + text + "'");
    return v;
}

}  // namespace

RunConfig resolve_run_config(const std::optional<std::string>& config_path, const std::optional<std::uint64_t>& cli_seed) {
    RunConfig c;
    if (config_path) {
        std::ifstream in(*config_path);
        if (!in) throw UsageError("cannot read config file " + *config_path);
        std::stringstream ss;
        ss << in.rdbuf();
        json j;
        try {
            j = json::parse(ss.str());
        } catch (const json::exception& e) {
            throw UsageError(*config_path + ": " + e.what());
        }
        c = RunConfig::from_json(j, c);
    }
    if (const char* env = std::getenv("SCGAN_SEED"); env && *env) c.seed = parse_seed(env, "SCGAN_SEED");
    if (cli_seed) c.seed = *cli_seed;
    return c;
}

}  // namespace scgan::cli
