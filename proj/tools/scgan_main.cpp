// scgan: dataset synthesis, training, generation, appearance extraction and
// pose evaluation. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>

#include "run_config.hpp"
#include "scgan/checkpoint.hpp"
#include "scgan/image_io.hpp"

namespace fs = std::filesystem;
using namespace scgan;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

struct CommonOptions {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;

    void add(CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON run configuration");
        cmd->add_option("--seed", seed, "Seed for every random stream (overrides SCGAN_SEED and the config)");
    }
    cli::RunConfig resolve() const { return cli::resolve_run_config(config, seed); }
};

void write_json(const std::string& path, const ordered_json& j) {
    const std::string text = j.dump(2) + "\n";
    image::write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

json read_json(const std::string& path) {
    const auto bytes = image::read_file(path);
    try {
        return json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

// ---- synth ----

struct SynthOptions {
    CommonOptions common;
    std::string out;
};

int run_synth(const SynthOptions& o) {
    const cli::RunConfig cfg = o.common.resolve();
    const auto m = data::build_synthetic_dataset(cfg.dataset_params(), o.out);
    write_json((fs::path(o.out) / "run_config.json").string(), cfg.to_json());
    std::cout << "real_pool " << m.select(data::Split::real_pool).size() << "\n"
              << "shape_pool " << m.select(data::Split::shape_pool).size() << "\n"
              << "test " << m.select(data::Split::test).size() << "\n"
              << "manifest " << (fs::path(o.out) / "manifest.jsonl").string() << "\n";
    return 0;
}

// ---- train ----

struct TrainOptions {
    CommonOptions common;
    std::string manifest;
    std::string out;
    std::optional<int> steps;
    std::optional<std::string> resume;
    bool ablate_image_cycle = false;
    bool ablate_dz = false;
    int log_every = 50;
};

int run_train(const TrainOptions& o) {
    const cli::RunConfig run = o.common.resolve();
    train::TrainingConfig cfg = run.training_config();
    if (o.steps) cfg.total_gen_steps = *o.steps;
    if (o.ablate_image_cycle) cfg.disable_image_cycle = true;
    if (o.ablate_dz) cfg.disable_appearance_discriminator = true;
    try {
        cfg.validate();
    } catch (const std::invalid_argument& e) {
        throw cli::UsageError(e.what());
    }
    const auto manifest = data::read_manifest(o.manifest);
    manifest.check_disjoint_pools();

    train::FitOptions fo;
    fo.out_dir = o.out;
    fo.resume_from = o.resume;
    fo.on_step = [&](std::int64_t step, const loss::LossReport& r) {
        if (o.log_every > 0 && (step % o.log_every == 0 || step == cfg.total_gen_steps))
            std::cout << "step " << step << " cyc_N " << r.cyc_N << " cyc_I " << r.cyc_I << " cyc_z " << r.cyc_z
                      << " total " << r.total << std::endl;
    };
    try {
        const auto res = train::fit(cfg, manifest, fo);
        char sum[32];
        std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(res.parameter_checksum));
        std::cout << "checkpoint " << res.checkpoint << "\nmetrics " << res.metrics << "\nparameter_checksum " << sum
                  << "\n";
    } catch (const train::TrainingAborted& e) {
        std::cerr << "scgan train: aborted at step " << e.step() << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}

// ---- generate ----

struct GenerateOptions {
    CommonOptions common;
    std::string checkpoint;
    std::vector<std::string> maps;
    std::optional<std::string> normals_manifest;
    int limit = 0;
    std::optional<int> count;
    std::string z_source = "gaussian";
    std::optional<std::string> z_file;
    std::string out;
};

struct ZFile {
    int dim = 0;
    std::vector<std::vector<double>> vectors;
    std::vector<std::string> sources;
};

ZFile read_z_file(const std::string& path) {
    const json j = read_json(path);
    ZFile z;
    try {
        z.dim = j.at("dim").get<int>();
        z.vectors = j.at("vectors").get<std::vector<std::vector<double>>>();
        if (j.contains("sources")) z.sources = j.at("sources").get<std::vector<std::string>>();
    } catch (const json::exception& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    if (z.vectors.empty()) throw std::runtime_error(path + ": no appearance vectors");
    for (const auto& v : z.vectors)
        if (static_cast<int>(v.size()) != z.dim) throw std::runtime_error(path + ": vector length differs from dim");
    return z;
}

geometry::ShadedImage grid_row(const geometry::NormalMap& map, const Tensor& images) {
    const int m = map.width, count = images.dim(0);
    geometry::ShadedImage row((count + 1) * m, m);
    for (int y = 0; y < m; ++y)
        for (int x = 0; x < m; ++x) {
            const geometry::Vec3 v = map.at(x, y);
            row.at(x, y, 0) = v.x;
            row.at(x, y, 1) = v.y;
            row.at(x, y, 2) = v.z;
        }
    for (int k = 0; k < count; ++k) {
        const auto img = data::image_from_tensor(images, k);
        for (int y = 0; y < m; ++y)
            for (int x = 0; x < m; ++x)
                for (int c = 0; c < 3; ++c) row.at((k + 1) * m + x, y, c) = img.at(x, y, c);
    }
    return row;
}

int run_generate(const GenerateOptions& o) {
    const cli::RunConfig run = o.common.resolve();
    const int count = o.count.value_or(run.count_per_map);
    if (count < 1) throw cli::UsageError("--count must be at least 1");
    if (o.z_source == "file" && !o.z_file) throw cli::UsageError("--z-source file needs --z-file");
    if (o.maps.empty() && !o.normals_manifest) throw cli::UsageError("give --maps or --normals-manifest");

    const auto tcfg = train::checkpoint_config(o.checkpoint);
    const auto nets = train::load_networks(o.checkpoint);
    const int m = tcfg.network.resolution, n = tcfg.network.appearance_dim;

    struct Input {
        std::string path, stem;
        const data::SampleRecord* record = nullptr;
    };
    std::vector<Input> inputs;
    data::DatasetManifest source;
    if (o.normals_manifest) {
        source = data::read_manifest(*o.normals_manifest);
        for (const auto* r : source.select(data::Split::shape_pool)) {
            if (r->modality != data::Modality::normal_map) continue;
            if (o.limit > 0 && static_cast<int>(inputs.size()) >= o.limit) break;
            inputs.push_back({source.resolve(*r), fs::path(r->file_path).stem().string(), r});
        }
    }
    for (const auto& p : o.maps) inputs.push_back({p, fs::path(p).stem().string(), nullptr});

    std::optional<ZFile> zf;
    if (o.z_source == "file") {
        zf = read_z_file(*o.z_file);
        if (zf->dim != n)
            throw std::runtime_error("z file dimension " + std::to_string(zf->dim) + " differs from checkpoint n = " +
                                     std::to_string(n));
    }
    const int per_map = zf ? static_cast<int>(zf->vectors.size()) : count;

    fs::create_directories(o.out);
    Rng rng(derive_seed(run.seed, "generation"));
    data::DatasetManifest generated;
    generated.class_name = source.class_name.empty() ? run.dataset.class_name : source.class_name;
    generated.resolution = m;
    generated.seed = run.seed;
    generated.root = o.out;
    std::size_t emitted = 0;
    for (const auto& in : inputs) {
        const auto map = data::load_normal_map(in.path);
        if (map.width != m || map.height != m)
            throw std::runtime_error(in.path + ": normal map is " + std::to_string(map.width) + "x" +
                                     std::to_string(map.height) + ", checkpoint expects " + std::to_string(m));
        Tensor normals({per_map, 3, m, m});
        for (int k = 0; k < per_map; ++k) data::write_to_batch(map, normals, k);
        Tensor z;
        if (zf) {
            z = Tensor({per_map, n});
            for (int k = 0; k < per_map; ++k)
                for (int i = 0; i < n; ++i) z[k * n + i] = zf->vectors[k][i];
        } else {
            z = data::sample_appearance(per_map, n, tcfg.sigma2, rng);
        }
        Tensor images;
        {
            ag::NoGradGuard frozen;
            images = nets.g_image(ag::Var::constant(z), ag::Var::constant(normals)).value();
        }
        for (int k = 0; k < per_map; ++k) {
            char name[64];
            std::snprintf(name, sizeof name, "_%03d.png", k);
            const std::string file = in.stem + name;
            image::write_file((fs::path(o.out) / file).string(), data::encode_image(data::image_from_tensor(images, k)));
            ++emitted;
            if (in.record) {
                data::SampleRecord r = *in.record;
                r.file_path = file;
                r.modality = data::Modality::image;
                generated.records.push_back(std::move(r));
            }
        }
        image::write_file((fs::path(o.out) / (in.stem + "_grid.png")).string(),
                          data::encode_image(grid_row(map, images)));
    }
    if (!generated.records.empty()) data::write_manifest(generated, (fs::path(o.out) / "manifest.jsonl").string());
    std::cout << "maps " << inputs.size() << "\nimages " << emitted << "\ngrids " << inputs.size() << "\n";
    return 0;
}

// ---- extract-z ----

struct ExtractOptions {
    CommonOptions common;
    std::string checkpoint;
    std::vector<std::string> images;
    std::optional<std::string> manifest;
    std::optional<std::string> split;
    std::string out;
};

int run_extract(const ExtractOptions& o) {
    o.common.resolve();
    if (o.images.empty() && !o.manifest) throw cli::UsageError("give --images or --manifest");
    std::optional<data::Split> split;
    if (o.split) {
        try {
            split = data::parse_split(*o.split);
        } catch (const std::exception& e) {
            throw cli::UsageError(e.what());
        }
    }
    const auto nets = train::load_networks(o.checkpoint);
    const int m = nets.config().resolution, n = nets.config().appearance_dim;

    std::vector<std::string> paths;
    if (o.manifest) {
        const auto man = data::read_manifest(*o.manifest);
        for (const auto& r : man.records)
            if (r.modality == data::Modality::image && (!split || r.split == *split)) paths.push_back(man.resolve(r));
    }
    paths.insert(paths.end(), o.images.begin(), o.images.end());

    std::vector<geometry::ShadedImage> decoded;
    std::vector<std::string> sources;
    int failures = 0;
    for (const auto& p : paths) {
        try {
            auto img = data::load_image(p);
            if (img.width != m || img.height != m)
                throw std::runtime_error("image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                         ", checkpoint expects " + std::to_string(m));
            decoded.push_back(std::move(img));
            sources.push_back(p);
        } catch (const std::exception& e) {
            std::cerr << "scgan extract-z: " << p << ": " << e.what() << "\n";
            ++failures;
        }
    }
    if (failures > 0) return 2;

    std::vector<std::vector<double>> vectors;
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < decoded.size(); start += kChunk) {
        const std::size_t end = std::min(decoded.size(), start + kChunk);
        Tensor batch({static_cast<int>(end - start), 3, m, m});
        for (std::size_t i = start; i < end; ++i) data::write_to_batch(decoded[i], batch, static_cast<int>(i - start));
        ag::NoGradGuard frozen;
        const Tensor z = nets.g_z(ag::Var::constant(batch)).value();
        for (std::size_t i = 0; i < end - start; ++i)
            vectors.emplace_back(z.data() + i * n, z.data() + (i + 1) * n);
    }
    ordered_json j;
    j["dim"] = n;
    j["vectors"] = vectors;
    j["sources"] = sources;
    write_json(o.out, j);

    std::cout << "vectors " << vectors.size() << "\ndim " << n << "\n";
    if (vectors.size() > 1) {
        double lo = 1e300, hi = -1e300;
        for (int i = 0; i < n; ++i) {
            double mean = 0, var = 0;
            for (const auto& v : vectors) mean += v[i];
            mean /= static_cast<double>(vectors.size());
            for (const auto& v : vectors) var += (v[i] - mean) * (v[i] - mean);
            var /= static_cast<double>(vectors.size() - 1);
            lo = std::min(lo, var);
            hi = std::max(hi, var);
        }
        std::cout << "variance_min " << lo << "\nvariance_max " << hi << "\n";
    }
    return 0;
}

// ---- eval-pose ----

struct EvalOptions {
    CommonOptions common;
    std::optional<std::string> train_manifest;
    std::optional<std::string> train_split;
    std::string test_manifest;
    std::optional<std::string> test_split;
    std::optional<int> cv;
    std::optional<int> steps;
    bool baseline_only = false;
    std::optional<std::string> out;
};

std::optional<data::Split> split_flag(const std::optional<std::string>& s) {
    if (!s) return std::nullopt;
    try {
        return data::parse_split(*s);
    } catch (const std::exception& e) {
        throw cli::UsageError(e.what());
    }
}

std::vector<pose::PoseRecord> load_labeled(const std::string& path, std::optional<data::Split> split,
                                           std::string& class_name) {
    const auto man = data::read_manifest(path);
    class_name = man.class_name;
    auto recs = pose::load_pose_records(man, split);
    if (recs.empty()) throw std::runtime_error(path + ": no labeled images" + (split ? " in the selected split" : ""));
    return recs;
}

int run_eval(const EvalOptions& o) {
    const cli::RunConfig run = o.common.resolve();
    pose::RegressorConfig rcfg = run.regressor_config();
    if (o.steps) rcfg.steps = *o.steps;
    const int folds = o.cv.value_or(run.folds);
    if (o.cv && *o.cv < 2) throw cli::UsageError("--cv needs at least 2 folds");
    if (!o.cv && !o.train_manifest && !o.baseline_only)
        throw cli::UsageError("give --train, --cv or --baseline-only");

    std::string class_name;
    const auto test = load_labeled(o.test_manifest, split_flag(o.test_split), class_name);
    std::vector<pose::PoseRecord> train;
    std::string train_class;
    if (o.train_manifest) train = load_labeled(*o.train_manifest, split_flag(o.train_split), train_class);

    pose::PoseEvalReport rep;
    std::string method;
    if (o.baseline_only) {
        if (!train.empty()) rep = pose::evaluate_baseline(train, test);
        else if (o.cv) rep = pose::cross_validate_baseline(test, folds, rcfg.seed);
        else rep = pose::evaluate_baseline(test, test);
    } else if (o.cv) {
        rep = pose::cross_validate(test, folds, rcfg);
        method = "regressor (target data, " + std::to_string(folds) + "-fold)";
    } else {
        rep = pose::train_and_evaluate(train, test, rcfg);
        method = "regressor (" + fs::path(*o.train_manifest).parent_path().filename().string() + ")";
    }

    const std::string column = class_name.empty() ? "class" : class_name;
    std::printf("%-36s | %s\n", "method", column.c_str());
    std::printf("%-36s | %.2f\n", "naive baseline", rep.baseline_error_deg.value_or(rep.mean_error_deg));
    if (!o.baseline_only) std::printf("%-36s | %.2f\n", method.c_str(), rep.mean_error_deg);
    std::printf("(mean geodesic error in degrees over %zu test images)\n", test.size());

    if (o.out) {
        ordered_json j;
        j["class"] = class_name;
        j["mode"] = o.baseline_only ? "baseline" : (o.cv ? "cross_validation" : "train_test");
        ordered_json rows = ordered_json::array();
        rows.push_back({{"method", "naive baseline"}, {"mean_error", rep.baseline_error_deg.value_or(rep.mean_error_deg)}});
        if (!o.baseline_only) rows.push_back({{"method", method}, {"mean_error", rep.mean_error_deg}});
        j["table"] = rows;
        j["regressor"] = rcfg.to_json();
        j["report"] = rep.to_json();
        write_json(*o.out, j);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Shape-conditioned image generation toolkit", "scgan"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    SynthOptions so;
    auto* synth = app.add_subcommand("synth", "Render a synthetic dataset and its manifest");
    so.common.add(synth);
    synth->add_option("--out", so.out, "Output directory")->required();

    TrainOptions to;
    auto* train = app.add_subcommand("train", "Train the generators and critics");
    to.common.add(train);
    train->add_option("--manifest", to.manifest, "Dataset manifest.jsonl")->required();
    train->add_option("--out", to.out, "Output directory for checkpoints and metrics")->required();
    train->add_option("--steps", to.steps, "Generator steps (overrides training.total_gen_steps)");
    train->add_option("--resume", to.resume, "Checkpoint to resume from");
    train->add_flag("--ablate-image-cycle", to.ablate_image_cycle, "Train without the image reconstruction term");
    train->add_flag("--ablate-dz", to.ablate_dz, "Train without the appearance discriminator");
    train->add_option("--log-every", to.log_every, "Progress line interval in steps (0 disables)");

    GenerateOptions go;
    auto* gen = app.add_subcommand("generate", "Generate images from normal maps");
    go.common.add(gen);
    gen->add_option("--checkpoint", go.checkpoint, "Trained checkpoint")->required();
    gen->add_option("--maps", go.maps, "Normal-map PNG files");
    gen->add_option("--normals-manifest", go.normals_manifest, "Use the manifest's shape-pool maps; poses are inherited");
    gen->add_option("--limit", go.limit, "Maximum number of manifest maps (0 = all)");
    gen->add_option("--count", go.count, "Images per map for gaussian z");
    gen->add_option("--z-source", go.z_source, "gaussian or file")->check(CLI::IsMember({"gaussian", "file"}));
    gen->add_option("--z-file", go.z_file, "Appearance vectors written by extract-z");
    gen->add_option("--out", go.out, "Output directory")->required();

    ExtractOptions eo;
    auto* ext = app.add_subcommand("extract-z", "Encode shaded images into appearance vectors");
    eo.common.add(ext);
    ext->add_option("--checkpoint", eo.checkpoint, "Trained checkpoint")->required();
    ext->add_option("--images", eo.images, "Image PNG files");
    ext->add_option("--manifest", eo.manifest, "Take the manifest's images");
    ext->add_option("--split", eo.split, "Restrict --manifest to real_pool, shape_pool or test");
    ext->add_option("--out", eo.out, "Output JSON file")->required();

    EvalOptions vo;
    auto* ev = app.add_subcommand("eval-pose", "Train and score a pose regressor against the mean-pose baseline");
    vo.common.add(ev);
    ev->add_option("--train", vo.train_manifest, "Manifest of labeled training images (e.g. generated)");
    ev->add_option("--train-split", vo.train_split, "Split filter for --train");
    ev->add_option("--test", vo.test_manifest, "Manifest of labeled test images")->required();
    ev->add_option("--test-split", vo.test_split, "Split filter for --test");
    ev->add_option("--cv", vo.cv, "Cross-validate on the test images with this many folds");
    ev->add_option("--steps", vo.steps, "Regressor updates (overrides pose_eval.steps)");
    ev->add_flag("--baseline-only", vo.baseline_only, "Report only the mean-pose baseline");
    ev->add_option("--out", vo.out, "Write the report JSON here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    std::function<int()> action;
    std::string name;
    if (synth->parsed()) action = [&] { return run_synth(so); }, name = "synth";
    else if (train->parsed()) action = [&] { return run_train(to); }, name = "train";
    else if (gen->parsed()) action = [&] { return run_generate(go); }, name = "generate";
    else if (ext->parsed()) action = [&] { return run_extract(eo); }, name = "extract-z";
    else action = [&] { return run_eval(vo); }, name = "eval-pose";

    try {
        return action();
    } catch (const cli::UsageError& e) {
        std::cerr << "scgan " << name << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "scgan " << name << ": " << e.what() << "\n";
        return 2;
    }
}
