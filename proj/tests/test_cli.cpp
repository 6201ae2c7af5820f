#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "run_config.hpp"
#include "scgan/dataset.hpp"
#include "scgan/geometry.hpp"
#include "scgan/image_io.hpp"

using namespace scgan;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("scgan_test_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs the tool with stdout and stderr captured; returns the exit status.
int run(const std::string& args, const fs::path& dir, const std::string& env = {}) {
    const std::string cmd = (env.empty() ? "" : env + " ") + "'" + SCGAN_CLI_PATH + "' " + args + " > '" +
                            (dir / "stdout.txt").string() + "' 2> '" + (dir / "stderr.txt").string() + "'";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyConfig = R"({
  "seed": 4,
  "dataset": {"num_models": 4, "resolution": 8, "real_images": 12, "test_images": 6,
              "azimuth": {"min": -40, "max": 40, "step": 40}, "elevation": {"min": 0, "max": 10, "step": 10}},
  "training": {"resolution": 8, "appearance_dim": 4, "gen_channels": 2, "resnet_blocks": 1, "disc_channels": 2,
               "disc_max_channels": 4, "dz_hidden": 4, "batch_size": 3, "total_gen_steps": 3,
               "checkpoint_interval": 2},
  "generate": {"count_per_map": 2},
  "pose_eval": {"channels": 2, "max_channels": 4, "blocks": 3, "steps": 5, "folds": 2}
})";

// A tiny dataset and a 3-step checkpoint shared by the generation tests.
struct TinyRun {
    fs::path dir, config, manifest, checkpoint;
};

const TinyRun& tiny_run() {
    static const TinyRun r = [] {
        TinyRun t;
        t.dir = scratch_dir("tiny");
        t.config = t.dir / "tiny.json";
        std::ofstream(t.config) << kTinyConfig;
        const std::string cfg = " --config '" + t.config.string() + "'";
        REQUIRE(run("synth" + cfg + " --out '" + (t.dir / "data").string() + "'", t.dir) == 0);
        t.manifest = t.dir / "data" / "manifest.jsonl";
        REQUIRE(run("train" + cfg + " --manifest '" + t.manifest.string() + "' --out '" + (t.dir / "run").string() +
                        "'",
                    t.dir) == 0);
        t.checkpoint = t.dir / "run" / "final.ckpt";
        return t;
    }();
    return r;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

std::vector<json> metrics_without_clock(const fs::path& path) {
    std::vector<json> out;
    std::istringstream in(slurp(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = json::parse(line);
        j.erase("wall_time");
        out.push_back(j);
    }
    return out;
}

}  // namespace

TEST_CASE("synth with the default config writes a manifest") {
    const fs::path dir = scratch_dir("default");
    CHECK(run("synth --out " + q(dir / "data"), dir) == 0);
    CHECK(fs::exists(dir / "data" / "manifest.jsonl"));
    CHECK(slurp(dir / "stdout.txt").find("shape_pool 380") != std::string::npos);
}

TEST_CASE("synth into an unwritable location fails with exit code 2") {
    const fs::path dir = scratch_dir("unwritable");
    std::ofstream(dir / "blocker") << "x";
    CHECK(run("synth --out " + q(dir / "blocker" / "sub"), dir) == 2);
    CHECK_FALSE(slurp(dir / "stderr.txt").empty());
}

TEST_CASE("the same seed gives identical manifests") {
    const fs::path dir = scratch_dir("seed");
    const std::string cfg = " --config " + q(tiny_run().config);
    REQUIRE(run("synth" + cfg + " --seed 3 --out " + q(dir / "a"), dir) == 0);
    REQUIRE(run("synth" + cfg + " --seed 3 --out " + q(dir / "b"), dir) == 0);
    REQUIRE(run("synth" + cfg + " --seed 5 --out " + q(dir / "c"), dir) == 0);
    CHECK(slurp(dir / "a" / "manifest.jsonl") == slurp(dir / "b" / "manifest.jsonl"));
    CHECK(slurp(dir / "a" / "manifest.jsonl") != slurp(dir / "c" / "manifest.jsonl"));
}

TEST_CASE("seed precedence is config, then SCGAN_SEED, then --seed") {
    const fs::path dir = scratch_dir("precedence");
    const std::string cfg = " --config " + q(tiny_run().config);
    REQUIRE(run("synth" + cfg + " --out " + q(dir / "cfg"), dir) == 0);
    REQUIRE(run("synth" + cfg + " --out " + q(dir / "env"), dir, "SCGAN_SEED=9") == 0);
    REQUIRE(run("synth" + cfg + " --seed 11 --out " + q(dir / "flag"), dir, "SCGAN_SEED=9") == 0);
    CHECK(data::read_manifest((dir / "cfg" / "manifest.jsonl").string()).seed == 4);
    CHECK(data::read_manifest((dir / "env" / "manifest.jsonl").string()).seed == 9);
    CHECK(data::read_manifest((dir / "flag" / "manifest.jsonl").string()).seed == 11);
    CHECK(run("synth --out " + q(dir / "bad"), dir, "SCGAN_SEED=abc") == 1);
}

TEST_CASE("config values override defaults and unknown keys are rejected") {
    cli::RunConfig base;
    CHECK(base.training.alpha == 0.001);
    CHECK(base.training.batch_size == 16);
    CHECK(base.training.weights.lambda_p == 10.0);
    const auto c = cli::RunConfig::from_json(json::parse(R"({"training": {"batch_size": 4}, "seed": 2})"), base);
    CHECK(c.training.batch_size == 4);
    CHECK(c.training_config().seed == 2);
    CHECK(c.training.beta1 == 0.5);
    CHECK_THROWS_AS(cli::RunConfig::from_json(json::parse(R"({"trainig": {}})"), base), cli::UsageError);
    CHECK_THROWS_AS(cli::RunConfig::from_json(json::parse(R"({"dataset": {"modls": 3}})"), base), cli::UsageError);
    CHECK_THROWS_AS(cli::RunConfig::from_json(json::parse(R"({"training": {"seed": 3}})"), base), cli::UsageError);
    const auto back = cli::RunConfig::from_json(json::parse(c.to_json().dump()), base);
    CHECK(back.to_json() == c.to_json());

    const fs::path dir = scratch_dir("badconfig");
    std::ofstream(dir / "bad.json") << R"({"unknown": 1})";
    CHECK(run("synth --config " + q(dir / "bad.json") + " --out " + q(dir / "x"), dir) == 1);
    CHECK(slurp(dir / "stderr.txt").find("unknown") != std::string::npos);
}

TEST_CASE("every subcommand answers --help and rejects unknown flags") {
    const fs::path dir = scratch_dir("help");
    CHECK(run("--help", dir) == 0);
    for (const char* cmd : {"synth", "train", "generate", "extract-z", "eval-pose"}) {
        CHECK(run(std::string(cmd) + " --help", dir) == 0);
        CHECK(slurp(dir / "stdout.txt").find("Usage") != std::string::npos);
        CHECK(run(std::string(cmd) + " --no-such-flag", dir) == 1);
    }
    CHECK(run("", dir) == 1);
    CHECK(run("paint", dir) == 1);
}

TEST_CASE("train writes checkpoints and one metrics record per step") {
    const auto& t = tiny_run();
    CHECK(fs::exists(t.checkpoint));
    CHECK(fs::exists(t.dir / "run" / "checkpoint_000000.ckpt"));
    CHECK(fs::exists(t.dir / "run" / "checkpoint_000002.ckpt"));
    const auto m = metrics_without_clock(t.dir / "run" / "metrics.jsonl");
    REQUIRE(m.size() == 3);
    CHECK(m[0].contains("adv_z"));
}

TEST_CASE("train --ablate-dz drops adv_z from the metrics") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("ablate");
    REQUIRE(run("train --config " + q(t.config) + " --manifest " + q(t.manifest) + " --out " + q(dir / "run") +
                    " --ablate-dz --ablate-image-cycle --steps 2",
                dir) == 0);
    for (const auto& rec : metrics_without_clock(dir / "run" / "metrics.jsonl")) {
        CHECK_FALSE(rec.contains("adv_z"));
        CHECK(rec.contains("adv_I"));
    }
}

TEST_CASE("train --resume reproduces the uninterrupted run") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("resume");
    const std::string base = "train --config " + q(t.config) + " --manifest " + q(t.manifest);
    REQUIRE(run(base + " --steps 2 --out " + q(dir / "part"), dir) == 0);
    REQUIRE(run(base + " --out " + q(dir / "part") + " --resume " + q(dir / "part" / "checkpoint_000002.ckpt"), dir) ==
            0);
    CHECK(slurp(dir / "part" / "final.ckpt") == slurp(t.checkpoint));
    CHECK(metrics_without_clock(dir / "part" / "metrics.jsonl") == metrics_without_clock(t.dir / "run" / "metrics.jsonl"));
}

TEST_CASE("a diverging run exits 2 and names the step") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("nan");
    std::ofstream(dir / "hot.json") << R"({"training": {"alpha": 1e300, "resolution": 8, "appearance_dim": 4,
        "gen_channels": 2, "resnet_blocks": 1, "disc_channels": 2, "disc_max_channels": 4, "dz_hidden": 4,
        "batch_size": 3, "total_gen_steps": 3}})";
    CHECK(run("train --config " + q(dir / "hot.json") + " --manifest " + q(t.manifest) + " --out " + q(dir / "run"),
              dir) == 2);
    CHECK(slurp(dir / "stderr.txt").find("step") != std::string::npos);
}

TEST_CASE("generate emits count images plus a grid per map") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("generate");
    const auto man = data::read_manifest(t.manifest.string());
    const std::string map = man.resolve(*man.select(data::Split::shape_pool).front());
    REQUIRE(run("generate --checkpoint " + q(t.checkpoint) + " --maps " + q(map) + " --count 5 --out " +
                    q(dir / "out"),
                dir) == 0);
    int images = 0, grids = 0;
    for (const auto& e : fs::directory_iterator(dir / "out")) {
        const std::string name = e.path().filename().string();
        if (name.find("_grid.png") != std::string::npos) ++grids;
        else if (e.path().extension() == ".png") ++images;
    }
    CHECK(images == 5);
    CHECK(grids == 1);
    const auto grid = data::load_image((dir / "out" / (fs::path(map).stem().string() + "_grid.png")).string());
    CHECK(grid.width == 6 * 8);
    CHECK(grid.height == 8);

    REQUIRE(run("generate --checkpoint " + q(t.checkpoint) + " --maps " + q(map) + " --count 5 --out " +
                    q(dir / "again"),
                dir) == 0);
    CHECK(slurp(dir / "out" / (fs::path(map).stem().string() + "_grid.png")) ==
          slurp(dir / "again" / (fs::path(map).stem().string() + "_grid.png")));
}

TEST_CASE("generated images from a manifest inherit poses") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("inherit");
    REQUIRE(run("generate --config " + q(t.config) + " --checkpoint " + q(t.checkpoint) + " --normals-manifest " +
                    q(t.manifest) + " --limit 3 --out " + q(dir / "out"),
                dir) == 0);
    const auto src = data::read_manifest(t.manifest.string());
    const auto gen = data::read_manifest((dir / "out" / "manifest.jsonl").string());
    REQUIRE(gen.records.size() == 6);
    const auto maps = src.select(data::Split::shape_pool);
    for (std::size_t i = 0; i < gen.records.size(); ++i) {
        CHECK(gen.records[i].modality == data::Modality::image);
        CHECK(gen.records[i].pose == maps[i / 2]->pose);
        CHECK(gen.records[i].model_id == maps[i / 2]->model_id);
        CHECK(fs::exists(gen.resolve(gen.records[i])));
    }
}

TEST_CASE("the same z from a file gives identical images") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("zfile");
    std::ofstream(dir / "z.json") << R"({"dim": 4, "vectors": [[0.3, -0.2, 0.5, 0.1], [0.3, -0.2, 0.5, 0.1]]})";
    const auto man = data::read_manifest(t.manifest.string());
    const std::string map = man.resolve(*man.select(data::Split::shape_pool).front());
    REQUIRE(run("generate --checkpoint " + q(t.checkpoint) + " --maps " + q(map) + " --z-source file --z-file " +
                    q(dir / "z.json") + " --out " + q(dir / "out"),
                dir) == 0);
    const std::string stem = fs::path(map).stem().string();
    CHECK(slurp(dir / "out" / (stem + "_000.png")) == slurp(dir / "out" / (stem + "_001.png")));

    std::ofstream(dir / "z5.json") << R"({"dim": 5, "vectors": [[0, 0, 0, 0, 0]]})";
    CHECK(run("generate --checkpoint " + q(t.checkpoint) + " --maps " + q(map) + " --z-source file --z-file " +
                  q(dir / "z5.json") + " --out " + q(dir / "bad"),
              dir) == 2);
    CHECK(run("generate --checkpoint " + q(t.checkpoint) + " --maps " + q(map) + " --z-source file --out " +
                  q(dir / "bad"),
              dir) == 1);
}

TEST_CASE("generate accepts out-of-class shapes and rejects mismatched sizes") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("shapes");
    geometry::PrimitiveParams pp;
    const auto sphere = geometry::make_primitive(geometry::PrimitiveKind::sphere, pp);
    const auto cyl = geometry::make_primitive(geometry::PrimitiveKind::cylinder, pp);
    image::write_file((dir / "sphere.png").string(),
                      data::encode_normal_map(geometry::rasterize_normal_map(sphere, {30, 10, 0}, 8)));
    image::write_file((dir / "cyl.png").string(),
                      data::encode_normal_map(geometry::rasterize_normal_map(cyl, {-20, 5, 0}, 8)));
    image::write_file((dir / "big.png").string(),
                      data::encode_normal_map(geometry::rasterize_normal_map(cyl, {0, 0, 0}, 16)));
    CHECK(run("generate --checkpoint " + q(t.checkpoint) + " --maps " + q(dir / "sphere.png") + " " +
                  q(dir / "cyl.png") + " --count 2 --out " + q(dir / "out"),
              dir) == 0);
    CHECK(fs::exists(dir / "out" / "sphere_001.png"));
    CHECK(fs::exists(dir / "out" / "cyl_grid.png"));
    CHECK(run("generate --checkpoint " + q(t.checkpoint) + " --maps " + q(dir / "big.png") + " --out " +
                  q(dir / "bad"),
              dir) == 2);
}

TEST_CASE("extract-z writes one vector per image and feeds generate") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("extract");
    const auto man = data::read_manifest(t.manifest.string());
    const auto tests = man.select(data::Split::test);
    REQUIRE(tests.size() >= 3);
    std::string images;
    for (int i = 0; i < 3; ++i) images += " " + q(man.resolve(*tests[i]));
    REQUIRE(run("extract-z --checkpoint " + q(t.checkpoint) + " --images" + images + " --out " + q(dir / "z.json"),
                dir) == 0);
    const json z = json::parse(slurp(dir / "z.json"));
    CHECK(z.at("dim").get<int>() == 4);
    REQUIRE(z.at("vectors").size() == 3);
    for (const auto& v : z.at("vectors")) CHECK(v.size() == 4);

    const std::string map = man.resolve(*man.select(data::Split::shape_pool).back());
    CHECK(run("generate --checkpoint " + q(t.checkpoint) + " --maps " + q(map) + " --z-source file --z-file " +
                  q(dir / "z.json") + " --out " + q(dir / "gen"),
              dir) == 0);
    CHECK(fs::exists(dir / "gen" / (fs::path(map).stem().string() + "_002.png")));

    std::ofstream(dir / "broken.png") << "not a png";
    CHECK(run("extract-z --checkpoint " + q(t.checkpoint) + " --images " + q(dir / "broken.png") + " --out " +
                  q(dir / "z2.json"),
              dir) == 2);
    CHECK(slurp(dir / "stderr.txt").find("broken.png") != std::string::npos);
}

TEST_CASE("eval-pose baseline-only prints only the baseline row") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("baseline");
    REQUIRE(run("eval-pose --test " + q(t.manifest) + " --baseline-only --out " + q(dir / "r.json"), dir) == 0);
    const std::string out = slurp(dir / "stdout.txt");
    CHECK(out.find("naive baseline") != std::string::npos);
    CHECK(out.find("regressor") == std::string::npos);
    const json r = json::parse(slurp(dir / "r.json"));
    CHECK(r.at("table").size() == 1);
}

TEST_CASE("eval-pose report mean matches its per-sample errors") {
    const auto& t = tiny_run();
    const fs::path dir = scratch_dir("eval");
    REQUIRE(run("eval-pose --config " + q(t.config) + " --test " + q(t.manifest) +
                    " --test-split real_pool --cv 2 --out " + q(dir / "cv.json"),
                dir) == 0);
    const json r = json::parse(slurp(dir / "cv.json"));
    const auto errors = r.at("report").at("errors").get<std::vector<double>>();
    REQUIRE(errors.size() == 12);
    double sum = 0;
    for (double e : errors) sum += e;
    CHECK(std::abs(sum / errors.size() - r.at("report").at("mean_error").get<double>()) <= 1e-9);
    CHECK(r.at("table").size() == 2);

    REQUIRE(run("eval-pose --config " + q(t.config) + " --train " + q(t.manifest) +
                    " --train-split real_pool --test " + q(t.manifest) + " --test-split test --out " +
                    q(dir / "tt.json"),
                dir) == 0);
    CHECK(json::parse(slurp(dir / "tt.json")).at("mode") == "train_test");
    CHECK(run("eval-pose --test " + q(t.manifest), dir) == 1);
    CHECK(run("eval-pose --test " + q(dir / "missing.jsonl") + " --baseline-only", dir) == 2);
}
