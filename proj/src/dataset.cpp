#include "scgan/dataset.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "scgan/image_io.hpp"

namespace scgan::data {

namespace fs = std::filesystem;
using geometry::NormalMap;
using geometry::ShadedImage;
using geometry::Vec3;
using json = nlohmann::ordered_json;

std::string to_string(Modality m) { return m == Modality::image ? "image" : "normal_map"; }

std::string to_string(Split s) {
    switch (s) {
        case Split::real_pool: return "real_pool";
        case Split::shape_pool: return "shape_pool";
        case Split::test: return "test";
    }
    return "unknown";
}

Modality parse_modality(const std::string& s) {
    if (s == "image") return Modality::image;
    if (s == "normal_map") return Modality::normal_map;
    throw std::invalid_argument("unknown modality '" + s + "'");
}

Split parse_split(const std::string& s) {
    if (s == "real_pool") return Split::real_pool;
    if (s == "shape_pool") return Split::shape_pool;
    if (s == "test") return Split::test;
    throw std::invalid_argument("unknown split '" + s + "'");
}

std::vector<const SampleRecord*> DatasetManifest::select(Split split) const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
        if (r.split == split) out.push_back(&r);
    return out;
}

std::string DatasetManifest::resolve(const SampleRecord& r) const {
    return root.empty() ? r.file_path : (fs::path(root) / r.file_path).string();
}

void DatasetManifest::check_disjoint_pools() const {
    std::set<std::string> real;
    for (const auto* r : select(Split::real_pool)) real.insert(r->model_id);
    for (const auto* r : select(Split::shape_pool))
        if (real.count(r->model_id)) throw std::runtime_error("model " + r->model_id + " appears in both pools");
}

void DatasetManifest::validate_files() const {
    for (const auto& r : records) {
        const std::string path = resolve(r);
        int w = 0, h = 0;
        if (r.modality == Modality::normal_map) {
            const NormalMap m = load_normal_map(path);
            w = m.width;
            h = m.height;
        } else {
            const ShadedImage img = load_image(path);
            w = img.width;
            h = img.height;
        }
        if (w != resolution || h != resolution)
            throw std::runtime_error(path + " is " + std::to_string(w) + "x" + std::to_string(h) +
                                     ", manifest declares " + std::to_string(resolution));
    }
}

std::string manifest_to_jsonl(const DatasetManifest& m) {
    std::ostringstream os;
    json header;
    header["class_name"] = m.class_name;
    header["resolution"] = m.resolution;
    header["seed"] = m.seed;
    os << header.dump() << '\n';
    for (const auto& r : m.records) {
        json j;
        j["file_path"] = r.file_path;
        j["modality"] = to_string(r.modality);
        j["object_class"] = r.object_class;
        j["model_id"] = r.model_id;
        j["pose"] = {{"azimuth", r.pose.azimuth},
                     {"elevation", r.pose.elevation},
                     {"theta", r.pose.theta},
                     {"distance", r.pose.distance}};
        j["split"] = to_string(r.split);
        os << j.dump() << '\n';
    }
    return os.str();
}

DatasetManifest manifest_from_jsonl(const std::string& text, std::string root) {
    DatasetManifest m;
    m.root = std::move(root);
    std::istringstream is(text);
    std::string line;
    bool header = true;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            if (header) {
                m.class_name = j.at("class_name").get<std::string>();
                m.resolution = j.at("resolution").get<int>();
                m.seed = j.at("seed").get<std::uint64_t>();
                header = false;
                continue;
            }
            SampleRecord r;
            r.file_path = j.at("file_path").get<std::string>();
            r.modality = parse_modality(j.at("modality").get<std::string>());
            r.object_class = j.at("object_class").get<std::string>();
            r.model_id = j.at("model_id").get<std::string>();
            const json& p = j.at("pose");
            r.pose = {p.at("azimuth").get<double>(), p.at("elevation").get<double>(), p.at("theta").get<double>(),
                      p.at("distance").get<double>()};
            r.split = parse_split(j.at("split").get<std::string>());
            m.records.push_back(std::move(r));
        } catch (const json::exception& e) {
            throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (header) throw std::runtime_error("manifest has no header line");
    return m;
}

void write_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write manifest " + path);
    out << manifest_to_jsonl(m);
    if (!out) throw std::runtime_error("write failed for manifest " + path);
}

DatasetManifest read_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open manifest " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return manifest_from_jsonl(ss.str(), fs::path(path).parent_path().string());
}

geometry::ShadeParams random_appearance(Rng& rng) {
    std::uniform_real_distribution<double> albedo(0.25, 1.0), lx(-0.5, 0.5), ly(0.0, 0.7), bg(0.0, 1.0);
    geometry::ShadeParams s;
    s.albedo = {albedo(rng), albedo(rng), albedo(rng)};
    s.light_dir = geometry::normalized({lx(rng), ly(rng), 1.0});
    s.background = {bg(rng), bg(rng), bg(rng)};
    return s;
}

namespace {

std::string pad_index(int i, int width) {
    std::ostringstream os;
    os << std::setw(width) << std::setfill('0') << i;
    return os.str();
}

}  // namespace

DatasetManifest build_synthetic_dataset(const DatasetParams& params, const std::string& out_dir) {
    if (params.num_models < 2) throw std::invalid_argument("need at least 2 models to form disjoint pools");
    if (params.poses.empty()) throw std::invalid_argument("pose list is empty");
    if (params.kinds.empty()) throw std::invalid_argument("no primitive kinds given");
    if (params.resolution < 8) throw std::invalid_argument("resolution must be at least 8");
    for (const auto& p : params.poses) p.validate();

    try {
        for (const char* sub : {"real", "normals", "test"}) fs::create_directories(fs::path(out_dir) / sub);
    } catch (const fs::filesystem_error& e) {
        throw std::runtime_error("cannot create dataset directory " + out_dir + ": " + e.what());
    }

    Rng rng(derive_seed(params.seed, "data"));
    std::uniform_real_distribution<double> extent(0.6, 1.4);

    std::vector<geometry::Mesh> meshes;
    for (int i = 0; i < params.num_models; ++i) {
        const auto kind = params.kinds[i % params.kinds.size()];
        geometry::PrimitiveParams pp;
        pp.size = {extent(rng), extent(rng), extent(rng)};
        const std::uint64_t mesh_seed = rng();
        geometry::Mesh mesh = geometry::make_primitive(kind, pp, mesh_seed);
        mesh.model_id = params.class_name + "_" + pad_index(i, 4) + "_" + geometry::to_string(kind);
        meshes.push_back(std::move(mesh));
    }
    const int num_real = params.num_models / 2;
    const int num_poses = static_cast<int>(params.poses.size());

    geometry::RenderOptions ropts;
    ropts.fill_fraction = params.fill_fraction;

    DatasetManifest manifest;
    manifest.class_name = params.class_name;
    manifest.resolution = params.resolution;
    manifest.seed = params.seed;
    manifest.root = out_dir;

    // Each real model walks its own shuffled pose cycle.
    std::vector<std::vector<int>> pose_cycle(num_real);
    for (auto& cyc : pose_cycle) {
        cyc.resize(num_poses);
        std::iota(cyc.begin(), cyc.end(), 0);
        std::shuffle(cyc.begin(), cyc.end(), rng);
    }
    const int real_images = params.real_images < 0 ? num_real * num_poses : params.real_images;
    for (int j = 0; j < real_images; ++j) {
        const int model = j % num_real;
        const auto& pose = params.poses[pose_cycle[model][(j / num_real) % num_poses]];
        const auto shade = random_appearance(rng);
        const ShadedImage img = geometry::shade_image(meshes[model], pose, shade, params.resolution, ropts);
        SampleRecord r{"real/" + meshes[model].model_id + "_" + pad_index(j, 5) + ".png",
                       Modality::image, params.class_name, meshes[model].model_id, pose, Split::real_pool};
        image::write_file(manifest.resolve(r), encode_image(img));
        manifest.records.push_back(std::move(r));
    }

    for (int i = num_real; i < params.num_models; ++i) {
        for (int p = 0; p < num_poses; ++p) {
            const NormalMap map = geometry::rasterize_normal_map(meshes[i], params.poses[p], params.resolution, ropts);
            SampleRecord r{"normals/" + meshes[i].model_id + "_" + pad_index(p, 4) + ".png",
                           Modality::normal_map, params.class_name, meshes[i].model_id, params.poses[p],
                           Split::shape_pool};
            image::write_file(manifest.resolve(r), encode_normal_map(map));
            manifest.records.push_back(std::move(r));
        }
    }

    const int num_shape = params.num_models - num_real;
    std::uniform_int_distribution<int> pick_pose(0, num_poses - 1);
    for (int j = 0; j < params.test_images; ++j) {
        const int model = num_real + j % num_shape;
        const auto& pose = params.poses[pick_pose(rng)];
        const auto shade = random_appearance(rng);
        const ShadedImage img = geometry::shade_image(meshes[model], pose, shade, params.resolution, ropts);
        SampleRecord r{"test/" + meshes[model].model_id + "_" + pad_index(j, 5) + ".png",
                       Modality::image, params.class_name, meshes[model].model_id, pose, Split::test};
        image::write_file(manifest.resolve(r), encode_image(img));
        manifest.records.push_back(std::move(r));
    }

    manifest.check_disjoint_pools();
    write_manifest(manifest, (fs::path(out_dir) / "manifest.jsonl").string());
    return manifest;
}

namespace {

constexpr std::uint16_t kMid = 32768;

std::uint16_t quantize16(double c) {
    return static_cast<std::uint16_t>(std::lround(std::clamp((c + 1.0) / 2.0, 0.0, 1.0) * 65535.0));
}

}  // namespace

std::vector<std::uint8_t> encode_normal_map(const NormalMap& map) {
    image::RawImage raw{map.width, map.height, 16, {}};
    raw.samples.resize(map.pixels.size() * 3);
    for (std::size_t i = 0; i < map.pixels.size(); ++i) {
        const Vec3& v = map.pixels[i];
        if (!NormalMap::is_foreground(v)) {
            raw.samples[3 * i] = raw.samples[3 * i + 1] = raw.samples[3 * i + 2] = kMid;
            continue;
        }
        raw.samples[3 * i] = quantize16(v.x);
        raw.samples[3 * i + 1] = quantize16(v.y);
        raw.samples[3 * i + 2] = quantize16(v.z);
    }
    return image::encode_png(raw);
}

NormalMap decode_normal_map(std::span<const std::uint8_t> bytes) {
    const image::RawImage raw = image::decode_png(bytes);
    if (raw.bit_depth != 16) throw std::runtime_error("normal map must be a 16-bit PNG");
    NormalMap map(raw.width, raw.height);
    for (std::size_t i = 0; i < map.pixels.size(); ++i) {
        const std::uint16_t* s = &raw.samples[3 * i];
        if (s[0] == kMid && s[1] == kMid && s[2] == kMid) continue;
        const Vec3 v{s[0] / 65535.0 * 2.0 - 1.0, s[1] / 65535.0 * 2.0 - 1.0, s[2] / 65535.0 * 2.0 - 1.0};
        map.pixels[i] = geometry::normalized(v);
    }
    return map;
}

std::vector<std::uint8_t> encode_image(const ShadedImage& img) {
    image::RawImage raw{img.width, img.height, 8, {}};
    raw.samples.resize(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        raw.samples[i] = static_cast<std::uint16_t>(std::lround(std::clamp((img.pixels[i] + 1.0) / 2.0, 0.0, 1.0) * 255.0));
    return image::encode_png(raw);
}

ShadedImage decode_image(std::span<const std::uint8_t> bytes) {
    const image::RawImage raw = image::decode_png(bytes);
    const double maxv = raw.bit_depth == 16 ? 65535.0 : 255.0;
    ShadedImage img(raw.width, raw.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = raw.samples[i] / maxv * 2.0 - 1.0;
    return img;
}

NormalMap load_normal_map(const std::string& path) {
    try {
        return decode_normal_map(image::read_file(path));
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

ShadedImage load_image(const std::string& path) {
    try {
        return decode_image(image::read_file(path));
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
}

void AugmentParams::validate() const {
    if (!(max_shift_fraction >= 0.0 && max_shift_fraction < 0.5))
        throw std::invalid_argument("max_shift_fraction must lie in [0, 0.5)");
    if (!(scale_min > 0.0 && scale_max >= scale_min)) throw std::invalid_argument("scale range must be positive and ordered");
}

NormalMap shift_scale(const NormalMap& map, double dx, double dy, double scale) {
    if (!(scale > 0.0)) throw std::invalid_argument("scale must be positive");
    NormalMap out(map.width, map.height);
    const double cx = 0.5 * map.width, cy = 0.5 * map.height;
    for (int y = 0; y < map.height; ++y) {
        const double v = (y + 0.5 - dy - cy) / scale + cy;
        const int sy = static_cast<int>(std::floor(v));
        if (sy < 0 || sy >= map.height) continue;
        for (int x = 0; x < map.width; ++x) {
            const double u = (x + 0.5 - dx - cx) / scale + cx;
            const int sx = static_cast<int>(std::floor(u));
            if (sx < 0 || sx >= map.width) continue;
            out.at(x, y) = map.at(sx, sy);
        }
    }
    return out;
}

NormalMap random_shift_scale(const NormalMap& map, const AugmentParams& params, Rng& rng) {
    params.validate();
    const double max_dx = params.max_shift_fraction * map.width;
    const double max_dy = params.max_shift_fraction * map.height;
    std::uniform_real_distribution<double> sx(-max_dx, max_dx), sy(-max_dy, max_dy);
    std::uniform_real_distribution<double> sc(params.scale_min, params.scale_max);
    const double dx = sx(rng), dy = sy(rng), s = sc(rng);
    return shift_scale(map, dx, dy, s);
}

void write_to_batch(const NormalMap& map, Tensor& batch, int index) {
    const std::size_t plane = static_cast<std::size_t>(map.width) * map.height;
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != map.height || batch.dim(3) != map.width)
        throw std::invalid_argument("normal map does not fit batch tensor " + shape_str(batch.shape()));
    double* base = batch.data() + static_cast<std::size_t>(index) * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
        base[i] = map.pixels[i].x;
        base[plane + i] = map.pixels[i].y;
        base[2 * plane + i] = map.pixels[i].z;
    }
}

void write_to_batch(const ShadedImage& img, Tensor& batch, int index) {
    const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
    if (batch.rank() != 4 || batch.dim(1) != 3 || batch.dim(2) != img.height || batch.dim(3) != img.width)
        throw std::invalid_argument("image does not fit batch tensor " + shape_str(batch.shape()));
    double* base = batch.data() + static_cast<std::size_t>(index) * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) base[c * plane + i] = img.pixels[3 * i + c];
}

Tensor to_tensor(const NormalMap& map) {
    Tensor t({1, 3, map.height, map.width});
    write_to_batch(map, t, 0);
    return t;
}

Tensor to_tensor(const ShadedImage& img) {
    Tensor t({1, 3, img.height, img.width});
    write_to_batch(img, t, 0);
    return t;
}

ShadedImage image_from_tensor(const Tensor& batch, int index) {
    const int h = batch.dim(2), w = batch.dim(3);
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    ShadedImage img(w, h);
    const double* base = batch.data() + static_cast<std::size_t>(index) * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i)
        for (int c = 0; c < 3; ++c) img.pixels[3 * i + c] = base[c * plane + i];
    return img;
}

NormalMap normal_map_from_tensor(const Tensor& batch, int index, double threshold) {
    const int h = batch.dim(2), w = batch.dim(3);
    const std::size_t plane = static_cast<std::size_t>(w) * h;
    NormalMap map(w, h);
    const double* base = batch.data() + static_cast<std::size_t>(index) * 3 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
        const Vec3 v{base[i], base[plane + i], base[2 * plane + i]};
        if (geometry::norm(v) >= threshold) map.pixels[i] = geometry::normalized(v);
    }
    return map;
}

Tensor sample_appearance(int count, int dim, double sigma2, Rng& rng) {
    if (!(sigma2 > 0.0)) throw std::invalid_argument("sigma2 must be positive");
    std::normal_distribution<double> gauss(0.0, std::sqrt(sigma2));
    Tensor z({count, dim});
    for (auto& v : z.storage()) v = gauss(rng);
    return z;
}

BatchSampler::BatchSampler(const DatasetManifest& manifest, SamplerConfig config, std::uint64_t seed)
    : config_(std::move(config)), resolution_(manifest.resolution), rng_(seed) {
    if (config_.batch_size < 1) throw std::invalid_argument("batch size must be at least 1");
    if (config_.appearance_dim < 1) throw std::invalid_argument("appearance dimension must be at least 1");
    config_.augment.validate();
    for (const auto* r : manifest.select(Split::real_pool)) {
        images_.push_back(load_image(manifest.resolve(*r)));
        image_models_.push_back(r->model_id);
    }
    for (const auto* r : manifest.select(Split::shape_pool)) {
        normals_.push_back(load_normal_map(manifest.resolve(*r)));
        normal_models_.push_back(r->model_id);
    }
    if (images_.empty()) throw std::runtime_error("real pool is empty");
    if (normals_.empty()) throw std::runtime_error("shape pool is empty");
    for (const auto& img : images_)
        if (img.width != resolution_ || img.height != resolution_)
            throw std::runtime_error("real-pool image resolution differs from manifest");
    for (const auto& m : normals_)
        if (m.width != resolution_ || m.height != resolution_)
            throw std::runtime_error("normal map resolution differs from manifest");
}

Batch BatchSampler::next() {
    const int b = config_.batch_size;
    Batch batch;
    batch.images = Tensor({b, 3, resolution_, resolution_});
    batch.normals = Tensor({b, 3, resolution_, resolution_});
    std::uniform_int_distribution<std::size_t> pick_image(0, images_.size() - 1);
    std::uniform_int_distribution<std::size_t> pick_normal(0, normals_.size() - 1);
    for (int i = 0; i < b; ++i) {
        const std::size_t k = pick_image(rng_);
        write_to_batch(images_[k], batch.images, i);
        batch.image_models.push_back(image_models_[k]);
    }
    for (int i = 0; i < b; ++i) {
        const std::size_t k = pick_normal(rng_);
        write_to_batch(random_shift_scale(normals_[k], config_.augment, rng_), batch.normals, i);
        batch.normal_models.push_back(normal_models_[k]);
    }
    batch.z = sample_appearance(b, config_.appearance_dim, config_.sigma2, rng_);
    return batch;
}

}  // namespace scgan::data
