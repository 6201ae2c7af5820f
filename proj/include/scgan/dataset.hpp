#pragma once

// Synthetic unpaired dataset: shaded "real" images and rendered normal maps
// from disjoint sets of primitive meshes, plus batch sampling.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "scgan/geometry.hpp"
#include "scgan/rng.hpp"
#include "scgan/tensor.hpp"

namespace scgan::data {

enum class Modality { image, normal_map };
enum class Split { real_pool, shape_pool, test };

std::string to_string(Modality m);
std::string to_string(Split s);
Modality parse_modality(const std::string& s);
Split parse_split(const std::string& s);

struct SampleRecord {
    std::string file_path;  // relative to the manifest directory
    Modality modality = Modality::image;
    std::string object_class;
    std::string model_id;
    geometry::CameraPose pose;
    Split split = Split::real_pool;

    bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
    std::vector<SampleRecord> records;
    std::string class_name;
    int resolution = 0;
    std::uint64_t seed = 0;
    std::string root;  // directory the relative file paths resolve against; not serialized

    std::vector<const SampleRecord*> select(Split split) const;
    std::string resolve(const SampleRecord& r) const;
    // Throws if real_pool and shape_pool share a model id.
    void check_disjoint_pools() const;
    // Throws unless every file exists and decodes at `resolution`.
    void validate_files() const;
};

std::string manifest_to_jsonl(const DatasetManifest& m);
DatasetManifest manifest_from_jsonl(const std::string& text, std::string root = {});
void write_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest read_manifest(const std::string& path);

struct DatasetParams {
    int num_models = 10;
    std::vector<geometry::CameraPose> poses;
    int resolution = 64;
    std::uint64_t seed = 0;
    std::string class_name = "primitives";
    std::vector<geometry::PrimitiveKind> kinds{geometry::PrimitiveKind::box, geometry::PrimitiveKind::composite};
    // Shaded real-pool images; negative means one per (real model, pose).
    int real_images = -1;
    // Held-out shaded images rendered from shape-pool models.
    int test_images = 0;
    double fill_fraction = 0.75;
};

// Splits the models into a real pool (first half) and a shape pool (second
// half) and writes images, normal maps and manifest.jsonl under out_dir.
DatasetManifest build_synthetic_dataset(const DatasetParams& params, const std::string& out_dir);

// Randomized appearance used for real-pool and test images.
geometry::ShadeParams random_appearance(Rng& rng);

// 16-bit RGB PNG; component c is stored as round((c + 1) / 2 * 65535) and the
// background zero vector as the exact midpoint triple.
std::vector<std::uint8_t> encode_normal_map(const geometry::NormalMap& map);
geometry::NormalMap decode_normal_map(std::span<const std::uint8_t> bytes);

// 8-bit RGB PNG.
std::vector<std::uint8_t> encode_image(const geometry::ShadedImage& img);
geometry::ShadedImage decode_image(std::span<const std::uint8_t> bytes);

geometry::NormalMap load_normal_map(const std::string& path);
geometry::ShadedImage load_image(const std::string& path);

struct AugmentParams {
    double max_shift_fraction = 0.10;
    double scale_min = 0.8;
    double scale_max = 1.1;

    void validate() const;
};

// Nearest-neighbour resampling: the object is scaled about the frame centre
// and then moved by (dx, dy) pixels. Vacated pixels become background.
geometry::NormalMap shift_scale(const geometry::NormalMap& map, double dx, double dy, double scale);
geometry::NormalMap random_shift_scale(const geometry::NormalMap& map, const AugmentParams& params, Rng& rng);

// Channel-first conversions: [3, h, w] slices of a batch tensor.
void write_to_batch(const geometry::NormalMap& map, Tensor& batch, int index);
void write_to_batch(const geometry::ShadedImage& img, Tensor& batch, int index);
Tensor to_tensor(const geometry::NormalMap& map);
Tensor to_tensor(const geometry::ShadedImage& img);
geometry::ShadedImage image_from_tensor(const Tensor& batch, int index);
// Pixels whose vector norm is below `threshold` become background; others are normalized.
geometry::NormalMap normal_map_from_tensor(const Tensor& batch, int index, double threshold = 0.5);

struct Batch {
    Tensor images;   // [B, 3, m, m]
    Tensor normals;  // [B, 3, m, m]
    Tensor z;        // [B, n]
    std::vector<std::string> image_models;
    std::vector<std::string> normal_models;
};

struct SamplerConfig {
    int batch_size = 16;
    double sigma2 = 0.5;
    int appearance_dim = 64;
    AugmentParams augment;
};

// Draws unpaired batches. Pool contents are decoded once at construction.
class BatchSampler {
public:
    BatchSampler(const DatasetManifest& manifest, SamplerConfig config, std::uint64_t seed);

    Batch next();

    const SamplerConfig& config() const { return config_; }
    int resolution() const { return resolution_; }
    std::size_t real_pool_size() const { return images_.size(); }
    std::size_t shape_pool_size() const { return normals_.size(); }

    std::string state() const { return rng_state(rng_); }
    void set_state(const std::string& s) { set_rng_state(rng_, s); }

private:
    SamplerConfig config_;
    int resolution_;
    std::vector<geometry::ShadedImage> images_;
    std::vector<std::string> image_models_;
    std::vector<geometry::NormalMap> normals_;
    std::vector<std::string> normal_models_;
    Rng rng_;
};

// Draws z ~ N(0, sigma2 I) as a [count, dim] tensor.
Tensor sample_appearance(int count, int dim, double sigma2, Rng& rng);

}  // namespace scgan::data
