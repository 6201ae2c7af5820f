#pragma once

// Generators G_I, G_N, G_z (G_N and G_z share a six-block convolutional
// trunk) and the critics D_I, D_N, D_z.

#include <cstdint>
#include <string>
#include <vector>

#include "scgan/autograd.hpp"

namespace scgan::nn {

using ag::Var;

enum class BlockKind { conv, deconv, resnet, dense };
enum class Norm { none, pixel, instance };

struct BlockSpec {
    BlockKind kind = BlockKind::conv;
    int channels = 1;  // output channels, or features for dense blocks
    int stride = 1;
    int kernel = 3;
    Norm norm = Norm::pixel;
    bool activate = true;  // ELU after normalization

    void validate() const;
};

std::string to_string(BlockKind k);

struct NetworkConfig {
    int resolution = 64;      // m
    int appearance_dim = 64;  // n
    int gen_channels = 64;    // first generator block width, doubled at each downsampling
    int resnet_blocks = 4;
    int disc_channels = 64;   // first critic block width, doubled at each downsampling
    int disc_max_channels = 256;
    int dz_hidden = 256;

    void validate() const;
    // Stride-2 stages needed to bring m down to 16 (zero when m <= 16).
    int downsamplings() const;
};

// Number of shared convolution blocks at the start of G_N and G_z.
inline constexpr int kSharedTrunkBlocks = 6;

enum class Module { g_image, trunk, g_normal_head, g_z_head, d_image, d_normal, d_z };
inline constexpr Module kAllModules[] = {Module::g_image,  Module::trunk,    Module::g_normal_head, Module::g_z_head,
                                         Module::d_image, Module::d_normal, Module::d_z};
std::string to_string(Module m);

// Block tables derived from the config; `in_channels` is the input width.
struct ModuleLayout {
    int in_channels = 0;
    std::vector<BlockSpec> blocks;
};
ModuleLayout module_layout(const NetworkConfig& cfg, Module m);

// Pure function of the config; equals NetworkBundle::parameter_count().
std::size_t parameter_count(const NetworkConfig& cfg);
std::size_t parameter_count(const NetworkConfig& cfg, Module m);

struct Param {
    std::string name;  // module/block/index
    Var var;
};

// x * (mean over channels of x^2 + 1e-8)^-1/2 at every spatial position.
Var pixel_norm(const Var& x);
// Per-sample standardization over the feature dimension of [N, F].
Var instance_norm(const Var& x);

class NetworkBundle {
public:
    // Variance-scaled normal weights (std sqrt(2 / fan_in), sqrt(1 / fan_in)
    // for linear heads), zero biases, all rounded to float32.
    static NetworkBundle init(const NetworkConfig& cfg, std::uint64_t seed);

    const NetworkConfig& config() const { return cfg_; }

    // z [B, n], normals [B, 3, m, m] -> image [B, 3, m, m] in [-1, 1].
    Var g_image(const Var& z, const Var& normals) const;
    // image [B, 3, m, m] -> normal map [B, 3, m, m] with per-pixel norm <= 1;
    // vectors leaving the unit ball are projected onto the sphere.
    Var g_normal(const Var& image) const;
    // image [B, 3, m, m] -> z [B, n], linear output.
    Var g_z(const Var& image) const;
    // Both encoder outputs from one pass through the shared trunk.
    std::pair<Var, Var> encode(const Var& image) const;
    Var trunk(const Var& image) const;

    // Critic scores [B, 1].
    Var d_image(const Var& image) const;
    Var d_normal(const Var& normals) const;
    Var d_z(const Var& z) const;

    std::vector<Param>& params(Module m) { return modules_[static_cast<int>(m)]; }
    const std::vector<Param>& params(Module m) const { return modules_[static_cast<int>(m)]; }
    // Parameters reachable from each network's forward pass. G_N and G_z both
    // list the trunk entries, which alias the same storage.
    std::vector<Param> network_params(const std::string& network) const;
    std::vector<Param> generator_params() const;
    std::vector<Param> all_params() const;
    Var* find(const std::string& name);

    std::size_t parameter_count() const;

    // Copies parameter values (not identities) from another bundle of the same layout.
    void copy_values_from(const NetworkBundle& other);

private:
    NetworkConfig cfg_;
    std::vector<std::vector<Param>> modules_;

    Var run(Module m, Var x) const;
};

}  // namespace scgan::nn
