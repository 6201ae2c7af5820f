#include "scgan/networks.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "scgan/rng.hpp"

namespace scgan::nn {

void BlockSpec::validate() const {
    if (channels <= 0 || stride <= 0 || kernel <= 0) throw std::invalid_argument("block channels, stride and kernel must be positive");
    if (kind == BlockKind::deconv && (kernel != 4 || stride != 2))
        throw std::invalid_argument("deconvolution blocks use kernel 4 and stride 2");
    if (kind == BlockKind::resnet && stride != 1) throw std::invalid_argument("resnet blocks keep resolution");
}

std::string to_string(BlockKind k) {
    switch (k) {
        case BlockKind::conv: return "conv";
        case BlockKind::deconv: return "deconv";
        case BlockKind::resnet: return "res";
        case BlockKind::dense: return "dense";
    }
    return "unknown";
}

std::string to_string(Module m) {
    switch (m) {
        case Module::g_image: return "g_image";
        case Module::trunk: return "trunk";
        case Module::g_normal_head: return "g_normal_head";
        case Module::g_z_head: return "g_z_head";
        case Module::d_image: return "d_image";
        case Module::d_normal: return "d_normal";
        case Module::d_z: return "d_z";
    }
    return "unknown";
}

int NetworkConfig::downsamplings() const {
    int d = 0;
    for (int s = resolution; s > 16; s /= 2) ++d;
    return d;
}

void NetworkConfig::validate() const {
    if (resolution < 4 || (resolution & (resolution - 1)) != 0)
        throw std::invalid_argument("resolution must be a power of two >= 4");
    if (appearance_dim < 1) throw std::invalid_argument("appearance_dim must be positive");
    if (gen_channels < 1 || disc_channels < 1 || disc_max_channels < 1 || dz_hidden < 1)
        throw std::invalid_argument("network widths must be positive");
    if (resnet_blocks < 0) throw std::invalid_argument("resnet_blocks must be non-negative");
    if (downsamplings() >= kSharedTrunkBlocks) throw std::invalid_argument("resolution too large for the shared trunk");
}

namespace {

BlockSpec conv(int c, int stride) { return {BlockKind::conv, c, stride, 3, Norm::pixel, true}; }
BlockSpec conv_head(int c) { return {BlockKind::conv, c, 1, 3, Norm::none, false}; }
BlockSpec deconv(int c) { return {BlockKind::deconv, c, 2, 4, Norm::pixel, true}; }
BlockSpec resnet(int c) { return {BlockKind::resnet, c, 1, 3, Norm::pixel, true}; }
BlockSpec dense(int f, Norm norm, bool act) { return {BlockKind::dense, f, 1, 1, norm, act}; }

std::vector<BlockSpec> decoder(const NetworkConfig& cfg, int d) {
    std::vector<BlockSpec> b;
    const int wide = cfg.gen_channels << d;
    for (int i = 0; i < cfg.resnet_blocks; ++i) b.push_back(resnet(wide));
    for (int i = d; i >= 1; --i) b.push_back(deconv(cfg.gen_channels << (i - 1)));
    b.push_back(conv_head(3));
    return b;
}

std::vector<BlockSpec> critic(const NetworkConfig& cfg) {
    std::vector<BlockSpec> b{conv(cfg.disc_channels, 1)};
    int c = cfg.disc_channels;
    for (int s = cfg.resolution; s > 4; s /= 2) {
        c = std::min(2 * c, cfg.disc_max_channels);
        b.push_back(conv(c, 2));
    }
    b.push_back(dense(1, Norm::none, false));
    return b;
}

int conv_pad(const BlockSpec& b) { return b.kind == BlockKind::deconv ? 1 : (b.kernel - 1) / 2; }

struct Walk {
    int channels;
    int size;
};

// Parameter shapes of one block given its input, advancing the walk.
std::vector<Shape> block_param_shapes(const BlockSpec& b, Walk& w) {
    std::vector<Shape> shapes;
    switch (b.kind) {
        case BlockKind::conv:
            shapes = {{b.channels, w.channels, b.kernel, b.kernel}, {b.channels}};
            w.size = ag::conv_out_size(w.size, b.kernel, {b.stride, conv_pad(b)});
            break;
        case BlockKind::deconv:
            shapes = {{w.channels, b.channels, b.kernel, b.kernel}, {b.channels}};
            w.size *= 2;
            break;
        case BlockKind::resnet:
            if (b.channels != w.channels) throw std::invalid_argument("resnet block must keep channel count");
            shapes = {{b.channels, b.channels, b.kernel, b.kernel}, {b.channels},
                      {b.channels, b.channels, b.kernel, b.kernel}, {b.channels}};
            break;
        case BlockKind::dense:
            shapes = {{w.channels * w.size * w.size, b.channels}, {b.channels}};
            w.size = 1;
            break;
    }
    w.channels = b.channels;
    return shapes;
}

std::vector<std::string> block_param_names(const BlockSpec& b) {
    if (b.kind == BlockKind::resnet) return {"w1", "b1", "w2", "b2"};
    return {"w", "b"};
}

Walk module_input(const NetworkConfig& cfg, Module m, const ModuleLayout& layout) {
    const int trunk_size = cfg.resolution >> cfg.downsamplings();
    switch (m) {
        case Module::g_normal_head:
        case Module::g_z_head: return {layout.in_channels, trunk_size};
        case Module::d_z: return {layout.in_channels, 1};
        default: return {layout.in_channels, cfg.resolution};
    }
}

}  // namespace

ModuleLayout module_layout(const NetworkConfig& cfg, Module m) {
    cfg.validate();
    const int d = cfg.downsamplings();
    const int wide = cfg.gen_channels << d;
    ModuleLayout l;
    switch (m) {
        case Module::g_image:
            l.in_channels = 3 + cfg.appearance_dim;
            l.blocks.push_back(conv(cfg.gen_channels, 1));
            for (int i = 1; i <= d; ++i) l.blocks.push_back(conv(cfg.gen_channels << i, 2));
            for (const auto& b : decoder(cfg, d)) l.blocks.push_back(b);
            break;
        case Module::trunk:
            l.in_channels = 3;
            l.blocks.push_back(conv(cfg.gen_channels, 1));
            for (int i = 1; i < kSharedTrunkBlocks; ++i)
                l.blocks.push_back(i <= d ? conv(cfg.gen_channels << i, 2) : conv(wide, 1));
            break;
        case Module::g_normal_head:
            l.in_channels = wide;
            l.blocks = decoder(cfg, d);
            break;
        case Module::g_z_head: {
            l.in_channels = wide;
            const int trunk_size = cfg.resolution >> d;
            for (int s = trunk_size, i = 0; i < 2 && s > 1; ++i, s = (s + 1) / 2) l.blocks.push_back(conv(wide, 2));
            l.blocks.push_back(dense(cfg.appearance_dim, Norm::none, false));
            break;
        }
        case Module::d_image:
        case Module::d_normal:
            l.in_channels = 3;
            l.blocks = critic(cfg);
            break;
        case Module::d_z:
            l.in_channels = cfg.appearance_dim;
            l.blocks = {dense(cfg.dz_hidden, Norm::instance, true), dense(1, Norm::none, false)};
            break;
    }
    for (const auto& b : l.blocks) b.validate();
    return l;
}

std::size_t parameter_count(const NetworkConfig& cfg, Module m) {
    const ModuleLayout l = module_layout(cfg, m);
    Walk w = module_input(cfg, m, l);
    std::size_t n = 0;
    for (const auto& b : l.blocks)
        for (const auto& s : block_param_shapes(b, w)) n += shape_numel(s);
    return n;
}

std::size_t parameter_count(const NetworkConfig& cfg) {
    std::size_t n = 0;
    for (Module m : kAllModules) n += parameter_count(cfg, m);
    return n;
}

Var pixel_norm(const Var& x) {
    const Shape& s = x.shape();
    const Var ms = ag::scale(ag::sum_to(x * x, {s[0], 1, s[2], s[3]}), 1.0 / s[1]);
    return x * ag::pow(ag::add_scalar(ms, 1e-8), -0.5);
}

Var instance_norm(const Var& x) {
    const int n = x.dim(0), f = x.dim(1);
    const Var mean = ag::scale(ag::sum_to(x, {n, 1}), 1.0 / f);
    const Var xc = x - mean;
    const Var var = ag::scale(ag::sum_to(xc * xc, {n, 1}), 1.0 / f);
    return xc * ag::pow(ag::add_scalar(var, 1e-5), -0.5);
}

NetworkBundle NetworkBundle::init(const NetworkConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    NetworkBundle nb;
    nb.cfg_ = cfg;
    nb.modules_.resize(std::size(kAllModules));
    Rng rng(derive_seed(seed, "init"));
    for (Module m : kAllModules) {
        const ModuleLayout l = module_layout(cfg, m);
        Walk w = module_input(cfg, m, l);
        auto& params = nb.params(m);
        for (std::size_t bi = 0; bi < l.blocks.size(); ++bi) {
            const BlockSpec& b = l.blocks[bi];
            const auto shapes = block_param_shapes(b, w);
            const auto names = block_param_names(b);
            const std::string prefix = to_string(m) + "/" + to_string(b.kind) + std::to_string(bi) + "/";
            for (std::size_t k = 0; k < shapes.size(); ++k) {
                Tensor t(shapes[k]);
                if (shapes[k].size() > 1) {
                    double fan_in = 0;
                    if (b.kind == BlockKind::dense) fan_in = shapes[k][0];
                    else if (b.kind == BlockKind::deconv) fan_in = shapes[k][0] * b.kernel * b.kernel / 4.0;
                    else fan_in = shapes[k][1] * b.kernel * b.kernel;
                    const double gain = b.activate || b.norm != Norm::none ? 2.0 : 1.0;
                    std::normal_distribution<double> gauss(0.0, std::sqrt(gain / fan_in));
                    for (auto& v : t.storage()) v = static_cast<double>(static_cast<float>(gauss(rng)));
                }
                params.push_back({prefix + names[k], Var::leaf(std::move(t))});
            }
        }
    }
    return nb;
}

Var NetworkBundle::run(Module m, Var x) const {
    const ModuleLayout l = module_layout(cfg_, m);
    const auto& params = this->params(m);
    std::size_t pi = 0;
    auto bias4 = [](const Var& b) { return ag::reshape(b, {1, b.dim(0), 1, 1}); };
    auto post = [](Var y, const BlockSpec& b) {
        if (b.norm == Norm::pixel) y = pixel_norm(y);
        if (b.norm == Norm::instance) y = instance_norm(y);
        if (b.activate) y = ag::elu(y);
        return y;
    };
    for (const auto& b : l.blocks) {
        switch (b.kind) {
            case BlockKind::conv: {
                const Var& w = params[pi++].var;
                const Var& bias = params[pi++].var;
                x = post(ag::conv2d(x, w, {b.stride, conv_pad(b)}) + bias4(bias), b);
                break;
            }
            case BlockKind::deconv: {
                const Var& w = params[pi++].var;
                const Var& bias = params[pi++].var;
                x = post(ag::conv_transpose2d(x, w, {2, 1}, 2 * x.dim(2), 2 * x.dim(3)) + bias4(bias), b);
                break;
            }
            case BlockKind::resnet: {
                const Var& w1 = params[pi++].var;
                const Var& b1 = params[pi++].var;
                const Var& w2 = params[pi++].var;
                const Var& b2 = params[pi++].var;
                const Var h = ag::elu(pixel_norm(ag::conv2d(x, w1, {1, 1}) + bias4(b1)));
                x = x + pixel_norm(ag::conv2d(h, w2, {1, 1}) + bias4(b2));
                break;
            }
            case BlockKind::dense: {
                const Var& w = params[pi++].var;
                const Var& bias = params[pi++].var;
                const int n = x.dim(0);
                if (x.shape().size() != 2) x = ag::reshape(x, {n, static_cast<int>(x.value().numel() / n)});
                x = post(ag::matmul(x, w) + ag::reshape(bias, {1, b.channels}), b);
                break;
            }
        }
    }
    return x;
}

namespace {

void check_maps(const Var& x, int m, const char* who) {
    const Shape& s = x.shape();
    if (s.size() != 4 || s[1] != 3 || s[2] != m || s[3] != m)
        throw std::invalid_argument(std::string(who) + ": expected [B, 3, " + std::to_string(m) + ", " +
                                    std::to_string(m) + "], got " + shape_str(s));
}

void check_z(const Var& z, int n, const char* who) {
    const Shape& s = z.shape();
    if (s.size() != 2 || s[1] != n)
        throw std::invalid_argument(std::string(who) + ": expected [B, " + std::to_string(n) + "], got " + shape_str(s));
}

}  // namespace

Var NetworkBundle::g_image(const Var& z, const Var& normals) const {
    check_maps(normals, cfg_.resolution, "g_image");
    check_z(z, cfg_.appearance_dim, "g_image");
    const int b = normals.dim(0), m = cfg_.resolution, n = cfg_.appearance_dim;
    if (z.dim(0) != b) throw std::invalid_argument("g_image: z and normal batch sizes differ");
    const Var tiled = ag::broadcast_to(ag::reshape(z, {b, n, 1, 1}), {b, n, m, m});
    return ag::tanh(run(Module::g_image, ag::concat1(normals, tiled)));
}

Var NetworkBundle::trunk(const Var& image) const {
    check_maps(image, cfg_.resolution, "trunk");
    return run(Module::trunk, image);
}

namespace {

Var ball_projection(const Var& u) {
    const Shape& s = u.shape();
    const Var norm = ag::safe_sqrt(ag::sum_to(u * u, {s[0], 1, s[2], s[3]}));
    return u * ag::reciprocal_clamped(norm);
}

}  // namespace

std::pair<Var, Var> NetworkBundle::encode(const Var& image) const {
    const Var t = trunk(image);
    return {ball_projection(run(Module::g_normal_head, t)), run(Module::g_z_head, t)};
}

Var NetworkBundle::g_normal(const Var& image) const {
    return ball_projection(run(Module::g_normal_head, trunk(image)));
}

Var NetworkBundle::g_z(const Var& image) const { return run(Module::g_z_head, trunk(image)); }

Var NetworkBundle::d_image(const Var& image) const {
    check_maps(image, cfg_.resolution, "d_image");
    return run(Module::d_image, image);
}

Var NetworkBundle::d_normal(const Var& normals) const {
    check_maps(normals, cfg_.resolution, "d_normal");
    return run(Module::d_normal, normals);
}

Var NetworkBundle::d_z(const Var& z) const {
    check_z(z, cfg_.appearance_dim, "d_z");
    return run(Module::d_z, z);
}

std::vector<Param> NetworkBundle::network_params(const std::string& network) const {
    std::vector<Param> out;
    auto append = [&](Module m) { out.insert(out.end(), params(m).begin(), params(m).end()); };
    if (network == "g_image") append(Module::g_image);
    else if (network == "g_normal") { append(Module::trunk); append(Module::g_normal_head); }
    else if (network == "g_z") { append(Module::trunk); append(Module::g_z_head); }
    else if (network == "d_image") append(Module::d_image);
    else if (network == "d_normal") append(Module::d_normal);
    else if (network == "d_z") append(Module::d_z);
    else throw std::invalid_argument("unknown network '" + network + "'");
    return out;
}

std::vector<Param> NetworkBundle::generator_params() const {
    std::vector<Param> out;
    for (Module m : {Module::g_image, Module::trunk, Module::g_normal_head, Module::g_z_head})
        out.insert(out.end(), params(m).begin(), params(m).end());
    return out;
}

std::vector<Param> NetworkBundle::all_params() const {
    std::vector<Param> out;
    for (const auto& ps : modules_) out.insert(out.end(), ps.begin(), ps.end());
    return out;
}

Var* NetworkBundle::find(const std::string& name) {
    for (auto& ps : modules_)
        for (auto& p : ps)
            if (p.name == name) return &p.var;
    return nullptr;
}

std::size_t NetworkBundle::parameter_count() const {
    std::size_t n = 0;
    for (const auto& ps : modules_)
        for (const auto& p : ps) n += p.var.value().numel();
    return n;
}

void NetworkBundle::copy_values_from(const NetworkBundle& other) {
    const auto src = other.all_params();
    auto dst = all_params();
    if (src.size() != dst.size()) throw std::invalid_argument("bundle layouts differ");
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (dst[i].name != src[i].name || dst[i].var.shape() != src[i].var.shape())
            throw std::invalid_argument("bundle layouts differ at " + dst[i].name);
        dst[i].var.mutable_value() = src[i].var.value();
    }
}

}  // namespace scgan::nn
