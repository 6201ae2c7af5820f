#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "scgan/networks.hpp"
#include "scgan/rng.hpp"

using namespace scgan;
using namespace scgan::nn;
using ag::Var;

namespace {

NetworkConfig small_config(int m = 32, int n = 8) {
    NetworkConfig c;
    c.resolution = m;
    c.appearance_dim = n;
    c.gen_channels = 4;
    c.resnet_blocks = 2;
    c.disc_channels = 4;
    c.disc_max_channels = 16;
    c.dz_hidden = 16;
    return c;
}

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.storage()) v = u(rng);
    return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

Tensor row(const Tensor& t, int i) {
    Shape s = t.shape();
    s[0] = 1;
    const std::size_t n = shape_numel(s);
    return Tensor(s, std::vector<double>(t.data() + i * n, t.data() + (i + 1) * n));
}

}  // namespace

TEST_CASE("generator output shape and range at 64x64 with n = 64") {
    NetworkConfig cfg = small_config(64, 64);
    const auto nb = NetworkBundle::init(cfg, 1);
    const Var z = Var::constant(random_tensor({2, 64}, 2));
    const Var n = Var::constant(random_tensor({2, 3, 64, 64}, 3));
    const Var img = nb.g_image(z, n);
    CHECK(img.shape() == Shape{2, 3, 64, 64});
    CHECK(img.value().all_finite());
    for (double v : img.value().values()) CHECK((v >= -1.0 && v <= 1.0));

    const Var z2 = Var::constant(random_tensor({2, 64}, 4));
    CHECK(max_abs_diff(nb.g_image(z2, n).value(), img.value()) > 0.0);
}

TEST_CASE("encoders share the trunk by aliasing") {
    const auto nb = NetworkBundle::init(small_config(), 5);
    const auto gn = nb.network_params("g_normal");
    const auto gz = nb.network_params("g_z");
    const auto trunk = nb.params(Module::trunk);
    REQUIRE(trunk.size() == 2 * kSharedTrunkBlocks);
    for (std::size_t i = 0; i < trunk.size(); ++i) {
        CHECK(gn[i].var.node() == trunk[i].var.node());
        CHECK(gz[i].var.node() == trunk[i].var.node());
    }
    const auto layout = module_layout(nb.config(), Module::trunk);
    CHECK(layout.blocks.size() == kSharedTrunkBlocks);
    for (const auto& b : layout.blocks) CHECK(b.kind == BlockKind::conv);
}

TEST_CASE("perturbing a trunk parameter moves both encoders, a head parameter only its own") {
    auto nb = NetworkBundle::init(small_config(), 6);
    const Var img = Var::constant(random_tensor({2, 3, 32, 32}, 7));
    const auto [n0, z0] = nb.encode(img);

    Var* shared = nb.find("trunk/conv2/w");
    REQUIRE(shared != nullptr);
    shared->mutable_value()[0] += 0.5;
    const auto [n1, z1] = nb.encode(img);
    CHECK(max_abs_diff(n0.value(), n1.value()) > 0.0);
    CHECK(max_abs_diff(z0.value(), z1.value()) > 0.0);
    shared->mutable_value()[0] -= 0.5;

    Var* head = nb.find("g_z_head/dense2/w");
    REQUIRE(head != nullptr);
    head->mutable_value()[3] += 0.5;
    const auto [n2, z2] = nb.encode(img);
    CHECK(n2.value().storage() == n0.value().storage());
    CHECK(max_abs_diff(z0.value(), z2.value()) > 0.0);
    CHECK(nb.g_normal(img).value().storage() == n0.value().storage());
}

TEST_CASE("a gradient step through g_normal changes g_z output") {
    auto nb = NetworkBundle::init(small_config(), 8);
    const Var img = Var::constant(random_tensor({1, 3, 32, 32}, 9));
    const Tensor z_before = nb.g_z(img).value();
    const auto params = nb.network_params("g_normal");
    std::vector<Var> vars;
    for (const auto& p : params) vars.push_back(p.var);
    const auto grads = ag::grad(ag::mean_all(nb.g_normal(img)), vars);
    for (std::size_t i = 0; i < vars.size(); ++i) {
        auto& v = vars[i].mutable_value();
        for (std::size_t k = 0; k < v.numel(); ++k) v[k] -= 0.1 * grads[i].value()[k];
    }
    CHECK(max_abs_diff(nb.g_z(img).value(), z_before) > 0.0);
}

TEST_CASE("normal head stays inside the unit ball and projects onto the sphere") {
    auto nb = NetworkBundle::init(small_config(), 10);
    const Var img = Var::constant(random_tensor({2, 3, 32, 32}, 11));
    for (double v : nb.g_normal(img).value().values()) CHECK(std::isfinite(v));
    auto norms = [](const Tensor& t) {
        std::vector<double> out;
        const int plane = t.dim(2) * t.dim(3);
        for (int b = 0; b < t.dim(0); ++b)
            for (int i = 0; i < plane; ++i) {
                const double* p = t.data() + b * 3 * plane + i;
                out.push_back(std::sqrt(p[0] * p[0] + p[plane] * p[plane] + p[2 * plane] * p[2 * plane]));
            }
        return out;
    };
    for (double r : norms(nb.g_normal(img).value())) CHECK(r <= 1.0 + 1e-12);

    // Large head weights push every pixel outside the ball.
    for (auto& p : nb.params(Module::g_normal_head))
        if (p.name.find("conv") != std::string::npos && p.name.ends_with("/w"))
            for (auto& v : p.var.mutable_value().storage()) v *= 1e4;
    for (double r : norms(nb.g_normal(img).value())) CHECK(std::abs(r - 1.0) < 1e-5);
}

TEST_CASE("critics score batches row by row") {
    const auto nb = NetworkBundle::init(small_config(), 12);
    const Tensor imgs = random_tensor({16, 3, 32, 32}, 13);
    const Tensor scores = nb.d_image(Var::constant(imgs)).value();
    CHECK(scores.shape() == Shape{16, 1});
    const Tensor nscores = nb.d_normal(Var::constant(imgs)).value();
    for (int i = 0; i < 16; ++i) {
        CHECK(std::abs(nb.d_image(Var::constant(row(imgs, i))).item() - scores[i]) < 1e-5);
        CHECK(std::abs(nb.d_normal(Var::constant(row(imgs, i))).item() - nscores[i]) < 1e-5);
    }
    CHECK(scores.all_finite());

    const Tensor zs = random_tensor({16, 8}, 14);
    const Tensor zscores = nb.d_z(Var::constant(zs)).value();
    CHECK(zscores.shape() == Shape{16, 1});
    for (int i = 0; i < 16; ++i) CHECK(std::abs(nb.d_z(Var::constant(row(zs, i))).item() - zscores[i]) < 1e-5);
    CHECK(std::isfinite(nb.d_z(Var::constant(Tensor({1, 8}))).item()));
}

TEST_CASE("pixel normalization gives unit second moment per position") {
    const Var x = Var::constant(random_tensor({2, 5, 4, 4}, 15, -3.0, 3.0));
    const Tensor y = pixel_norm(x).value();
    const int plane = 16;
    for (int b = 0; b < 2; ++b)
        for (int i = 0; i < plane; ++i) {
            double ms = 0;
            for (int c = 0; c < 5; ++c) ms += std::pow(y[(b * 5 + c) * plane + i], 2);
            CHECK(std::abs(ms / 5 - 1.0) < 1e-4);
        }
    const Tensor in = instance_norm(Var::constant(random_tensor({3, 7}, 16, -2, 5))).value();
    for (int b = 0; b < 3; ++b) {
        double s = 0, s2 = 0;
        for (int f = 0; f < 7; ++f) {
            s += in[b * 7 + f];
            s2 += in[b * 7 + f] * in[b * 7 + f];
        }
        CHECK(std::abs(s / 7) < 1e-9);
        CHECK(std::abs(s2 / 7 - 1.0) < 1e-3);
    }
}

TEST_CASE("initialization is a pure function of the seed") {
    const auto a = NetworkBundle::init(small_config(), 21);
    const auto b = NetworkBundle::init(small_config(), 21);
    const auto c = NetworkBundle::init(small_config(), 22);
    const auto pa = a.all_params(), pb = b.all_params(), pc = c.all_params();
    REQUIRE(pa.size() == pb.size());
    bool any_diff = false;
    std::set<std::string> names;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].name == pb[i].name);
        CHECK(pa[i].var.value().storage() == pb[i].var.value().storage());
        any_diff = any_diff || pa[i].var.value().storage() != pc[i].var.value().storage();
        names.insert(pa[i].name);
        for (double v : pa[i].var.value().values()) CHECK(static_cast<double>(static_cast<float>(v)) == v);
    }
    CHECK(any_diff);
    CHECK(names.size() == pa.size());
}

TEST_CASE("parameter count follows the block table") {
    const auto nb = NetworkBundle::init(small_config(), 1);
    CHECK(nb.parameter_count() == parameter_count(small_config()));
    std::size_t per_module = 0;
    for (Module m : kAllModules) per_module += parameter_count(small_config(), m);
    CHECK(per_module == nb.parameter_count());

    // Default table (m = 64, n = 64, widths 64/128/256, 4 ResNet blocks); see README.
    const NetworkConfig def;
    CHECK(def.downsamplings() == 2);
    CHECK(parameter_count(def, Module::trunk) == 1792 + 73856 + 295168 + 3 * 590080);
    CHECK(parameter_count(def) == 17873993);
}

TEST_CASE("shape mismatches are rejected") {
    const auto nb = NetworkBundle::init(small_config(), 1);
    CHECK_THROWS_AS(nb.g_image(Var::constant(Tensor({1, 7})), Var::constant(Tensor({1, 3, 32, 32}))),
                    std::invalid_argument);
    CHECK_THROWS_AS(nb.g_image(Var::constant(Tensor({2, 8})), Var::constant(Tensor({1, 3, 32, 32}))),
                    std::invalid_argument);
    CHECK_THROWS_AS(nb.g_normal(Var::constant(Tensor({1, 3, 16, 16}))), std::invalid_argument);
    CHECK_THROWS_AS(nb.d_image(Var::constant(Tensor({1, 4, 32, 32}))), std::invalid_argument);
    CHECK_THROWS_AS(nb.d_z(Var::constant(Tensor({1, 9}))), std::invalid_argument);
    NetworkConfig bad = small_config();
    bad.resolution = 48;
    CHECK_THROWS_AS(NetworkBundle::init(bad, 1), std::invalid_argument);
}
