#include <doctest.h>

#include <cmath>
#include <numeric>

#include "fixtures.hpp"
#include "scgan/losses.hpp"

using namespace scgan;
using namespace scgan::loss;
using namespace scgan::testing;
using ag::Var;

namespace {

Var c(Tensor t) { return Var::constant(std::move(t)); }

Critic times_two() {
    return [](const Var& v) { return ag::scale(v, 2.0); };
}

// Linear critic a . x per sample with ||a|| = 1.
Critic unit_linear(int features) {
    Tensor a({features, 1});
    for (int i = 0; i < features; ++i) a[i] = (i % 2 ? -1.0 : 1.0) / std::sqrt(features);
    return [a](const Var& x) {
        const int b = x.dim(0);
        return ag::matmul(ag::reshape(x, {b, static_cast<int>(x.value().numel() / b)}), Var::constant(a));
    };
}

Critic constant_critic(double v) {
    return [v](const Var& x) { return Var::constant(Tensor({x.dim(0), 1}, v)); };
}

}  // namespace

TEST_CASE("critic loss hand case: D(v) = 2v, real 1, fake 0") {
    for (double e : {0.0, 0.3, 1.0}) {
        const auto r = critic_loss(times_two(), c(Tensor({1, 1}, 1.0)), c(Tensor({1, 1}, 0.0)), 10.0,
                                   Tensor({1}, e));
        CHECK(std::abs(r.loss.item() - 8.0) < 1e-9);
        CHECK(std::abs(r.adversarial + 2.0) < 1e-9);
        CHECK(std::abs(r.penalty - 1.0) < 1e-9);
    }
}

TEST_CASE("gradient penalty identities") {
    Rng rng(3);
    const Var real = c(random_tensor({4, 3, 4, 4}, 1)), fake = c(random_tensor({4, 3, 4, 4}, 2));
    const auto lin = critic_loss(unit_linear(48), real, fake, 10.0, rng);
    CHECK(std::abs(lin.penalty) < 1e-9);
    CHECK(std::abs(lin.loss.item() - lin.adversarial) < 1e-9);

    const auto flat = critic_loss(constant_critic(0.7), real, fake, 10.0, rng);
    CHECK(std::abs(flat.adversarial) < 1e-12);
    CHECK(std::abs(flat.loss.item() - 10.0) < 1e-9);
}

TEST_CASE("penalty gradient matches finite differences for a quadratic critic") {
    // D(x) = sum w_i x_i^2 has input gradient 2 w x, so the penalty depends on w.
    const Var w = Var::leaf(random_tensor({1, 3}, 4, 0.2, 0.9));
    const Critic d = [&](const Var& x) { return ag::sum_to(x * x * w, {x.dim(0), 1}); };
    const Var real = c(random_tensor({3, 3}, 5)), fake = c(random_tensor({3, 3}, 6));
    const Tensor eps = random_tensor({3}, 7, 0.0, 1.0);
    const auto loss = [&] { return critic_loss(d, real, fake, 10.0, eps).loss; };
    const auto analytic = ag::grad(loss(), {w})[0].value().storage();
    Var wv = w;
    const auto numeric = numeric_grad(wv, [&] { return loss().item(); });
    CHECK(relative_error(analytic, numeric) < 1e-6);
}

TEST_CASE("generator adversarial loss hand cases") {
    Tensor fake({2, 1});
    fake[0] = 0.5;
    fake[1] = 1.5;
    CHECK(std::abs(generator_adv_loss(times_two(), c(fake)).item() + 2.0) < 1e-9);

    const Var leaf = Var::leaf(fake);
    const Var zero = generator_adv_loss(constant_critic(0.0), leaf);
    CHECK(zero.item() == 0.0);
    const auto grads = ag::grad(zero, {leaf});
    for (double g : grads[0].value().values()) CHECK(g == 0.0);

    Tensor better = fake;
    better[0] += 1.0;
    CHECK(generator_adv_loss(times_two(), c(better)).item() < generator_adv_loss(times_two(), c(fake)).item());
}

TEST_CASE("critic loss is invariant to batch order") {
    const auto nb = nn::NetworkBundle::init(tiny_config(), 1);
    const Tensor real = random_tensor({5, 3, 4, 4}, 8), fake = random_tensor({5, 3, 4, 4}, 9);
    const Tensor eps = random_tensor({5}, 10, 0.0, 1.0);
    const std::vector<int> perm{3, 0, 4, 1, 2};
    Tensor pr = real, pf = fake, pe = eps;
    const int per = 48;
    for (int i = 0; i < 5; ++i) {
        pe[i] = eps[perm[i]];
        for (int k = 0; k < per; ++k) {
            pr[i * per + k] = real[perm[i] * per + k];
            pf[i * per + k] = fake[perm[i] * per + k];
        }
    }
    const Critic d = [&](const Var& x) { return nb.d_image(x); };
    const double a = critic_loss(d, c(real), c(fake), 10.0, eps).loss.item();
    const double b = critic_loss(d, c(pr), c(pf), 10.0, pe).loss.item();
    CHECK(std::abs(a - b) < 1e-9);
}

TEST_CASE("cycle terms vanish for exactly inverting generators") {
    // An "image" is the normal map stacked with the tiled appearance vector.
    const Generators g{[](const Var& z, const Var& n) {
                           return ag::concat1(n, ag::reshape(z, {z.dim(0), z.dim(1), 1, 1}));
                       },
                       [](const Var& img) {
                           const int b = img.dim(0);
                           return std::pair{ag::slice1(img, 0, 3), ag::reshape(ag::slice1(img, 3, 2), {b, 2})};
                       }};
    const Var n = c(random_tensor({3, 3, 1, 1}, 11)), z = c(random_tensor({3, 2}, 12));
    const Var images = g.g_image(c(random_tensor({3, 2}, 13)), c(random_tensor({3, 3, 1, 1}, 14)));
    const auto t = cycle_losses(g, images, n, z);
    CHECK(t.cyc_N.item() == 0.0);
    CHECK(t.cyc_I.item() == 0.0);
    CHECK(t.cyc_z.item() == 0.0);
}

TEST_CASE("constant offset in G_N gives cyc_N = c^2") {
    const double off = 0.3;
    const Generators g{[](const Var&, const Var& n) { return n; },
                       [off](const Var& img) {
                           return std::pair{ag::add_scalar(img, off), Var::constant(Tensor({img.dim(0), 2}))};
                       }};
    const Var n = c(random_tensor({2, 3, 4, 4}, 15)), z = c(random_tensor({2, 2}, 16));
    const auto t = cycle_losses(g, n, n, z);
    CHECK(std::abs(t.cyc_N.item() - off * off) < 1e-12);
    CHECK(std::abs(t.cyc_I.item() - off * off) < 1e-12);

    const Var raw = reconstruction_error(n, ag::add_scalar(n, off), false);
    CHECK(std::abs(raw.item() - 48 * off * off) < 1e-12);
}

TEST_CASE("cycle terms are non-negative for random networks") {
    for (std::uint64_t seed : {1, 2, 3}) {
        const auto nb = nn::NetworkBundle::init(tiny_config(), seed);
        const auto t = cycle_losses(Generators::from(nb), c(random_tensor({3, 3, 4, 4}, seed + 10)),
                                    c(random_normals(3, 4, seed + 20)), c(random_tensor({3, 2}, seed + 30)));
        CHECK(t.cyc_N.item() > 0.0);
        CHECK(t.cyc_I.item() > 0.0);
        CHECK(t.cyc_z.item() > 0.0);
    }
}

TEST_CASE("joint loss report reflects the weights") {
    const auto nb = nn::NetworkBundle::init(tiny_config(), 4);
    const Var images = c(random_tensor({3, 3, 4, 4}, 1)), normals = c(random_normals(3, 4, 2)),
              z = c(random_tensor({3, 2}, 3));
    const LossWeights w;
    CHECK(w.lambda_I == 1.0);
    CHECK(w.lambda_N == 1.0);
    CHECK(w.lambda_z == 10.0);
    CHECK(w.lambda_p == 10.0);

    const auto full = joint_generator_loss(Generators::from(nb), Critics::from(nb), images, normals, z, w);
    const auto& r = full.report;
    REQUIRE(r.adv_z.has_value());
    CHECK(std::abs(r.total - (r.adv_I + r.adv_N + *r.adv_z + 1.0 * r.cyc_N + 1.0 * r.cyc_I + 10.0 * r.cyc_z)) < 1e-9);

    const auto no_dz = joint_generator_loss(Generators::from(nb), Critics::from(nb, false), images, normals, z, w);
    CHECK_FALSE(no_dz.report.adv_z.has_value());
    CHECK_FALSE(no_dz.report.to_json().contains("adv_z"));
    const auto& q = no_dz.report;
    CHECK(std::abs(q.total - (q.adv_I + q.adv_N + q.cyc_N + q.cyc_I + 10.0 * q.cyc_z)) < 1e-9);
    CHECK(std::abs(q.total - (r.total - *r.adv_z)) < 1e-9);

    LossWeights zero_i = w;
    zero_i.lambda_I = 0.0;
    const auto ablated = joint_generator_loss(Generators::from(nb), Critics::from(nb), images, normals, z, zero_i);
    CHECK(ablated.report.cyc_I == doctest::Approx(r.cyc_I));
    CHECK(std::abs(ablated.report.total - (r.total - r.cyc_I)) < 1e-9);

    // The image reconstruction no longer reaches the G_I parameters through the total.
    const Generators only_recon_changes{[&](const Var& zz, const Var& nn_) {
                                            const Var out = nb.g_image(zz, nn_);
                                            return zz.node() == z.node() ? out : ag::scale(out, 0.5);
                                        },
                                        [&](const Var& img) { return nb.encode(img); }};
    const auto shifted = joint_generator_loss(only_recon_changes, Critics::from(nb), images, normals, z, zero_i);
    CHECK(shifted.report.cyc_I != doctest::Approx(ablated.report.cyc_I));
    CHECK(shifted.report.total == ablated.report.total);
}

TEST_CASE("non-finite terms are attributed") {
    const auto nb = nn::NetworkBundle::init(tiny_config(), 5);
    const Var images = c(random_tensor({2, 3, 4, 4}, 1)), normals = c(random_normals(2, 4, 2)),
              z = c(random_tensor({2, 2}, 3));
    Critics d = Critics::from(nb);
    d.d_z = constant_critic(std::nan(""));
    try {
        joint_generator_loss(Generators::from(nb), d, images, normals, z, LossWeights{});
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(e.term() == "adv_z");
    }
    try {
        critic_loss(constant_critic(INFINITY), images, images, 10.0, Tensor({2}, 0.5), "D_I");
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& e) {
        CHECK(e.term() == "D_I.real_score");
    }
    CHECK_THROWS_AS(critic_loss(times_two(), images, z, 10.0, Tensor({2}, 0.5)), std::invalid_argument);
    CHECK_THROWS_AS((LossWeights{-1.0, 1.0, 1.0, 1.0}.validate()), std::invalid_argument);
}

TEST_CASE("critic loss gradients match finite differences on the tiny networks") {
    const auto nb = nn::NetworkBundle::init(tiny_config(), 6);
    for (const char* net : {"d_image", "d_normal", "d_z"}) CHECK(nb.network_params(net).size() > 0);
    const Tensor eps = random_tensor({3}, 7, 0.0, 1.0);

    const Var real_i = c(random_tensor({3, 3, 4, 4}, 8)), fake_i = c(random_tensor({3, 3, 4, 4}, 9));
    const double e_i = params_grad_error(nb.network_params("d_image"), [&] {
        return critic_loss([&](const Var& x) { return nb.d_image(x); }, real_i, fake_i, 10.0, eps).loss;
    });
    const Var real_n = c(random_normals(3, 4, 10)), fake_n = c(random_normals(3, 4, 11));
    const double e_n = params_grad_error(nb.network_params("d_normal"), [&] {
        return critic_loss([&](const Var& x) { return nb.d_normal(x); }, real_n, fake_n, 10.0, eps).loss;
    });
    const Var real_z = c(random_tensor({3, 2}, 12)), fake_z = c(random_tensor({3, 2}, 13));
    const double e_z = params_grad_error(nb.network_params("d_z"), [&] {
        return critic_loss([&](const Var& x) { return nb.d_z(x); }, real_z, fake_z, 10.0, eps).loss;
    });
    CHECK(e_i <= 1e-4);
    CHECK(e_n <= 1e-4);
    CHECK(e_z <= 1e-4);
}

TEST_CASE("joint generator loss gradients match finite differences on the tiny networks") {
    const auto nb = nn::NetworkBundle::init(tiny_config(), 7);
    const Var images = c(random_tensor({2, 3, 4, 4}, 1)), normals = c(random_normals(2, 4, 2)),
              z = c(random_tensor({2, 2}, 3));
    const auto loss = [&] {
        return joint_generator_loss(Generators::from(nb), Critics::from(nb), images, normals, z, LossWeights{}).total;
    };
    CHECK(params_grad_error(nb.network_params("g_image"), loss) <= 1e-4);
    CHECK(params_grad_error(nb.network_params("g_normal"), loss) <= 1e-4);
    CHECK(params_grad_error(nb.params(nn::Module::g_z_head), loss) <= 1e-4);
}

TEST_CASE("every tiny network has at most 500 parameters") {
    const auto nb = nn::NetworkBundle::init(tiny_config(), 1);
    for (const char* net : {"g_image", "g_normal", "g_z", "d_image", "d_normal", "d_z"}) {
        std::size_t n = 0;
        for (const auto& p : nb.network_params(net)) n += p.var.value().numel();
        CHECK(n <= 500);
    }
}
