#include "scgan/losses.hpp"

#include <cmath>
#include <random>

namespace scgan::loss {

void LossWeights::validate() const {
    for (double v : {lambda_I, lambda_N, lambda_z, lambda_p})
        if (!std::isfinite(v) || v < 0.0) throw std::invalid_argument("loss weights must be finite and non-negative");
}

NonFiniteError::NonFiniteError(const std::string& term)
    : std::runtime_error("non-finite value in loss term " + term), term_(term) {}

namespace {

double checked(const Var& v, const std::string& term) {
    if (!v.value().all_finite()) throw NonFiniteError(term);
    return v.item();
}

void check_tensor(const Var& v, const std::string& term) {
    if (!v.value().all_finite()) throw NonFiniteError(term);
}

}  // namespace

CriticLoss critic_loss(const Critic& d, const Var& real, const Var& fake, double lambda_p, const Tensor& eps,
                       const std::string& term) {
    if (real.shape() != fake.shape())
        throw std::invalid_argument(term + ": real " + shape_str(real.shape()) + " and fake " +
                                    shape_str(fake.shape()) + " shapes differ");
    const int b = real.dim(0);
    if (static_cast<int>(eps.numel()) != b) throw std::invalid_argument(term + ": need one eps per sample");
    const int per = static_cast<int>(real.value().numel() / b);

    const Var real_c = real.detach(), fake_c = fake.detach();
    const Var d_real = d(real_c), d_fake = d(fake_c);
    check_tensor(d_real, term + ".real_score");
    check_tensor(d_fake, term + ".fake_score");
    const Var adversarial = ag::mean_all(d_fake) - ag::mean_all(d_real);

    Tensor mixed = real.value();
    for (int i = 0; i < b; ++i)
        for (int k = 0; k < per; ++k) {
            const std::size_t j = static_cast<std::size_t>(i) * per + k;
            mixed[j] = eps[i] * fake.value()[j] + (1.0 - eps[i]) * real.value()[j];
        }
    const Var x_hat = Var::leaf(std::move(mixed));
    const Var d_hat = d(x_hat);
    check_tensor(d_hat, term + ".interpolate_score");
    const Var g = ag::grad(ag::sum_all(d_hat), {x_hat}, true)[0];
    const Var g2 = ag::sum_to(ag::reshape(g * g, {b, per}), {b, 1});
    const Var dev = ag::add_scalar(ag::safe_sqrt(g2), -1.0);
    const Var penalty = ag::mean_all(dev * dev);

    CriticLoss out{adversarial + ag::scale(penalty, lambda_p), checked(adversarial, term + ".adversarial"),
                   checked(penalty, term + ".penalty")};
    checked(out.loss, term);
    return out;
}

CriticLoss critic_loss(const Critic& d, const Var& real, const Var& fake, double lambda_p, Rng& rng,
                       const std::string& term) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Tensor eps({real.dim(0)});
    for (auto& e : eps.storage()) e = u(rng);
    return critic_loss(d, real, fake, lambda_p, eps, term);
}

Var generator_adv_loss(const Critic& d, const Var& fake, const std::string& term) {
    const Var loss = ag::neg(ag::mean_all(d(fake)));
    checked(loss, term);
    return loss;
}

Var reconstruction_error(const Var& target, const Var& recon, bool normalize) {
    if (target.shape() != recon.shape())
        throw std::invalid_argument("reconstruction shape " + shape_str(recon.shape()) + " differs from target " +
                                    shape_str(target.shape()));
    const Var diff = target - recon;
    const Var sq = diff * diff;
    return normalize ? ag::mean_all(sq) : ag::scale(ag::sum_all(sq), 1.0 / target.dim(0));
}

Generators Generators::from(const nn::NetworkBundle& nb) {
    return {[&nb](const Var& z, const Var& n) { return nb.g_image(z, n); },
            [&nb](const Var& img) { return nb.encode(img); }};
}

Critics Critics::from(const nn::NetworkBundle& nb, bool use_dz) {
    Critics c{[&nb](const Var& x) { return nb.d_image(x); }, [&nb](const Var& x) { return nb.d_normal(x); }, {}};
    if (use_dz) c.d_z = [&nb](const Var& x) { return nb.d_z(x); };
    return c;
}

CycleTerms cycle_losses(const Generators& g, const Var& images, const Var& normals, const Var& z, bool normalize) {
    const Var fake_image = g.g_image(z, normals);
    const auto [n_rec, z_rec] = g.encode(fake_image);
    const auto [n_hat, z_hat] = g.encode(images);
    const Var i_rec = g.g_image(z_hat, n_hat);
    return {reconstruction_error(normals, n_rec, normalize), reconstruction_error(images, i_rec, normalize),
            reconstruction_error(z, z_rec, normalize)};
}

nlohmann::ordered_json LossReport::to_json() const {
    nlohmann::ordered_json j;
    j["adv_I"] = adv_I;
    j["adv_N"] = adv_N;
    if (adv_z) j["adv_z"] = *adv_z;
    j["cyc_N"] = cyc_N;
    j["cyc_I"] = cyc_I;
    j["cyc_z"] = cyc_z;
    j["gp_I"] = gp_I;
    j["gp_N"] = gp_N;
    if (gp_z) j["gp_z"] = *gp_z;
    j["critic_I"] = critic_I;
    j["critic_N"] = critic_N;
    if (critic_z) j["critic_z"] = *critic_z;
    j["total"] = total;
    return j;
}

JointLoss joint_generator_loss(const Generators& g, const Critics& d, const Var& images, const Var& normals,
                               const Var& z, const LossWeights& w, bool normalize_cycle) {
    w.validate();
    JointLoss out;
    LossReport& r = out.report;

    const Var fake_image = g.g_image(z, normals);
    check_tensor(fake_image, "g_image");
    const auto [n_rec, z_rec] = g.encode(fake_image);
    const auto [n_hat, z_hat] = g.encode(images);
    check_tensor(n_hat, "g_normal");
    check_tensor(z_hat, "g_z");

    const Var adv_I = generator_adv_loss(d.d_image, fake_image, "adv_I");
    const Var adv_N = generator_adv_loss(d.d_normal, n_hat, "adv_N");
    const Var cyc_N = reconstruction_error(normals, n_rec, normalize_cycle);
    const Var cyc_z = reconstruction_error(z, z_rec, normalize_cycle);
    r.adv_I = adv_I.item();
    r.adv_N = adv_N.item();
    r.cyc_N = checked(cyc_N, "cyc_N");
    r.cyc_z = checked(cyc_z, "cyc_z");

    Var total = adv_I + adv_N + ag::scale(cyc_N, w.lambda_N) + ag::scale(cyc_z, w.lambda_z);
    if (d.d_z) {
        const Var adv_z = generator_adv_loss(d.d_z, z_hat, "adv_z");
        r.adv_z = adv_z.item();
        total = total + adv_z;
    }
    if (w.lambda_I > 0.0) {
        const Var cyc_I = reconstruction_error(images, g.g_image(z_hat, n_hat), normalize_cycle);
        r.cyc_I = checked(cyc_I, "cyc_I");
        total = total + ag::scale(cyc_I, w.lambda_I);
    } else {
        ag::NoGradGuard no_grad;
        const Var z_c = z_hat.detach(), n_c = n_hat.detach();
        r.cyc_I = checked(reconstruction_error(images, g.g_image(z_c, n_c), normalize_cycle), "cyc_I");
    }
    out.total = total;
    r.total = checked(total, "total");
    return out;
}

}  // namespace scgan::loss
