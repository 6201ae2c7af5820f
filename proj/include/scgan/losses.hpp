#pragma once

// Wasserstein critic loss with gradient penalty, generator adversarial loss,
// cycle-consistency terms and the joint generator objective.

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "scgan/autograd.hpp"
#include "scgan/networks.hpp"
#include "scgan/rng.hpp"

namespace scgan::loss {

using ag::Var;

struct LossWeights {
    double lambda_I = 1.0;
    double lambda_N = 1.0;
    double lambda_z = 10.0;
    double lambda_p = 10.0;

    void validate() const;
};

// Raised when a loss term evaluates to NaN or infinity; term() names it.
class NonFiniteError : public std::runtime_error {
public:
    explicit NonFiniteError(const std::string& term);
    const std::string& term() const { return term_; }

private:
    std::string term_;
};

// Maps a batch to per-sample scores [B, 1] (any shape with B leading rows).
using Critic = std::function<Var(const Var&)>;

struct CriticLoss {
    Var loss;            // adversarial + lambda_p * penalty, differentiable in critic params
    double adversarial;  // mean D(fake) - mean D(real)
    double penalty;      // mean (||grad D(x_hat)|| - 1)^2
};

// eps holds one interpolation weight per sample: x_hat = eps * fake + (1 - eps) * real.
CriticLoss critic_loss(const Critic& d, const Var& real, const Var& fake, double lambda_p, const Tensor& eps,
                       const std::string& term = "critic");
// Draws eps ~ U[0, 1] per sample from rng.
CriticLoss critic_loss(const Critic& d, const Var& real, const Var& fake, double lambda_p, Rng& rng,
                       const std::string& term = "critic");

// -mean D(fake).
Var generator_adv_loss(const Critic& d, const Var& fake, const std::string& term = "generator");

// Squared error per sample, divided by the per-sample element count when
// normalize is set, averaged over the batch.
Var reconstruction_error(const Var& target, const Var& recon, bool normalize = true);

struct Generators {
    std::function<Var(const Var& z, const Var& normals)> g_image;
    // Image -> (normal map, appearance vector).
    std::function<std::pair<Var, Var>(const Var& image)> encode;

    static Generators from(const nn::NetworkBundle& nb);
};

struct Critics {
    Critic d_image, d_normal;
    Critic d_z;  // empty when the appearance critic is disabled

    static Critics from(const nn::NetworkBundle& nb, bool use_dz = true);
};

struct CycleTerms {
    Var cyc_N, cyc_I, cyc_z;
};

CycleTerms cycle_losses(const Generators& g, const Var& images, const Var& normals, const Var& z,
                        bool normalize = true);

struct LossReport {
    double adv_I = 0, adv_N = 0;
    std::optional<double> adv_z;
    double cyc_N = 0, cyc_I = 0, cyc_z = 0;
    double gp_I = 0, gp_N = 0;
    std::optional<double> gp_z;
    double critic_I = 0, critic_N = 0;
    std::optional<double> critic_z;
    double total = 0;  // joint generator objective

    // Fields absent for a disabled appearance critic are omitted.
    nlohmann::ordered_json to_json() const;
};

struct JointLoss {
    Var total;
    LossReport report;
};

// Sum of the three generator adversarial terms and the weighted cycle terms.
// A zero lambda_I keeps the image cycle out of the graph; its value is still reported.
JointLoss joint_generator_loss(const Generators& g, const Critics& d, const Var& images, const Var& normals,
                               const Var& z, const LossWeights& w, bool normalize_cycle = true);

}  // namespace scgan::loss
