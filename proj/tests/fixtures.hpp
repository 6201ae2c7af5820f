#pragma once

// Shared helpers for network and loss tests.

#include <functional>
#include <random>
#include <vector>

#include "gradcheck.hpp"
#include "scgan/networks.hpp"
#include "scgan/rng.hpp"

namespace scgan::testing {

// Every network stays under 500 parameters; inputs are 4x4.
inline nn::NetworkConfig tiny_config() {
    nn::NetworkConfig c;
    c.resolution = 4;
    c.appearance_dim = 2;
    c.gen_channels = 2;
    c.resnet_blocks = 1;
    c.disc_channels = 2;
    c.disc_max_channels = 4;
    c.dz_hidden = 4;
    return c;
}

inline Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    Tensor t(std::move(s));
    for (auto& v : t.storage()) v = u(rng);
    return t;
}

// Unit vectors with a zero background border, shaped [B, 3, m, m].
inline Tensor random_normals(int batch, int m, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    Tensor t({batch, 3, m, m});
    const int plane = m * m;
    for (int b = 0; b < batch; ++b)
        for (int y = 1; y < m - 1; ++y)
            for (int x = 1; x < m - 1; ++x) {
                double v[3] = {g(rng), g(rng), std::abs(g(rng)) + 0.5};
                const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
                for (int c = 0; c < 3; ++c) t[(b * 3 + c) * plane + y * m + x] = v[c] / n;
            }
    return t;
}

// Relative error between autodiff and central differences over a parameter set.
// Two-channel pixel normalization is strongly curved, hence the small step.
inline double params_grad_error(const std::vector<nn::Param>& params, const std::function<ag::Var()>& loss,
                                double h = 1e-6) {
    std::vector<ag::Var> vars;
    for (const auto& p : params) vars.push_back(p.var);
    const auto grads = ag::grad(loss(), vars);
    std::vector<double> analytic, numeric;
    for (std::size_t i = 0; i < vars.size(); ++i) {
        const auto& g = grads[i].value().storage();
        analytic.insert(analytic.end(), g.begin(), g.end());
        const auto n = numeric_grad(vars[i], [&] { return loss().item(); }, h);
        numeric.insert(numeric.end(), n.begin(), n.end());
    }
    return relative_error(analytic, numeric);
}

}  // namespace scgan::testing
