#include "scgan/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace scgan::optim {

void AdamConfig::validate() const {
    if (!(alpha > 0.0)) throw std::invalid_argument("Adam step size must be positive");
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
        throw std::invalid_argument("Adam betas must lie in (0, 1)");
    if (!(eps > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

Adam::Adam(std::vector<nn::Param> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    cfg_.validate();
    for (const auto& p : params_) {
        m_.emplace_back(p.var.shape());
        v_.emplace_back(p.var.shape());
    }
}

void Adam::step(const std::vector<ag::Var>& grads) {
    if (grads.size() != params_.size()) throw std::invalid_argument("Adam: gradient count mismatch");
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        const Tensor& g = grads[i].value();
        Tensor& w = params_[i].var.mutable_value();
        if (g.shape() != w.shape()) throw std::invalid_argument("Adam: gradient shape mismatch for " + params_[i].name);
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (std::size_t k = 0; k < w.numel(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double update = cfg_.alpha * (m[k] / c1) / (std::sqrt(v[k] / c2) + cfg_.eps);
            w[k] = static_cast<double>(static_cast<float>(w[k] - update));
        }
    }
}

void Adam::restore(std::int64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
    if (m.size() != params_.size() || v.size() != params_.size()) throw std::invalid_argument("Adam: moment count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i)
        if (m[i].shape() != params_[i].var.shape() || v[i].shape() != params_[i].var.shape())
            throw std::invalid_argument("Adam: moment shape mismatch for " + params_[i].name);
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
}

}  // namespace scgan::optim
