#pragma once

#include <cstdint>
#include <vector>

#include "scgan/networks.hpp"

namespace scgan::optim {

struct AdamConfig {
    double alpha = 1e-3;
    double beta1 = 0.5;
    double beta2 = 0.9;
    double eps = 1e-8;

    void validate() const;
};

// Adam over a fixed parameter list. Updated values are rounded to float32 so
// that the float32 checkpoint archive restores them exactly.
class Adam {
public:
    Adam(std::vector<nn::Param> params, AdamConfig cfg);

    // grads[i] matches params[i] in shape.
    void step(const std::vector<ag::Var>& grads);

    const std::vector<nn::Param>& params() const { return params_; }
    std::int64_t steps() const { return t_; }
    const std::vector<Tensor>& first_moments() const { return m_; }
    const std::vector<Tensor>& second_moments() const { return v_; }
    void restore(std::int64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

private:
    std::vector<nn::Param> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace scgan::optim
