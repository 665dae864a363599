#pragma once

#include "megatts/nn.hpp"

#include <cstdint>
#include <vector>

namespace megatts {

struct AdamConfig {
    Real beta1 = 0.9;
    Real beta2 = 0.98;
    Real eps = 1e-9;
    Real weight_decay = 0.0;
    Real clip_norm = 0.0;  // global gradient-norm clip; 0 disables
};

// Inverse-square-root schedule with linear warmup:
// scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5), step >= 1.
Real noam_rate(std::int64_t step, Index d_model, std::int64_t warmup, Real scale = 1.0);

class Adam {
public:
    Adam() = default;
    Adam(const ParameterSet& params, AdamConfig config);

    // Applies one update using the gradients currently held by `params`.
    void step(ParameterSet& params, Real lr);

    std::int64_t steps_taken() const { return t_; }
    const AdamConfig& config() const { return config_; }

    // Moment estimates in parameter registration order (for checkpoints).
    std::vector<Matrix>& first_moments() { return m_; }
    std::vector<Matrix>& second_moments() { return v_; }
    const std::vector<Matrix>& first_moments() const { return m_; }
    const std::vector<Matrix>& second_moments() const { return v_; }
    void set_steps_taken(std::int64_t t) { t_ = t; }

private:
    AdamConfig config_;
    std::vector<Matrix> m_, v_;
    std::int64_t t_ = 0;
};

}  // namespace megatts
