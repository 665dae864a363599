#include "megatts/optim.hpp"

#include "megatts/errors.hpp"

#include <algorithm>
#include <cmath>

namespace megatts {

Real noam_rate(std::int64_t step, Index d_model, std::int64_t warmup, Real scale) {
    const Real s = static_cast<Real>(std::max<std::int64_t>(step, 1));
    const Real w = static_cast<Real>(std::max<std::int64_t>(warmup, 1));
    return scale * std::pow(static_cast<Real>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
}

Adam::Adam(const ParameterSet& params, AdamConfig config) : config_(config) {
    for (const auto& [name, t] : params.items()) {
        m_.push_back(Matrix::Zero(t.rows(), t.cols()));
        v_.push_back(Matrix::Zero(t.rows(), t.cols()));
    }
}

void Adam::step(ParameterSet& params, Real lr) {
    if (params.size() != m_.size()) throw ParameterError("optimizer state does not match parameters");
    Real clip = 1.0;
    if (config_.clip_norm > 0) {
        Real sq = 0.0;
        for (const auto& item : params.items()) {
            if (item.second.has_grad()) sq += item.second.grad().squaredNorm();
        }
        const Real norm = std::sqrt(sq);
        if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
    }
    ++t_;
    const Real c1 = 1.0 - std::pow(config_.beta1, static_cast<Real>(t_));
    const Real c2 = 1.0 - std::pow(config_.beta2, static_cast<Real>(t_));
    for (std::size_t i = 0; i < m_.size(); ++i) {
        Tensor p = params.items()[i].second;
        const Matrix g = p.grad() * clip;
        m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * g;
        v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * g.cwiseAbs2();
        Matrix update = ((m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + config_.eps)).matrix();
        if (config_.weight_decay != 0.0) update += config_.weight_decay * p.value();
        p.mutable_value() -= lr * update;
    }
}

}  // namespace megatts
