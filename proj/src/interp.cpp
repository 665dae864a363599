#include "megatts/interp.hpp"

#include "megatts/errors.hpp"
#include "megatts/kernels.hpp"

#include <cmath>

namespace megatts {

namespace {

void check_gamma(Real gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ParameterError("gamma must lie in [0, 1]");
}

}  // namespace

InterpSession::InterpSession(const Plm& model, const std::vector<PromptContext>& prompts, std::vector<Real> weights)
    : weights_(std::move(weights)) {
    if (prompts.empty() || prompts.size() != weights_.size()) {
        throw ParameterError("interpolation needs one weight per prompt context");
    }
    Real total = 0;
    for (Real w : weights_) {
        if (!(w >= 0.0 && w <= 1.0)) throw ParameterError("interpolation weights must lie in [0, 1]");
        total += w;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ParameterError("interpolation weights must sum to 1");
    for (const auto& p : prompts) {
        contexts_.emplace_back(model);
        contexts_.back().feed(p.codes, p.cond);
    }
}

InterpSession::InterpSession(const Plm& model, const PromptContext& flat, const PromptContext& rhy, Real gamma)
    : InterpSession(model, {flat, rhy}, {(check_gamma(gamma), gamma), 1.0 - gamma}) {}

InterpStep InterpSession::step(const RowVector& target_cond_row) {
    InterpStep s;
    for (std::size_t i = 0; i < contexts_.size(); ++i) {
        s.components.push_back(contexts_[i].next(target_cond_row));
        if (i == 0) s.p_mix = weights_[i] * s.components.back();
        else s.p_mix += weights_[i] * s.components.back();
    }
    s.token = static_cast<int>(argmax(s.p_mix));
    for (auto& c : contexts_) c.push(s.token);
    return s;
}

std::vector<int> interp_generate(const Plm& model, const PromptContext& flat, const PromptContext& rhy,
                                 const Matrix& target_cond, Real gamma) {
    check_gamma(gamma);
    if (target_cond.rows() < 1) throw PreconditionError("interpolation needs at least one step");
    for (const auto* p : {&flat, &rhy}) {
        if (static_cast<Index>(p->codes.size()) + target_cond.rows() > model.max_context()) {
            throw ContextLengthError("interpolation context exceeds max_context");
        }
    }
    InterpSession session(model, flat, rhy, gamma);
    std::vector<int> out;
    for (Index t = 0; t < target_cond.rows(); ++t) out.push_back(session.step(target_cond.row(t)).token);
    return out;
}

}  // namespace megatts
