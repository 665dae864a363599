#include "megatts/grad_check.hpp"

#include "megatts/errors.hpp"

#include <algorithm>
#include <cmath>

namespace megatts {

namespace {

Real eval(const std::function<Tensor()>& f) {
    NoGradGuard guard;
    const Real v = f().item();
    if (!std::isfinite(v)) throw NumericError("grad_check: objective is not finite");
    return v;
}

Real check_one(const std::function<Tensor()>& f, Tensor param, Real eps) {
    Real worst = 0.0;
    const Matrix analytic = param.grad();
    Matrix& value = param.mutable_value();
    for (Index i = 0; i < value.size(); ++i) {
        const Real original = value.data()[i];
        auto at = [&](Real offset) {
            value.data()[i] = original + offset;
            return eval(f);
        };
        const Real fp1 = at(eps), fm1 = at(-eps), fp2 = at(2 * eps), fm2 = at(-2 * eps);
        value.data()[i] = original;
        const Real numeric = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * eps);
        const Real g = analytic.data()[i];
        worst = std::max(worst, std::abs(numeric - g) / std::max(std::abs(g), 1e-8));
    }
    return worst;
}

void run_backward(const std::function<Tensor()>& f, const std::vector<Tensor>& params) {
    for (Tensor p : params) p.zero_grad();
    Tensor out = f();
    if (!std::isfinite(out.item())) throw NumericError("grad_check: objective is not finite");
    out.backward();
}

}  // namespace

Real grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, Real eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ParameterError("grad_check: eps must lie in [1e-7, 1e-3]");
    run_backward(f, params);
    Real worst = 0.0;
    for (const Tensor& p : params) worst = std::max(worst, check_one(f, p, eps));
    return worst;
}

GradCheckReport grad_check(const std::function<Tensor()>& f, const ParameterSet& params, Real eps) {
    if (!(eps >= 1e-7 && eps <= 1e-3)) throw ParameterError("grad_check: eps must lie in [1e-7, 1e-3]");
    const auto tensors = params.tensors();
    run_backward(f, tensors);
    GradCheckReport report;
    for (const auto& [name, t] : params.items()) {
        const Real err = check_one(f, t, eps);
        report.per_group.emplace_back(name, err);
        report.max_rel_err = std::max(report.max_rel_err, err);
    }
    return report;
}

}  // namespace megatts
