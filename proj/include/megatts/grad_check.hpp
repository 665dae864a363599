#pragma once

#include "megatts/nn.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace megatts {

struct GradCheckReport {
    Real max_rel_err = 0.0;
    // Max relative error per named parameter group.
    std::vector<std::pair<std::string, Real>> per_group;
};

// Compares the autodiff gradient of scalar `f` against a fourth-order
// central difference with step `eps` (valid range [1e-7, 1e-3]). Relative
// error per coordinate is |numeric - analytic| / max(|analytic|, 1e-8).
// Throws NumericError if f is non-finite anywhere it is evaluated.
Real grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, Real eps = 1e-3);

GradCheckReport grad_check(const std::function<Tensor()>& f, const ParameterSet& params, Real eps = 1e-3);

}  // namespace megatts
