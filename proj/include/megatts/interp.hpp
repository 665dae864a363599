#pragma once

// Prosody interpolation: several decoding contexts over one set of PLM
// parameters, mixed per step in probability space.

#include "megatts/plm.hpp"

#include <vector>

namespace megatts {

// A prompt prefix: codes and their code-rate condition rows.
struct PromptContext {
    std::vector<int> codes;
    Matrix cond;
};

struct InterpStep {
    int token = 0;
    RowVector p_mix;
    std::vector<RowVector> components;  // per-context distributions
};

class InterpSession {
public:
    // weights: a point on the simplex, one per prompt.
    InterpSession(const Plm& model, const std::vector<PromptContext>& prompts, std::vector<Real> weights);
    // Two-context form: gamma weights the flat prompt, 1 - gamma the rhythmic one.
    InterpSession(const Plm& model, const PromptContext& flat, const PromptContext& rhy, Real gamma);

    // Scores every context at the next position, mixes, commits the argmax
    // token to all contexts.
    InterpStep step(const RowVector& target_cond_row);

private:
    std::vector<PlmSession> contexts_;
    std::vector<Real> weights_;
};

// Repeated interpolation steps, one per target condition row (steps ==
// target_cond.rows()). Throws ParameterError when gamma is outside [0, 1].
std::vector<int> interp_generate(const Plm& model, const PromptContext& flat, const PromptContext& rhy,
                                 const Matrix& target_cond, Real gamma);

}  // namespace megatts
