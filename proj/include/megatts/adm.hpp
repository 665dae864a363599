#pragma once

// Auto-regressive duration model (log-duration regression on the shared
// causal trunk) and the non-autoregressive convolutional duration predictor
// used as its ablation baseline.

#include "megatts/lm.hpp"

#include <vector>

namespace megatts {

// exp, round half up, clamp to >= 1.
int integerize_duration(Real log_duration);
std::vector<Real> log_durations(const std::vector<int>& durations);

class Adm {
public:
    Adm() = default;
    Adm(ParameterSet& ps, const LmConfig& cfg, Index cond_dim, Rng& rng);

    // log_durs: N ground-truth log durations (teacher forcing); content: N x
    // cond_dim phoneme condition. Row t predicts log_durs[t] from earlier
    // entries of its block. Returns N x 1.
    Tensor forward(const std::vector<Real>& log_durs, const Tensor& content, const BoolGrid& mask) const;
    // Mean squared error in log-duration space over all positions.
    Tensor loss(const std::vector<Real>& log_durs, const Tensor& content, const BoolGrid& mask) const;

    // Greedy autoregressive generation of one integer duration per target row.
    std::vector<int> generate(const std::vector<int>& prompt_durs, const Matrix& prompt_content,
                              const Matrix& target_content) const;

    Index max_context() const { return trunk.max_context(); }

    Tensor begin;  // 1 x d_model input at block starts
    Linear dur_proj;
    Linear cond_proj;
    CausalTrunk trunk;
    Linear head;
};

class AdmSession {
public:
    explicit AdmSession(const Adm& model);
    // Predicted log duration at the next position.
    Real next(const RowVector& content_row);
    void push(Real log_duration);
    void feed(const std::vector<Real>& log_durs, const Matrix& content);

private:
    const Adm* model_;
    CausalTrunk::Session session_;
    Tensor pending_;  // next input row before the condition is added
    bool awaiting_push_ = false;
};

// Two conv(3) -> GELU -> LayerNorm layers and a linear log-duration head,
// predicting each phoneme's duration from the content alone.
class DurationPredictor {
public:
    DurationPredictor() = default;
    DurationPredictor(ParameterSet& ps, Index cond_dim, Index hidden, Rng& rng);
    Tensor forward(const Tensor& content) const;
    Tensor loss(const std::vector<Real>& log_durs, const Tensor& content) const;
    std::vector<int> generate(const Matrix& content) const;

    Conv1d conv1, conv2;
    LayerNorm ln1, ln2;
    Linear head;
};

}  // namespace megatts
