#pragma once

// Prosody language model: autoregressive next-code prediction conditioned on
// the spectrogram-level condition pooled to code rate.

#include "megatts/lm.hpp"
#include "megatts/mrte.hpp"
#include "megatts/vqvae.hpp"

namespace megatts {

// Average-pools a frame-rate condition to one row per code.
Matrix pool_to_codes(const Matrix& frame_cond, Index hop);
inline Matrix pool_to_codes(const CondSeq& cond, Index hop) { return pool_to_codes(cond.hidden.value(), hop); }

class Plm {
public:
    Plm() = default;
    Plm(ParameterSet& ps, const LmConfig& cfg, Index codebook, Index cond_dim, Rng& rng);

    // codes: T ids; cond: T x cond_dim (code rate); mask: block causal.
    // Row t scores codes[t] given earlier codes of its block (begin token at
    // block starts) and cond[t].
    Tensor logits(const std::vector<int>& codes, const Tensor& cond, const BoolGrid& mask) const;
    // Mean next-code cross entropy over every position.
    Tensor loss(const std::vector<int>& codes, const Tensor& cond, const BoolGrid& mask) const;
    // Fraction of positions whose argmax equals the code; `from` skips a prefix.
    Real accuracy(const std::vector<int>& codes, const Matrix& cond, const BoolGrid& mask, Index from = 0) const;

    // Greedy decoding of one code per target_cond row after a prompt prefix.
    std::vector<int> generate(const std::vector<int>& prompt_codes, const Matrix& prompt_cond,
                              const Matrix& target_cond) const;
    ProsodyCodeSeq generate(const ProsodyCodeSeq& prompt, const CondSeq& prompt_cond, const CondSeq& target_cond) const;

    Index codebook() const { return codebook_; }
    Index begin_token() const { return codebook_; }
    Index max_context() const { return trunk.max_context(); }

    Embedding code_embedding;  // codebook + 1 rows; the last is the begin token
    Linear cond_proj;
    CausalTrunk trunk;
    Linear head;

private:
    Index codebook_ = 0;
};

// Incremental decoding context: owns a private key/value cache over shared,
// read-only model parameters.
class PlmSession {
public:
    explicit PlmSession(const Plm& model);
    // Distribution of the next code given everything fed so far and the
    // condition row at the new position. Advances the context by one.
    RowVector next(const RowVector& cond_row);
    // Same step, returning raw logits.
    RowVector next_logits(const RowVector& cond_row);
    // Commits the code observed at the position last scored by next().
    void push(int code);
    // Feeds a prompt teacher-forced.
    void feed(const std::vector<int>& codes, const Matrix& cond);
    Index position() const { return session_.position; }

private:
    const Plm* model_;
    CausalTrunk::Session session_;
    int pending_;
    bool awaiting_push_ = false;
};

}  // namespace megatts
