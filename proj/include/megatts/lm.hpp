#pragma once

// Decoder-only transformer trunk shared by the prosody and duration
// language models: sinusoidal block-relative positions, pre-norm blocks with
// a position-wise feed-forward, final layer norm, and incremental decoding.

#include "megatts/config.hpp"
#include "megatts/nn.hpp"

#include <vector>

namespace megatts {

// Position t starts a block when it cannot see t - 1.
std::vector<bool> block_starts(const BoolGrid& mask);
// Offset of each position from the start of its block.
std::vector<Index> block_positions(const BoolGrid& mask);
// Throws ContractError unless mask is square and block causal: every row
// sees itself, nothing ahead, and exactly a contiguous run ending at itself.
void check_block_causal(const BoolGrid& mask);

class CausalTrunk {
public:
    CausalTrunk() = default;
    CausalTrunk(ParameterSet& ps, const std::string& prefix, const LmConfig& cfg, Rng& rng);

    // x: T x d_model input embeddings (positions are added here).
    Tensor operator()(const Tensor& x, const BoolGrid& mask) const;

    // Incremental decoding over a single block.
    struct Session {
        std::vector<KvCache> caches;
        Index position = 0;
    };
    Session start() const;
    Tensor step(const Tensor& x_row, Session& session) const;

    Index d_model() const { return cfg_.d_model; }
    Index max_context() const { return cfg_.max_context; }

    std::vector<TransformerBlock> blocks;
    LayerNorm final_norm;

private:
    LmConfig cfg_;
};

}  // namespace megatts
