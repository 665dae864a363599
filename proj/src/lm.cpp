#include "megatts/lm.hpp"

#include "megatts/errors.hpp"
#include "megatts/kernels.hpp"

namespace megatts {

std::vector<bool> block_starts(const BoolGrid& mask) {
    std::vector<bool> s(static_cast<std::size_t>(mask.rows()));
    for (Index t = 0; t < mask.rows(); ++t) s[static_cast<std::size_t>(t)] = t == 0 || !mask(t, t - 1);
    return s;
}

std::vector<Index> block_positions(const BoolGrid& mask) {
    std::vector<Index> pos(static_cast<std::size_t>(mask.rows()));
    Index p = 0;
    for (Index t = 0; t < mask.rows(); ++t) {
        p = (t == 0 || !mask(t, t - 1)) ? 0 : p + 1;
        pos[static_cast<std::size_t>(t)] = p;
    }
    return pos;
}

void check_block_causal(const BoolGrid& mask) {
    if (mask.rows() != mask.cols()) throw ContractError("attention mask must be square");
    const auto pos = block_positions(mask);
    for (Index t = 0; t < mask.rows(); ++t) {
        const Index start = t - pos[static_cast<std::size_t>(t)];
        for (Index j = 0; j < mask.cols(); ++j) {
            if (mask(t, j) != (j >= start && j <= t)) {
                throw ContractError("mask is not speaker-block causal at (" + std::to_string(t) + ", " +
                                    std::to_string(j) + ")");
            }
        }
    }
}

CausalTrunk::CausalTrunk(ParameterSet& ps, const std::string& prefix, const LmConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.conv_kernel != 1) throw ParameterError("causal trunk needs a position-wise feed-forward");
    for (int i = 0; i < cfg.layers; ++i) {
        blocks.emplace_back(ps, prefix + ".block" + std::to_string(i), cfg.d_model, cfg.heads,
                            cfg.ffn_mult * cfg.d_model, cfg.conv_kernel, rng);
    }
    final_norm = LayerNorm(ps, prefix + ".ln", cfg.d_model);
}

Tensor CausalTrunk::operator()(const Tensor& x, const BoolGrid& mask) const {
    if (x.rows() > cfg_.max_context) {
        throw ContextLengthError("sequence of " + std::to_string(x.rows()) + " exceeds max_context " +
                                 std::to_string(cfg_.max_context));
    }
    if (mask.rows() != x.rows()) throw DimensionError("mask rows != sequence length");
    check_block_causal(mask);
    Tensor h = add(x, Tensor(sinusoidal_positions(block_positions(mask), cfg_.d_model)));
    for (const auto& b : blocks) h = b(h, mask);
    return final_norm(h);
}

CausalTrunk::Session CausalTrunk::start() const {
    Session s;
    s.caches.resize(blocks.size());
    return s;
}

Tensor CausalTrunk::step(const Tensor& x_row, Session& session) const {
    if (session.position >= cfg_.max_context) {
        throw ContextLengthError("decoding past max_context " + std::to_string(cfg_.max_context));
    }
    Tensor h = add(x_row, Tensor(sinusoidal_positions(std::vector<Index>{session.position}, cfg_.d_model)));
    for (std::size_t i = 0; i < blocks.size(); ++i) h = blocks[i].step(h, session.caches[i]);
    ++session.position;
    return final_norm(h);
}

}  // namespace megatts
