#pragma once

// Prosody VQ bottleneck: strided conv encoder, nearest-neighbour codebook,
// conv mel decoder.

#include "megatts/config.hpp"
#include "megatts/nn.hpp"

#include <vector>

namespace megatts {

struct ProsodyCodeSeq {
    std::vector<int> codes;
    int hop = 4;

    std::size_t size() const { return codes.size(); }
    bool operator==(const ProsodyCodeSeq&) const = default;
};

inline Index code_count(Index frames, Index hop) { return (frames + hop - 1) / hop; }

struct QuantizeResult {
    Index index = 0;
    RowVector q;
    Real codebook_loss = 0.0;  // ||sg(h) - e||^2
    Real commit_loss = 0.0;    // beta * ||h - sg(e)||^2
};

// Rows quantized together; losses are means over rows of the per-row terms.
struct QuantizedRows {
    std::vector<int> indices;
    Tensor quantized;  // forward value = codebook rows, gradient passes to h
    Tensor codebook_loss;
    Tensor commit_loss;
};

class Codebook {
public:
    Codebook() = default;
    Codebook(ParameterSet& ps, const std::string& name, Index size, Index dim, Rng& rng);

    Index size() const { return entries.rows(); }
    Index dim() const { return entries.cols(); }

    QuantizeResult quantize(const RowVector& h, Real beta) const;
    QuantizedRows quantize_rows(const Tensor& h, Real beta) const;
    // Replaces the entries with rows drawn from `vectors` (distinct rows while
    // they last) plus small noise, so every entry starts inside the data.
    void init_from(const Matrix& vectors, Rng& rng);

    Tensor entries;  // K x d
};

class ProsodyEncoder {
public:
    ProsodyEncoder() = default;
    ProsodyEncoder(ParameterSet& ps, const VqConfig& cfg, Rng& rng);

    // ceil(frames / hop) pre-quantization vectors. Throws InputTooShortError
    // when frames < hop.
    Tensor operator()(const Matrix& mel) const;

    Conv1d conv, down;
    Linear proj;
    Index hop = 4;
    Index bins = 8;
};

class MelDecoder {
public:
    MelDecoder() = default;
    MelDecoder(ParameterSet& ps, const VqConfig& cfg, Index cond_dim, Index bins, Rng& rng);

    // quantized: codes x d, cond: frames x cond_dim with codes == ceil(frames / hop).
    // Throws AlignmentError otherwise.
    Tensor operator()(const Tensor& quantized, const Tensor& cond) const;

    std::vector<Conv1d> convs;
    Linear out;
    Index hop = 4;
};

}  // namespace megatts
