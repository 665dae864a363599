#pragma once

// First-stage model: prosody VQ encoder, MRTE, and mel decoder trained
// jointly on reconstruction.

#include "megatts/config.hpp"
#include "megatts/corpus.hpp"
#include "megatts/mrte.hpp"
#include "megatts/vqvae.hpp"

#include <vector>

namespace megatts {

struct VqExample {
    const Utterance* target = nullptr;
    TimbreRefSet refs;
};

struct VqLosses {
    Tensor total;
    Real recon_l1 = 0.0;
    Real codebook = 0.0;
    Real commit = 0.0;
};

class VqTtsModel {
public:
    VqTtsModel(const RunConfig& cfg, std::uint64_t seed);
    VqTtsModel(const VqTtsModel&) = delete;
    VqTtsModel& operator=(const VqTtsModel&) = delete;

    struct Encoded {
        Tensor pre_quant;
        ProsodyCodeSeq codes;
    };
    Encoded encode_prosody(const Matrix& mel) const;
    ProsodyCodeSeq encode_codes(const Matrix& mel) const;

    // Decoding from code indices. Throws AlignmentError when the codes do
    // not cover cond.frames() within one hop.
    Matrix decode_mel(const ProsodyCodeSeq& codes, const CondSeq& cond) const;
    Tensor decode(const Tensor& quantized, const CondSeq& cond) const { return decoder(quantized, cond.hidden); }

    // Mean over examples of recon L1 + codebook + commitment terms.
    VqLosses loss(const std::vector<VqExample>& batch) const;
    // Reconstruction with the model's own codes (no gradient).
    Matrix reconstruct(const Utterance& target, const TimbreRefSet& refs) const;

    const RunConfig& config() const { return cfg_; }
    Index hop() const { return cfg_.vq.hop; }

    ParameterSet params;
    ProsodyEncoder encoder;
    Codebook codebook;
    Mrte mrte;
    MelDecoder decoder;

private:
    RunConfig cfg_;
};

}  // namespace megatts
