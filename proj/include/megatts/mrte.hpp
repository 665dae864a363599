#pragma once

// Multi-reference timbre encoder. Phoneme-level content hidden states query
// the encoded reference mels; a pooled global timbre vector is concatenated;
// the length regulator expands the result to frame rate.

#include "megatts/config.hpp"
#include "megatts/nn.hpp"

#include <vector>

namespace megatts {

// Spectrogram-level condition carrying content and timbre.
struct CondSeq {
    Tensor hidden;  // frames x d_model
    Index frames() const { return hidden.rows(); }
};

// Reference mels from one speaker.
struct TimbreRefSet {
    std::vector<Matrix> refs;

    Index total_frames() const;
    void validate() const;  // non-empty, consistent bins
};

// Frame-rate row indices for the length regulator: phoneme i repeated
// durations[i] times. Throws AlignmentError on non-positive durations.
std::vector<Index> length_regulator_index(const std::vector<int>& durations);

class Mrte {
public:
    Mrte() = default;
    Mrte(ParameterSet& ps, const MrteConfig& cfg, Index vocab, Index bins, Rng& rng);

    // One row per reference frame. References are encoded one at a time
    // (convolution padding at each reference boundary) and concatenated.
    Tensor mel_encode(const TimbreRefSet& refs) const;
    Tensor content_encode(const std::vector<int>& phonemes) const;
    // Content queries, encoded mel keys/values; residual on the content.
    Tensor mel_to_phoneme_attend(const Tensor& content, const Tensor& mel_hidden) const;
    Matrix attention_map(const Tensor& content, const Tensor& mel_hidden) const;
    // Frame features before temporal pooling, then their mean.
    Tensor global_features(const TimbreRefSet& refs) const;
    Tensor global_timbre(const TimbreRefSet& refs) const;

    // Phoneme-level hidden states: project(concat(attend readout, g)).
    Tensor phoneme_hidden(const std::vector<int>& phonemes, const TimbreRefSet& refs) const;
    // Same, reusing an already computed content encoding.
    Tensor phoneme_hidden(const Tensor& content, const TimbreRefSet& refs) const;
    CondSeq build_cond(const std::vector<int>& phonemes, const std::vector<int>& durations,
                       const TimbreRefSet& refs) const;

    Index d_model() const { return d_model_; }

    Embedding phoneme_embedding;
    std::vector<TransformerBlock> content_blocks;
    LayerNorm content_norm;
    Conv1d mel_conv1, mel_conv2;
    MultiHeadAttention attention;
    Conv1d global_conv1, global_conv2;
    Linear fuse;
    bool use_attention = true;

private:
    Index d_model_ = 0;
    Index vocab_ = 0;
};

}  // namespace megatts
