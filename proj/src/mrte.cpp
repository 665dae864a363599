#include "megatts/mrte.hpp"

#include "megatts/errors.hpp"

namespace megatts {

Index TimbreRefSet::total_frames() const {
    Index n = 0;
    for (const auto& r : refs) n += r.rows();
    return n;
}

void TimbreRefSet::validate() const {
    if (refs.empty()) throw PreconditionError("timbre reference set is empty");
    for (const auto& r : refs) {
        if (r.rows() < 1) throw PreconditionError("empty reference mel");
        if (r.cols() != refs.front().cols()) throw PreconditionError("references disagree on bin count");
    }
}

std::vector<Index> length_regulator_index(const std::vector<int>& durations) {
    std::vector<Index> idx;
    for (std::size_t i = 0; i < durations.size(); ++i) {
        if (durations[i] < 1) throw AlignmentError("duration below 1 frame at phoneme " + std::to_string(i));
        idx.insert(idx.end(), static_cast<std::size_t>(durations[i]), static_cast<Index>(i));
    }
    return idx;
}

Mrte::Mrte(ParameterSet& ps, const MrteConfig& cfg, Index vocab, Index bins, Rng& rng)
    : use_attention(cfg.use_attention), d_model_(cfg.d_model), vocab_(vocab) {
    const Index d = cfg.d_model;
    phoneme_embedding = Embedding(ps, "mrte.phoneme", vocab, d, rng);
    for (int i = 0; i < cfg.content_layers; ++i) {
        content_blocks.emplace_back(ps, "mrte.content" + std::to_string(i), d, cfg.content_heads, 2 * d, cfg.kernel, rng);
    }
    content_norm = LayerNorm(ps, "mrte.content_ln", d);
    mel_conv1 = Conv1d(ps, "mrte.mel1", bins, d, cfg.kernel, rng);
    mel_conv2 = Conv1d(ps, "mrte.mel2", d, d, cfg.kernel, rng);
    if (use_attention) attention = MultiHeadAttention(ps, "mrte.attn", d, cfg.attention_heads, rng);
    global_conv1 = Conv1d(ps, "mrte.ge1", bins, cfg.d_global, cfg.kernel, rng);
    global_conv2 = Conv1d(ps, "mrte.ge2", cfg.d_global, cfg.d_global, cfg.kernel, rng);
    fuse = Linear(ps, "mrte.fuse", d + cfg.d_global, d, rng);
}

Tensor Mrte::mel_encode(const TimbreRefSet& refs) const {
    refs.validate();
    std::vector<Tensor> parts;
    for (const auto& r : refs.refs) parts.push_back(mel_conv2(gelu(mel_conv1(Tensor(r)))));
    return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

Tensor Mrte::content_encode(const std::vector<int>& phonemes) const {
    if (phonemes.empty()) throw PreconditionError("content encoder needs at least one phoneme");
    for (int p : phonemes) {
        if (p < 0 || p >= vocab_) throw VocabularyError("phoneme id " + std::to_string(p) + " outside vocabulary");
    }
    const Index n = static_cast<Index>(phonemes.size());
    std::vector<Index> pos(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
    Tensor x = add(phoneme_embedding(phonemes), Tensor(sinusoidal_positions(pos, d_model_)));
    const BoolGrid full = BoolGrid::Constant(n, n, true);
    for (const auto& block : content_blocks) x = block(x, full);
    return content_norm(x);
}

Tensor Mrte::mel_to_phoneme_attend(const Tensor& content, const Tensor& mel_hidden) const {
    if (mel_hidden.rows() < 1) throw PreconditionError("no reference frames to attend to");
    if (!use_attention) return content;
    const BoolGrid all = BoolGrid::Constant(content.rows(), mel_hidden.rows(), true);
    return add(content, attention(content, mel_hidden, all));
}

Matrix Mrte::attention_map(const Tensor& content, const Tensor& mel_hidden) const {
    if (!use_attention) throw PreconditionError("pool-only encoder has no attention");
    NoGradGuard guard;
    const BoolGrid all = BoolGrid::Constant(content.rows(), mel_hidden.rows(), true);
    return attention_weights(attention.wq(content).value(), attention.wk(mel_hidden).value(), all);
}

Tensor Mrte::global_features(const TimbreRefSet& refs) const {
    refs.validate();
    std::vector<Tensor> parts;
    for (const auto& r : refs.refs) parts.push_back(global_conv2(gelu(global_conv1(Tensor(r)))));
    return parts.size() == 1 ? parts.front() : concat_rows(parts);
}

Tensor Mrte::global_timbre(const TimbreRefSet& refs) const { return mean_rows(global_features(refs)); }

Tensor Mrte::phoneme_hidden(const Tensor& content, const TimbreRefSet& refs) const {
    Tensor readout = use_attention ? mel_to_phoneme_attend(content, mel_encode(refs)) : content;
    Tensor g = global_timbre(refs);
    return fuse(concat_cols({readout, repeat_row(g, content.rows())}));
}

Tensor Mrte::phoneme_hidden(const std::vector<int>& phonemes, const TimbreRefSet& refs) const {
    return phoneme_hidden(content_encode(phonemes), refs);
}

CondSeq Mrte::build_cond(const std::vector<int>& phonemes, const std::vector<int>& durations,
                         const TimbreRefSet& refs) const {
    if (durations.size() != phonemes.size()) {
        throw AlignmentError("build_cond: " + std::to_string(durations.size()) + " durations for " +
                             std::to_string(phonemes.size()) + " phonemes");
    }
    const auto idx = length_regulator_index(durations);
    return CondSeq{gather_rows(phoneme_hidden(phonemes, refs), idx)};
}

}  // namespace megatts
