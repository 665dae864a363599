#include "megatts/plm.hpp"

#include "megatts/errors.hpp"
#include "megatts/kernels.hpp"

namespace megatts {

Matrix pool_to_codes(const Matrix& frame_cond, Index hop) {
    NoGradGuard guard;
    return avg_pool_rows(Tensor(frame_cond), hop).value();
}

Plm::Plm(ParameterSet& ps, const LmConfig& cfg, Index codebook, Index cond_dim, Rng& rng) : codebook_(codebook) {
    code_embedding = Embedding(ps, "plm.embed", codebook + 1, cfg.d_model, rng);
    cond_proj = Linear(ps, "plm.cond", cond_dim, cfg.d_model, rng);
    trunk = CausalTrunk(ps, "plm", cfg, rng);
    head = Linear(ps, "plm.head", cfg.d_model, codebook, rng);
    // Near-uniform predictions at initialization.
    head.weight.mutable_value() *= 0.1;
}

Tensor Plm::logits(const std::vector<int>& codes, const Tensor& cond, const BoolGrid& mask) const {
    const Index t = static_cast<Index>(codes.size());
    if (cond.rows() != t) throw AlignmentError("plm: condition rows != code count");
    if (mask.rows() != t) throw DimensionError("plm: mask rows != code count");
    for (int c : codes) {
        if (c < 0 || c >= codebook_) throw VocabularyError("code " + std::to_string(c) + " outside codebook");
    }
    if (t > trunk.max_context()) throw ContextLengthError("plm: sequence exceeds max_context");
    const auto starts = block_starts(mask);
    std::vector<int> inputs(codes.size());
    for (std::size_t i = 0; i < codes.size(); ++i) {
        inputs[i] = starts[i] ? static_cast<int>(begin_token()) : codes[i - 1];
    }
    Tensor x = add(code_embedding(inputs), cond_proj(cond));
    return head(trunk(x, mask));
}

Tensor Plm::loss(const std::vector<int>& codes, const Tensor& cond, const BoolGrid& mask) const {
    return cross_entropy(logits(codes, cond, mask), codes);
}

Real Plm::accuracy(const std::vector<int>& codes, const Matrix& cond, const BoolGrid& mask, Index from) const {
    NoGradGuard guard;
    const Matrix l = logits(codes, Tensor(cond), mask).value();
    Index hit = 0, n = 0;
    for (Index t = from; t < l.rows(); ++t, ++n) hit += argmax(l.row(t)) == codes[static_cast<std::size_t>(t)];
    if (n == 0) throw PreconditionError("accuracy over an empty range");
    return static_cast<Real>(hit) / static_cast<Real>(n);
}

std::vector<int> Plm::generate(const std::vector<int>& prompt_codes, const Matrix& prompt_cond,
                               const Matrix& target_cond) const {
    if (static_cast<Index>(prompt_codes.size()) + target_cond.rows() > max_context()) {
        throw ContextLengthError("plm: prompt + target exceed max_context");
    }
    PlmSession s(*this);
    s.feed(prompt_codes, prompt_cond);
    std::vector<int> out;
    for (Index t = 0; t < target_cond.rows(); ++t) {
        const int token = static_cast<int>(argmax(s.next(target_cond.row(t))));
        s.push(token);
        out.push_back(token);
    }
    return out;
}

ProsodyCodeSeq Plm::generate(const ProsodyCodeSeq& prompt, const CondSeq& prompt_cond,
                             const CondSeq& target_cond) const {
    if (code_count(prompt_cond.frames(), prompt.hop) != static_cast<Index>(prompt.size())) {
        throw AlignmentError("plm: prompt codes do not cover the prompt condition");
    }
    return {generate(prompt.codes, pool_to_codes(prompt_cond, prompt.hop), pool_to_codes(target_cond, prompt.hop)),
            prompt.hop};
}

PlmSession::PlmSession(const Plm& model)
    : model_(&model), session_(model.trunk.start()), pending_(static_cast<int>(model.begin_token())) {}

RowVector PlmSession::next_logits(const RowVector& cond_row) {
    if (awaiting_push_) throw ContractError("plm session: push the previous code before scoring the next");
    NoGradGuard guard;
    Tensor x = add(model_->code_embedding({pending_}), model_->cond_proj(Tensor(cond_row)));
    RowVector l = model_->head(model_->trunk.step(x, session_)).value();
    awaiting_push_ = true;
    return l;
}

RowVector PlmSession::next(const RowVector& cond_row) { return softmax_rows(next_logits(cond_row)); }

void PlmSession::push(int code) {
    if (!awaiting_push_) throw ContractError("plm session: no scored position to commit");
    if (code < 0 || code >= model_->codebook()) throw VocabularyError("code outside codebook");
    pending_ = code;
    awaiting_push_ = false;
}

void PlmSession::feed(const std::vector<int>& codes, const Matrix& cond) {
    if (cond.rows() != static_cast<Index>(codes.size())) throw AlignmentError("prompt condition rows != codes");
    for (std::size_t i = 0; i < codes.size(); ++i) {
        next(cond.row(static_cast<Index>(i)));
        push(codes[i]);
    }
}

}  // namespace megatts
