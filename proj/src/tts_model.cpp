#include "megatts/tts_model.hpp"

#include "megatts/errors.hpp"

namespace megatts {

VqTtsModel::VqTtsModel(const RunConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    Rng rng(seed);
    encoder = ProsodyEncoder(params, cfg.vq, rng);
    codebook = Codebook(params, "codebook", cfg.vq.codebook, cfg.vq.code_dim, rng);
    mrte = Mrte(params, cfg.mrte, cfg.corpus.vocab, cfg.corpus.bins, rng);
    decoder = MelDecoder(params, cfg.vq, cfg.mrte.d_model, cfg.corpus.bins, rng);
}

VqTtsModel::Encoded VqTtsModel::encode_prosody(const Matrix& mel) const {
    Encoded e;
    e.pre_quant = encoder(mel);
    e.codes.hop = cfg_.vq.hop;
    for (Index r = 0; r < e.pre_quant.rows(); ++r) {
        e.codes.codes.push_back(static_cast<int>(nearest_entry(e.pre_quant.value().row(r), codebook.entries.value())));
    }
    return e;
}

ProsodyCodeSeq VqTtsModel::encode_codes(const Matrix& mel) const {
    NoGradGuard guard;
    return encode_prosody(mel).codes;
}

Matrix VqTtsModel::decode_mel(const ProsodyCodeSeq& codes, const CondSeq& cond) const {
    NoGradGuard guard;
    if (codes.codes.empty()) throw AlignmentError("no codes to decode");
    std::vector<Index> idx;
    for (int c : codes.codes) {
        if (c < 0 || c >= codebook.size()) throw VocabularyError("code outside codebook");
        idx.push_back(c);
    }
    return decoder(gather_rows(codebook.entries, idx), cond.hidden).value();
}

VqLosses VqTtsModel::loss(const std::vector<VqExample>& batch) const {
    if (batch.empty()) throw PreconditionError("empty batch");
    std::vector<Tensor> recon, cb, commit;
    for (const auto& ex : batch) {
        const Utterance& u = *ex.target;
        Tensor h = encoder(u.mel);
        QuantizedRows q = codebook.quantize_rows(h, cfg_.vq.beta);
        CondSeq cond = mrte.build_cond(u.phonemes, u.durations, ex.refs);
        recon.push_back(l1(decoder(q.quantized, cond.hidden), Tensor(u.mel)));
        cb.push_back(q.codebook_loss);
        commit.push_back(q.commit_loss);
    }
    const Real inv = 1.0 / static_cast<Real>(batch.size());
    auto mean_of = [inv](const std::vector<Tensor>& xs) { return scale(sum_all(concat_rows(xs)), inv); };
    VqLosses out;
    Tensor r = mean_of(recon), c = mean_of(cb), m = mean_of(commit);
    out.total = add(add(r, c), m);
    out.recon_l1 = r.item();
    out.codebook = c.item();
    out.commit = m.item();
    return out;
}

Matrix VqTtsModel::reconstruct(const Utterance& target, const TimbreRefSet& refs) const {
    NoGradGuard guard;
    return decode_mel(encode_codes(target.mel), mrte.build_cond(target.phonemes, target.durations, refs));
}

}  // namespace megatts
