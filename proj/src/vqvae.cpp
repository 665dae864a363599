#include "megatts/vqvae.hpp"

#include "megatts/errors.hpp"
#include "megatts/kernels.hpp"

#include <cmath>

namespace megatts {

Codebook::Codebook(ParameterSet& ps, const std::string& name, Index size, Index dim, Rng& rng) {
    if (size < 2) throw ParameterError("codebook needs K >= 2");
    entries = ps.add(name, random_normal(size, dim, 1.0, rng));
}

QuantizeResult Codebook::quantize(const RowVector& h, Real beta) const {
    if (h.size() != dim()) throw DimensionError("quantize: vector width != code dim");
    QuantizeResult r;
    Real d2 = 0;
    r.index = nearest_entry(h, entries.value(), &d2);
    r.q = entries.value().row(r.index);
    r.codebook_loss = d2;
    r.commit_loss = beta * d2;
    return r;
}

QuantizedRows Codebook::quantize_rows(const Tensor& h, Real beta) const {
    if (h.cols() != dim()) throw DimensionError("quantize: width != code dim");
    QuantizedRows out;
    std::vector<Index> idx;
    for (Index r = 0; r < h.rows(); ++r) {
        idx.push_back(nearest_entry(h.value().row(r), entries.value()));
        out.indices.push_back(static_cast<int>(idx.back()));
    }
    Tensor selected = gather_rows(entries, idx);
    const Real rows = static_cast<Real>(h.rows());
    Tensor to_codes = sub(detach(h), selected);
    out.codebook_loss = scale(sum_all(mul(to_codes, to_codes)), 1.0 / rows);
    Tensor to_h = sub(h, detach(selected));
    out.commit_loss = scale(sum_all(mul(to_h, to_h)), beta / rows);
    out.quantized = straight_through(h, selected);
    return out;
}

void Codebook::init_from(const Matrix& vectors, Rng& rng) {
    if (vectors.rows() < 1 || vectors.cols() != dim()) throw DimensionError("codebook init: bad vector matrix");
    std::vector<Index> rows(static_cast<std::size_t>(vectors.rows()));
    for (Index i = 0; i < vectors.rows(); ++i) rows[static_cast<std::size_t>(i)] = i;
    const Real spread = std::sqrt((vectors.rowwise() - vectors.colwise().mean()).squaredNorm() /
                                  static_cast<Real>(vectors.size()));
    const Matrix noise = random_normal(size(), dim(), 0.01 * (spread > 0 ? spread : 1.0), rng);
    Matrix& e = entries.mutable_value();
    for (Index k = 0; k < size(); ++k) {
        const std::size_t pos = static_cast<std::size_t>(k % vectors.rows());
        if (pos == 0) {
            for (std::size_t i = rows.size() - 1; i > 0; --i) std::swap(rows[i], rows[rng() % (i + 1)]);
        }
        e.row(k) = vectors.row(rows[pos]) + noise.row(k);
    }
}

ProsodyEncoder::ProsodyEncoder(ParameterSet& ps, const VqConfig& cfg, Rng& rng)
    : hop(cfg.hop), bins(cfg.prosody_bins) {
    conv = Conv1d(ps, "penc.conv", cfg.prosody_bins, cfg.hidden, cfg.kernel, rng);
    down = Conv1d(ps, "penc.down", cfg.hidden, cfg.hidden, cfg.hop, rng, cfg.hop);
    proj = Linear(ps, "penc.proj", cfg.hidden, cfg.code_dim, rng);
}

Tensor ProsodyEncoder::operator()(const Matrix& mel) const {
    if (mel.rows() < hop) {
        throw InputTooShortError("prosody encoder needs at least " + std::to_string(hop) + " frames, got " +
                                 std::to_string(mel.rows()));
    }
    if (mel.cols() < bins) throw DimensionError("prosody encoder: mel has too few bins");
    Tensor x(mel.leftCols(bins));
    return proj(gelu(down(gelu(conv(x)))));
}

MelDecoder::MelDecoder(ParameterSet& ps, const VqConfig& cfg, Index cond_dim, Index bins, Rng& rng)
    : hop(cfg.hop) {
    Index in = cfg.code_dim + cond_dim;
    for (int i = 0; i < cfg.decoder_layers; ++i) {
        convs.emplace_back(ps, "dec.conv" + std::to_string(i), in, cfg.hidden, cfg.kernel, rng);
        in = cfg.hidden;
    }
    out = Linear(ps, "dec.out", in, bins, rng);
}

Tensor MelDecoder::operator()(const Tensor& quantized, const Tensor& cond) const {
    const Index frames = cond.rows();
    if (quantized.rows() != code_count(frames, hop)) {
        throw AlignmentError("decoder: " + std::to_string(quantized.rows()) + " codes cannot cover " +
                             std::to_string(frames) + " frames at hop " + std::to_string(hop));
    }
    std::vector<Index> up(static_cast<std::size_t>(frames));
    for (Index f = 0; f < frames; ++f) up[static_cast<std::size_t>(f)] = f / hop;
    Tensor x = concat_cols({gather_rows(quantized, up), cond});
    for (const auto& c : convs) x = gelu(c(x));
    return out(x);
}

}  // namespace megatts
