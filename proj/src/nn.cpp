#include "megatts/nn.hpp"

#include "megatts/errors.hpp"

#include <cmath>

namespace megatts {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 finalizer over (seed, stream).
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

Matrix random_normal(Index rows, Index cols, Real stddev, Rng& rng) {
    std::normal_distribution<Real> dist(0.0, stddev);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Tensor ParameterSet::add(const std::string& name, Matrix init) {
    if (contains(name)) throw ParameterError("duplicate parameter name: " + name);
    Tensor t(std::move(init), true);
    items_.emplace_back(name, t);
    return t;
}

std::vector<Tensor> ParameterSet::tensors() const {
    std::vector<Tensor> out;
    out.reserve(items_.size());
    for (const auto& [name, t] : items_) out.push_back(t);
    return out;
}

Tensor ParameterSet::at(const std::string& name) const {
    for (const auto& [n, t] : items_) {
        if (n == name) return t;
    }
    throw ParameterError("unknown parameter: " + name);
}

bool ParameterSet::contains(const std::string& name) const {
    for (const auto& item : items_) {
        if (item.first == name) return true;
    }
    return false;
}

Index ParameterSet::scalar_count() const {
    Index n = 0;
    for (const auto& item : items_) n += item.second.value().size();
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& item : items_) item.second.zero_grad();
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
    if (other.items_.size() != items_.size()) throw ParameterError("parameter count mismatch");
    for (std::size_t i = 0; i < items_.size(); ++i) {
        const auto& [name, src] = other.items_[i];
        auto& dst = items_[i].second;
        if (name != items_[i].first || src.rows() != dst.rows() || src.cols() != dst.cols()) {
            throw ParameterError("parameter layout mismatch at " + name);
        }
        dst.mutable_value() = src.value();
    }
}

Linear::Linear(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng, bool bias_on)
    : has_bias(bias_on) {
    weight = ps.add(name + ".w", random_normal(in, out, 1.0 / std::sqrt(static_cast<Real>(in)), rng));
    if (has_bias) bias = ps.add(name + ".b", Matrix::Zero(1, out));
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return has_bias ? add_row(y, bias) : y;
}

LayerNorm::LayerNorm(ParameterSet& ps, const std::string& name, Index dim) {
    gain = ps.add(name + ".g", Matrix::Ones(1, dim));
    bias = ps.add(name + ".b", Matrix::Zero(1, dim));
}

Conv1d::Conv1d(ParameterSet& ps, const std::string& name, Index in, Index out, Index k, Rng& rng, Index s)
    : kernel(k), stride(s) {
    if (stride > 1 && kernel != stride) throw ParameterError("strided conv needs kernel == stride");
    weight = ps.add(name + ".w", random_normal(kernel * in, out, 1.0 / std::sqrt(static_cast<Real>(kernel * in)), rng));
    bias = ps.add(name + ".b", Matrix::Zero(1, out));
}

Tensor Conv1d::operator()(const Tensor& x) const {
    if (stride == 1) {
        const Index left = (kernel - 1) / 2;
        return conv1d(x, weight, bias, kernel, 1, left, kernel - 1 - left);
    }
    const Index windows = (x.rows() + stride - 1) / stride;
    return conv1d(x, weight, bias, kernel, stride, 0, windows * stride - x.rows());
}

Embedding::Embedding(ParameterSet& ps, const std::string& name, Index vocab, Index dim, Rng& rng) {
    table = ps.add(name, random_normal(vocab, dim, 1.0 / std::sqrt(static_cast<Real>(dim)), rng));
}

MultiHeadAttention::MultiHeadAttention(ParameterSet& ps, const std::string& name, Index d_model, Index h,
                                       Rng& rng, Index d_kv)
    : heads(h) {
    if (h < 1 || d_model % h != 0) throw ParameterError("d_model must be divisible by heads");
    if (d_kv < 0) d_kv = d_model;
    wq = Linear(ps, name + ".q", d_model, d_model, rng);
    wk = Linear(ps, name + ".k", d_kv, d_model, rng);
    wv = Linear(ps, name + ".v", d_kv, d_model, rng);
    wo = Linear(ps, name + ".o", d_model, d_model, rng);
}

Tensor MultiHeadAttention::attend(const Tensor& q, const Tensor& k, const Tensor& v, const BoolGrid& mask) const {
    if (heads == 1) return wo(masked_attention(q, k, v, mask));
    const Index dh = q.cols() / heads;
    std::vector<Tensor> outs;
    outs.reserve(static_cast<std::size_t>(heads));
    for (Index h = 0; h < heads; ++h) {
        outs.push_back(masked_attention(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh),
                                        slice_cols(v, h * dh, dh), mask));
    }
    return wo(concat_cols(outs));
}

Tensor MultiHeadAttention::operator()(const Tensor& query_in, const Tensor& kv_in, const BoolGrid& mask) const {
    return attend(wq(query_in), wk(kv_in), wv(kv_in), mask);
}

TransformerBlock::TransformerBlock(ParameterSet& ps, const std::string& name, Index d_model, Index heads,
                                   Index ffn_dim, Index ffn_kernel, Rng& rng) {
    ln_attn = LayerNorm(ps, name + ".ln1", d_model);
    attn = MultiHeadAttention(ps, name + ".attn", d_model, heads, rng);
    ln_ffn = LayerNorm(ps, name + ".ln2", d_model);
    ffn_in = Conv1d(ps, name + ".ffn1", d_model, ffn_dim, ffn_kernel, rng);
    ffn_out = Conv1d(ps, name + ".ffn2", ffn_dim, d_model, 1, rng);
}

Tensor TransformerBlock::operator()(const Tensor& x, const BoolGrid& mask) const {
    Tensor normed = ln_attn(x);
    Tensor h = add(x, attn(normed, normed, mask));
    return add(h, ffn_out(gelu(ffn_in(ln_ffn(h)))));
}

Tensor TransformerBlock::step(const Tensor& x_row, KvCache& cache) const {
    if (ffn_in.kernel != 1) throw ParameterError("incremental decoding needs a position-wise feed-forward");
    Tensor normed = ln_attn(x_row);
    Tensor q = attn.wq(normed);
    const Matrix k_new = attn.wk(normed).value();
    const Matrix v_new = attn.wv(normed).value();
    const Index t = cache.keys.rows();
    cache.keys.conservativeResize(t + 1, k_new.cols());
    cache.values.conservativeResize(t + 1, v_new.cols());
    cache.keys.row(t) = k_new.row(0);
    cache.values.row(t) = v_new.row(0);
    BoolGrid all = BoolGrid::Constant(1, t + 1, true);
    Tensor h = add(x_row, attn.attend(q, Tensor(cache.keys), Tensor(cache.values), all));
    return add(h, ffn_out(gelu(ffn_in(ln_ffn(h)))));
}

}  // namespace megatts
