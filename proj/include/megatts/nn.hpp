#pragma once

// Parameter containers and the layer vocabulary shared by every model.

#include "megatts/ops.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace megatts {

using Rng = std::mt19937_64;

// Independent, reproducible seed for a numbered stream derived from `seed`.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

Matrix random_normal(Index rows, Index cols, Real stddev, Rng& rng);

// Named, ordered trainable tensors. Order is registration order and defines
// checkpoint layout and optimizer state layout.
class ParameterSet {
public:
    Tensor add(const std::string& name, Matrix init);

    const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
    std::vector<Tensor> tensors() const;
    Tensor at(const std::string& name) const;
    bool contains(const std::string& name) const;
    std::size_t size() const { return items_.size(); }
    Index scalar_count() const;

    void zero_grad();
    // Copies values from `other`; names and shapes must agree.
    void copy_values_from(const ParameterSet& other);

private:
    std::vector<std::pair<std::string, Tensor>> items_;
};

class Linear {
public:
    Linear() = default;
    Linear(ParameterSet& ps, const std::string& name, Index in, Index out, Rng& rng, bool bias = true);
    Tensor operator()(const Tensor& x) const;

    Tensor weight, bias;
    bool has_bias = true;
};

class LayerNorm {
public:
    LayerNorm() = default;
    LayerNorm(ParameterSet& ps, const std::string& name, Index dim);
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gain, bias); }

    Tensor gain, bias;
};

// stride 1: "same" padding. stride > 1: kernel must equal stride and the
// input is right-padded to a whole number of windows.
class Conv1d {
public:
    Conv1d() = default;
    Conv1d(ParameterSet& ps, const std::string& name, Index in, Index out, Index kernel, Rng& rng,
           Index stride = 1);
    Tensor operator()(const Tensor& x) const;

    Tensor weight, bias;
    Index kernel = 1;
    Index stride = 1;
};

class Embedding {
public:
    Embedding() = default;
    Embedding(ParameterSet& ps, const std::string& name, Index vocab, Index dim, Rng& rng);
    Tensor operator()(const std::vector<int>& ids) const { return embedding_lookup(table, ids); }

    Tensor table;
};

// Projected keys/values of already-processed positions for one layer.
struct KvCache {
    Matrix keys;
    Matrix values;
};

class MultiHeadAttention {
public:
    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterSet& ps, const std::string& name, Index d_model, Index heads, Rng& rng,
                       Index d_kv = -1);

    Tensor operator()(const Tensor& query_in, const Tensor& kv_in, const BoolGrid& mask) const;
    // Attention over already-projected keys/values.
    Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const BoolGrid& mask) const;

    Linear wq, wk, wv, wo;
    Index heads = 1;
};

// Pre-norm transformer block. The feed-forward path is conv(kernel) -> GELU
// -> conv(1); kernel 1 makes it position-wise.
class TransformerBlock {
public:
    TransformerBlock() = default;
    TransformerBlock(ParameterSet& ps, const std::string& name, Index d_model, Index heads, Index ffn_dim,
                     Index ffn_kernel, Rng& rng);

    Tensor operator()(const Tensor& x, const BoolGrid& mask) const;
    // One new position appended to a single causal block. Requires ffn
    // kernel 1. Extends the cache with this position's keys and values.
    Tensor step(const Tensor& x_row, KvCache& cache) const;

    LayerNorm ln_attn, ln_ffn;
    MultiHeadAttention attn;
    Conv1d ffn_in, ffn_out;
};

}  // namespace megatts
