#pragma once

// Differentiable operations over Tensor. All shapes are rows x cols.

#include "megatts/tensor.hpp"

#include <vector>

namespace megatts {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, Real s);
// x (T x C) plus a 1 x C row broadcast over rows.
Tensor add_row(const Tensor& x, const Tensor& row);

Tensor gelu(const Tensor& x);  // tanh approximation
Tensor tanh(const Tensor& x);

Tensor softmax_rows(const Tensor& x);
Tensor log_softmax_rows(const Tensor& x);

// Per-row normalization with learned 1 x C gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps = 1e-5);

// Temporal convolution over rows. x is T x Cin, weight is (kernel*Cin) x Cout
// with row index j*Cin + c for tap j and channel c, bias is 1 x Cout.
// Output length is (T + pad_left + pad_right - kernel) / stride + 1.
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index kernel,
              Index stride, Index pad_left, Index pad_right);

// Row gather: out.row(i) = table.row(ids[i]). Serves embedding lookup and
// the length regulator.
Tensor gather_rows(const Tensor& table, const std::vector<Index>& ids);
Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);

Tensor slice_rows(const Tensor& x, Index start, Index count);
Tensor slice_cols(const Tensor& x, Index start, Index count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor repeat_row(const Tensor& row, Index times);

Tensor mean_rows(const Tensor& x);  // 1 x C temporal average
// Averages consecutive blocks of `hop` rows; the last block may be partial.
Tensor avg_pool_rows(const Tensor& x, Index hop);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

Tensor detach(const Tensor& x);
// Forward value of `quantized`, gradient routed to `h` unchanged.
Tensor straight_through(const Tensor& h, const Tensor& quantized);

// Scaled dot-product attention. Masked (false) positions get exactly zero
// weight. Throws ContractError when a query row has no permitted key.
Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolGrid& mask);
// Attention weights the op above would use, for inspection.
Matrix attention_weights(const Matrix& q, const Matrix& k, const BoolGrid& mask);

// Mean of -log softmax(logits)[target] over rows with weight > 0.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets,
                     const std::vector<Real>& weights = {});
Tensor mse(const Tensor& prediction, const Tensor& target);
Tensor l1(const Tensor& prediction, const Tensor& target);

}  // namespace megatts
