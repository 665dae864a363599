#include "megatts/ops.hpp"

#include "megatts/errors.hpp"

#include <cmath>
#include <numeric>
#include <string>

namespace megatts {

using detail::make_result;
using detail::Node;

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                             std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                             std::to_string(b.cols()));
    }
}

Node& parent(Node& n, std::size_t i) { return *n.parents[i]; }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.rows()) {
        throw DimensionError("matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                             std::to_string(b.rows()));
    }
    Matrix out = a.value() * b.value();
    return make_result("matmul", std::move(out), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad * pb.value.transpose());
        if (pb.requires_grad) pb.accumulate(pa.value.transpose() * n.grad);
    });
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    return make_result("add", a.value() + b.value(), {a, b}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(n.grad);
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    return make_result("sub", a.value() - b.value(), {a, b}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(-n.grad);
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    return make_result("mul", a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        Node& pa = parent(n, 0);
        Node& pb = parent(n, 1);
        if (pa.requires_grad) pa.accumulate(n.grad.cwiseProduct(pb.value));
        if (pb.requires_grad) pb.accumulate(n.grad.cwiseProduct(pa.value));
    });
}

Tensor scale(const Tensor& a, Real s) {
    return make_result("scale", a.value() * s, {a}, [s](Node& n) { parent(n, 0).accumulate(n.grad * s); });
}

Tensor add_row(const Tensor& x, const Tensor& row) {
    if (row.rows() != 1 || row.cols() != x.cols()) throw DimensionError("add_row: row must be 1 x cols");
    Matrix out = x.value().rowwise() + row.value().row(0);
    return make_result("add_row", std::move(out), {x, row}, [](Node& n) {
        parent(n, 0).accumulate(n.grad);
        parent(n, 1).accumulate(n.grad.colwise().sum());
    });
}

namespace {
constexpr Real kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr Real kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    const Real c = kGeluC;
    const Real a = kGeluA;
    const Matrix& v = x.value();
    Matrix inner = (c * (v.array() + a * v.array().cube())).matrix();
    Matrix th = inner.array().tanh().matrix();
    Matrix out = (0.5 * v.array() * (1.0 + th.array())).matrix();
    return make_result("gelu", std::move(out), {x}, [th = std::move(th), c, a](Node& n) {
        const Matrix& v = parent(n, 0).value;
        auto dinner = c * (1.0 + 3.0 * a * v.array().square());
        auto d = 0.5 * (1.0 + th.array()) + 0.5 * v.array() * (1.0 - th.array().square()) * dinner;
        parent(n, 0).accumulate((n.grad.array() * d).matrix());
    });
}

Tensor tanh(const Tensor& x) {
    Matrix out = x.value().array().tanh().matrix();
    return make_result("tanh", std::move(out), {x}, [](Node& n) {
        parent(n, 0).accumulate((n.grad.array() * (1.0 - n.value.array().square())).matrix());
    });
}

Tensor softmax_rows(const Tensor& x) {
    Matrix out = megatts::softmax_rows(x.value());
    return make_result("softmax", std::move(out), {x}, [](Node& n) {
        const Matrix& p = n.value;
        Eigen::VectorXd dot = (n.grad.cwiseProduct(p)).rowwise().sum();
        Matrix g = p.cwiseProduct((n.grad.colwise() - dot));
        parent(n, 0).accumulate(g);
    });
}

Tensor log_softmax_rows(const Tensor& x) {
    const Matrix& v = x.value();
    Matrix out(v.rows(), v.cols());
    for (Index r = 0; r < v.rows(); ++r) {
        const Real m = v.row(r).maxCoeff();
        const Real lse = m + std::log((v.row(r).array() - m).exp().sum());
        out.row(r) = v.row(r).array() - lse;
    }
    return make_result("log_softmax", std::move(out), {x}, [](Node& n) {
        Matrix p = n.value.array().exp().matrix();
        Eigen::VectorXd total = n.grad.rowwise().sum();
        Matrix g = n.grad - (p.array().colwise() * total.array()).matrix();
        parent(n, 0).accumulate(g);
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, Real eps) {
    const Index cols = x.cols();
    if (gain.rows() != 1 || gain.cols() != cols || bias.rows() != 1 || bias.cols() != cols) {
        throw DimensionError("layer_norm: gain/bias must be 1 x cols");
    }
    const Matrix& v = x.value();
    Eigen::VectorXd inv_std(v.rows());
    Matrix xhat(v.rows(), cols);
    for (Index r = 0; r < v.rows(); ++r) {
        const Real mu = v.row(r).mean();
        const Real var = (v.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (v.row(r).array() - mu) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += bias.value().row(0);
    return make_result("layer_norm", std::move(out), {x, gain, bias},
                       [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                           Node& px = parent(n, 0);
                           Node& pg = parent(n, 1);
                           Node& pb = parent(n, 2);
                           if (pg.requires_grad) pg.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
                           if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
                           if (px.requires_grad) {
                               Matrix dxhat = (n.grad.array().rowwise() * pg.value.row(0).array()).matrix();
                               Eigen::VectorXd mean_d = dxhat.rowwise().mean();
                               Eigen::VectorXd mean_dx = dxhat.cwiseProduct(xhat).rowwise().mean();
                               Matrix dx = dxhat;
                               dx.colwise() -= mean_d;
                               dx -= (xhat.array().colwise() * mean_dx.array()).matrix();
                               dx = (dx.array().colwise() * inv_std.array()).matrix();
                               px.accumulate(dx);
                           }
                       });
}

Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias, Index kernel, Index stride,
              Index pad_left, Index pad_right) {
    const Index t_in = x.rows();
    const Index c_in = x.cols();
    if (kernel < 1 || stride < 1 || pad_left < 0 || pad_right < 0) {
        throw DimensionError("conv1d: invalid kernel/stride/padding");
    }
    if (weight.rows() != kernel * c_in) throw DimensionError("conv1d: weight rows != kernel * in_channels");
    if (bias.rows() != 1 || bias.cols() != weight.cols()) throw DimensionError("conv1d: bias must be 1 x out");
    const Index padded = t_in + pad_left + pad_right;
    if (padded < kernel) throw DimensionError("conv1d: input shorter than kernel");
    const Index t_out = (padded - kernel) / stride + 1;

    Matrix cols = Matrix::Zero(t_out, kernel * c_in);
    const Matrix& v = x.value();
    for (Index t = 0; t < t_out; ++t) {
        for (Index j = 0; j < kernel; ++j) {
            const Index src = t * stride + j - pad_left;
            if (src >= 0 && src < t_in) cols.row(t).segment(j * c_in, c_in) = v.row(src);
        }
    }
    Matrix out = cols * weight.value();
    out.rowwise() += bias.value().row(0);
    return make_result("conv1d", std::move(out), {x, weight, bias},
                       [cols = std::move(cols), kernel, stride, pad_left, t_in, c_in](Node& n) {
                           Node& px = parent(n, 0);
                           Node& pw = parent(n, 1);
                           Node& pb = parent(n, 2);
                           if (pw.requires_grad) pw.accumulate(cols.transpose() * n.grad);
                           if (pb.requires_grad) pb.accumulate(n.grad.colwise().sum());
                           if (px.requires_grad) {
                               Matrix dcols = n.grad * pw.value.transpose();
                               Matrix dx = Matrix::Zero(t_in, c_in);
                               for (Index t = 0; t < dcols.rows(); ++t) {
                                   for (Index j = 0; j < kernel; ++j) {
                                       const Index src = t * stride + j - pad_left;
                                       if (src >= 0 && src < t_in) dx.row(src) += dcols.row(t).segment(j * c_in, c_in);
                                   }
                               }
                               px.accumulate(dx);
                           }
                       });
}

Tensor gather_rows(const Tensor& table, const std::vector<Index>& ids) {
    if (ids.empty()) throw DimensionError("gather_rows: empty index list");
    Matrix out(static_cast<Index>(ids.size()), table.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) throw DimensionError("gather_rows: index out of range");
        out.row(static_cast<Index>(i)) = table.value().row(ids[i]);
    }
    return make_result("gather_rows", std::move(out), {table}, [ids](Node& n) {
        Node& pt = parent(n, 0);
        Matrix g = Matrix::Zero(pt.value.rows(), pt.value.cols());
        for (std::size_t i = 0; i < ids.size(); ++i) g.row(ids[i]) += n.grad.row(static_cast<Index>(i));
        pt.accumulate(g);
    });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    std::vector<Index> rows(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table.rows()) {
            throw VocabularyError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                                  std::to_string(table.rows()));
        }
        rows[i] = ids[i];
    }
    return gather_rows(table, rows);
}

Tensor slice_rows(const Tensor& x, Index start, Index count) {
    if (start < 0 || count < 1 || start + count > x.rows()) throw DimensionError("slice_rows: out of range");
    Matrix out = x.value().middleRows(start, count);
    return make_result("slice_rows", std::move(out), {x}, [start, count](Node& n) {
        Node& px = parent(n, 0);
        Matrix g = Matrix::Zero(px.value.rows(), px.value.cols());
        g.middleRows(start, count) = n.grad;
        px.accumulate(g);
    });
}

Tensor slice_cols(const Tensor& x, Index start, Index count) {
    if (start < 0 || count < 1 || start + count > x.cols()) throw DimensionError("slice_cols: out of range");
    Matrix out = x.value().middleCols(start, count);
    return make_result("slice_cols", std::move(out), {x}, [start, count](Node& n) {
        Node& px = parent(n, 0);
        Matrix g = Matrix::Zero(px.value.rows(), px.value.cols());
        g.middleCols(start, count) = n.grad;
        px.accumulate(g);
    });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
    Index rows = 0;
    for (const auto& p : parts) {
        if (p.cols() != parts.front().cols()) throw DimensionError("concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, parts.front().cols());
    Index at = 0;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return make_result("concat_rows", std::move(out), parts, [](Node& n) {
        Index at = 0;
        for (auto& p : n.parents) {
            const Index r = p->value.rows();
            p->accumulate(n.grad.middleRows(at, r));
            at += r;
        }
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
    Index cols = 0;
    for (const auto& p : parts) {
        if (p.rows() != parts.front().rows()) throw DimensionError("concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(parts.front().rows(), cols);
    Index at = 0;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return make_result("concat_cols", std::move(out), parts, [](Node& n) {
        Index at = 0;
        for (auto& p : n.parents) {
            const Index c = p->value.cols();
            p->accumulate(n.grad.middleCols(at, c));
            at += c;
        }
    });
}

Tensor repeat_row(const Tensor& row, Index times) {
    if (row.rows() != 1 || times < 1) throw DimensionError("repeat_row: needs a 1 x C row and times >= 1");
    return gather_rows(row, std::vector<Index>(static_cast<std::size_t>(times), 0));
}

Tensor mean_rows(const Tensor& x) {
    const Index rows = x.rows();
    Matrix out = x.value().colwise().mean();
    return make_result("mean_rows", std::move(out), {x}, [rows](Node& n) {
        Matrix g = n.grad.replicate(rows, 1) / static_cast<Real>(rows);
        parent(n, 0).accumulate(g);
    });
}

Tensor avg_pool_rows(const Tensor& x, Index hop) {
    if (hop < 1) throw DimensionError("avg_pool_rows: hop must be >= 1");
    const Index t = x.rows();
    const Index blocks = (t + hop - 1) / hop;
    Matrix out(blocks, x.cols());
    for (Index b = 0; b < blocks; ++b) {
        const Index len = std::min(hop, t - b * hop);
        out.row(b) = x.value().middleRows(b * hop, len).colwise().mean();
    }
    return make_result("avg_pool_rows", std::move(out), {x}, [hop, t](Node& n) {
        Node& px = parent(n, 0);
        Matrix g(t, px.value.cols());
        for (Index b = 0; b < n.grad.rows(); ++b) {
            const Index len = std::min(hop, t - b * hop);
            g.middleRows(b * hop, len) = n.grad.row(b).replicate(len, 1) / static_cast<Real>(len);
        }
        px.accumulate(g);
    });
}

Tensor sum_all(const Tensor& x) {
    Matrix out = Matrix::Constant(1, 1, x.value().sum());
    return make_result("sum_all", std::move(out), {x}, [](Node& n) {
        Node& px = parent(n, 0);
        px.accumulate(Matrix::Constant(px.value.rows(), px.value.cols(), n.grad(0, 0)));
    });
}

Tensor mean_all(const Tensor& x) {
    const Real count = static_cast<Real>(x.value().size());
    return scale(sum_all(x), 1.0 / count);
}

Tensor detach(const Tensor& x) { return Tensor(x.value()); }

Tensor straight_through(const Tensor& h, const Tensor& quantized) {
    require_same_shape(h, quantized, "straight_through");
    return make_result("straight_through", quantized.value(), {h}, [](Node& n) { parent(n, 0).accumulate(n.grad); });
}

Matrix attention_weights(const Matrix& q, const Matrix& k, const BoolGrid& mask) {
    if (q.cols() != k.cols()) throw DimensionError("attention: q/k width mismatch");
    if (mask.rows() != q.rows() || mask.cols() != k.rows()) throw DimensionError("attention: mask shape mismatch");
    const Real inv_sqrt_d = 1.0 / std::sqrt(static_cast<Real>(q.cols()));
    Matrix scores = (q * k.transpose()) * inv_sqrt_d;
    for (Index i = 0; i < scores.rows(); ++i) {
        if (!mask.row(i).any()) {
            throw ContractError("attention: query row " + std::to_string(i) + " has no permitted key");
        }
        for (Index j = 0; j < scores.cols(); ++j) {
            if (!mask(i, j)) scores(i, j) += kMaskedScore;
        }
    }
    Matrix p = megatts::softmax_rows(scores);
    // Exact zeros at masked positions.
    for (Index i = 0; i < p.rows(); ++i) {
        for (Index j = 0; j < p.cols(); ++j) {
            if (!mask(i, j)) p(i, j) = 0.0;
        }
    }
    return p;
}

Tensor masked_attention(const Tensor& q, const Tensor& k, const Tensor& v, const BoolGrid& mask) {
    if (k.rows() != v.rows()) throw DimensionError("attention: k/v length mismatch");
    Matrix p = attention_weights(q.value(), k.value(), mask);
    Matrix out = p * v.value();
    const Real inv_sqrt_d = 1.0 / std::sqrt(static_cast<Real>(q.cols()));
    return make_result("masked_attention", std::move(out), {q, k, v}, [p = std::move(p), inv_sqrt_d](Node& n) {
        Node& pq = parent(n, 0);
        Node& pk = parent(n, 1);
        Node& pv = parent(n, 2);
        if (pv.requires_grad) pv.accumulate(p.transpose() * n.grad);
        if (pq.requires_grad || pk.requires_grad) {
            Matrix dp = n.grad * pv.value.transpose();
            Eigen::VectorXd dot = dp.cwiseProduct(p).rowwise().sum();
            Matrix ds = p.cwiseProduct(dp.colwise() - dot) * inv_sqrt_d;
            if (pq.requires_grad) pq.accumulate(ds * pk.value);
            if (pk.requires_grad) pk.accumulate(ds.transpose() * pq.value);
        }
    });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets, const std::vector<Real>& weights) {
    const Index rows = logits.rows();
    if (static_cast<Index>(targets.size()) != rows) throw DimensionError("cross_entropy: one target per row");
    if (!weights.empty() && static_cast<Index>(weights.size()) != rows) {
        throw DimensionError("cross_entropy: one weight per row");
    }
    Matrix p = megatts::softmax_rows(logits.value());
    Real total_w = 0.0;
    Real loss = 0.0;
    for (Index r = 0; r < rows; ++r) {
        const int t = targets[static_cast<std::size_t>(r)];
        if (t < 0 || t >= logits.cols()) throw VocabularyError("cross_entropy: target outside vocabulary");
        const Real w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
        if (w <= 0) continue;
        const Real m = logits.value().row(r).maxCoeff();
        const Real lse = m + std::log((logits.value().row(r).array() - m).exp().sum());
        loss += w * (lse - logits.value()(r, t));
        total_w += w;
    }
    if (total_w <= 0) throw PreconditionError("cross_entropy: no weighted rows");
    Matrix out = Matrix::Constant(1, 1, loss / total_w);
    return make_result("cross_entropy", std::move(out), {logits},
                       [p = std::move(p), targets, weights, total_w](Node& n) {
                           Matrix g = p;
                           for (Index r = 0; r < g.rows(); ++r) {
                               const Real w = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(r)];
                               if (w <= 0) {
                                   g.row(r).setZero();
                                   continue;
                               }
                               g(r, targets[static_cast<std::size_t>(r)]) -= 1.0;
                               g.row(r) *= w / total_w;
                           }
                           parent(n, 0).accumulate(g * n.grad(0, 0));
                       });
}

Tensor mse(const Tensor& prediction, const Tensor& target) {
    require_same_shape(prediction, target, "mse");
    Tensor diff = sub(prediction, target);
    return mean_all(mul(diff, diff));
}

Tensor l1(const Tensor& prediction, const Tensor& target) {
    require_same_shape(prediction, target, "l1");
    Matrix diff = prediction.value() - target.value();
    const Real count = static_cast<Real>(diff.size());
    Matrix out = Matrix::Constant(1, 1, diff.cwiseAbs().sum() / count);
    Matrix sign = diff.unaryExpr([](Real d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); });
    return make_result("l1", std::move(out), {prediction, target}, [sign = std::move(sign), count](Node& n) {
        const Real g = n.grad(0, 0) / count;
        parent(n, 0).accumulate(sign * g);
        parent(n, 1).accumulate(-sign * g);
    });
}

}  // namespace megatts
