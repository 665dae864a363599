#pragma once

// Scalar-generic dense kernels that do not participate in autodiff.
// Everything here is a free function over Eigen expressions.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace megatts {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Real = double;
using Matrix = MatrixX<Real>;
using RowVector = RowVectorX<Real>;
using Index = Eigen::Index;
using BoolGrid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Additive bias applied to disallowed attention scores before the softmax.
inline constexpr Real kMaskedScore = -1e30;

// Row-wise softmax with max subtraction.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> out(x.rows(), x.cols());
    for (Index r = 0; r < x.rows(); ++r) {
        const Scalar m = x.row(r).maxCoeff();
        out.row(r) = (x.row(r).array() - m).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

// Index of the largest coefficient; ties go to the lowest index.
template <typename Derived>
Index argmax(const Eigen::DenseBase<Derived>& v) {
    Index best = 0;
    for (Index i = 1; i < v.size(); ++i) {
        if (v(i) > v(best)) best = i;
    }
    return best;
}

// Nearest row of `entries` to the row vector `h` under squared L2; ties go to
// the lowest index.
template <typename DerivedH, typename DerivedE>
Index nearest_entry(const Eigen::MatrixBase<DerivedH>& h, const Eigen::MatrixBase<DerivedE>& entries,
                    typename DerivedH::Scalar* best_distance = nullptr) {
    Index best = 0;
    auto best_d = std::numeric_limits<typename DerivedH::Scalar>::infinity();
    for (Index k = 0; k < entries.rows(); ++k) {
        const auto d = (entries.row(k) - h).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = k;
        }
    }
    if (best_distance) *best_distance = best_d;
    return best;
}

// Speaker-block causal mask: entry (i, j) is true iff i and j fall in the same
// segment and j <= i. Segments are given by their lengths, laid out in order.
inline BoolGrid block_causal_mask(const std::vector<Index>& segment_lengths) {
    Index total = 0;
    for (Index len : segment_lengths) total += len;
    BoolGrid mask = BoolGrid::Constant(total, total, false);
    Index start = 0;
    for (Index len : segment_lengths) {
        for (Index i = 0; i < len; ++i) {
            mask.row(start + i).segment(start, i + 1).setConstant(true);
        }
        start += len;
    }
    return mask;
}

inline BoolGrid causal_mask(Index n) { return block_causal_mask({n}); }

// Fixed sinusoidal position table; row r encodes positions[r].
template <typename Scalar = Real>
MatrixX<Scalar> sinusoidal_positions(const std::vector<Index>& positions, Index dim) {
    MatrixX<Scalar> table(static_cast<Index>(positions.size()), dim);
    for (Index r = 0; r < table.rows(); ++r) {
        const Scalar pos = static_cast<Scalar>(positions[static_cast<std::size_t>(r)]);
        for (Index c = 0; c < dim; ++c) {
            const Scalar rate = std::pow(Scalar(10000), -Scalar(2 * (c / 2)) / Scalar(dim));
            table(r, c) = (c % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
        }
    }
    return table;
}

template <typename Derived>
typename Derived::Scalar cosine_similarity(const Eigen::MatrixBase<Derived>& a,
                                           const Eigen::MatrixBase<Derived>& b) {
    const auto denom = a.norm() * b.norm();
    return denom > 0 ? a.cwiseProduct(b).sum() / denom : typename Derived::Scalar(0);
}

}  // namespace megatts
