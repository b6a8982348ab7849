#pragma once

// Dense building blocks shared by every module: scalar-templated matrix
// aliases, token masks, and the two nonlinearities used by the model.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>

namespace covarlab
{

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;

/// One flag per token (or per row, for softmax); true marks a real entry.
using Mask = Eigen::Array<bool, Eigen::Dynamic, 1>;

inline Mask all_valid(Eigen::Index n)
{
    return Mask::Constant(n, true);
}

/// Elementwise max(x, 0).
template <typename Derived>
MatrixX<typename Derived::Scalar> relu(const Eigen::MatrixBase<Derived>& x)
{
    return x.cwiseMax(typename Derived::Scalar(0));
}

/// Column-wise softmax restricted to the rows flagged in `valid_rows`.
///
/// Masked rows are excluded from both the stabilizing max and the
/// normalizer and come out as exact zeros, so no -inf ever enters the
/// arithmetic. Each column of the result sums to one over valid rows.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_cols(const Eigen::MatrixBase<Derived>& scores,
                                                const Mask& valid_rows)
{
    using Scalar = typename Derived::Scalar;
    if (valid_rows.size() != scores.rows())
        throw std::invalid_argument("softmax_cols: mask length does not match score rows");
    if (!valid_rows.any())
        throw std::invalid_argument("empty attention column");

    MatrixX<Scalar> out = MatrixX<Scalar>::Zero(scores.rows(), scores.cols());
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
        Scalar peak = -std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index i = 0; i < scores.rows(); ++i)
            if (valid_rows(i))
                peak = std::max(peak, Scalar(scores(i, j)));
        Scalar total = 0;
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            if (!valid_rows(i))
                continue;
            out(i, j) = std::exp(Scalar(scores(i, j)) - peak);
            total += out(i, j);
        }
        out.col(j) /= total;
    }
    return out;
}

/// Zero every column whose flag is false.
template <typename Derived>
MatrixX<typename Derived::Scalar> mask_cols(const Eigen::MatrixBase<Derived>& x, const Mask& valid_cols)
{
    if (valid_cols.size() != x.cols())
        throw std::invalid_argument("mask_cols: mask length does not match columns");
    MatrixX<typename Derived::Scalar> out = x;
    for (Eigen::Index j = 0; j < x.cols(); ++j)
        if (!valid_cols(j))
            out.col(j).setZero();
    return out;
}

/// Per-column standardization (zero mean, unit population variance).
template <typename Derived>
MatrixX<typename Derived::Scalar> layer_norm_cols(const Eigen::MatrixBase<Derived>& x,
                                                   typename Derived::Scalar eps)
{
    using Scalar = typename Derived::Scalar;
    MatrixX<Scalar> out(x.rows(), x.cols());
    const Scalar d = Scalar(x.rows());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const Scalar mean = x.col(j).sum() / d;
        const auto centered = (x.col(j).array() - mean).matrix().eval();
        const Scalar var = centered.squaredNorm() / d;
        out.col(j) = centered / std::sqrt(var + eps);
    }
    return out;
}

template <typename Derived>
void require_finite(const Eigen::MatrixBase<Derived>& x, const char* what)
{
    if (!x.allFinite())
        throw std::runtime_error(std::string(what) + ": non-finite value");
}

} // namespace covarlab
