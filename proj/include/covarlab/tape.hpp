#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records matrix-valued nodes in creation order. Every node only
// references nodes recorded before it, so creation order is a topological
// order and the backward sweep is a single reverse pass over the record.
// Tapes are single-use and never shared between threads.

#include "covarlab/numcore.hpp"
#include "covarlab/pinball.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace covarlab
{

template <typename Scalar>
class Tape
{
  public:
    using Mat = MatrixX<Scalar>;

    /// Handle to a recorded node. A default-constructed Var refers to nothing.
    class Var
    {
      public:
        Var() = default;
        bool valid() const { return index_ != npos; }
        std::size_t index() const { return index_; }

      private:
        friend class Tape;
        explicit Var(std::size_t i) : index_(i) {}
        static constexpr std::size_t npos = static_cast<std::size_t>(-1);
        std::size_t index_ = npos;
    };

    struct Gradients
    {
        std::vector<Mat> values;          // one per requested parameter
        std::vector<std::size_t> unused;  // positions (into the request) not reachable from the loss
    };

    Var input(Mat value) { return push(Op::leaf, std::move(value)); }
    Var parameter(Mat value) { return push(Op::leaf, std::move(value)); }

    Var matmul(Var a, Var b)
    {
        check_inner(value(a).cols() == value(b).rows(), "matmul");
        Mat v = value(a) * value(b);
        return push(Op::matmul, std::move(v), a, b);
    }

    Var add(Var a, Var b)
    {
        check_same(a, b, "add");
        Mat v = value(a) + value(b);
        return push(Op::add, std::move(v), a, b);
    }

    Var sub(Var a, Var b)
    {
        check_same(a, b, "sub");
        Mat v = value(a) - value(b);
        return push(Op::sub, std::move(v), a, b);
    }

    /// Elementwise product.
    Var hadamard(Var a, Var b)
    {
        check_same(a, b, "hadamard");
        Mat v = value(a).cwiseProduct(value(b));
        return push(Op::hadamard, std::move(v), a, b);
    }

    /// a + bias * 1^T, with bias a column vector of a's height.
    Var add_bias(Var a, Var bias)
    {
        check_inner(value(bias).cols() == 1 && value(bias).rows() == value(a).rows(), "add_bias");
        Mat v = value(a).colwise() + value(bias).col(0);
        return push(Op::add_bias, std::move(v), a, bias);
    }

    Var scale(Var a, Scalar s)
    {
        Mat v = value(a) * s;
        Var out = push(Op::scale, std::move(v), a);
        nodes_.back().s0 = s;
        return out;
    }

    Var transpose(Var a)
    {
        Mat v = value(a).transpose();
        return push(Op::transpose, std::move(v), a);
    }

    Var relu(Var a) { return push(Op::relu, covarlab::relu(value(a)), a); }

    Var softmax_cols(Var a, const Mask& valid_rows)
    {
        Var out = push(Op::softmax_cols, covarlab::softmax_cols(value(a), valid_rows), a);
        nodes_.back().mask = valid_rows;
        return out;
    }

    Var mask_cols(Var a, const Mask& valid_cols)
    {
        Var out = push(Op::mask_cols, covarlab::mask_cols(value(a), valid_cols), a);
        nodes_.back().mask = valid_cols;
        return out;
    }

    Var layer_norm_cols(Var a, Scalar eps)
    {
        Var out = push(Op::layer_norm_cols, covarlab::layer_norm_cols(value(a), eps), a);
        nodes_.back().s0 = eps;
        return out;
    }

    /// Sum of all entries, as a 1x1 node.
    Var sum(Var a)
    {
        Mat v(1, 1);
        v(0, 0) = value(a).sum();
        return push(Op::sum, std::move(v), a);
    }

    /// Pinball loss of the residual target - pred for a 1x1 prediction.
    Var pinball(Var pred, Scalar target, Scalar tau)
    {
        check_inner(value(pred).size() == 1, "pinball");
        Mat v(1, 1);
        v(0, 0) = covarlab::pinball(target - value(pred)(0, 0), tau);
        Var out = push(Op::pinball, std::move(v), pred);
        nodes_.back().s0 = target;
        nodes_.back().s1 = tau;
        return out;
    }

    const Mat& value(Var v) const { return nodes_.at(v.index_).value; }
    std::size_t size() const { return nodes_.size(); }

    /// Reverse sweep from a 1x1 `loss`; returns d loss / d p for each p.
    Gradients gradient(Var loss, std::span<const Var> params) const
    {
        check_inner(value(loss).size() == 1, "gradient: loss must be 1x1");
        std::vector<Mat> adj(loss.index_ + 1);
        std::vector<bool> touched(loss.index_ + 1, false);
        adj[loss.index_] = Mat::Ones(1, 1);
        touched[loss.index_] = true;

        auto accumulate = [&](std::size_t i, const Mat& g) {
            if (touched[i]) {
                adj[i] += g;
            } else {
                adj[i] = g;
                touched[i] = true;
            }
        };

        for (std::size_t k = loss.index_ + 1; k-- > 0;) {
            if (!touched[k])
                continue;
            const Node& node = nodes_[k];
            const Mat& g = adj[k];
            switch (node.op) {
            case Op::leaf:
                break;
            case Op::matmul:
                accumulate(node.a, g * nodes_[node.b].value.transpose());
                accumulate(node.b, nodes_[node.a].value.transpose() * g);
                break;
            case Op::add:
                accumulate(node.a, g);
                accumulate(node.b, g);
                break;
            case Op::sub:
                accumulate(node.a, g);
                accumulate(node.b, -g);
                break;
            case Op::hadamard:
                accumulate(node.a, g.cwiseProduct(nodes_[node.b].value));
                accumulate(node.b, g.cwiseProduct(nodes_[node.a].value));
                break;
            case Op::add_bias:
                accumulate(node.a, g);
                accumulate(node.b, g.rowwise().sum());
                break;
            case Op::scale:
                accumulate(node.a, g * node.s0);
                break;
            case Op::transpose:
                accumulate(node.a, g.transpose());
                break;
            case Op::relu:
                accumulate(node.a, (nodes_[node.a].value.array() > Scalar(0)).select(g, Scalar(0)));
                break;
            case Op::softmax_cols: {
                const Mat& y = node.value;
                Mat dx(y.rows(), y.cols());
                for (Eigen::Index j = 0; j < y.cols(); ++j) {
                    const Scalar inner = y.col(j).dot(g.col(j));
                    dx.col(j) = y.col(j).cwiseProduct((g.col(j).array() - inner).matrix());
                }
                accumulate(node.a, dx);
                break;
            }
            case Op::mask_cols:
                accumulate(node.a, covarlab::mask_cols(g, node.mask));
                break;
            case Op::layer_norm_cols: {
                const Mat& x = nodes_[node.a].value;
                const Mat& y = node.value;
                const Scalar d = Scalar(x.rows());
                Mat dx(x.rows(), x.cols());
                for (Eigen::Index j = 0; j < x.cols(); ++j) {
                    const Scalar mean = x.col(j).sum() / d;
                    const Scalar var = (x.col(j).array() - mean).square().sum() / d;
                    const Scalar inv_std = Scalar(1) / std::sqrt(var + node.s0);
                    const Scalar g_mean = g.col(j).sum() / d;
                    const Scalar gy_mean = g.col(j).dot(y.col(j)) / d;
                    dx.col(j) = inv_std * (g.col(j).array() - g_mean - y.col(j).array() * gy_mean).matrix();
                }
                accumulate(node.a, dx);
                break;
            }
            case Op::sum:
                accumulate(node.a, Mat::Constant(nodes_[node.a].value.rows(), nodes_[node.a].value.cols(), g(0, 0)));
                break;
            case Op::pinball: {
                const Scalar u = node.s0 - nodes_[node.a].value(0, 0);
                accumulate(node.a, Mat::Constant(1, 1, -pinball_slope(u, node.s1) * g(0, 0)));
                break;
            }
            }
        }

        Gradients out;
        out.values.reserve(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            const std::size_t i = params[p].index_;
            const Mat& v = nodes_.at(i).value;
            if (i <= loss.index_ && touched[i]) {
                out.values.push_back(adj[i]);
            } else {
                out.values.push_back(Mat::Zero(v.rows(), v.cols()));
                out.unused.push_back(p);
            }
        }
        return out;
    }

  private:
    enum class Op : std::uint8_t
    {
        leaf,
        matmul,
        add,
        sub,
        hadamard,
        add_bias,
        scale,
        transpose,
        relu,
        softmax_cols,
        mask_cols,
        layer_norm_cols,
        sum,
        pinball,
    };

    struct Node
    {
        Op op;
        std::size_t a = 0;
        std::size_t b = 0;
        Scalar s0 = 0;
        Scalar s1 = 0;
        Mask mask;
        Mat value;
    };

    Var push(Op op, Mat value, Var a = {}, Var b = {})
    {
        nodes_.push_back(Node{op, a.index_, b.index_, Scalar(0), Scalar(0), Mask(), std::move(value)});
        return Var(nodes_.size() - 1);
    }

    void check_same(Var a, Var b, const char* what) const
    {
        check_inner(value(a).rows() == value(b).rows() && value(a).cols() == value(b).cols(), what);
    }

    static void check_inner(bool ok, const char* what)
    {
        if (!ok)
            throw std::invalid_argument(std::string("shape mismatch in ") + what);
    }

    std::vector<Node> nodes_;
};

/// Message attached to gradient requests that include unreachable parameters.
inline constexpr const char* unused_parameter_message = "unused parameter";

} // namespace covarlab
