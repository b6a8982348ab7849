#include "covarlab/numcore.hpp"
#include "covarlab/tape.hpp"

#include "support/gradient_check.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace covarlab;
using covarlab::testing::max_relative_error;
using covarlab::testing::numeric_gradient;
using covarlab::testing::random_matrix;

using Var = Tape<double>::Var;

TEST(SoftmaxCols, UniformColumn)
{
    const Matrix s = Matrix::Zero(3, 1);
    const Matrix p = softmax_cols(s, all_valid(3));
    for (int i = 0; i < 3; ++i)
        EXPECT_DOUBLE_EQ(p(i, 0), 1.0 / 3.0);
}

TEST(SoftmaxCols, LogTwoAgainstZero)
{
    Matrix s(2, 1);
    s << std::log(2.0), 0.0;
    const Matrix p = softmax_cols(s, all_valid(2));
    EXPECT_NEAR(p(0, 0), 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(p(1, 0), 1.0 / 3.0, 1e-15);
}

TEST(SoftmaxCols, MaskedEntryIsExactlyZero)
{
    Matrix s(2, 1);
    s << 5.0, 1e300;
    Mask m(2);
    m << true, false;
    const Matrix p = softmax_cols(s, m);
    EXPECT_EQ(p(0, 0), 1.0);
    EXPECT_EQ(p(1, 0), 0.0);
}

TEST(SoftmaxCols, EmptyColumnIsAnError)
{
    const Matrix s = Matrix::Zero(2, 2);
    Mask m = Mask::Constant(2, false);
    EXPECT_THROW(
        {
            try {
                softmax_cols(s, m);
            } catch (const std::invalid_argument& e) {
                EXPECT_STREQ(e.what(), "empty attention column");
                throw;
            }
        },
        std::invalid_argument);
}

TEST(SoftmaxCols, ColumnsSumToOneOnRandomInputs)
{
    std::mt19937_64 rng(11);
    std::bernoulli_distribution coin(0.6);
    for (int trial = 0; trial < 200; ++trial) {
        const Eigen::Index n = 1 + trial % 8;
        const Matrix s = random_matrix(rng, n, n, 5.0);
        Mask m(n);
        for (Eigen::Index i = 0; i < n; ++i)
            m(i) = coin(rng);
        m(trial % n) = true;
        const Matrix p = softmax_cols(s, m);
        for (Eigen::Index j = 0; j < n; ++j) {
            double total = 0.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                EXPECT_GE(p(i, j), 0.0);
                EXPECT_LE(p(i, j), 1.0);
                if (!m(i))
                    EXPECT_EQ(p(i, j), 0.0);
                total += p(i, j);
            }
            EXPECT_NEAR(total, 1.0, 1e-9);
        }
    }
}

TEST(Relu, Examples)
{
    Matrix x(1, 2);
    x << -1.0, 2.0;
    Matrix expected(1, 2);
    expected << 0.0, 2.0;
    EXPECT_EQ(relu(x), expected);
    EXPECT_EQ(relu(Matrix::Zero(3, 3)), Matrix::Zero(3, 3));
    const Matrix pos = Matrix::Constant(2, 4, 0.5);
    EXPECT_EQ(relu(pos), pos);
}

TEST(Tape, ProductRule)
{
    Tape<double> tape;
    const Var a = tape.parameter(Matrix::Constant(1, 1, 2.0));
    const Var b = tape.parameter(Matrix::Constant(1, 1, 3.0));
    const Var loss = tape.sum(tape.matmul(a, b));
    const std::vector<Var> params{a, b};
    const auto g = tape.gradient(loss, params);
    EXPECT_EQ(g.values[0](0, 0), 3.0);
    EXPECT_EQ(g.values[1](0, 0), 2.0);
    EXPECT_TRUE(g.unused.empty());
}

TEST(Tape, DeadReluBlocksGradient)
{
    Tape<double> tape;
    const Var x = tape.input(Matrix::Constant(1, 1, -5.0));
    const Var c = tape.parameter(Matrix::Constant(1, 1, 4.0));
    const Var loss = tape.sum(tape.matmul(tape.relu(x), c));
    const std::vector<Var> params{c};
    EXPECT_EQ(tape.gradient(loss, params).values[0](0, 0), 0.0);
}

TEST(Tape, UnusedParameterReportedWithZeroGradient)
{
    Tape<double> tape;
    const Var a = tape.parameter(Matrix::Constant(2, 2, 1.0));
    const Var stray = tape.parameter(Matrix::Constant(3, 1, 1.0));
    const Var loss = tape.sum(a);
    const std::vector<Var> params{a, stray};
    const auto g = tape.gradient(loss, params);
    ASSERT_EQ(g.unused.size(), 1u);
    EXPECT_EQ(g.unused[0], 1u);
    EXPECT_EQ(g.values[1], Matrix::Zero(3, 1));
    EXPECT_STREQ(unused_parameter_message, "unused parameter");
}

TEST(Tape, PinballSubgradientAtKinkIsTau)
{
    Tape<double> tape;
    const Var pred = tape.parameter(Matrix::Constant(1, 1, 0.25));
    const Var loss = tape.pinball(pred, 0.25, 0.05);
    const std::vector<Var> params{pred};
    EXPECT_DOUBLE_EQ(tape.gradient(loss, params).values[0](0, 0), -0.05);
}

TEST(Tape, DeterministicGradients)
{
    std::mt19937_64 rng(3);
    const Matrix A = random_matrix(rng, 5, 4);
    const Matrix B = random_matrix(rng, 4, 6);
    auto run = [&] {
        Tape<double> tape;
        const Var a = tape.parameter(A);
        const Var b = tape.parameter(B);
        const Var loss = tape.sum(tape.relu(tape.matmul(a, b)));
        const std::vector<Var> params{a, b};
        return tape.gradient(loss, params).values;
    };
    const auto g1 = run();
    const auto g2 = run();
    for (std::size_t p = 0; p < g1.size(); ++p)
        EXPECT_EQ(g1[p], g2[p]);
}

// Finite-difference checks: every primitive, wrapped as sum(C .* op(inputs))
// with a random weighting C, on 25 random instances of at most 8x8.

namespace
{

using Builder = std::function<Var(Tape<double>&, const std::vector<Var>&)>;

double primitive_error(const Builder& build, const std::vector<Matrix>& inputs, const Matrix& weighting)
{
    auto loss_value = [&](const std::vector<Matrix>& params) {
        Tape<double> tape;
        std::vector<Var> vars;
        for (const auto& p : params)
            vars.push_back(tape.parameter(p));
        const Var out = build(tape, vars);
        return tape.value(tape.sum(tape.hadamard(out, tape.input(weighting)))).value();
    };
    Tape<double> tape;
    std::vector<Var> vars;
    for (const auto& p : inputs)
        vars.push_back(tape.parameter(p));
    const Var loss = tape.sum(tape.hadamard(build(tape, vars), tape.input(weighting)));
    const auto analytic = tape.gradient(loss, vars).values;
    return max_relative_error(analytic, numeric_gradient(loss_value, inputs));
}

Mask random_mask(std::mt19937_64& rng, Eigen::Index n)
{
    std::bernoulli_distribution coin(0.7);
    Mask m(n);
    for (Eigen::Index i = 0; i < n; ++i)
        m(i) = coin(rng);
    m(0) = true;
    return m;
}

} // namespace

class PrimitiveGradient : public ::testing::TestWithParam<int>
{
};

TEST_P(PrimitiveGradient, MatchesFiniteDifferences)
{
    std::mt19937_64 rng(1000 + GetParam());
    std::uniform_int_distribution<Eigen::Index> size(1, 8);
    const Eigen::Index r = size(rng), c = size(rng), k = size(rng);

    auto weighting = [&](Eigen::Index rows, Eigen::Index cols) { return random_matrix(rng, rows, cols); };

    {
        const std::vector<Matrix> in{random_matrix(rng, r, k), random_matrix(rng, k, c)};
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.matmul(v[0], v[1]); }, in, weighting(r, c)),
                  1e-4)
            << "matmul";
    }
    {
        const std::vector<Matrix> in{random_matrix(rng, r, c), random_matrix(rng, r, c)};
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.add(v[0], v[1]); }, in, weighting(r, c)), 1e-4)
            << "add";
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.sub(v[0], v[1]); }, in, weighting(r, c)), 1e-4)
            << "sub";
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.hadamard(v[0], v[1]); }, in, weighting(r, c)),
                  1e-4)
            << "hadamard";
    }
    {
        const std::vector<Matrix> in{random_matrix(rng, r, c), random_matrix(rng, r, 1)};
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.add_bias(v[0], v[1]); }, in, weighting(r, c)),
                  1e-4)
            << "add_bias";
    }
    {
        const std::vector<Matrix> in{random_matrix(rng, r, c)};
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.scale(v[0], -1.7); }, in, weighting(r, c)),
                  1e-4)
            << "scale";
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.transpose(v[0]); }, in, weighting(c, r)), 1e-4)
            << "transpose";
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.relu(v[0]); }, in, weighting(r, c)), 1e-4)
            << "relu";
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.sum(v[0]); }, in, weighting(1, 1)), 1e-4)
            << "sum";
        const Mask cols = random_mask(rng, c);
        EXPECT_LT(primitive_error([&](auto& t, const auto& v) { return t.mask_cols(v[0], cols); }, in, weighting(r, c)),
                  1e-4)
            << "mask_cols";
        const Mask rows = random_mask(rng, r);
        EXPECT_LT(
            primitive_error([&](auto& t, const auto& v) { return t.softmax_cols(v[0], rows); }, in, weighting(r, c)),
            1e-4)
            << "softmax_cols";
    }
    {
        const std::vector<Matrix> in{random_matrix(rng, std::max<Eigen::Index>(r, 2), c)};
        EXPECT_LT(primitive_error([](auto& t, const auto& v) { return t.layer_norm_cols(v[0], 1e-5); }, in,
                                  weighting(in[0].rows(), c)),
                  1e-4)
            << "layer_norm_cols";
    }
    {
        const std::vector<Matrix> in{random_matrix(rng, 1, 1)};
        const double target = std::normal_distribution<double>(0.0, 1.0)(rng);
        EXPECT_LT(primitive_error([&](auto& t, const auto& v) { return t.pinball(v[0], target, 0.05); }, in,
                                  weighting(1, 1)),
                  1e-4)
            << "pinball";
    }
}

INSTANTIATE_TEST_SUITE_P(RandomInstances, PrimitiveGradient, ::testing::Range(0, 25));
