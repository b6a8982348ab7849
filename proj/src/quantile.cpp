#include "covarlab/quantile.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace covarlab
{
namespace
{

/// Smallest minimizer of sum_i pinball(r_i - a): the ceil(tau T)-th order statistic.
double profile_intercept(const Vector& residual, double tau, std::vector<double>& scratch)
{
    scratch.assign(residual.data(), residual.data() + residual.size());
    const auto k = static_cast<std::ptrdiff_t>(std::ceil(tau * double(scratch.size()))) - 1;
    const auto pos = std::clamp<std::ptrdiff_t>(k, 0, std::ptrdiff_t(scratch.size()) - 1);
    std::nth_element(scratch.begin(), scratch.begin() + pos, scratch.end());
    return scratch[std::size_t(pos)];
}

struct Standardized
{
    Matrix X;
    Vector mean;
    Vector scale;  // zero marks a constant column
};

Standardized standardize(const Matrix& X)
{
    Standardized s{Matrix(X.rows(), X.cols()), Vector(X.cols()), Vector(X.cols())};
    const double T = double(X.rows());
    for (Eigen::Index k = 0; k < X.cols(); ++k) {
        const double mean = X.col(k).sum() / T;
        const double sd = std::sqrt((X.col(k).array() - mean).square().sum() / T);
        s.mean(k) = mean;
        if (sd > 0.0) {
            s.scale(k) = sd;
            s.X.col(k) = (X.col(k).array() - mean) / sd;
        } else {
            s.scale(k) = 0.0;
            s.X.col(k).setZero();
        }
    }
    return s;
}

LinearQuantileModel to_original(double tau, double a, const Vector& b, const Standardized& s)
{
    LinearQuantileModel m;
    m.tau = tau;
    m.gamma = Vector::Zero(b.size());
    m.alpha = a;
    for (Eigen::Index k = 0; k < b.size(); ++k) {
        if (s.scale(k) == 0.0)
            continue;
        m.gamma(k) = b(k) / s.scale(k);
        m.alpha -= m.gamma(k) * s.mean(k);
    }
    return m;
}

} // namespace

QuantileFit fit_linear_quantile(const Matrix& X, const Vector& y, double tau, const QuantileSolverOptions& options)
{
    check_tau(tau);
    const Eigen::Index T = y.size();
    const Eigen::Index m = X.cols();
    if (X.rows() != T)
        throw std::invalid_argument("fit_linear_quantile: design and response lengths differ");
    if (T <= m + 1)
        throw std::invalid_argument("fit_linear_quantile: need more observations than coefficients");
    require_finite(X, "fit_linear_quantile design");
    require_finite(y, "fit_linear_quantile response");

    const Standardized s = standardize(X);
    bool ridge_damped = (s.scale.array() == 0.0).any();
    if (!ridge_damped && m > 0) {
        Eigen::ColPivHouseholderQR<Matrix> qr(s.X);
        ridge_damped = qr.rank() < m;
    }
    const double ridge = ridge_damped ? options.ridge : 0.0;

    const double y_mean = y.mean();
    const double y_sd = std::sqrt((y.array() - y_mean).square().mean());

    std::vector<double> scratch;
    Vector b = Vector::Zero(m);
    Vector residual = y;
    double a = profile_intercept(residual, tau, scratch);

    auto objective = [&](const Vector& r, double intercept, const Vector& coef) {
        double total = 0.0;
        for (Eigen::Index i = 0; i < T; ++i)
            total += pinball(r(i) - intercept, tau);
        return total / double(T) + ridge * coef.squaredNorm();
    };

    double f = objective(residual, a, b);
    QuantileFit best{to_original(tau, a, b, s), f, 0, ridge_damped};
    Vector best_b = b;
    double best_a = a;

    std::vector<double> best_history;
    best_history.reserve(std::size_t(options.max_iterations) + 1);
    best_history.push_back(f);

    double step = 0.5 * (y_sd > 0.0 ? y_sd : 1.0);
    int since_improvement = 0;
    bool converged = (m == 0 || f == 0.0);

    int it = 0;
    for (; !converged && it < options.max_iterations; ++it) {
        Vector g = 2.0 * ridge * b;
        for (Eigen::Index i = 0; i < T; ++i)
            g -= pinball_slope(residual(i) - a, tau) / double(T) * s.X.row(i).transpose();
        const double gnorm = g.norm();
        if (gnorm == 0.0) {
            converged = true;
            break;
        }
        b -= (step / gnorm) * g;
        residual = y - s.X * b;
        a = profile_intercept(residual, tau, scratch);
        f = objective(residual, a, b);

        if (f < best.objective) {
            best.objective = f;
            best_a = a;
            best_b = b;
            since_improvement = 0;
        } else if (++since_improvement >= options.halving_patience) {
            step *= 0.5;
            since_improvement = 0;
        }
        best_history.push_back(best.objective);

        const auto n = best_history.size();
        if (best.objective == 0.0) {
            converged = true;
        } else if (n > std::size_t(options.stall_window)) {
            const double before = best_history[n - 1 - std::size_t(options.stall_window)];
            if (before - best.objective < options.stall_tolerance * std::abs(best.objective))
                converged = true;
        }
    }

    best.model = to_original(tau, best_a, best_b, s);
    best.iterations = it;
    // Report the plain mean pinball (the ridge term is a solver device).
    best.objective = mean_pinball(best.model, X, y);
    if (!converged) {
        QuantileFit last{to_original(tau, a, b, s), 0.0, it, ridge_damped};
        last.objective = mean_pinball(last.model, X, y);
        throw QuantileNonConvergence(std::move(last), std::move(best));
    }
    return best;
}

double predict_var(const LinearQuantileModel& model, const Vector& macro_prev)
{
    if (macro_prev.size() != model.gamma.size())
        throw std::invalid_argument("predict_var: macro vector length does not match the model");
    return model.alpha + model.gamma.dot(macro_prev);
}

double mean_pinball(const LinearQuantileModel& model, const Matrix& X, const Vector& y)
{
    const Vector fitted = (X * model.gamma).array() + model.alpha;
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i)
        total += pinball(y(i) - fitted(i), model.tau);
    return total / double(y.size());
}

double negative_residual_fraction(const LinearQuantileModel& model, const Matrix& X, const Vector& y)
{
    const Vector fitted = (X * model.gamma).array() + model.alpha;
    return double((y.array() < fitted.array()).count()) / double(y.size());
}

} // namespace covarlab
