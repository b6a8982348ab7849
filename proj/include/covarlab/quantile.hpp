#pragma once

#include "covarlab/numcore.hpp"
#include "covarlab/pinball.hpp"

#include <stdexcept>

namespace covarlab
{

/// Linear conditional quantile alpha + gamma' m at level tau.
struct LinearQuantileModel
{
    double tau = 0.5;
    double alpha = 0.0;
    Vector gamma;
};

struct QuantileSolverOptions
{
    int max_iterations = 50000;
    /// Stop once the best objective improved by less than
    /// `stall_tolerance` (relative) over the last `stall_window` iterations.
    int stall_window = 200;
    double stall_tolerance = 1e-9;
    /// Step is halved after this many iterations without a new best.
    int halving_patience = 10;
    /// Ridge weight applied (in standardized coordinates) when the design is rank deficient.
    double ridge = 1e-6;
};

struct QuantileFit
{
    LinearQuantileModel model;
    double objective = 0.0;  ///< mean training pinball loss
    int iterations = 0;
    bool ridge_damped = false;
};

/// Raised when the solver exhausts its iteration budget. Carries both the
/// iterate the solver stopped on and the best iterate seen.
class QuantileNonConvergence : public std::runtime_error
{
  public:
    QuantileNonConvergence(QuantileFit last, QuantileFit best)
        : std::runtime_error("linear quantile regression did not converge"),
          last_iterate(std::move(last)), best_iterate(std::move(best))
    {
    }
    QuantileFit last_iterate;
    QuantileFit best_iterate;
};

/// Fits y ~ alpha + X gamma under pinball loss (intercept added internally).
///
/// Full-batch normalized subgradient descent on the slope coefficients in
/// standardized coordinates, with the intercept profiled out exactly at each
/// iterate (it is always an order statistic of the current residuals). The
/// step halves whenever `halving_patience` iterations pass without a new best
/// objective, and the best iterate is returned.
///
/// Coverage: at an exact optimum the share of strictly negative training
/// residuals lies in [tau - (m + 1) / T, tau]; the returned fit is checked
/// against the looser band |share - tau| <= 1 / sqrt(T).
QuantileFit fit_linear_quantile(const Matrix& X, const Vector& y, double tau,
                                const QuantileSolverOptions& options = {});

double predict_var(const LinearQuantileModel& model, const Vector& macro_prev);

/// Mean pinball loss of `model` on (X, y).
double mean_pinball(const LinearQuantileModel& model, const Matrix& X, const Vector& y);

/// Share of observations with y strictly below the fitted quantile.
double negative_residual_fraction(const LinearQuantileModel& model, const Matrix& X, const Vector& y);

} // namespace covarlab
