#pragma once

// Monte Carlo laboratory: a coupled AR(1) pair with closed-form VaR/CoVaR,
// synthetic noise "news" independent of the returns, and a J-institution
// variant with a text-flagged crisis regime.

#include "covarlab/data_io.hpp"

#include <cstdint>
#include <vector>

namespace covarlab
{

/// Standard normal quantile. Acklam's rational approximation polished by
/// one Halley step against erfc; returns exactly 0 at p = 0.5.
double inverse_normal_cdf(double p);

struct SimConfig
{
    double phi = 0.8;
    double sigma1 = 0.15;
    double beta = 1.2;
    double sigma2 = 0.2;
    double y0 = 0.0;
    double tau = 0.05;
    std::size_t T = 1776;
    std::uint64_t seed = 1;

    void validate() const;
};

struct SimSeries
{
    Vector y1, y2;
};

/// y1_t = phi y1_{t-1} + eps_t (y1_{-1} = y0), y2_t = beta y1_t + eta_t.
SimSeries simulate_dgp(const SimConfig& config);

double theoretical_var1(const SimConfig& config, double y_prev);
double theoretical_covar(const SimConfig& config, double var1);
double theoretical_var2(const SimConfig& config, double y_prev);

struct NoiseTextConfig
{
    bool enabled = true;
    std::size_t embed_dim = 8;
    std::size_t max_articles = 8;  ///< per-day count is uniform on [1, max_articles]
    double scale = 1.0;            ///< standard deviation of each coordinate
    std::uint64_t seed = 2;
};

/// Gaussian article embeddings for each date, drawn independently of any
/// return series. Disabled text yields an empty store (all-pad windows).
EmbeddingStore attach_noise_text(const std::vector<Date>& dates, const NoiseTextConfig& config);

/// Mean absolute difference; throws on length mismatch or empty input.
double mae(const Vector& pred, const Vector& truth);

/// T consecutive weekdays starting on the first weekday >= start.
std::vector<Date> weekday_calendar(Date start, std::size_t T);

inline constexpr const char* sim_start_date = "2006-10-02";

struct SimDataset
{
    ReturnPanel panel;  ///< tickers Y1, Y2; macro column y1 (the pipeline lags it)
    EmbeddingStore embeddings;
    Matrix oracle;      ///< T x 3: VaR1, CoVaR, VaR2 at config.tau
};

SimDataset make_sim_dataset(const SimConfig& config, const NoiseTextConfig& text);

struct CrisisConfig
{
    std::size_t institutions = 8;
    std::size_t T = 1776;
    double phi = 0.8;
    double factor_sigma = 0.1;
    double idio_sigma = 0.1;
    double beta = 1.0;           ///< target loading on the mean of the others
    double calm_sigma = 0.15;    ///< target idiosyncratic sd outside crises
    double crisis_sigma = 0.6;   ///< and inside crisis blocks
    std::size_t block_length = 40;
    std::size_t block_spacing = 200;
    double text_shift = 3.0;     ///< shift of embedding coordinate 0 on crisis days
    NoiseTextConfig text;
    std::uint64_t seed = 3;
};

struct CrisisDataset
{
    ReturnPanel panel;  ///< tickers B1..BJ, the target is the last one
    EmbeddingStore embeddings;
    std::vector<bool> crisis;
};

/// Others share an AR(1) factor; the target loads on their mean plus noise
/// whose variance jumps on crisis blocks. Articles published on crisis days
/// carry a shifted first coordinate, the only channel revealing the regime.
CrisisDataset make_crisis_dataset(const CrisisConfig& config);

} // namespace covarlab
