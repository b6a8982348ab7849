#include "covarlab/simulation.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace covarlab
{

double inverse_normal_cdf(double p)
{
    if (!(p > 0.0 && p < 1.0))
        throw std::invalid_argument("inverse_normal_cdf: p must lie in (0, 1)");
    static constexpr std::array<double, 6> a{-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                             1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr std::array<double, 5> b{-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                             6.680131188771972e+01, -1.328068155288572e+01};
    static constexpr std::array<double, 6> c{-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                             -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr std::array<double, 4> d{7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                             3.754408661907416e+00};
    constexpr double p_low = 0.02425;

    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    // Halley refinement; the upper tail works on the complement to keep precision.
    const double e = p < 0.5 ? 0.5 * std::erfc(-x / std::numbers::sqrt2) - p
                             : (1.0 - p) - 0.5 * std::erfc(x / std::numbers::sqrt2);
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

void SimConfig::validate() const
{
    if (!(sigma1 > 0.0 && sigma2 > 0.0))
        throw std::invalid_argument("SimConfig: sigma1 and sigma2 must be positive");
    if (!(std::abs(phi) < 1.0))
        throw std::invalid_argument("SimConfig: |phi| must be below 1");
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("SimConfig: tau must lie in (0, 1)");
    if (T < 2)
        throw std::invalid_argument("SimConfig: T must be at least 2");
}

SimSeries simulate_dgp(const SimConfig& config)
{
    config.validate();
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    SimSeries s{Vector(Eigen::Index(config.T)), Vector(Eigen::Index(config.T))};
    double prev = config.y0;
    for (Eigen::Index t = 0; t < s.y1.size(); ++t) {
        const double eps = config.sigma1 * normal(rng);
        const double eta = config.sigma2 * normal(rng);
        s.y1(t) = config.phi * prev + eps;
        s.y2(t) = config.beta * s.y1(t) + eta;
        prev = s.y1(t);
    }
    return s;
}

double theoretical_var1(const SimConfig& config, double y_prev)
{
    return config.phi * y_prev + config.sigma1 * inverse_normal_cdf(config.tau);
}

double theoretical_covar(const SimConfig& config, double var1)
{
    return config.beta * var1 + config.sigma2 * inverse_normal_cdf(config.tau);
}

double theoretical_var2(const SimConfig& config, double y_prev)
{
    const double s = std::sqrt(config.beta * config.beta * config.sigma1 * config.sigma1 +
                               config.sigma2 * config.sigma2);
    return config.beta * config.phi * y_prev + s * inverse_normal_cdf(config.tau);
}

EmbeddingStore attach_noise_text(const std::vector<Date>& dates, const NoiseTextConfig& config)
{
    EmbeddingStore store;
    store.embed_dim = config.embed_dim;
    if (!config.enabled)
        return store;
    if (config.max_articles < 1)
        throw std::invalid_argument("noise text needs max_articles >= 1");
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, config.scale);
    std::uniform_int_distribution<std::size_t> count(1, config.max_articles);
    Vector v(Eigen::Index(config.embed_dim));
    for (const Date d : dates) {
        const std::size_t k = count(rng);
        for (std::size_t a = 0; a < k; ++a) {
            for (Eigen::Index i = 0; i < v.size(); ++i)
                v(i) = normal(rng);
            store.add(d, v);
        }
    }
    return store;
}

double mae(const Vector& pred, const Vector& truth)
{
    if (pred.size() != truth.size())
        throw std::invalid_argument("mae: length mismatch (" + std::to_string(pred.size()) + " vs " +
                                    std::to_string(truth.size()) + ")");
    if (pred.size() == 0)
        throw std::invalid_argument("mae: empty series");
    return (pred - truth).cwiseAbs().mean();
}

std::vector<Date> weekday_calendar(Date start, std::size_t T)
{
    std::vector<Date> out;
    out.reserve(T);
    Date d = next_weekday(start);
    while (out.size() < T) {
        out.push_back(d);
        d = next_weekday(d + std::chrono::days(1));
    }
    return out;
}

SimDataset make_sim_dataset(const SimConfig& config, const NoiseTextConfig& text)
{
    const SimSeries s = simulate_dgp(config);
    SimDataset out;
    auto& p = out.panel;
    p.dates = weekday_calendar(parse_date(sim_start_date), config.T);
    p.tickers = {"Y1", "Y2"};
    p.macro_names = {"y1"};
    p.returns.resize(s.y1.size(), 2);
    p.returns.col(0) = s.y1;
    p.returns.col(1) = s.y2;
    p.macro = s.y1;
    out.embeddings = attach_noise_text(p.dates, text);
    out.oracle.resize(s.y1.size(), 3);
    for (Eigen::Index t = 0; t < s.y1.size(); ++t) {
        const double y_prev = t == 0 ? config.y0 : s.y1(t - 1);
        out.oracle(t, 0) = theoretical_var1(config, y_prev);
        out.oracle(t, 1) = theoretical_covar(config, out.oracle(t, 0));
        out.oracle(t, 2) = theoretical_var2(config, y_prev);
    }
    return out;
}

CrisisDataset make_crisis_dataset(const CrisisConfig& config)
{
    if (config.institutions < 2 || config.T < 10)
        throw std::invalid_argument("crisis dataset needs J >= 2 and T >= 10");
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    const auto T = Eigen::Index(config.T);
    const auto J = Eigen::Index(config.institutions);

    CrisisDataset out;
    out.crisis.assign(config.T, false);
    for (std::size_t start = config.block_spacing / 2; start < config.T; start += config.block_spacing)
        for (std::size_t t = start; t < std::min(config.T, start + config.block_length); ++t)
            out.crisis[t] = true;

    auto& p = out.panel;
    p.dates = weekday_calendar(parse_date(sim_start_date), config.T);
    for (Eigen::Index j = 0; j < J; ++j)
        p.tickers.push_back("B" + std::to_string(j + 1));
    p.macro_names = {"factor"};
    p.returns.resize(T, J);
    p.macro.resize(T, 1);
    double factor = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
        factor = config.phi * factor + config.factor_sigma * normal(rng);
        double others = 0.0;
        for (Eigen::Index j = 0; j + 1 < J; ++j) {
            p.returns(t, j) = factor + config.idio_sigma * normal(rng);
            others += p.returns(t, j);
        }
        const double sd = out.crisis[std::size_t(t)] ? config.crisis_sigma : config.calm_sigma;
        p.returns(t, J - 1) = config.beta * others / double(J - 1) + sd * normal(rng);
        p.macro(t, 0) = factor;
    }

    NoiseTextConfig text = config.text;
    text.enabled = true;
    out.embeddings = attach_noise_text(p.dates, text);
    for (std::size_t t = 0; t < config.T; ++t)
        if (out.crisis[t])
            out.embeddings.days[p.dates[t]].row(0).array() += config.text_shift;
    return out;
}

} // namespace covarlab
