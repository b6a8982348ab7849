#pragma once

#include <stdexcept>

namespace covarlab
{

inline void check_tau(double tau)
{
    if (!(tau > 0.0 && tau < 1.0))
        throw std::invalid_argument("quantile level must lie in (0, 1)");
}

/// Quantile (check) loss u * (tau - 1{u < 0}).
inline double pinball(double u, double tau)
{
    check_tau(tau);
    return u < 0.0 ? u * (tau - 1.0) : u * tau;
}

/// d pinball / du. At the kink u = 0 the right derivative tau is used.
inline double pinball_slope(double u, double tau)
{
    return u < 0.0 ? tau - 1.0 : tau;
}

} // namespace covarlab
