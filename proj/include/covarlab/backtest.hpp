#pragma once

// Out-of-sample evaluation of quantile forecasts: average quantile (AVQ)
// loss, cumulative tables over calendar-month horizons, and breach rates.
// Values are kept unscaled; the x100 display convention lives in the writers.

#include "covarlab/date.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace covarlab
{

/// Mean pinball loss of actual - pred; throws on empty or misaligned input.
double avq_loss(const std::vector<double>& preds, const std::vector<double>& actuals, double tau);

/// Share of dates with actual < pred.
double exceedance_rate(const std::vector<double>& preds, const std::vector<double>& actuals);

/// d plus `months` calendar months, clamped to the end of a shorter month.
Date add_months(Date d, int months);

struct LossRow
{
    std::string horizon;         ///< "3 months", ..., "Full Test Period"
    std::size_t observations = 0;
    std::vector<double> avq;     ///< one per model
    std::vector<double> exceedance;
};

struct LossTable
{
    double tau = 0.05;
    std::vector<std::string> models;
    std::vector<LossRow> rows;
};

/// Cumulative windows [start, start + k * step_months) for k = 1, 2, ...
/// while the window is complete, i.e. the data reach its last trading day,
/// followed by the full period from `start`.
LossTable cumulative_table(const std::vector<Date>& dates, const std::vector<std::string>& models,
                           const std::vector<std::vector<double>>& preds, const std::vector<double>& actuals,
                           double tau, Date start, int step_months = 3);

/// CSV "horizon,observations,<model>_avq_x100,...,<model>_exceed,...".
void write_loss_table_csv(const LossTable& table, std::ostream& out);
/// Aligned text table, AVQ in units of 1e-2 with four decimals.
void write_loss_table_text(const LossTable& table, std::ostream& out);

} // namespace covarlab
