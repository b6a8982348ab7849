#include "covarlab/backtest.hpp"

#include "covarlab/pinball.hpp"

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace covarlab
{

namespace
{

void check_aligned(const std::vector<double>& preds, const std::vector<double>& actuals)
{
    if (preds.size() != actuals.size())
        throw std::invalid_argument("prediction and actual series differ in length");
}

std::string fixed4(double v)
{
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << v;
    return s.str();
}

} // namespace

double avq_loss(const std::vector<double>& preds, const std::vector<double>& actuals, double tau)
{
    check_aligned(preds, actuals);
    if (preds.empty())
        throw std::invalid_argument("avq_loss: empty window");
    double sum = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        sum += pinball(actuals[i] - preds[i], tau);
    return sum / double(preds.size());
}

double exceedance_rate(const std::vector<double>& preds, const std::vector<double>& actuals)
{
    check_aligned(preds, actuals);
    if (preds.empty())
        return 0.0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < preds.size(); ++i)
        hits += actuals[i] < preds[i];
    return double(hits) / double(preds.size());
}

Date add_months(Date d, int months)
{
    using namespace std::chrono;
    const year_month_day ymd{d};
    const year_month ym = year_month{ymd.year(), ymd.month()} + std::chrono::months{months};
    const day last = year_month_day_last{ym.year(), month_day_last{ym.month()}}.day();
    return sys_days{ym / std::min(ymd.day(), last)};
}

LossTable cumulative_table(const std::vector<Date>& dates, const std::vector<std::string>& models,
                           const std::vector<std::vector<double>>& preds, const std::vector<double>& actuals,
                           double tau, Date start, int step_months)
{
    if (step_months <= 0)
        throw std::invalid_argument("cumulative_table: step must be positive");
    if (preds.size() != models.size())
        throw std::invalid_argument("cumulative_table: one prediction series per model");
    if (dates.size() != actuals.size())
        throw std::invalid_argument("cumulative_table: dates and actuals differ in length");
    for (const auto& p : preds)
        check_aligned(p, actuals);

    const auto first = std::size_t(std::lower_bound(dates.begin(), dates.end(), start) - dates.begin());
    if (first == dates.size())
        throw std::invalid_argument("cumulative_table: no dates on or after the start date");

    LossTable table;
    table.tau = tau;
    table.models = models;
    auto add_row = [&](std::string label, std::size_t end) {
        LossRow row{std::move(label), end - first, {}, {}};
        const std::vector<double> a(actuals.begin() + std::ptrdiff_t(first), actuals.begin() + std::ptrdiff_t(end));
        for (const auto& p : preds) {
            const std::vector<double> w(p.begin() + std::ptrdiff_t(first), p.begin() + std::ptrdiff_t(end));
            row.avq.push_back(avq_loss(w, a, tau));
            row.exceedance.push_back(exceedance_rate(w, a));
        }
        table.rows.push_back(std::move(row));
    };

    // A window ending at `stop` is complete when no trading day before it is
    // missing past the last observation.
    const Date next_day = next_weekday(dates.back() + std::chrono::days(1));
    for (int k = 1;; ++k) {
        const Date stop = add_months(start, k * step_months);
        if (next_day < stop)
            break;
        const auto end = std::size_t(std::lower_bound(dates.begin(), dates.end(), stop) - dates.begin());
        if (end > first)
            add_row(std::to_string(k * step_months) + " months", end);
    }
    add_row("Full Test Period", dates.size());
    return table;
}

void write_loss_table_csv(const LossTable& table, std::ostream& out)
{
    out << "horizon,observations";
    for (const auto& m : table.models)
        out << ',' << m << "_avq_x100";
    for (const auto& m : table.models)
        out << ',' << m << "_exceed";
    out << '\n';
    for (const auto& row : table.rows) {
        out << row.horizon << ',' << row.observations;
        for (double v : row.avq)
            out << ',' << fixed4(100.0 * v);
        for (double v : row.exceedance)
            out << ',' << fixed4(v);
        out << '\n';
    }
}

void write_loss_table_text(const LossTable& table, std::ostream& out)
{
    std::size_t label_width = std::string("Horizon").size();
    for (const auto& row : table.rows)
        label_width = std::max(label_width, row.horizon.size());
    std::vector<std::size_t> widths;
    for (const auto& m : table.models)
        widths.push_back(std::max<std::size_t>(m.size(), 8));

    out << std::left << std::setw(int(label_width)) << "Horizon";
    for (std::size_t i = 0; i < table.models.size(); ++i)
        out << "  " << std::right << std::setw(int(widths[i])) << table.models[i];
    out << '\n';
    for (const auto& row : table.rows) {
        out << std::left << std::setw(int(label_width)) << row.horizon;
        for (std::size_t i = 0; i < row.avq.size(); ++i)
            out << "  " << std::right << std::setw(int(widths[i])) << fixed4(100.0 * row.avq[i]);
        out << '\n';
    }
    out << "AVQ loss at tau = " << table.tau << ", in units of 1e-2.\n";
}

} // namespace covarlab
