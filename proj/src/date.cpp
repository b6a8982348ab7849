#include "covarlab/date.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace covarlab
{

namespace
{

int digits(std::string_view s, std::size_t pos, std::size_t len)
{
    int v = 0;
    const char* first = s.data() + pos;
    const auto [ptr, ec] = std::from_chars(first, first + len, v);
    if (ec != std::errc() || ptr != first + len)
        throw std::invalid_argument("bad date '" + std::string(s) + "'");
    return v;
}

} // namespace

Date parse_date(std::string_view s)
{
    if (s.size() != 10 || s[4] != '-' || s[7] != '-')
        throw std::invalid_argument("bad date '" + std::string(s) + "' (expected YYYY-MM-DD)");
    const std::chrono::year_month_day ymd{std::chrono::year(digits(s, 0, 4)),
                                          std::chrono::month(unsigned(digits(s, 5, 2))),
                                          std::chrono::day(unsigned(digits(s, 8, 2)))};
    if (!ymd.ok())
        throw std::invalid_argument("bad date '" + std::string(s) + "'");
    return Date(ymd);
}

std::string format_date(Date d)
{
    const std::chrono::year_month_day ymd(d);
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", int(ymd.year()), unsigned(ymd.month()), unsigned(ymd.day()));
    return buf;
}

bool is_weekday(Date d)
{
    const std::chrono::weekday w(d);
    return w != std::chrono::Saturday && w != std::chrono::Sunday;
}

Date next_weekday(Date d)
{
    while (!is_weekday(d))
        d += std::chrono::days(1);
    return d;
}

} // namespace covarlab
