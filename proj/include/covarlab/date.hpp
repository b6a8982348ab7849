#pragma once

#include <chrono>
#include <cstdint>
#include <string>
#include <string_view>

namespace covarlab
{

using Date = std::chrono::sys_days;

/// Parses YYYY-MM-DD; throws std::invalid_argument otherwise.
Date parse_date(std::string_view s);
std::string format_date(Date d);

inline std::int64_t days_since_epoch(Date d)
{
    return d.time_since_epoch().count();
}

inline Date date_from_days(std::int64_t days)
{
    return Date(std::chrono::days(days));
}

bool is_weekday(Date d);

/// First Monday..Friday on or after d.
Date next_weekday(Date d);

} // namespace covarlab
