#pragma once

// File formats and window assembly.
//
// Returns CSV: header "date,<ticker>...,macro_<name>..."; one row per trading
// day with log returns and the macro state observed that day. Columns whose
// name starts with "macro_" are macro states, every other column is a ticker.
//
// CVEM: "CVEM", u32 version, u32 d_e, then until end of file records of
// (i64 days since 1970-01-01, u32 count, count * d_e f64), all little-endian.
// Record dates are strictly increasing; article order within a day is kept.

#include "covarlab/date.hpp"
#include "covarlab/numcore.hpp"

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace covarlab
{

struct ReturnPanel
{
    std::vector<Date> dates;
    std::vector<std::string> tickers;
    std::vector<std::string> macro_names;
    Matrix returns;  ///< T x J log returns
    Matrix macro;    ///< T x m macro states

    Eigen::Index size() const { return Eigen::Index(dates.size()); }
    /// Column of `ticker`; throws if absent.
    Eigen::Index ticker_index(const std::string& ticker) const;
    /// Shapes agree, dates strictly increasing, every value finite.
    void validate() const;
};

inline constexpr const char* macro_prefix = "macro_";
inline constexpr std::size_t max_forward_fill = 3;

struct LoadReport
{
    std::vector<std::size_t> dropped_lines;  ///< 1-based line numbers
    std::size_t filled_cells = 0;
};

/// Rows with a missing return are dropped (and reported); missing macro
/// cells are forward-filled for up to `max_forward_fill` consecutive rows,
/// beyond that the row is dropped. Unparseable cells are errors.
ReturnPanel load_returns(const std::filesystem::path& path, LoadReport* report = nullptr);
void save_returns(const ReturnPanel& panel, const std::filesystem::path& path);

/// Row t - 1 holds ln(P_t / P_{t-1}).
Matrix log_returns(const Matrix& prices);

struct ArticleId
{
    Date date;
    std::uint32_t index = 0;  ///< position within the day's source order

    auto operator<=>(const ArticleId&) const = default;
};

struct EmbeddingStore
{
    std::size_t embed_dim = 0;
    std::map<Date, Matrix> days;  ///< d_e x count, columns in source order

    void add(Date date, const Vector& embedding);
    const Vector article(const ArticleId& id) const;
    std::vector<ArticleId> ids() const;
    std::size_t article_count() const;
};

inline constexpr std::uint32_t cvem_version = 1;

std::vector<std::uint8_t> embeddings_bytes(const EmbeddingStore& store);
EmbeddingStore embeddings_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& path);
EmbeddingStore load_embeddings(const std::filesystem::path& path);

/// Throws with both dimensions named when the store does not match the model.
void check_embed_dim(const EmbeddingStore& store, std::size_t expected);

/// Articles grouped by the trading day they become known on. An article
/// dated on a non-trading day belongs to the next trading day; articles after
/// the last trading day are ignored.
using DayBuckets = std::vector<std::vector<ArticleId>>;
DayBuckets bucket_by_trading_day(const std::vector<ArticleId>& ids, const std::vector<Date>& calendar);

struct WindowOptions
{
    std::size_t days = 5;
    std::size_t capacity = 97;
    /// Window covers t-4..t instead of t-5..t-1.
    bool include_day_t = false;
};

struct WindowSlots
{
    std::vector<ArticleId> ids;   ///< oldest day first, source order within a day
    std::vector<int> positions;   ///< day offset within the window, 0 = oldest
    std::size_t dropped = 0;      ///< articles cut by the capacity limit
};

/// Article slots for trading day index t. When the window holds more than
/// `capacity` articles the most recent ones (by day, then source order) are kept.
WindowSlots window_slots(const DayBuckets& buckets, std::size_t t, const WindowOptions& options);

struct Window
{
    Matrix E;  ///< d_e x capacity, pad columns zero
    Mask mask;
    std::vector<int> positions;  ///< per column, 0 on pads
    std::vector<ArticleId> ids;
    std::size_t dropped = 0;
};

Window assemble_window(const EmbeddingStore& store, const DayBuckets& buckets, std::size_t t,
                       const WindowOptions& options);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

/// Splits on commas; no quoting.
std::vector<std::string> split_csv_line(const std::string& line);

} // namespace covarlab
