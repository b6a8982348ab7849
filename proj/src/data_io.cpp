#include "covarlab/data_io.hpp"

#include "byte_io.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <sstream>

namespace covarlab
{

namespace
{

bool is_missing(const std::string& cell)
{
    return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan";
}

double parse_cell(const std::string& cell, std::size_t line, const std::string& column)
{
    double v = 0.0;
    const char* first = cell.data();
    const char* last = first + cell.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || !std::isfinite(v))
        throw std::runtime_error("unparseable value '" + cell + "' at line " + std::to_string(line) + ", column " +
                                 column);
    return v;
}

std::string trim_cr(std::string s)
{
    if (!s.empty() && s.back() == '\r')
        s.pop_back();
    return s;
}

} // namespace

std::vector<std::string> split_csv_line(const std::string& line)
{
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ','))
        out.push_back(cell);
    if (!line.empty() && line.back() == ',')
        out.emplace_back();
    return out;
}

std::string format_double(double v)
{
    char buf[32];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

Eigen::Index ReturnPanel::ticker_index(const std::string& ticker) const
{
    for (std::size_t j = 0; j < tickers.size(); ++j)
        if (tickers[j] == ticker)
            return Eigen::Index(j);
    throw std::invalid_argument("unknown ticker '" + ticker + "'");
}

void ReturnPanel::validate() const
{
    const auto T = size();
    if (returns.rows() != T || macro.rows() != T || returns.cols() != Eigen::Index(tickers.size()) ||
        macro.cols() != Eigen::Index(macro_names.size()))
        throw std::invalid_argument("return panel shape mismatch");
    for (std::size_t t = 1; t < dates.size(); ++t)
        if (dates[t] <= dates[t - 1])
            throw std::runtime_error("non-monotone dates");
    if (!returns.allFinite() || !macro.allFinite())
        throw std::runtime_error("return panel holds non-finite values");
}

ReturnPanel load_returns(const std::filesystem::path& path, LoadReport* report)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line))
        throw std::runtime_error(path.string() + ": empty file");
    const auto header = split_csv_line(trim_cr(line));
    if (header.empty() || header[0] != "date")
        throw std::runtime_error(path.string() + ": first column must be 'date'");

    ReturnPanel panel;
    std::vector<std::size_t> ticker_cols, macro_cols;
    for (std::size_t c = 1; c < header.size(); ++c) {
        if (header[c].starts_with(macro_prefix)) {
            panel.macro_names.push_back(header[c].substr(std::string_view(macro_prefix).size()));
            macro_cols.push_back(c);
        } else {
            panel.tickers.push_back(header[c]);
            ticker_cols.push_back(c);
        }
    }
    if (panel.tickers.empty())
        throw std::runtime_error(path.string() + ": no ticker columns");

    LoadReport local;
    std::vector<std::vector<double>> ret_rows, macro_rows;
    std::vector<std::optional<double>> last_macro(macro_cols.size());
    std::vector<std::size_t> fill_run(macro_cols.size(), 0);
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        line = trim_cr(line);
        if (line.empty())
            continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + " has " +
                                     std::to_string(cells.size()) + " cells, expected " +
                                     std::to_string(header.size()));
        Date date;
        try {
            date = parse_date(cells[0]);
        } catch (const std::invalid_argument&) {
            throw std::runtime_error("unparseable value '" + cells[0] + "' at line " + std::to_string(line_no) +
                                     ", column date");
        }

        bool drop = false;
        std::vector<double> r(ticker_cols.size());
        for (std::size_t j = 0; j < ticker_cols.size(); ++j) {
            const auto& cell = cells[ticker_cols[j]];
            if (is_missing(cell))
                drop = true;
            else
                r[j] = parse_cell(cell, line_no, header[ticker_cols[j]]);
        }
        std::vector<double> m(macro_cols.size());
        std::size_t filled = 0;
        for (std::size_t k = 0; k < macro_cols.size(); ++k) {
            const auto& cell = cells[macro_cols[k]];
            if (!is_missing(cell)) {
                m[k] = parse_cell(cell, line_no, header[macro_cols[k]]);
                continue;
            }
            if (last_macro[k] && fill_run[k] < max_forward_fill) {
                m[k] = *last_macro[k];
                ++filled;
            } else {
                drop = true;
            }
        }
        if (!panel.dates.empty() && date <= panel.dates.back())
            throw std::runtime_error("non-monotone dates");
        if (drop) {
            local.dropped_lines.push_back(line_no);
            continue;
        }
        for (std::size_t k = 0; k < macro_cols.size(); ++k) {
            fill_run[k] = is_missing(cells[macro_cols[k]]) ? fill_run[k] + 1 : 0;
            last_macro[k] = m[k];
        }
        local.filled_cells += filled;
        panel.dates.push_back(date);
        ret_rows.push_back(std::move(r));
        macro_rows.push_back(std::move(m));
    }

    const auto T = Eigen::Index(panel.dates.size());
    panel.returns.resize(T, Eigen::Index(ticker_cols.size()));
    panel.macro.resize(T, Eigen::Index(macro_cols.size()));
    for (Eigen::Index t = 0; t < T; ++t) {
        for (Eigen::Index j = 0; j < panel.returns.cols(); ++j)
            panel.returns(t, j) = ret_rows[std::size_t(t)][std::size_t(j)];
        for (Eigen::Index k = 0; k < panel.macro.cols(); ++k)
            panel.macro(t, k) = macro_rows[std::size_t(t)][std::size_t(k)];
    }
    if (report)
        *report = std::move(local);
    return panel;
}

void save_returns(const ReturnPanel& panel, const std::filesystem::path& path)
{
    panel.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << "date";
    for (const auto& t : panel.tickers)
        out << ',' << t;
    for (const auto& m : panel.macro_names)
        out << ',' << macro_prefix << m;
    out << '\n';
    for (Eigen::Index t = 0; t < panel.size(); ++t) {
        out << format_date(panel.dates[std::size_t(t)]);
        for (Eigen::Index j = 0; j < panel.returns.cols(); ++j)
            out << ',' << format_double(panel.returns(t, j));
        for (Eigen::Index k = 0; k < panel.macro.cols(); ++k)
            out << ',' << format_double(panel.macro(t, k));
        out << '\n';
    }
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

Matrix log_returns(const Matrix& prices)
{
    if (prices.rows() < 2)
        throw std::invalid_argument("log_returns: need at least two price rows");
    if ((prices.array() <= 0.0).any())
        throw std::invalid_argument("log_returns: prices must be positive");
    return (prices.bottomRows(prices.rows() - 1).array() / prices.topRows(prices.rows() - 1).array()).log().matrix();
}

void EmbeddingStore::add(Date date, const Vector& embedding)
{
    if (embedding.size() != Eigen::Index(embed_dim))
        throw std::invalid_argument("embedding has dimension " + std::to_string(embedding.size()) + ", store holds " +
                                    std::to_string(embed_dim));
    if (!embedding.allFinite())
        throw std::invalid_argument("embedding holds non-finite values");
    Matrix& day = days[date];
    day.conservativeResize(Eigen::Index(embed_dim), day.cols() + 1);
    day.col(day.cols() - 1) = embedding;
}

const Vector EmbeddingStore::article(const ArticleId& id) const
{
    const auto it = days.find(id.date);
    if (it == days.end() || Eigen::Index(id.index) >= it->second.cols())
        throw std::out_of_range("no article " + format_date(id.date) + "#" + std::to_string(id.index));
    return it->second.col(Eigen::Index(id.index));
}

std::vector<ArticleId> EmbeddingStore::ids() const
{
    std::vector<ArticleId> out;
    for (const auto& [date, m] : days)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            out.push_back({date, std::uint32_t(c)});
    return out;
}

std::size_t EmbeddingStore::article_count() const
{
    std::size_t n = 0;
    for (const auto& [date, m] : days)
        n += std::size_t(m.cols());
    return n;
}

std::vector<std::uint8_t> embeddings_bytes(const EmbeddingStore& store)
{
    detail::ByteWriter w;
    w.raw("CVEM", 4);
    w.u32(cvem_version);
    w.u32(std::uint32_t(store.embed_dim));
    for (const auto& [date, m] : store.days) {
        if (m.cols() == 0)
            continue;
        w.i64(days_since_epoch(date));
        w.u32(std::uint32_t(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                w.f64(m(i, c));
    }
    return std::move(w.bytes());
}

EmbeddingStore embeddings_from_bytes(const std::vector<std::uint8_t>& bytes)
{
    detail::ByteReader r(bytes);
    if (r.raw(4, "magic") != "CVEM")
        throw std::runtime_error("not a CVEM file (bad magic)");
    const auto version = r.u32("version");
    if (version != cvem_version)
        throw std::runtime_error("unsupported CVEM version " + std::to_string(version));
    EmbeddingStore store;
    store.embed_dim = r.u32("embedding dimension");
    std::optional<Date> previous;
    while (!r.done()) {
        const std::size_t record_offset = r.offset();
        const Date date = date_from_days(r.i64("record date"));
        const auto count = r.u32("record count");
        if (previous && date <= *previous)
            throw std::runtime_error("non-monotone dates in CVEM record at offset " + std::to_string(record_offset));
        r.need(std::size_t(count) * store.embed_dim * 8, "record body");
        Matrix m(Eigen::Index(store.embed_dim), Eigen::Index(count));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                m(i, c) = r.f64("record body");
        if (!m.allFinite())
            throw std::runtime_error("non-finite embedding in CVEM record at offset " + std::to_string(record_offset));
        store.days.emplace(date, std::move(m));
        previous = date;
    }
    return store;
}

void save_embeddings(const EmbeddingStore& store, const std::filesystem::path& path)
{
    detail::write_file_bytes(path, embeddings_bytes(store));
}

EmbeddingStore load_embeddings(const std::filesystem::path& path)
{
    try {
        return embeddings_from_bytes(detail::read_file_bytes(path));
    } catch (const std::runtime_error& e) {
        throw std::runtime_error(path.string() + ": " + e.what());
    }
}

void check_embed_dim(const EmbeddingStore& store, std::size_t expected)
{
    if (store.embed_dim != expected)
        throw std::runtime_error("embedding dimension mismatch: file has d_e=" + std::to_string(store.embed_dim) +
                                 ", model expects d_e=" + std::to_string(expected));
}

DayBuckets bucket_by_trading_day(const std::vector<ArticleId>& ids, const std::vector<Date>& calendar)
{
    DayBuckets buckets(calendar.size());
    for (const auto& id : ids) {
        const auto it = std::lower_bound(calendar.begin(), calendar.end(), id.date);
        if (it != calendar.end())
            buckets[std::size_t(it - calendar.begin())].push_back(id);
    }
    return buckets;
}

WindowSlots window_slots(const DayBuckets& buckets, std::size_t t, const WindowOptions& options)
{
    if (t >= buckets.size())
        throw std::out_of_range("window day index out of range");
    if (options.days == 0 || options.capacity == 0)
        throw std::invalid_argument("window needs at least one day and one slot");
    // Day offsets: k = 0 is the oldest day of the full-length window, so the
    // most recent day always carries k = days - 1 even near the sample start.
    const std::ptrdiff_t last = std::ptrdiff_t(t) - (options.include_day_t ? 0 : 1);
    const std::ptrdiff_t first = last - std::ptrdiff_t(options.days) + 1;
    WindowSlots slots;
    for (std::ptrdiff_t day = std::max<std::ptrdiff_t>(first, 0); day <= last; ++day)
        for (const auto& id : buckets[std::size_t(day)]) {
            slots.ids.push_back(id);
            slots.positions.push_back(int(day - first));
        }
    if (slots.ids.size() > options.capacity) {
        slots.dropped = slots.ids.size() - options.capacity;
        slots.ids.erase(slots.ids.begin(), slots.ids.begin() + std::ptrdiff_t(slots.dropped));
        slots.positions.erase(slots.positions.begin(), slots.positions.begin() + std::ptrdiff_t(slots.dropped));
    }
    return slots;
}

Window assemble_window(const EmbeddingStore& store, const DayBuckets& buckets, std::size_t t,
                       const WindowOptions& options)
{
    const WindowSlots slots = window_slots(buckets, t, options);
    Window w;
    const auto n = Eigen::Index(options.capacity);
    w.E = Matrix::Zero(Eigen::Index(store.embed_dim), n);
    w.mask = Mask::Constant(n, false);
    w.positions.assign(options.capacity, 0);
    for (std::size_t c = 0; c < slots.ids.size(); ++c) {
        w.E.col(Eigen::Index(c)) = store.article(slots.ids[c]);
        w.mask(Eigen::Index(c)) = true;
        w.positions[c] = slots.positions[c];
    }
    w.ids = slots.ids;
    w.dropped = slots.dropped;
    return w;
}

} // namespace covarlab
