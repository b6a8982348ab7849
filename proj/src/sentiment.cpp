#include "covarlab/sentiment.hpp"

#include <fstream>
#include <stdexcept>

namespace covarlab
{

SentimentLabel parse_label(const std::string& s)
{
    if (s == "negative")
        return SentimentLabel::negative;
    if (s == "neutral")
        return SentimentLabel::neutral;
    if (s == "positive")
        return SentimentLabel::positive;
    throw std::invalid_argument("unknown sentiment label '" + s + "'");
}

const char* to_string(SentimentLabel label)
{
    switch (label) {
    case SentimentLabel::negative:
        return "negative";
    case SentimentLabel::neutral:
        return "neutral";
    default:
        return "positive";
    }
}

SentimentCounts count_labels(const std::vector<SentimentLabel>& labels)
{
    SentimentCounts c;
    for (const auto l : labels) {
        if (l == SentimentLabel::positive)
            ++c.positive;
        else if (l == SentimentLabel::negative)
            ++c.negative;
        else
            ++c.neutral;
    }
    return c;
}

double sentiment_index(const SentimentCounts& counts)
{
    if (counts.total() == 0)
        throw std::invalid_argument("no articles");
    return (double(counts.positive) - double(counts.negative)) / double(counts.total());
}

LabelTokens labels_to_tokens(const std::vector<SentimentLabel>& labels, std::size_t capacity)
{
    if (labels.size() > capacity)
        throw std::invalid_argument("labels_to_tokens: " + std::to_string(labels.size()) +
                                    " labels exceed capacity " + std::to_string(capacity));
    LabelTokens out{Matrix::Zero(1, Eigen::Index(capacity)), Mask::Constant(Eigen::Index(capacity), false)};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        out.E(0, Eigen::Index(i)) = double(int(labels[i]));
        out.mask(Eigen::Index(i)) = true;
    }
    return out;
}

std::vector<ArticleId> SentimentStore::ids() const
{
    std::vector<ArticleId> out;
    for (const auto& [date, entries] : days)
        for (std::size_t i = 0; i < entries.size(); ++i)
            out.push_back({date, std::uint32_t(i)});
    return out;
}

SentimentLabel SentimentStore::label(const ArticleId& id) const
{
    const auto it = days.find(id.date);
    if (it == days.end() || id.index >= it->second.size())
        throw std::out_of_range("no sentiment label for " + format_date(id.date) + "#" + std::to_string(id.index));
    return it->second[id.index].label;
}

SentimentStore load_sentiment(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != std::vector<std::string>{"date", "article_id", "label"})
        throw std::runtime_error(path.string() + ": header must be date,article_id,label");
    SentimentStore store;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r')
            line.pop_back();
        if (line.empty())
            continue;
        const auto cells = split_csv_line(line);
        if (cells.size() != 3)
            throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + " needs 3 cells");
        try {
            store.days[parse_date(cells[0])].push_back({cells[1], parse_label(cells[2])});
        } catch (const std::invalid_argument& e) {
            throw std::runtime_error(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return store;
}

void save_sentiment(const SentimentStore& store, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out << "date,article_id,label\n";
    for (const auto& [date, entries] : store.days)
        for (const auto& e : entries)
            out << format_date(date) << ',' << e.article_id << ',' << to_string(e.label) << '\n';
}

} // namespace covarlab
