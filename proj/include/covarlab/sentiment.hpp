#pragma once

// Sentiment baselines: a daily net-sentiment index and label tokens.
// Labels are read from CSV "date,article_id,label" with label one of
// negative, neutral, positive; article order within a day follows the file.

#include "covarlab/data_io.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace covarlab
{

enum class SentimentLabel
{
    negative = 1,
    neutral = 2,
    positive = 3,
};

SentimentLabel parse_label(const std::string& s);
const char* to_string(SentimentLabel label);

struct SentimentCounts
{
    std::size_t positive = 0, negative = 0, neutral = 0;

    std::size_t total() const { return positive + negative + neutral; }
};

SentimentCounts count_labels(const std::vector<SentimentLabel>& labels);

/// (pos - neg) / (pos + neu + neg); throws "no articles" on an empty count.
double sentiment_index(const SentimentCounts& counts);

struct LabelTokens
{
    Matrix E;  ///< 1 x capacity, label values 1 / 2 / 3, pads zero
    Mask mask;
};

/// One scalar token per label in the given order, padded to `capacity`.
LabelTokens labels_to_tokens(const std::vector<SentimentLabel>& labels, std::size_t capacity);

struct SentimentStore
{
    struct Entry
    {
        std::string article_id;
        SentimentLabel label;
    };
    std::map<Date, std::vector<Entry>> days;

    std::vector<ArticleId> ids() const;
    SentimentLabel label(const ArticleId& id) const;
};

SentimentStore load_sentiment(const std::filesystem::path& path);
void save_sentiment(const SentimentStore& store, const std::filesystem::path& path);

} // namespace covarlab
