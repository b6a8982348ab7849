#include "covarlab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>

namespace covarlab
{

namespace
{

Split parse_split(const std::string& s)
{
    if (s == "train")
        return Split::train;
    if (s == "val")
        return Split::val;
    if (s == "test")
        return Split::test;
    throw std::runtime_error("unknown split label '" + s + "'");
}

double parse_number(const std::string& s, const std::string& where)
{
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != s.size())
        throw std::runtime_error("unparseable value '" + s + "' in " + where);
    return v;
}

std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path,
                                                    const std::vector<std::string>& header)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line) || split_csv_line(line) != header) {
        std::string expected;
        for (const auto& h : header)
            expected += (expected.empty() ? "" : ",") + h;
        throw std::runtime_error(path.string() + ": header must be " + expected);
    }
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (line.empty())
            continue;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw std::runtime_error(path.string() + ": ragged row " + std::to_string(rows.size() + 2));
        rows.push_back(std::move(cells));
    }
    return rows;
}

} // namespace

std::string to_string(ModelKind kind)
{
    switch (kind) {
    case ModelKind::text_transformer:
        return "text_transformer";
    case ModelKind::returns_mlp:
        return "returns_mlp";
    case ModelKind::sentiment_mlp:
        return "sentiment_mlp";
    default:
        return "sentiment_transformer";
    }
}

ModelKind parse_model_kind(const std::string& s)
{
    for (auto k : {ModelKind::text_transformer, ModelKind::returns_mlp, ModelKind::sentiment_mlp,
                   ModelKind::sentiment_transformer})
        if (to_string(k) == s)
            return k;
    throw std::invalid_argument("unknown model kind '" + s +
                                "' (expected text_transformer, returns_mlp, sentiment_mlp or sentiment_transformer)");
}

SplitSizes sample_split(const ReturnPanel& panel, double train_fraction, double val_fraction)
{
    if (panel.size() < 2)
        throw std::invalid_argument("panel needs at least two rows");
    return split_chronological(std::size_t(panel.size() - 1), train_fraction, val_fraction);
}

Eigen::Index VarSeries::ticker_index(const std::string& ticker) const
{
    for (std::size_t j = 0; j < tickers.size(); ++j)
        if (tickers[j] == ticker)
            return Eigen::Index(j);
    throw std::invalid_argument("VaR series has no ticker '" + ticker + "'");
}

VarSeries estimate_var(const ReturnPanel& panel, double tau, double train_fraction, double val_fraction)
{
    panel.validate();
    const SplitSizes split = sample_split(panel, train_fraction, val_fraction);
    const Eigen::Index S = panel.size() - 1;
    const auto train = Eigen::Index(split.train);

    VarSeries out;
    out.tau = tau;
    out.tickers = panel.tickers;
    out.dates.assign(panel.dates.begin() + 1, panel.dates.end());
    for (Eigen::Index s = 0; s < S; ++s)
        out.splits.push_back(split_of(split, std::size_t(s)));
    out.values.resize(S, panel.returns.cols());

    const Matrix lagged = panel.macro.topRows(S);
    const Matrix X = lagged.topRows(train);
    for (Eigen::Index j = 0; j < panel.returns.cols(); ++j) {
        const Vector y = panel.returns.col(j).segment(1, train);
        const QuantileFit fit = fit_linear_quantile(X, y, tau);
        out.ridge_damped += fit.ridge_damped ? 1 : 0;
        for (Eigen::Index s = 0; s < S; ++s)
            out.values(s, j) = predict_var(fit.model, lagged.row(s).transpose());
        out.models.push_back(fit.model);
    }
    return out;
}

std::vector<VarSeries> estimate_var_all(const ReturnPanel& panel, const std::vector<double>& taus,
                                        double train_fraction, double val_fraction)
{
    std::vector<VarSeries> out;
    for (double tau : taus)
        out.push_back(estimate_var(panel, tau, train_fraction, val_fraction));
    return out;
}

void write_var_csv(const std::vector<VarSeries>& series, std::ostream& out)
{
    out << "date,ticker,tau,var,split\n";
    for (const auto& v : series)
        for (Eigen::Index j = 0; j < v.values.cols(); ++j)
            for (Eigen::Index s = 0; s < v.values.rows(); ++s)
                out << format_date(v.dates[std::size_t(s)]) << ',' << v.tickers[std::size_t(j)] << ','
                    << format_double(v.tau) << ',' << format_double(v.values(s, j)) << ','
                    << to_string(v.splits[std::size_t(s)]) << '\n';
}

std::vector<VarSeries> read_var_csv(const std::filesystem::path& path)
{
    const auto rows = read_csv_rows(path, {"date", "ticker", "tau", "var", "split"});
    // tau -> ticker -> (date, value, split), all in file order.
    struct Cell
    {
        Date date;
        double value;
        Split split;
    };
    std::map<double, std::vector<std::pair<std::string, std::vector<Cell>>>> grouped;
    for (const auto& r : rows) {
        const double tau = parse_number(r[2], path.string());
        auto& tickers = grouped[tau];
        if (tickers.empty() || tickers.back().first != r[1])
            tickers.push_back({r[1], {}});
        tickers.back().second.push_back({parse_date(r[0]), parse_number(r[3], path.string()), parse_split(r[4])});
    }
    std::vector<VarSeries> out;
    for (const auto& [tau, tickers] : grouped) {
        VarSeries v;
        v.tau = tau;
        const auto& first = tickers.front().second;
        for (const auto& c : first) {
            v.dates.push_back(c.date);
            v.splits.push_back(c.split);
        }
        v.values.resize(Eigen::Index(first.size()), Eigen::Index(tickers.size()));
        for (std::size_t j = 0; j < tickers.size(); ++j) {
            v.tickers.push_back(tickers[j].first);
            if (tickers[j].second.size() != first.size())
                throw std::runtime_error(path.string() + ": ticker " + tickers[j].first + " has a different date count");
            for (std::size_t s = 0; s < first.size(); ++s) {
                if (tickers[j].second[s].date != v.dates[s])
                    throw std::runtime_error(path.string() + ": misaligned dates for ticker " + tickers[j].first);
                v.values(Eigen::Index(s), Eigen::Index(j)) = tickers[j].second[s].value;
            }
        }
        out.push_back(std::move(v));
    }
    return out;
}

const VarSeries& find_var(const std::vector<VarSeries>& all, double tau)
{
    for (const auto& v : all)
        if (std::abs(v.tau - tau) < 1e-12)
            return v;
    throw std::runtime_error("no VaR series at tau=" + format_double(tau));
}

std::size_t quantile_crossings(const VarSeries& lower, const VarSeries& median)
{
    if (lower.values.rows() != median.values.rows() || lower.values.cols() != median.values.cols())
        throw std::invalid_argument("quantile_crossings: shape mismatch");
    return std::size_t((lower.values.array() > median.values.array()).count());
}

ArchConfig arch_for(ModelKind kind, const ArchConfig& arch)
{
    switch (kind) {
    case ModelKind::returns_mlp:
        return returns_only_config(arch.institutions, 0, arch.mlp_depth, arch.mlp_width);
    case ModelKind::sentiment_mlp:
        return returns_only_config(arch.institutions, 1, arch.mlp_depth, arch.mlp_width);
    case ModelKind::sentiment_transformer: {
        ArchConfig a = arch;
        a.embed_dim = 1;
        return a;
    }
    default:
        return arch;
    }
}

InputBuilder::InputBuilder(const ReturnPanel& panel, ModelKind kind, const ArchConfig& arch,
                           const WindowOptions& window, const EmbeddingStore* embeddings,
                           const SentimentStore* sentiment)
    : panel_(panel), kind_(kind), arch_(arch_for(kind, arch)), options_(window), embeddings_(embeddings),
      sentiment_(sentiment)
{
    arch_.validate();
    if (arch_.institutions != panel.tickers.size())
        throw std::invalid_argument("architecture expects J=" + std::to_string(arch_.institutions) +
                                    " institutions, panel has " + std::to_string(panel.tickers.size()));
    // The sentiment index counts the same articles the text model would see.
    options_.capacity = arch.tokens;
    if (kind == ModelKind::text_transformer) {
        if (!embeddings)
            throw std::invalid_argument("text model needs an embedding store");
        check_embed_dim(*embeddings, arch_.embed_dim);
        buckets_ = bucket_by_trading_day(embeddings->ids(), panel.dates);
    } else if (kind == ModelKind::sentiment_mlp || kind == ModelKind::sentiment_transformer) {
        if (!sentiment)
            throw std::invalid_argument("sentiment model needs a sentiment label file");
        buckets_ = bucket_by_trading_day(sentiment->ids(), panel.dates);
    }
}

TextWindow InputBuilder::window(std::size_t row) const
{
    TextWindow w;
    switch (kind_) {
    case ModelKind::returns_mlp:
        w = {Matrix(0, 1), all_valid(1)};
        break;
    case ModelKind::text_transformer: {
        const Window raw = assemble_window(*embeddings_, buckets_, row, options_);
        dropped_ += raw.dropped;
        w = {raw.E, raw.mask};
        if (!w.mask.any())
            w.mask(0) = true;
        else
            w.E = encode_positions(raw.E, raw.mask, raw.positions);
        break;
    }
    case ModelKind::sentiment_mlp:
    case ModelKind::sentiment_transformer: {
        const WindowSlots slots = window_slots(buckets_, row, options_);
        dropped_ += slots.dropped;
        std::vector<SentimentLabel> labels;
        for (const auto& id : slots.ids)
            labels.push_back(sentiment_->label(id));
        if (kind_ == ModelKind::sentiment_mlp) {
            const SentimentCounts c = count_labels(labels);
            w = {Matrix::Constant(1, 1, c.total() ? sentiment_index(c) : 0.0), all_valid(1)};
        } else {
            const LabelTokens t = labels_to_tokens(labels, arch_.tokens);
            w = {t.E, t.mask};
            if (!w.mask.any()) {
                w.mask(0) = true;
            } else {
                std::vector<int> positions(std::size_t(arch_.tokens), 0);
                std::copy(slots.positions.begin(), slots.positions.end(), positions.begin());
                w.E = encode_positions(t.E, t.mask, positions);
            }
        }
        break;
    }
    }
    return w;
}

TokenBatch InputBuilder::build(std::size_t row, const Vector& returns) const
{
    const TextWindow w = window(row);
    return concat_pi(returns, w.E, w.mask);
}

Vector others(const Matrix& values, Eigen::Index row, Eigen::Index target)
{
    Vector out(values.cols() - 1);
    for (Eigen::Index j = 0, k = 0; j < values.cols(); ++j)
        if (j != target)
            out(k++) = values(row, j);
    return out;
}

CovarFit fit_covar_model(const ReturnPanel& panel, Eigen::Index target, const InputBuilder& inputs,
                         const CovarConfig& config)
{
    panel.validate();
    if (target < 0 || target >= panel.returns.cols())
        throw std::invalid_argument("target institution out of range");
    CovarFit out;
    out.split = sample_split(panel, config.train.train_fraction, config.train.val_fraction);

    Dataset all;
    for (Eigen::Index t = 1; t < panel.size(); ++t) {
        all.inputs.push_back(inputs.build(std::size_t(t), others(panel.returns, t, target)));
        all.targets.push_back(panel.returns(t, target));
    }
    const Dataset train_set = all.slice(0, out.split.train);
    const Dataset val_set = all.slice(out.split.train, out.split.val);

    TransformerModel init = init_model(arch_for(config.kind, config.arch), config.init_seed);
    // Start the output at the unconditional training quantile so the first
    // epochs do not drive every ReLU unit negative just to shift the level.
    std::vector<double> y(train_set.targets);
    std::sort(y.begin(), y.end());
    const auto k = std::size_t(std::ceil(config.train.tau * double(y.size())));
    init.weights.mlp.back().bias(0, 0) = y[std::max<std::size_t>(k, 1) - 1];
    TrainResult result = train(init, train_set, val_set, config.train);
    out.model = std::move(result.model);
    out.report = std::move(result.report);
    return out;
}

double predict_covar(const TransformerModel& model, const Vector& var_hat, const TextWindow& text)
{
    if (var_hat.size() != Eigen::Index(model.config.return_dim()))
        throw std::invalid_argument("predict_covar: expected " + std::to_string(model.config.return_dim()) +
                                    " VaR inputs, got " + std::to_string(var_hat.size()));
    return model_forward(model, concat_pi(var_hat, text.E, text.mask));
}

double delta_covar(const TransformerModel& model, const Vector& var_tau, const Vector& var_median,
                   const TextWindow& text)
{
    return predict_covar(model, var_tau, text) - predict_covar(model, var_median, text);
}

RiskSeries predict_risk(const TransformerModel& model, const ReturnPanel& panel, Eigen::Index target,
                        const VarSeries& var_tau, const VarSeries& var_median, const InputBuilder& inputs)
{
    const std::vector<Date> sample_dates(panel.dates.begin() + 1, panel.dates.end());
    if (var_tau.dates != sample_dates || var_median.dates != sample_dates)
        throw std::runtime_error("VaR series dates do not match the return panel");
    if (var_tau.tickers != panel.tickers || var_median.tickers != panel.tickers)
        throw std::runtime_error("VaR series tickers do not match the return panel");
    RiskSeries out;
    out.ticker = panel.tickers[std::size_t(target)];
    out.tau = var_tau.tau;
    for (Eigen::Index s = 0; s < Eigen::Index(sample_dates.size()); ++s) {
        const TextWindow text = inputs.window(std::size_t(s + 1));
        RiskRow row;
        row.date = sample_dates[std::size_t(s)];
        row.split = var_tau.splits[std::size_t(s)];
        row.var = var_tau.values(s, target);
        row.covar = predict_covar(model, others(var_tau.values, s, target), text);
        row.delta_covar = row.covar - predict_covar(model, others(var_median.values, s, target), text);
        out.rows.push_back(row);
    }
    return out;
}

void write_risk_csv(const RiskSeries& series, std::ostream& out)
{
    out << "date,ticker,tau,var,covar,delta_covar,split\n";
    for (const auto& r : series.rows)
        out << format_date(r.date) << ',' << series.ticker << ',' << format_double(series.tau) << ','
            << format_double(r.var) << ',' << format_double(r.covar) << ',' << format_double(r.delta_covar) << ','
            << to_string(r.split) << '\n';
}

RiskSeries read_risk_csv(const std::filesystem::path& path)
{
    const auto rows = read_csv_rows(path, {"date", "ticker", "tau", "var", "covar", "delta_covar", "split"});
    RiskSeries out;
    for (const auto& r : rows) {
        if (out.rows.empty()) {
            out.ticker = r[1];
            out.tau = parse_number(r[2], path.string());
        } else if (r[1] != out.ticker) {
            throw std::runtime_error(path.string() + ": mixed tickers in one risk series");
        }
        out.rows.push_back({parse_date(r[0]), parse_number(r[3], path.string()), parse_number(r[4], path.string()),
                            parse_number(r[5], path.string()), parse_split(r[6])});
    }
    return out;
}

} // namespace covarlab
