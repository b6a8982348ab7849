#pragma once

// Two-step CoVaR estimation.
//
// Sample s uses panel row t = s + 1 so that the VaR regression can condition
// on the macro state of row t - 1. Step one fits linear quantile VaR models on
// the training samples and predicts them on every sample. Step two trains a
// quantile model of R_j,t on (R_-j,t, text window), and at prediction time
// the others' VaR estimates replace their realized returns.

#include "covarlab/data_io.hpp"
#include "covarlab/quantile.hpp"
#include "covarlab/sentiment.hpp"
#include "covarlab/trainer.hpp"

#include <iosfwd>
#include <string>
#include <vector>

namespace covarlab
{

enum class ModelKind
{
    text_transformer,
    returns_mlp,
    sentiment_mlp,
    sentiment_transformer,
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

/// Sample count and splits implied by a panel (first row only serves as a lag).
SplitSizes sample_split(const ReturnPanel& panel, double train_fraction, double val_fraction);

struct VarSeries
{
    double tau = 0.05;
    std::vector<Date> dates;    ///< sample dates
    std::vector<Split> splits;
    std::vector<std::string> tickers;
    Matrix values;              ///< samples x J
    std::vector<LinearQuantileModel> models;
    std::size_t ridge_damped = 0;

    Eigen::Index ticker_index(const std::string& ticker) const;
};

/// VaR_i,t = alpha_i + gamma_i' M_t-1, fit on training samples only.
VarSeries estimate_var(const ReturnPanel& panel, double tau, double train_fraction = 0.4, double val_fraction = 0.2);
std::vector<VarSeries> estimate_var_all(const ReturnPanel& panel, const std::vector<double>& taus,
                                        double train_fraction = 0.4, double val_fraction = 0.2);

/// Long CSV "date,ticker,tau,var,split".
void write_var_csv(const std::vector<VarSeries>& series, std::ostream& out);
std::vector<VarSeries> read_var_csv(const std::filesystem::path& path);
/// The series at level tau; throws if absent.
const VarSeries& find_var(const std::vector<VarSeries>& all, double tau);

/// Dates and institutions where VaR at tau lies above VaR at the median.
std::size_t quantile_crossings(const VarSeries& lower, const VarSeries& median);

/// Position-encoded text part of one input: d_e x n with its mask.
struct TextWindow
{
    Matrix E;
    Mask mask;
};

/// Builds model inputs for panel rows. Each model kind reads its own text
/// source; a window without articles becomes one valid all-zero token so the
/// model degenerates to a function of the returns alone.
class InputBuilder
{
  public:
    InputBuilder(const ReturnPanel& panel, ModelKind kind, const ArchConfig& arch, const WindowOptions& window,
                 const EmbeddingStore* embeddings = nullptr, const SentimentStore* sentiment = nullptr);

    TextWindow window(std::size_t row) const;
    TokenBatch build(std::size_t row, const Vector& returns) const;

    ModelKind kind() const { return kind_; }
    /// Articles cut by window capacity, summed over all rows seen so far.
    std::size_t dropped_articles() const { return dropped_; }

  private:
    const ReturnPanel& panel_;
    ModelKind kind_;
    ArchConfig arch_;
    WindowOptions options_;
    const EmbeddingStore* embeddings_;
    const SentimentStore* sentiment_;
    DayBuckets buckets_;
    mutable std::size_t dropped_ = 0;
};

/// Model architecture for a kind, with the transformer shape taken from `arch`.
ArchConfig arch_for(ModelKind kind, const ArchConfig& arch);

/// R_-j: row t of the panel without column j.
Vector others(const Matrix& values, Eigen::Index row, Eigen::Index target);

struct CovarConfig
{
    ModelKind kind = ModelKind::text_transformer;
    ArchConfig arch;
    TrainConfig train;
    WindowOptions window;
    std::uint64_t init_seed = 11;
};

struct CovarFit
{
    TransformerModel model;
    TrainReport report;
    SplitSizes split;
};

/// Trains the target's quantile model on raw returns of the others.
CovarFit fit_covar_model(const ReturnPanel& panel, Eigen::Index target, const InputBuilder& inputs,
                         const CovarConfig& config);

/// f(var_hat, E); identical to model_forward on concat_pi(var_hat, E).
double predict_covar(const TransformerModel& model, const Vector& var_hat, const TextWindow& text);

/// CoVaR with others at their tau-VaR minus CoVaR with others at their median VaR.
double delta_covar(const TransformerModel& model, const Vector& var_tau, const Vector& var_median,
                   const TextWindow& text);

struct RiskRow
{
    Date date;
    double var = 0.0;
    double covar = 0.0;
    double delta_covar = 0.0;
    Split split = Split::train;
};

struct RiskSeries
{
    std::string ticker;
    double tau = 0.05;
    std::vector<RiskRow> rows;
};

RiskSeries predict_risk(const TransformerModel& model, const ReturnPanel& panel, Eigen::Index target,
                        const VarSeries& var_tau, const VarSeries& var_median, const InputBuilder& inputs);

/// CSV "date,ticker,tau,var,covar,delta_covar,split".
void write_risk_csv(const RiskSeries& series, std::ostream& out);
RiskSeries read_risk_csv(const std::filesystem::path& path);

} // namespace covarlab
