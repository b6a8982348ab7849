#pragma once

// Mini-batch SGD on the pinball loss with a learning-rate x batch-size
// grid, chronological splits and patience-based early stopping.

#include "covarlab/pinball.hpp"
#include "covarlab/transformer.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace covarlab
{

struct SplitSizes
{
    std::size_t train = 0, val = 0, test = 0;
};

enum class Split
{
    train,
    val,
    test,
};

const char* to_string(Split s);

/// Contiguous segments of floor(f_train T), floor(f_val T) and the rest.
SplitSizes split_chronological(std::size_t T, double train_fraction = 0.4, double val_fraction = 0.2);
Split split_of(const SplitSizes& sizes, std::size_t index);

struct Dataset
{
    std::vector<TokenBatch> inputs;
    std::vector<double> targets;

    std::size_t size() const { return inputs.size(); }
    /// Rows [first, first + count).
    Dataset slice(std::size_t first, std::size_t count) const;
};

/// How a mini-batch's pinball losses combine into the SGD objective. `sum`
/// follows the estimator argmin sum_t rho(.) term by term; `mean` divides the
/// step by the batch size. Reported losses are always per-sample means.
enum class LossReduction
{
    sum,
    mean,
};

struct TrainConfig
{
    double tau = 0.05;
    std::vector<double> lr_grid{0.00015, 0.0015, 0.015};
    std::vector<std::size_t> batch_grid{32, 64, 128};
    int max_epochs = 200;
    int patience = 50;
    double train_fraction = 0.4;
    double val_fraction = 0.2;
    std::uint64_t seed = 7;
    LossReduction reduction = LossReduction::sum;
    double momentum = 0.0;
    bool parallel = false;
    /// Worker cap for parallel grids; 0 means hardware concurrency.
    std::size_t threads = 0;

    void validate() const;
};

/// Counts consecutive epochs without a strict improvement of the validation loss.
class EarlyStopper
{
  public:
    explicit EarlyStopper(int patience) : patience_(patience) {}

    /// Records one epoch's loss; returns true once training should stop.
    bool update(double val_loss);

    double best() const { return best_; }
    int best_epoch() const { return best_epoch_; }
    int epochs() const { return epoch_; }

  private:
    int patience_;
    int epoch_ = 0;
    int best_epoch_ = 0;
    int stale_ = 0;
    double best_ = std::numeric_limits<double>::infinity();
};

struct EpochLoss
{
    int epoch = 0;
    double train = 0.0;  ///< mean pinball over the epoch's mini-batches
    double val = 0.0;
};

struct CellReport
{
    double lr = 0.0;
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string failure;
    int best_epoch = 0;
    double best_val = std::numeric_limits<double>::infinity();
    std::vector<EpochLoss> epochs;
};

struct TrainReport
{
    double tau = 0.0;
    std::uint64_t seed = 0;
    std::vector<CellReport> cells;
    std::size_t chosen = 0;

    const CellReport& best() const { return cells.at(chosen); }
};

/// Line records "cell,lr,batch_size,epoch,split,loss" with a header row.
void write_train_report(const TrainReport& report, std::ostream& out);

struct TrainResult
{
    TransformerModel model;
    TrainReport report;
};

/// Mean pinball loss of the model over a dataset.
double mean_loss(const TransformerModel& model, const Dataset& data, double tau);

/// Mean pinball loss and its gradient (for_each_weight order, empty slots
/// included as empty matrices) over the samples `rows` of `data`.
std::pair<double, std::vector<Matrix>> loss_and_gradient(const TransformerModel& model, const Dataset& data,
                                                         const std::vector<std::size_t>& rows, double tau);

/// In-place w -= lr * g on every slot.
void sgd_step(TransformerModel& model, const std::vector<Matrix>& gradient, double lr);

/// One grid cell: trains a copy of `init` and returns the weights of the
/// epoch with the lowest validation loss.
std::pair<TransformerModel, CellReport> train_cell(const TransformerModel& init, const Dataset& train,
                                                   const Dataset& val, const TrainConfig& config, double lr,
                                                   std::size_t batch_size, std::uint64_t seed);

/// Full grid. Cells that diverge are marked failed; if all fail, throws.
TrainResult train(const TransformerModel& init, const Dataset& train, const Dataset& val, const TrainConfig& config);

struct RollingPrediction
{
    std::vector<std::size_t> predicted;  ///< sample indices with a prediction
    std::vector<double> values;
    std::vector<std::size_t> skipped;    ///< sample indices with missing inputs
};

/// One stateless forward pass per sample; absent inputs are skipped.
RollingPrediction rolling_predict(const TransformerModel& model, const std::vector<std::optional<TokenBatch>>& inputs);

/// Parallelism limit from COVARLAB_THREADS; unlimited when unset.
std::size_t thread_cap();

/// Hardware concurrency, capped by thread_cap().
std::size_t default_threads();

} // namespace covarlab
