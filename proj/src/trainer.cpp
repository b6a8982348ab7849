#include "covarlab/trainer.hpp"

#include "covarlab/data_io.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

namespace covarlab
{

namespace
{

std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

bool all_finite(const std::vector<Matrix>& g)
{
    return std::all_of(g.begin(), g.end(), [](const Matrix& m) { return m.allFinite(); });
}

} // namespace

const char* to_string(Split s)
{
    switch (s) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    default:
        return "test";
    }
}

SplitSizes split_chronological(std::size_t T, double train_fraction, double val_fraction)
{
    if (T < 10)
        throw std::invalid_argument("split_chronological: need at least 10 samples, got " + std::to_string(T));
    if (!(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction < 1.0))
        throw std::invalid_argument("split_chronological: fractions must be positive and leave a test share");
    SplitSizes s;
    s.train = std::size_t(std::floor(train_fraction * double(T)));
    s.val = std::size_t(std::floor(val_fraction * double(T)));
    s.test = T - s.train - s.val;
    return s;
}

Split split_of(const SplitSizes& sizes, std::size_t index)
{
    if (index < sizes.train)
        return Split::train;
    if (index < sizes.train + sizes.val)
        return Split::val;
    return Split::test;
}

Dataset Dataset::slice(std::size_t first, std::size_t count) const
{
    if (first + count > size())
        throw std::out_of_range("Dataset::slice out of range");
    Dataset out;
    out.inputs.assign(inputs.begin() + std::ptrdiff_t(first), inputs.begin() + std::ptrdiff_t(first + count));
    out.targets.assign(targets.begin() + std::ptrdiff_t(first), targets.begin() + std::ptrdiff_t(first + count));
    return out;
}

void TrainConfig::validate() const
{
    check_tau(tau);
    if (lr_grid.empty() || batch_grid.empty())
        throw std::invalid_argument("TrainConfig: empty hyperparameter grid");
    for (double lr : lr_grid)
        if (!(lr > 0.0))
            throw std::invalid_argument("TrainConfig: learning rates must be positive");
    for (std::size_t b : batch_grid)
        if (b == 0)
            throw std::invalid_argument("TrainConfig: batch sizes must be positive");
    if (max_epochs < 1 || patience < 1 || patience >= max_epochs)
        throw std::invalid_argument("TrainConfig: need 1 <= patience < max_epochs");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw std::invalid_argument("TrainConfig: momentum must lie in [0, 1)");
    split_chronological(10, train_fraction, val_fraction);
}

bool EarlyStopper::update(double val_loss)
{
    ++epoch_;
    if (val_loss < best_) {
        best_ = val_loss;
        best_epoch_ = epoch_;
        stale_ = 0;
    } else {
        ++stale_;
    }
    return stale_ >= patience_;
}

void write_train_report(const TrainReport& report, std::ostream& out)
{
    out << "cell,lr,batch_size,epoch,split,loss\n";
    for (std::size_t c = 0; c < report.cells.size(); ++c) {
        const auto& cell = report.cells[c];
        for (const auto& e : cell.epochs) {
            const std::string prefix = std::to_string(c) + "," + format_double(cell.lr) + "," +
                                       std::to_string(cell.batch_size) + "," + std::to_string(e.epoch) + ",";
            out << prefix << "train," << format_double(e.train) << '\n';
            out << prefix << "val," << format_double(e.val) << '\n';
        }
    }
}

double mean_loss(const TransformerModel& model, const Dataset& data, double tau)
{
    if (data.size() == 0)
        throw std::invalid_argument("mean_loss: empty dataset");
    double total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i)
        total += pinball(data.targets[i] - model_forward(model, data.inputs[i]), tau);
    return total / double(data.size());
}

std::pair<double, std::vector<Matrix>> loss_and_gradient(const TransformerModel& model, const Dataset& data,
                                                         const std::vector<std::size_t>& rows, double tau)
{
    if (rows.empty())
        throw std::invalid_argument("loss_and_gradient: empty batch");
    Tape<double> tape;
    const auto vars = record_weights(tape, model.weights);
    TapeVar total;
    for (std::size_t r : rows) {
        const TapeVar out = record_forward(tape, vars, model.config, data.inputs.at(r));
        const TapeVar loss = tape.pinball(out, data.targets[r], tau);
        total = total.valid() ? tape.add(total, loss) : loss;
    }
    const TapeVar mean = tape.scale(total, 1.0 / double(rows.size()));

    std::vector<TapeVar> params;
    std::vector<Matrix> grads;
    for_each_weight(vars, [&](const std::string&, const TapeVar& v) {
        if (v.valid())
            params.push_back(v);
    });
    auto values = tape.gradient(mean, params).values;
    std::size_t k = 0;
    for_each_weight(model.weights, [&](const std::string&, const Matrix& m) {
        grads.push_back(m.size() > 0 ? std::move(values[k++]) : Matrix(m.rows(), m.cols()));
    });
    return {tape.value(mean)(0, 0), std::move(grads)};
}

void sgd_step(TransformerModel& model, const std::vector<Matrix>& gradient, double lr)
{
    std::size_t k = 0;
    for_each_weight(model.weights, [&](const std::string&, Matrix& m) { m -= lr * gradient.at(k++); });
}

std::pair<TransformerModel, CellReport> train_cell(const TransformerModel& init, const Dataset& train,
                                                   const Dataset& val, const TrainConfig& config, double lr,
                                                   std::size_t batch_size, std::uint64_t seed)
{
    if (train.size() == 0 || val.size() == 0)
        throw std::invalid_argument("train: training and validation sets must be nonempty");
    CellReport report;
    report.lr = lr;
    report.batch_size = batch_size;
    report.seed = seed;

    TransformerModel model = init;
    TransformerModel best = init;
    std::vector<Matrix> velocity;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), std::size_t(0));
    EarlyStopper stopper(config.patience);

    try {
        for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            double sum = 0.0;
            std::size_t batches = 0;
            for (std::size_t start = 0; start < order.size(); start += batch_size) {
                const std::vector<std::size_t> rows(order.begin() + std::ptrdiff_t(start),
                                                    order.begin() +
                                                        std::ptrdiff_t(std::min(order.size(), start + batch_size)));
                auto [loss, grad] = loss_and_gradient(model, train, rows, config.tau);
                if (!std::isfinite(loss) || !all_finite(grad))
                    throw std::runtime_error("diverged at epoch " + std::to_string(epoch));
                if (config.reduction == LossReduction::sum)
                    for (auto& g : grad)
                        g *= double(rows.size());
                if (config.momentum > 0.0) {
                    if (velocity.empty())
                        velocity = grad;
                    else
                        for (std::size_t k = 0; k < grad.size(); ++k)
                            velocity[k] = config.momentum * velocity[k] + grad[k];
                    sgd_step(model, velocity, lr);
                } else {
                    sgd_step(model, grad, lr);
                }
                sum += loss;
                ++batches;
            }
            const double val_loss = mean_loss(model, val, config.tau);
            if (!std::isfinite(val_loss))
                throw std::runtime_error("non-finite validation loss at epoch " + std::to_string(epoch));
            report.epochs.push_back({epoch, sum / double(batches), val_loss});
            const bool stop = stopper.update(val_loss);
            if (stopper.best_epoch() == epoch)
                best = model;
            if (stop)
                break;
        }
    } catch (const std::runtime_error& e) {
        report.failed = true;
        report.failure = e.what();
    }
    report.best_epoch = stopper.best_epoch();
    report.best_val = stopper.best();
    if (report.best_epoch == 0)
        report.failed = true;
    return {std::move(best), std::move(report)};
}

TrainResult train(const TransformerModel& init, const Dataset& train_set, const Dataset& val, const TrainConfig& config)
{
    config.validate();
    struct Cell
    {
        double lr;
        std::size_t batch;
        std::uint64_t seed;
    };
    std::vector<Cell> grid;
    for (double lr : config.lr_grid)
        for (std::size_t b : config.batch_grid)
            grid.push_back({lr, b, splitmix64(config.seed + grid.size())});

    std::vector<std::optional<std::pair<TransformerModel, CellReport>>> results(grid.size());
    auto run = [&](std::size_t c) {
        results[c] = train_cell(init, train_set, val, config, grid[c].lr, grid[c].batch, grid[c].seed);
    };
    const std::size_t workers =
        config.parallel ? std::min({grid.size(), config.threads ? config.threads : default_threads(), thread_cap()})
                        : 1;
    if (workers <= 1) {
        for (std::size_t c = 0; c < grid.size(); ++c)
            run(c);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(workers);
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t c = next++; c < grid.size(); c = next++)
                        run(c);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        for (auto& t : pool)
            t.join();
        for (const auto& e : errors)
            if (e)
                std::rethrow_exception(e);
    }

    TrainResult out;
    out.report.tau = config.tau;
    out.report.seed = config.seed;
    std::optional<std::size_t> chosen;
    for (std::size_t c = 0; c < grid.size(); ++c) {
        const auto& cell = results[c]->second;
        if (!cell.failed && (!chosen || cell.best_val < out.report.cells[*chosen].best_val))
            chosen = c;
        out.report.cells.push_back(cell);
    }
    if (!chosen)
        throw std::runtime_error("training failed in every grid cell");
    out.report.chosen = *chosen;
    out.model = std::move(results[*chosen]->first);
    return out;
}

RollingPrediction rolling_predict(const TransformerModel& model, const std::vector<std::optional<TokenBatch>>& inputs)
{
    RollingPrediction out;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!inputs[i]) {
            out.skipped.push_back(i);
            continue;
        }
        out.predicted.push_back(i);
        out.values.push_back(model_forward(model, *inputs[i]));
    }
    return out;
}

std::size_t thread_cap()
{
    if (const char* env = std::getenv("COVARLAB_THREADS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0)
            return std::size_t(v);
    }
    return std::numeric_limits<std::size_t>::max();
}

std::size_t default_threads()
{
    return std::min<std::size_t>(std::max(1u, std::thread::hardware_concurrency()), thread_cap());
}

} // namespace covarlab
