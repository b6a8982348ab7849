#include "covarlab/trainer.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace covarlab;

namespace
{

ArchConfig small_arch()
{
    ArchConfig a;
    a.tokens = 3;
    a.embed_dim = 2;
    a.institutions = 2;
    a.heads = 1;
    a.ffn_hidden = 4;
    a.layers = 1;
    a.mlp_depth = 2;
    a.mlp_width = 4;
    return a;
}

Dataset random_dataset(const ArchConfig& arch, std::size_t n, std::uint64_t seed, double slope = 1.0)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        Vector r(Eigen::Index(arch.return_dim()));
        r(0) = g(rng);
        Matrix E(Eigen::Index(arch.embed_dim), Eigen::Index(arch.tokens));
        for (Eigen::Index k = 0; k < E.size(); ++k)
            E.data()[k] = g(rng);
        Mask m = Mask::Constant(Eigen::Index(arch.tokens), true);
        m(2) = (i % 2 == 0);
        d.inputs.push_back(concat_pi(r, E, m));
        d.targets.push_back(slope * r(0) + 0.3 * g(rng));
    }
    return d;
}

TrainConfig quick_config()
{
    TrainConfig c;
    c.lr_grid = {0.001, 0.01};
    c.batch_grid = {8, 16};
    c.max_epochs = 30;
    c.patience = 10;
    return c;
}

} // namespace

TEST(Splits, Chronological)
{
    const SplitSizes a = split_chronological(10);
    EXPECT_EQ(a.train, 4u);
    EXPECT_EQ(a.val, 2u);
    EXPECT_EQ(a.test, 4u);
    const SplitSizes b = split_chronological(1776);
    EXPECT_EQ(b.train, 710u);
    EXPECT_EQ(b.val, 355u);
    EXPECT_EQ(b.test, 711u);
    EXPECT_THROW(split_chronological(9), std::invalid_argument);
    EXPECT_EQ(split_of(a, 3), Split::train);
    EXPECT_EQ(split_of(a, 4), Split::val);
    EXPECT_EQ(split_of(a, 6), Split::test);
}

TEST(EarlyStopping, PatienceCountsFlatEpochs)
{
    EarlyStopper s(50);
    int stopped_at = 0;
    for (int e = 1; e <= 1000 && !stopped_at; ++e) {
        const double loss = e <= 60 ? 1.0 / e : 1.0 / 60;
        if (s.update(loss))
            stopped_at = e;
    }
    EXPECT_EQ(stopped_at, 110);
    EXPECT_EQ(s.best_epoch(), 60);
}

TEST(TrainConfigCheck, RejectsBadValues)
{
    TrainConfig c;
    EXPECT_NO_THROW(c.validate());
    c.tau = 1.0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.lr_grid.clear();
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.batch_grid = {0};
    EXPECT_THROW(c.validate(), std::invalid_argument);
    c = {};
    c.patience = 0;
    EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Sgd, SmallStepDecreasesSampleLoss)
{
    const ArchConfig arch = small_arch();
    const Dataset d = random_dataset(arch, 40, 3);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        TransformerModel m = init_model(arch, seed);
        const std::vector<std::size_t> row{std::size_t(seed)};
        auto [before, grad] = loss_and_gradient(m, d, row, 0.05);
        double gnorm = 0.0;
        for (const auto& g : grad)
            gnorm += g.squaredNorm();
        if (gnorm == 0.0)
            continue;
        sgd_step(m, grad, 1e-6);
        EXPECT_LT(loss_and_gradient(m, d, row, 0.05).first, before) << "seed " << seed;
    }
}

TEST(Sgd, GradientMatchesMeanLoss)
{
    const ArchConfig arch = small_arch();
    const Dataset d = random_dataset(arch, 12, 4);
    const TransformerModel m = init_model(arch, 1);
    std::vector<std::size_t> all(d.size());
    for (std::size_t i = 0; i < all.size(); ++i)
        all[i] = i;
    EXPECT_NEAR(loss_and_gradient(m, d, all, 0.1).first, mean_loss(m, d, 0.1), 1e-14);
    EXPECT_THROW(loss_and_gradient(m, d, {}, 0.1), std::invalid_argument);
}

TEST(Train, ConstantTargetFitByBias)
{
    const ArchConfig arch = small_arch();
    Dataset d = random_dataset(arch, 500, 5);
    for (auto& y : d.targets)
        y = 0.7;
    const TrainResult r = train(zero_model(arch), d.slice(0, 400), d.slice(400, 100), TrainConfig{});
    EXPECT_LT(r.report.best().best_val, 1e-3);
}

TEST(Train, BestEpochHasMinimalValidationLoss)
{
    const ArchConfig arch = small_arch();
    const Dataset d = random_dataset(arch, 150, 6);
    const TrainResult r = train(init_model(arch, 2), d.slice(0, 100), d.slice(100, 50), quick_config());
    ASSERT_EQ(r.report.cells.size(), 4u);
    for (const auto& cell : r.report.cells) {
        if (cell.failed)
            continue;
        for (const auto& e : cell.epochs)
            EXPECT_LE(cell.best_val, e.val);
        EXPECT_EQ(cell.epochs.at(std::size_t(cell.best_epoch - 1)).val, cell.best_val);
    }
    for (const auto& cell : r.report.cells)
        if (!cell.failed)
            EXPECT_LE(r.report.best().best_val, cell.best_val);
    EXPECT_NEAR(mean_loss(r.model, d.slice(100, 50), 0.05), r.report.best().best_val, 1e-12);
}

TEST(Train, DeterministicAndParallelEquivalent)
{
    const ArchConfig arch = small_arch();
    const Dataset d = random_dataset(arch, 120, 7);
    TrainConfig c = quick_config();
    const TrainResult a = train(init_model(arch, 3), d.slice(0, 80), d.slice(80, 40), c);
    const TrainResult b = train(init_model(arch, 3), d.slice(0, 80), d.slice(80, 40), c);
    c.parallel = true;
    c.threads = 3;
    const TrainResult p = train(init_model(arch, 3), d.slice(0, 80), d.slice(80, 40), c);
    EXPECT_EQ(checkpoint_bytes(a.model), checkpoint_bytes(b.model));
    EXPECT_EQ(checkpoint_bytes(a.model), checkpoint_bytes(p.model));
    EXPECT_EQ(a.report.chosen, p.report.chosen);
}

TEST(Train, DivergentCellsAreMarkedFailed)
{
    const ArchConfig arch = small_arch();
    Dataset d = random_dataset(arch, 80, 8, 1e150);
    TrainConfig c = quick_config();
    c.lr_grid = {1e200};
    c.batch_grid = {8};
    EXPECT_THROW(train(init_model(arch, 4), d.slice(0, 60), d.slice(60, 20), c), std::runtime_error);
    c.lr_grid = {1e200, 0.001};
    const TrainResult r = train(init_model(arch, 4), d.slice(0, 60), d.slice(60, 20), c);
    EXPECT_TRUE(r.report.cells[0].failed);
    EXPECT_FALSE(r.report.cells[0].failure.empty());
    EXPECT_EQ(r.report.chosen, 1u);
}

TEST(Train, ReductionScalesTheStep)
{
    // A sum-reduced step at lr equals a mean-reduced step at lr * batch.
    const ArchConfig arch = small_arch();
    const Dataset d = random_dataset(arch, 48, 9);
    TrainConfig c;
    c.max_epochs = 3;
    c.patience = 5;
    c.reduction = LossReduction::sum;
    const auto s = train_cell(init_model(arch, 5), d.slice(0, 32), d.slice(32, 16), c, 0.001, 16, 77);
    c.reduction = LossReduction::mean;
    const auto m = train_cell(init_model(arch, 5), d.slice(0, 32), d.slice(32, 16), c, 0.016, 16, 77);
    ASSERT_EQ(s.second.epochs.size(), m.second.epochs.size());
    for (std::size_t e = 0; e < s.second.epochs.size(); ++e)
        EXPECT_NEAR(s.second.epochs[e].val, m.second.epochs[e].val, 1e-12);
}

TEST(Train, ReportCsv)
{
    const ArchConfig arch = small_arch();
    const Dataset d = random_dataset(arch, 60, 10);
    TrainConfig c = quick_config();
    c.lr_grid = {0.01};
    c.batch_grid = {16};
    c.max_epochs = 3;
    c.patience = 2;
    const TrainResult r = train(init_model(arch, 6), d.slice(0, 40), d.slice(40, 20), c);
    std::ostringstream out;
    write_train_report(r.report, out);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "cell,lr,batch_size,epoch,split,loss");
    int rows = 0;
    while (std::getline(in, line))
        ++rows;
    EXPECT_EQ(rows, 6);
}

TEST(Rolling, SkipsMissingInputs)
{
    const ArchConfig arch = small_arch();
    const Dataset d = random_dataset(arch, 5, 11);
    const TransformerModel m = init_model(arch, 7);
    std::vector<std::optional<TokenBatch>> inputs{d.inputs[0], std::nullopt, d.inputs[2], std::nullopt};
    const RollingPrediction p = rolling_predict(m, inputs);
    EXPECT_EQ(p.predicted, (std::vector<std::size_t>{0, 2}));
    EXPECT_EQ(p.skipped, (std::vector<std::size_t>{1, 3}));
    EXPECT_EQ(p.values[1], model_forward(m, d.inputs[2]));
}

TEST(Threads, CapFromEnvironment)
{
    ::setenv("COVARLAB_THREADS", "2", 1);
    EXPECT_EQ(thread_cap(), 2u);
    EXPECT_LE(default_threads(), 2u);
    ::unsetenv("COVARLAB_THREADS");
    EXPECT_GE(default_threads(), 1u);
}
