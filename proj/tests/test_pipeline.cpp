#include "covarlab/pipeline.hpp"
#include "covarlab/simulation.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

using namespace covarlab;

namespace
{

// f(r, E) = c + s'r for every text window: uniform attention copies the
// return rows, the FFN rebuilds them from their positive and negative parts,
// the readout takes the first (always valid) column.
TransformerModel affine_model(const Vector& s, double c, std::size_t embed_dim, std::size_t tokens)
{
    ArchConfig a;
    a.tokens = tokens;
    a.embed_dim = embed_dim;
    a.institutions = std::size_t(s.size()) + 1;
    a.heads = 1;
    a.ffn_hidden = 2 * std::size_t(s.size());
    a.layers = 1;
    a.mlp_depth = 1;
    TransformerModel m = zero_model(a);
    auto& layer = m.weights.layers[0];
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        layer.heads[0].value(i, i) = 1.0;
        layer.heads[0].output(i, i) = 1.0;
        layer.ffn_in(2 * i, i) = 1.0;
        layer.ffn_in(2 * i + 1, i) = -1.0;
        layer.ffn_out(i, 2 * i) = 1.0;
        layer.ffn_out(i, 2 * i + 1) = -1.0;
        m.weights.mlp[0].weight(0, i) = s(i);
    }
    m.weights.readout(0, 0) = 1.0;
    m.weights.mlp[0].bias(0, 0) = c;
    return m;
}

TextWindow random_window(std::size_t embed_dim, std::size_t tokens, std::size_t valid, std::mt19937_64& rng)
{
    std::normal_distribution<double> g;
    TextWindow w{Matrix::Zero(Eigen::Index(embed_dim), Eigen::Index(tokens)),
                 Mask::Constant(Eigen::Index(tokens), false)};
    for (std::size_t k = 0; k < valid; ++k) {
        w.mask(Eigen::Index(k)) = true;
        for (std::size_t i = 0; i < embed_dim; ++i)
            w.E(Eigen::Index(i), Eigen::Index(k)) = g(rng);
    }
    return w;
}

ReturnPanel symmetric_panel(std::size_t T, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    ReturnPanel p;
    p.dates = weekday_calendar(parse_date("2008-01-01"), T);
    p.tickers = {"A", "B"};
    p.macro_names = {"noise"};
    p.returns = Matrix(Eigen::Index(T), 2);
    p.macro = Matrix(Eigen::Index(T), 1);
    for (Eigen::Index t = 0; t < Eigen::Index(T); ++t) {
        p.returns(t, 0) = 0.02 * g(rng);
        p.returns(t, 1) = p.returns(t, 0);
        p.macro(t, 0) = g(rng);
    }
    return p;
}

ArchConfig desk_arch(std::size_t institutions)
{
    ArchConfig a;
    a.tokens = 8;
    a.embed_dim = 8;
    a.institutions = institutions;
    a.heads = 1;
    a.ffn_hidden = 16;
    a.layers = 1;
    a.mlp_depth = 2;
    a.mlp_width = 16;
    return a;
}

} // namespace

TEST(AffineModel, PredictCovarIsAffine)
{
    std::mt19937_64 rng(1);
    Vector s(2);
    s << 0.8, -1.3;
    const TransformerModel m = affine_model(s, -0.2, 3, 5);
    for (int i = 0; i < 20; ++i) {
        const TextWindow w = random_window(3, 5, 1 + std::size_t(i % 5), rng);
        const Vector v = Vector::Random(2);
        EXPECT_NEAR(predict_covar(m, v, w), -0.2 + s.dot(v), 1e-10);
    }
}

TEST(AffineModel, DeltaCovarIsSlopeTimesGap)
{
    std::mt19937_64 rng(2);
    Vector s(3);
    s << 0.5, 1.0, -0.25;
    const TransformerModel m = affine_model(s, 0.1, 2, 4);
    for (int i = 0; i < 20; ++i) {
        const TextWindow w = random_window(2, 4, 1 + std::size_t(i % 4), rng);
        const Vector vt = Vector::Random(3), vm = Vector::Random(3);
        EXPECT_NEAR(delta_covar(m, vt, vm, w), s.dot(vt - vm), 1e-10);
    }
}

TEST(AffineModel, MonotoneInEachInput)
{
    std::mt19937_64 rng(3);
    Vector s(2);
    s << 0.9, -0.4;
    const TransformerModel m = affine_model(s, 0.0, 2, 3);
    const TextWindow w = random_window(2, 3, 2, rng);
    Vector v = Vector::Zero(2);
    double prev = predict_covar(m, v, w);
    for (int k = 1; k <= 10; ++k) {
        v(0) = 0.1 * k;
        const double cur = predict_covar(m, v, w);
        EXPECT_GT(cur, prev);
        prev = cur;
    }
    v.setZero();
    prev = predict_covar(m, v, w);
    for (int k = 1; k <= 10; ++k) {
        v(1) = 0.1 * k;
        const double cur = predict_covar(m, v, w);
        EXPECT_LT(cur, prev);
        prev = cur;
    }
}

TEST(PlugIn, ConstantModel)
{
    ArchConfig a = desk_arch(3);
    TransformerModel m = zero_model(a);
    m.weights.mlp.back().bias(0, 0) = -0.37;
    std::mt19937_64 rng(4);
    EXPECT_EQ(predict_covar(m, Vector::Random(2), random_window(8, 8, 3, rng)), -0.37);
}

TEST(PlugIn, EqualsModelForwardExactly)
{
    const ArchConfig a = desk_arch(3);
    std::mt19937_64 rng(5);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const TransformerModel m = init_model(a, seed);
        const TextWindow w = random_window(8, 8, 1 + seed % 8, rng);
        const Vector v = Vector::Random(2);
        EXPECT_EQ(predict_covar(m, v, w), model_forward(m, concat_pi(v, w.E, w.mask)));
        EXPECT_EQ(delta_covar(m, v, v, w), 0.0);
    }
}

TEST(PlugIn, PadValuesIgnored)
{
    const ArchConfig a = desk_arch(2);
    const TransformerModel m = init_model(a, 9);
    std::mt19937_64 rng(6);
    TextWindow w = random_window(8, 8, 3, rng);
    const Vector v = Vector::Constant(1, -0.2);
    const double base = predict_covar(m, v, w);
    w.E.rightCols(5).setRandom();
    EXPECT_EQ(predict_covar(m, v, w), base);
}

TEST(PlugIn, ShapeMismatch)
{
    const TransformerModel m = init_model(desk_arch(3), 1);
    std::mt19937_64 rng(7);
    EXPECT_THROW(predict_covar(m, Vector::Zero(3), random_window(8, 8, 2, rng)), std::invalid_argument);
}

TEST(Var, MedianOfSymmetricReturnsNearZero)
{
    const ReturnPanel p = symmetric_panel(1000, 8);
    const VarSeries v = estimate_var(p, 0.5);
    EXPECT_EQ(v.values.rows(), 999);
    EXPECT_LT(v.values.col(0).cwiseAbs().maxCoeff(), 0.01);  // half a standard deviation
    EXPECT_LT(std::abs(v.values.col(0).mean()), 0.003);
}

TEST(Var, IdenticalColumnsIdenticalSeries)
{
    const ReturnPanel p = symmetric_panel(400, 9);
    const VarSeries v = estimate_var(p, 0.05);
    EXPECT_EQ(v.values.col(0), v.values.col(1));
    EXPECT_EQ(v.dates.front(), p.dates[1]);
    EXPECT_EQ(v.splits.front(), Split::train);
    EXPECT_EQ(v.splits.back(), Split::test);
}

TEST(Var, FitUsesTrainingSamplesOnly)
{
    ReturnPanel p = symmetric_panel(500, 10);
    const VarSeries a = estimate_var(p, 0.05);
    const auto split = sample_split(p, 0.4, 0.2);
    for (Eigen::Index t = Eigen::Index(split.train) + 1; t < p.size(); ++t)
        p.returns(t, 0) = 5.0;
    const VarSeries b = estimate_var(p, 0.05);
    EXPECT_EQ(a.values.col(0), b.values.col(0));
}

TEST(Var, TracksSimulationOracle)
{
    SimConfig c;
    NoiseTextConfig off;
    off.enabled = false;
    const SimDataset ds = make_sim_dataset(c, off);
    const VarSeries v = estimate_var(ds.panel, 0.05);
    double err = 0.0;
    for (Eigen::Index s = 0; s < v.values.rows(); ++s)
        err += std::abs(v.values(s, 0) - ds.oracle(s + 1, 0));
    EXPECT_LE(err / double(v.values.rows()), 0.03);
}

TEST(Var, CsvRoundTripAndCrossings)
{
    const ReturnPanel p = symmetric_panel(300, 11);
    const auto all = estimate_var_all(p, {0.05, 0.5});
    std::stringstream s;
    write_var_csv(all, s);
    const auto path = std::filesystem::temp_directory_path() / "covarlab_var_roundtrip.csv";
    std::ofstream(path) << s.str();
    const auto back = read_var_csv(path);
    std::filesystem::remove(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(find_var(back, 0.05).values, find_var(all, 0.05).values);
    EXPECT_EQ(find_var(back, 0.5).splits, find_var(all, 0.5).splits);
    EXPECT_THROW(find_var(back, 0.1), std::runtime_error);
    EXPECT_EQ(quantile_crossings(find_var(all, 0.05), find_var(all, 0.5)), 0u);
}

TEST(Fit, ThreeInstitutionSlopeSign)
{
    // Target = 1.5 * mean(others) + noise; the fitted quantile rises with the others.
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g;
    ReturnPanel p;
    const std::size_t T = 600;
    p.dates = weekday_calendar(parse_date("2009-01-01"), T);
    p.tickers = {"A", "B", "C"};
    p.macro_names = {"m"};
    p.returns = Matrix(Eigen::Index(T), 3);
    p.macro = Matrix(Eigen::Index(T), 1);
    for (Eigen::Index t = 0; t < Eigen::Index(T); ++t) {
        p.returns(t, 0) = 0.3 * g(rng);
        p.returns(t, 1) = 0.3 * g(rng);
        p.returns(t, 2) = 0.75 * (p.returns(t, 0) + p.returns(t, 1)) + 0.1 * g(rng);
        p.macro(t, 0) = g(rng);
    }
    CovarConfig cfg;
    cfg.kind = ModelKind::returns_mlp;
    cfg.arch = desk_arch(3);
    cfg.train.lr_grid = {0.015};
    cfg.train.batch_grid = {32};
    const InputBuilder in(p, cfg.kind, cfg.arch, WindowOptions{});
    const CovarFit fit = fit_covar_model(p, 2, in, cfg);
    const TextWindow w = in.window(10);
    const double low = predict_covar(fit.model, Vector::Constant(2, -0.4), w);
    const double high = predict_covar(fit.model, Vector::Constant(2, 0.4), w);
    EXPECT_LT(low, high);
}

class SimulationFits : public ::testing::Test
{
  protected:
    static void SetUpTestSuite()
    {
        SimConfig c;
        NoiseTextConfig off;
        off.enabled = false;
        ds = new SimDataset(make_sim_dataset(c, off));
        vt = new VarSeries(estimate_var(ds->panel, 0.05));
        vm = new VarSeries(estimate_var(ds->panel, 0.5));
    }
    static void TearDownTestSuite()
    {
        delete ds;
        delete vt;
        delete vm;
    }

    static CovarFit fit(ModelKind kind, const InputBuilder& in)
    {
        CovarConfig cfg;
        cfg.kind = kind;
        cfg.arch = desk_arch(2);
        return fit_covar_model(ds->panel, 1, in, cfg);
    }

    static inline SimDataset* ds = nullptr;
    static inline VarSeries* vt = nullptr;
    static inline VarSeries* vm = nullptr;
};

TEST_F(SimulationFits, EmptyTextMatchesReturnsOnlyBaseline)
{
    const InputBuilder text(ds->panel, ModelKind::text_transformer, desk_arch(2), WindowOptions{}, &ds->embeddings);
    const InputBuilder plain(ds->panel, ModelKind::returns_mlp, desk_arch(2), WindowOptions{});
    const CovarFit t = fit(ModelKind::text_transformer, text);
    const CovarFit m = fit(ModelKind::returns_mlp, plain);
    EXPECT_LE(t.report.best().best_val, 1.1 * m.report.best().best_val);

    const RiskSeries r = predict_risk(t.model, ds->panel, 1, *vt, *vm, text);
    std::size_t test = 0, negative = 0;
    for (const auto& row : r.rows)
        if (row.split == Split::test) {
            ++test;
            negative += row.delta_covar < 0.0;
        }
    EXPECT_GE(double(negative), 0.95 * double(test));
}

TEST_F(SimulationFits, RiskCsvRoundTrip)
{
    const InputBuilder plain(ds->panel, ModelKind::returns_mlp, desk_arch(2), WindowOptions{});
    CovarConfig cfg;
    cfg.kind = ModelKind::returns_mlp;
    cfg.arch = desk_arch(2);
    cfg.train.lr_grid = {0.015};
    cfg.train.batch_grid = {64};
    cfg.train.max_epochs = 20;
    cfg.train.patience = 10;
    const CovarFit f = fit_covar_model(ds->panel, 1, plain, cfg);
    const RiskSeries r = predict_risk(f.model, ds->panel, 1, *vt, *vm, plain);
    EXPECT_EQ(r.rows.size(), std::size_t(ds->panel.size() - 1));
    std::ostringstream s;
    write_risk_csv(r, s);
    const auto path = std::filesystem::temp_directory_path() / "covarlab_risk_roundtrip.csv";
    std::ofstream(path) << s.str();
    const RiskSeries back = read_risk_csv(path);
    std::filesystem::remove(path);
    ASSERT_EQ(back.rows.size(), r.rows.size());
    for (std::size_t i = 0; i < r.rows.size(); ++i) {
        EXPECT_EQ(back.rows[i].covar, r.rows[i].covar);
        EXPECT_EQ(back.rows[i].delta_covar, r.rows[i].delta_covar);
        EXPECT_EQ(back.rows[i].split, r.rows[i].split);
    }
    EXPECT_EQ(back.ticker, "Y2");
}

TEST_F(SimulationFits, MismatchedVarSeriesRejected)
{
    const InputBuilder plain(ds->panel, ModelKind::returns_mlp, desk_arch(2), WindowOptions{});
    const TransformerModel m = init_model(arch_for(ModelKind::returns_mlp, desk_arch(2)), 1);
    VarSeries shifted = *vt;
    shifted.dates.front() -= std::chrono::days(1);
    EXPECT_THROW(predict_risk(m, ds->panel, 1, shifted, *vm, plain), std::runtime_error);
}

TEST(Inputs, SentimentKinds)
{
    ReturnPanel p = symmetric_panel(12, 13);
    SentimentStore st;
    st.days[p.dates[2]] = {{"a", SentimentLabel::positive}, {"b", SentimentLabel::negative}};
    st.days[p.dates[3]] = {{"c", SentimentLabel::positive}};
    ArchConfig a = desk_arch(2);
    const InputBuilder mlp(p, ModelKind::sentiment_mlp, a, WindowOptions{}, nullptr, &st);
    EXPECT_DOUBLE_EQ(mlp.window(5).E(0, 0), 1.0 / 3.0);
    EXPECT_EQ(mlp.window(1).E(0, 0), 0.0);
    const InputBuilder tok(p, ModelKind::sentiment_transformer, a, WindowOptions{}, nullptr, &st);
    const TextWindow w = tok.window(5);  // days 0..4, labels at offsets 2, 2, 3
    EXPECT_EQ(w.E.rows(), 1);
    EXPECT_EQ(w.mask.count(), 3);
    const double scale = (3.0 + 1.0 + 3.0) / 3.0;
    EXPECT_DOUBLE_EQ(w.E(0, 0), 3.0 + scale * std::sin(2.0));
    EXPECT_DOUBLE_EQ(w.E(0, 1), 1.0 + scale * std::sin(2.0));
    EXPECT_DOUBLE_EQ(w.E(0, 2), 3.0 + scale * std::sin(3.0));
    EXPECT_THROW(InputBuilder(p, ModelKind::sentiment_mlp, a, WindowOptions{}), std::invalid_argument);
}

TEST(Inputs, ModelKindNames)
{
    for (auto k : {ModelKind::text_transformer, ModelKind::returns_mlp, ModelKind::sentiment_mlp,
                   ModelKind::sentiment_transformer})
        EXPECT_EQ(parse_model_kind(to_string(k)), k);
    EXPECT_THROW(parse_model_kind("lstm"), std::invalid_argument);
}
