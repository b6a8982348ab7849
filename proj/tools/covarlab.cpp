// covarlab: command-line front end for the two-step CoVaR pipeline.
//
//   simulate   synthetic returns, noise news and oracle series
//   fit-var    linear quantile VaR at tau and at the median
//   fit-covar  quantile model of one institution given the others and text
//   predict    VaR, CoVaR and Delta-CoVaR series
//   backtest   cumulative AVQ loss table over the test period
//   report     summary text and plot-ready CSVs
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include "config.hpp"
#include "manifest.hpp"

#include "covarlab/backtest.hpp"
#include "covarlab/data_io.hpp"
#include "covarlab/pipeline.hpp"
#include "covarlab/simulation.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <stdexcept>

namespace fs = std::filesystem;
using nlohmann::json;

namespace covarlab::cli
{
namespace
{

struct UsageError : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

constexpr const char* fit_file = "fit.json";
constexpr const char* model_file = "model.cvtf";

struct Common
{
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<double> tau;
};

RunConfig resolve_config(const Common& c)
{
    try {
        return c.config.empty() ? RunConfig{} : load_config(c.config);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
}

fs::path prepare_out(const std::string& out)
{
    fs::create_directories(out);
    return fs::path(out);
}

template <typename Writer>
fs::path write_file(const fs::path& dir, const std::string& name, Writer&& writer)
{
    const fs::path path = dir / name;
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    writer(out);
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
    return path;
}

json read_json(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    return json::parse(in);
}

// simulate -------------------------------------------------------------------

void write_oracle(const SimDataset& ds, std::ostream& out)
{
    out << "date,var1,covar,var2\n";
    for (Eigen::Index t = 0; t < ds.panel.size(); ++t)
        out << format_date(ds.panel.dates[std::size_t(t)]) << ',' << format_double(ds.oracle(t, 0)) << ','
            << format_double(ds.oracle(t, 1)) << ',' << format_double(ds.oracle(t, 2)) << '\n';
}

int cmd_simulate(const Common& common, const std::string& scenario)
{
    RunConfig cfg = resolve_config(common);
    if (!scenario.empty())
        cfg.scenario = scenario;
    if (common.seed)
        (cfg.scenario == "crisis" ? cfg.crisis.seed : cfg.sim.seed) = *common.seed;
    if (common.tau)
        cfg.sim.tau = *common.tau;
    const fs::path dir = prepare_out(common.out);
    Manifest manifest("simulate", to_json(cfg), cfg.scenario == "crisis" ? cfg.crisis.seed : cfg.sim.seed);
    if (!common.config.empty())
        manifest.add_input(common.config);

    if (cfg.scenario == "crisis") {
        cfg.crisis.text = cfg.text;
        const CrisisDataset ds = make_crisis_dataset(cfg.crisis);
        save_returns(ds.panel, dir / "returns.csv");
        save_embeddings(ds.embeddings, dir / "embeddings.cvem");
        write_file(dir, "crisis.csv", [&](std::ostream& out) {
            out << "date,crisis\n";
            for (std::size_t t = 0; t < ds.crisis.size(); ++t)
                out << format_date(ds.panel.dates[t]) << ',' << int(ds.crisis[t]) << '\n';
        });
        for (const char* f : {"returns.csv", "embeddings.cvem", "crisis.csv"})
            manifest.add_output(dir / f);
    } else {
        const SimDataset ds = make_sim_dataset(cfg.sim, cfg.text);
        save_returns(ds.panel, dir / "returns.csv");
        save_embeddings(ds.embeddings, dir / "embeddings.cvem");
        write_file(dir, "oracle.csv", [&](std::ostream& out) { write_oracle(ds, out); });
        for (const char* f : {"returns.csv", "embeddings.cvem", "oracle.csv"})
            manifest.add_output(dir / f);
    }
    manifest.write(dir);
    std::cout << "wrote " << cfg.scenario << " simulation to " << dir.string() << '\n';
    return 0;
}

// fit-var --------------------------------------------------------------------

int cmd_fit_var(const Common& common, const std::string& returns_path)
{
    RunConfig cfg = resolve_config(common);
    if (common.tau)
        cfg.train.tau = *common.tau;
    const fs::path dir = prepare_out(common.out);
    Manifest manifest("fit-var", to_json(cfg), 0);
    if (!common.config.empty())
        manifest.add_input(common.config);
    manifest.add_input(returns_path);

    LoadReport load;
    const ReturnPanel panel = load_returns(returns_path, &load);
    std::vector<double> taus{cfg.train.tau};
    if (cfg.train.tau != 0.5)
        taus.push_back(0.5);
    const auto series = estimate_var_all(panel, taus, cfg.train.train_fraction, cfg.train.val_fraction);
    const fs::path out = write_file(dir, "var.csv", [&](std::ostream& o) { write_var_csv(series, o); });
    manifest.add_output(out);
    manifest.write(dir);

    std::cout << "VaR at tau=" << format_double(cfg.train.tau) << " and 0.5 for " << panel.tickers.size()
              << " institutions, " << panel.size() - 1 << " samples";
    if (!load.dropped_lines.empty())
        std::cout << ", " << load.dropped_lines.size() << " input rows dropped";
    std::cout << '\n';
    if (series.size() == 2) {
        if (const std::size_t crossings = quantile_crossings(series[0], series[1]))
            std::cout << "note: " << crossings << " (date, institution) pairs with VaR above the median VaR\n";
    }
    for (const auto& s : series)
        if (s.ridge_damped)
            std::cout << "note: " << s.ridge_damped << " fits at tau=" << format_double(s.tau)
                      << " needed ridge damping (rank-deficient macro design)\n";
    return 0;
}

// fit-covar ------------------------------------------------------------------

struct TextInputs
{
    std::string embeddings;
    std::string sentiment;
    EmbeddingStore store;
    SentimentStore labels;
};

void load_text(TextInputs& t, ModelKind kind, Manifest* manifest)
{
    if (kind == ModelKind::text_transformer) {
        if (t.embeddings.empty())
            throw UsageError(to_string(kind) + " needs --embeddings");
        if (manifest)
            manifest->add_input(t.embeddings);
        t.store = load_embeddings(t.embeddings);
    } else if (kind == ModelKind::sentiment_mlp || kind == ModelKind::sentiment_transformer) {
        if (t.sentiment.empty())
            throw UsageError(to_string(kind) + " needs --sentiment");
        if (manifest)
            manifest->add_input(t.sentiment);
        t.labels = load_sentiment(t.sentiment);
    }
}

struct FitFlags
{
    std::string returns;
    std::string target;
    std::string kind;
    std::string variant;
    std::optional<std::size_t> heads;
    bool include_day_t = false;
    bool parallel = false;
    TextInputs text;
};

int cmd_fit_covar(const Common& common, FitFlags& f)
{
    RunConfig cfg = resolve_config(common);
    try {
        if (!f.kind.empty())
            cfg.kind = parse_model_kind(f.kind);
        if (!f.variant.empty())
            cfg.arch.variant = parse_variant(f.variant);
    } catch (const std::invalid_argument& e) {
        throw UsageError(e.what());
    }
    if (common.seed)
        cfg.train.seed = *common.seed;
    if (common.tau)
        cfg.train.tau = *common.tau;
    if (f.heads)
        cfg.arch.heads = *f.heads;
    if (f.include_day_t)
        cfg.window.include_day_t = true;
    if (f.parallel)
        cfg.train.parallel = true;

    const fs::path dir = prepare_out(common.out);
    Manifest manifest("fit-covar", to_json(cfg), cfg.train.seed);
    if (!common.config.empty())
        manifest.add_input(common.config);
    manifest.add_input(f.returns);
    load_text(f.text, cfg.kind, &manifest);

    const ReturnPanel panel = load_returns(f.returns);
    const Eigen::Index target = panel.ticker_index(f.target);
    ArchConfig arch = cfg.arch_for_kind();
    arch.institutions = panel.tickers.size();
    const InputBuilder inputs(panel, cfg.kind, arch, cfg.window, &f.text.store, &f.text.labels);

    CovarConfig cc{cfg.kind, arch, cfg.train, cfg.window, cfg.init_seed};
    const CovarFit fit = fit_covar_model(panel, target, inputs, cc);

    save_checkpoint(fit.model, dir / model_file);
    write_file(dir, "train_report.csv", [&](std::ostream& o) { write_train_report(fit.report, o); });
    write_file(dir, fit_file, [&](std::ostream& o) {
        o << json{{"kind", to_string(cfg.kind)},
                  {"target", f.target},
                  {"tau", cfg.train.tau},
                  {"tokens", arch.tokens},
                  {"window", {{"days", cfg.window.days}, {"include_day_t", cfg.window.include_day_t}}}}
                 .dump(2)
          << '\n';
    });
    for (const char* name : {model_file, "train_report.csv", fit_file})
        manifest.add_output(dir / name);
    manifest.write(dir);

    const CellReport& best = fit.report.best();
    std::cout << to_string(cfg.kind) << " for " << f.target << ": lr=" << format_double(best.lr)
              << " batch=" << best.batch_size << " best epoch " << best.best_epoch << ", val loss "
              << format_double(best.best_val) << '\n';
    std::size_t failed = 0;
    for (const auto& c : fit.report.cells)
        failed += c.failed;
    if (failed)
        std::cout << "note: " << failed << " of " << fit.report.cells.size() << " grid cells failed\n";
    if (inputs.dropped_articles())
        std::cout << "note: " << inputs.dropped_articles() << " article slots cut by the window capacity\n";
    return 0;
}

// predict --------------------------------------------------------------------

const VarSeries& pick_var(const std::vector<VarSeries>& all, double tau, const std::string& path)
{
    if (all.size() == 1)
        return all.front();
    try {
        return find_var(all, tau);
    } catch (const std::runtime_error&) {
        throw std::runtime_error(path + " has no VaR series at tau=" + format_double(tau));
    }
}

int cmd_predict(const Common& common, const std::string& fit_dir, const std::string& returns_path,
                const std::string& var_tau_path, std::string var_median_path, TextInputs& text)
{
    if (var_median_path.empty())
        var_median_path = var_tau_path;
    const fs::path dir = prepare_out(common.out);
    const json fit = read_json(fs::path(fit_dir) / fit_file);
    const ModelKind kind = parse_model_kind(fit.at("kind").get<std::string>());
    WindowOptions window;
    window.days = fit.at("window").at("days").get<std::size_t>();
    window.include_day_t = fit.at("window").at("include_day_t").get<bool>();

    Manifest manifest("predict", fit, 0);
    manifest.add_input(fs::path(fit_dir) / model_file);
    manifest.add_input(fs::path(fit_dir) / fit_file);
    manifest.add_input(returns_path);
    manifest.add_input(var_tau_path);
    if (var_median_path != var_tau_path)
        manifest.add_input(var_median_path);
    load_text(text, kind, &manifest);

    const TransformerModel model = load_checkpoint(fs::path(fit_dir) / model_file);
    const ReturnPanel panel = load_returns(returns_path);
    const Eigen::Index target = panel.ticker_index(fit.at("target").get<std::string>());
    const double tau = common.tau.value_or(fit.at("tau").get<double>());
    const auto var_tau_all = read_var_csv(var_tau_path);
    const auto var_median_all = var_median_path == var_tau_path ? var_tau_all : read_var_csv(var_median_path);
    const VarSeries& var_tau = pick_var(var_tau_all, tau, var_tau_path);
    const VarSeries& var_median = pick_var(var_median_all, 0.5, var_median_path);

    ArchConfig arch = model.config;
    arch.tokens = fit.at("tokens").get<std::size_t>();
    if (kind != ModelKind::text_transformer && kind != ModelKind::sentiment_transformer)
        arch.embed_dim = 0;
    const InputBuilder inputs(panel, kind, arch, window, &text.store, &text.labels);
    RiskSeries risk = predict_risk(model, panel, target, var_tau, var_median, inputs);
    risk.tau = tau;
    const fs::path out = write_file(dir, "risk.csv", [&](std::ostream& o) { write_risk_csv(risk, o); });
    manifest.add_output(out);
    manifest.write(dir);
    std::cout << "wrote " << risk.rows.size() << " rows for " << risk.ticker << " to " << out.string() << '\n';
    return 0;
}

// backtest and report ----------------------------------------------------------

std::vector<std::string> model_names(const std::vector<std::string>& risk_paths, std::vector<std::string> names)
{
    if (!names.empty() && names.size() != risk_paths.size())
        throw UsageError("give one --name per --risk file");
    for (std::size_t i = names.size(); i < risk_paths.size(); ++i) {
        const json m = upstream_manifest(risk_paths[i]);
        std::string n = m.is_object() && m.contains("config") && m["config"].contains("kind")
                            ? m["config"]["kind"].get<std::string>()
                            : fs::path(risk_paths[i]).parent_path().filename().string();
        names.push_back(n.empty() ? "model" + std::to_string(i + 1) : n);
    }
    return names;
}

std::vector<RiskSeries> load_risks(const std::vector<std::string>& paths, Manifest& manifest)
{
    std::vector<RiskSeries> out;
    for (const auto& p : paths) {
        manifest.add_input(p);
        out.push_back(read_risk_csv(p));
        if (out.back().rows.empty())
            throw std::runtime_error(p + " has no rows");
        if (out.size() > 1) {
            const auto& a = out.front();
            const auto& b = out.back();
            if (a.ticker != b.ticker || a.rows.size() != b.rows.size() ||
                !std::equal(a.rows.begin(), a.rows.end(), b.rows.begin(),
                            [](const RiskRow& x, const RiskRow& y) { return x.date == y.date; }))
                throw std::runtime_error(p + " does not cover the same institution and dates as " + paths.front());
        }
    }
    return out;
}

int cmd_backtest(const Common& common, const std::vector<std::string>& risk_paths,
                 const std::vector<std::string>& names_in, const std::string& returns_path, const std::string& start)
{
    const fs::path dir = prepare_out(common.out);
    Manifest manifest("backtest", json::object(), 0);
    const auto names = model_names(risk_paths, names_in);
    const auto risks = load_risks(risk_paths, manifest);
    manifest.add_input(returns_path);
    const ReturnPanel panel = load_returns(returns_path);
    const Eigen::Index col = panel.ticker_index(risks.front().ticker);

    std::map<Date, double> actual_by_date;
    for (Eigen::Index t = 0; t < panel.size(); ++t)
        actual_by_date[panel.dates[std::size_t(t)]] = panel.returns(t, col);

    std::vector<Date> dates;
    std::vector<double> actuals;
    std::vector<std::vector<double>> preds(risks.size());
    for (std::size_t i = 0; i < risks.front().rows.size(); ++i) {
        const RiskRow& row = risks.front().rows[i];
        if (row.split != Split::test)
            continue;
        const auto it = actual_by_date.find(row.date);
        if (it == actual_by_date.end())
            throw std::runtime_error("no return for " + risks.front().ticker + " on " + format_date(row.date));
        dates.push_back(row.date);
        actuals.push_back(it->second);
        for (std::size_t m = 0; m < risks.size(); ++m)
            preds[m].push_back(risks[m].rows[i].covar);
    }
    if (dates.empty())
        throw std::runtime_error("the risk series has no test rows");
    Date start_date = dates.front();
    if (!start.empty()) {
        try {
            start_date = parse_date(start);
        } catch (const std::invalid_argument& e) {
            throw UsageError(std::string("--start: ") + e.what());
        }
    }

    const LossTable table = cumulative_table(dates, names, preds, actuals, risks.front().tau, start_date);
    manifest.add_output(write_file(dir, "loss_table.csv", [&](std::ostream& o) { write_loss_table_csv(table, o); }));
    manifest.add_output(write_file(dir, "loss_table.txt", [&](std::ostream& o) { write_loss_table_text(table, o); }));
    manifest.write(dir);
    write_loss_table_text(table, std::cout);
    return 0;
}

int cmd_report(const Common& common, const std::vector<std::string>& risk_paths,
               const std::vector<std::string>& names_in)
{
    const fs::path dir = prepare_out(common.out);
    Manifest manifest("report", json::object(), 0);
    const auto names = model_names(risk_paths, names_in);
    const auto risks = load_risks(risk_paths, manifest);

    manifest.add_output(write_file(dir, "series.csv", [&](std::ostream& o) {
        o << "date,split,var";
        for (const auto& n : names)
            o << ',' << n << "_covar," << n << "_delta_covar";
        for (std::size_t m = 1; m < names.size(); ++m)
            o << ',' << names[m] << "_minus_" << names[0] << "_covar";
        o << '\n';
        for (std::size_t i = 0; i < risks.front().rows.size(); ++i) {
            const RiskRow& r0 = risks.front().rows[i];
            o << format_date(r0.date) << ',' << to_string(r0.split) << ',' << format_double(r0.var);
            for (const auto& r : risks)
                o << ',' << format_double(r.rows[i].covar) << ',' << format_double(r.rows[i].delta_covar);
            for (std::size_t m = 1; m < risks.size(); ++m)
                o << ',' << format_double(risks[m].rows[i].covar - r0.covar);
            o << '\n';
        }
    }));

    manifest.add_output(write_file(dir, "summary.txt", [&](std::ostream& o) {
        o << "Institution " << risks.front().ticker << ", tau = " << format_double(risks.front().tau) << "\n\n";
        for (std::size_t m = 0; m < risks.size(); ++m) {
            o << names[m] << '\n';
            for (Split s : {Split::train, Split::val, Split::test}) {
                double covar = 0, delta = 0, lo = INFINITY;
                std::size_t n = 0;
                for (const auto& r : risks[m].rows)
                    if (r.split == s) {
                        covar += r.covar;
                        delta += r.delta_covar;
                        lo = std::min(lo, r.delta_covar);
                        ++n;
                    }
                if (!n)
                    continue;
                o << "  " << to_string(s) << ": " << n << " dates, mean CoVaR " << format_double(covar / double(n))
                  << ", mean Delta-CoVaR " << format_double(delta / double(n)) << ", min Delta-CoVaR "
                  << format_double(lo) << '\n';
            }
        }
    }));
    manifest.write(dir);
    std::ifstream summary(dir / "summary.txt");
    std::cout << summary.rdbuf();
    return 0;
}

} // namespace
} // namespace covarlab::cli

int main(int argc, char** argv)
{
    using namespace covarlab::cli;
    CLI::App app{"Text-aware CoVaR estimation"};
    app.require_subcommand(1);

    Common common;
    auto add_common = [&](CLI::App* sub, bool needs_seed, bool needs_tau) {
        sub->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--out", common.out, "output directory")->required();
        if (needs_seed)
            sub->add_option("--seed", common.seed, "overrides the configured seed");
        if (needs_tau)
            sub->add_option("--tau", common.tau, "quantile level")->check(CLI::Range(0.0, 1.0));
    };

    std::string scenario;
    auto* simulate = app.add_subcommand("simulate", "write a synthetic dataset");
    add_common(simulate, true, true);
    simulate->add_option("--scenario", scenario, "ar1 or crisis")->check(CLI::IsMember({"ar1", "crisis"}));

    std::string returns;
    auto* fit_var = app.add_subcommand("fit-var", "linear quantile VaR per institution");
    add_common(fit_var, false, true);
    fit_var->add_option("--returns", returns, "returns CSV")->required()->check(CLI::ExistingFile);

    FitFlags fit;
    auto* fit_covar = app.add_subcommand("fit-covar", "train the CoVaR quantile model");
    add_common(fit_covar, true, true);
    fit_covar->add_option("--returns", fit.returns, "returns CSV")->required()->check(CLI::ExistingFile);
    fit_covar->add_option("--target-ticker", fit.target, "institution to model")->required();
    fit_covar->add_option("--model", fit.kind,
                          "text_transformer, returns_mlp, sentiment_mlp or sentiment_transformer");
    fit_covar->add_option("--embeddings", fit.text.embeddings, "CVEM embeddings")->check(CLI::ExistingFile);
    fit_covar->add_option("--sentiment", fit.text.sentiment, "sentiment label CSV")->check(CLI::ExistingFile);
    fit_covar->add_option("--variant", fit.variant, "plain or residual_layernorm")
        ->check(CLI::IsMember({"plain", "residual_layernorm"}));
    fit_covar->add_option("--heads", fit.heads, "attention heads")->check(CLI::PositiveNumber);
    fit_covar->add_flag("--include-day-t", fit.include_day_t, "window covers t-4..t");
    fit_covar->add_flag("--parallel-grid", fit.parallel, "train grid cells in parallel");

    std::string fit_dir, var_tau, var_median;
    TextInputs predict_text;
    auto* predict = app.add_subcommand("predict", "VaR, CoVaR and Delta-CoVaR series");
    add_common(predict, false, true);
    predict->add_option("--fit", fit_dir, "fit-covar output directory")->required()->check(CLI::ExistingDirectory);
    predict->add_option("--returns", returns, "returns CSV")->required()->check(CLI::ExistingFile);
    predict->add_option("--var-tau", var_tau, "VaR CSV holding the tau level")->required()->check(CLI::ExistingFile);
    predict->add_option("--var-median", var_median, "VaR CSV holding the median (default: --var-tau file)")
        ->check(CLI::ExistingFile);
    predict->add_option("--embeddings", predict_text.embeddings, "CVEM embeddings")->check(CLI::ExistingFile);
    predict->add_option("--sentiment", predict_text.sentiment, "sentiment label CSV")->check(CLI::ExistingFile);

    std::vector<std::string> risk_paths, names;
    std::string start;
    auto* backtest = app.add_subcommand("backtest", "cumulative AVQ loss over the test period");
    add_common(backtest, false, false);
    backtest->add_option("--risk", risk_paths, "risk CSV, one per model")->required()->check(CLI::ExistingFile);
    backtest->add_option("--name", names, "model label, one per --risk");
    backtest->add_option("--returns", returns, "returns CSV")->required()->check(CLI::ExistingFile);
    backtest->add_option("--start", start, "evaluation start date (default: first test date)");

    auto* report = app.add_subcommand("report", "summary and plot-ready series");
    add_common(report, false, false);
    report->add_option("--risk", risk_paths, "risk CSV, one per model")->required()->check(CLI::ExistingFile);
    report->add_option("--name", names, "model label, one per --risk");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*simulate)
            return cmd_simulate(common, scenario);
        if (*fit_var)
            return cmd_fit_var(common, returns);
        if (*fit_covar)
            return cmd_fit_covar(common, fit);
        if (*predict)
            return cmd_predict(common, fit_dir, returns, var_tau, var_median, predict_text);
        if (*backtest)
            return cmd_backtest(common, risk_paths, names, returns, start);
        if (*report)
            return cmd_report(common, risk_paths, names);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
