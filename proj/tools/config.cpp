#include "config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace covarlab::cli
{

namespace
{

using nlohmann::json;

class Section
{
  public:
    Section(const json& doc, const std::string& name) : name_(name)
    {
        if (doc.contains(name)) {
            node_ = doc.at(name);
            if (!node_.is_object())
                throw std::invalid_argument("config: section '" + name + "' must be an object");
        }
    }

    template <typename T>
    void read(const char* key, T& field)
    {
        seen_.insert(key);
        if (!node_.contains(key))
            return;
        try {
            field = node_.at(key).get<T>();
        } catch (const json::exception&) {
            throw std::invalid_argument("config: " + name_ + "." + key + " has the wrong type");
        }
    }

    void finish() const
    {
        for (const auto& [key, value] : node_.items())
            if (!seen_.count(key))
                throw std::invalid_argument("config: unknown key " + name_ + "." + key);
    }

  private:
    std::string name_;
    json node_ = json::object();
    std::set<std::string> seen_;
};

} // namespace

ArchConfig RunConfig::arch_for_kind() const
{
    ArchConfig a = arch;
    if (kind == ModelKind::returns_mlp || kind == ModelKind::sentiment_mlp)
        a.mlp_width = baseline_width;
    return a;
}

RunConfig parse_config(const json& doc)
{
    if (!doc.is_object())
        throw std::invalid_argument("config: top level must be an object");
    for (const auto& [key, value] : doc.items())
        if (key != "simulation" && key != "crisis" && key != "text" && key != "model" && key != "train" &&
            key != "window")
            throw std::invalid_argument("config: unknown section '" + key + "'");

    RunConfig c;
    Section sim(doc, "simulation");
    sim.read("scenario", c.scenario);
    sim.read("phi", c.sim.phi);
    sim.read("sigma1", c.sim.sigma1);
    sim.read("beta", c.sim.beta);
    sim.read("sigma2", c.sim.sigma2);
    sim.read("y0", c.sim.y0);
    sim.read("tau", c.sim.tau);
    sim.read("T", c.sim.T);
    sim.read("seed", c.sim.seed);
    sim.finish();
    if (c.scenario != "ar1" && c.scenario != "crisis")
        throw std::invalid_argument("config: simulation.scenario must be \"ar1\" or \"crisis\"");

    Section text(doc, "text");
    text.read("enabled", c.text.enabled);
    text.read("embed_dim", c.text.embed_dim);
    text.read("max_articles", c.text.max_articles);
    text.read("scale", c.text.scale);
    text.read("seed", c.text.seed);
    text.finish();

    Section crisis(doc, "crisis");
    crisis.read("institutions", c.crisis.institutions);
    crisis.read("T", c.crisis.T);
    crisis.read("phi", c.crisis.phi);
    crisis.read("factor_sigma", c.crisis.factor_sigma);
    crisis.read("idio_sigma", c.crisis.idio_sigma);
    crisis.read("beta", c.crisis.beta);
    crisis.read("calm_sigma", c.crisis.calm_sigma);
    crisis.read("crisis_sigma", c.crisis.crisis_sigma);
    crisis.read("block_length", c.crisis.block_length);
    crisis.read("block_spacing", c.crisis.block_spacing);
    crisis.read("text_shift", c.crisis.text_shift);
    crisis.read("seed", c.crisis.seed);
    crisis.finish();
    c.crisis.text = c.text;

    Section model(doc, "model");
    std::string kind = to_string(c.kind), variant = to_string(c.arch.variant);
    model.read("kind", kind);
    model.read("variant", variant);
    model.read("tokens", c.arch.tokens);
    model.read("embed_dim", c.arch.embed_dim);
    model.read("heads", c.arch.heads);
    model.read("ffn_hidden", c.arch.ffn_hidden);
    model.read("layers", c.arch.layers);
    model.read("mlp_depth", c.arch.mlp_depth);
    model.read("mlp_width", c.arch.mlp_width);
    model.read("baseline_width", c.baseline_width);
    model.read("init_seed", c.init_seed);
    model.finish();
    c.kind = parse_model_kind(kind);
    c.arch.variant = parse_variant(variant);

    Section train(doc, "train");
    std::string reduction = c.train.reduction == LossReduction::sum ? "sum" : "mean";
    train.read("tau", c.train.tau);
    train.read("lr_grid", c.train.lr_grid);
    train.read("batch_grid", c.train.batch_grid);
    train.read("max_epochs", c.train.max_epochs);
    train.read("patience", c.train.patience);
    train.read("train_fraction", c.train.train_fraction);
    train.read("val_fraction", c.train.val_fraction);
    train.read("seed", c.train.seed);
    train.read("reduction", reduction);
    train.read("momentum", c.train.momentum);
    train.read("parallel", c.train.parallel);
    train.read("threads", c.train.threads);
    train.finish();
    if (reduction != "sum" && reduction != "mean")
        throw std::invalid_argument("config: train.reduction must be \"sum\" or \"mean\"");
    c.train.reduction = reduction == "sum" ? LossReduction::sum : LossReduction::mean;

    Section window(doc, "window");
    window.read("days", c.window.days);
    window.read("include_day_t", c.window.include_day_t);
    window.finish();
    return c;
}

RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot open config " + path.string());
    try {
        return parse_config(json::parse(in, nullptr, true, true));
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

json to_json(const RunConfig& c)
{
    return {
        {"simulation",
         {{"scenario", c.scenario},
          {"phi", c.sim.phi},
          {"sigma1", c.sim.sigma1},
          {"beta", c.sim.beta},
          {"sigma2", c.sim.sigma2},
          {"y0", c.sim.y0},
          {"tau", c.sim.tau},
          {"T", c.sim.T},
          {"seed", c.sim.seed}}},
        {"text",
         {{"enabled", c.text.enabled},
          {"embed_dim", c.text.embed_dim},
          {"max_articles", c.text.max_articles},
          {"scale", c.text.scale},
          {"seed", c.text.seed}}},
        {"crisis",
         {{"institutions", c.crisis.institutions},
          {"T", c.crisis.T},
          {"phi", c.crisis.phi},
          {"factor_sigma", c.crisis.factor_sigma},
          {"idio_sigma", c.crisis.idio_sigma},
          {"beta", c.crisis.beta},
          {"calm_sigma", c.crisis.calm_sigma},
          {"crisis_sigma", c.crisis.crisis_sigma},
          {"block_length", c.crisis.block_length},
          {"block_spacing", c.crisis.block_spacing},
          {"text_shift", c.crisis.text_shift},
          {"seed", c.crisis.seed}}},
        {"model",
         {{"kind", to_string(c.kind)},
          {"variant", to_string(c.arch.variant)},
          {"tokens", c.arch.tokens},
          {"embed_dim", c.arch.embed_dim},
          {"heads", c.arch.heads},
          {"ffn_hidden", c.arch.ffn_hidden},
          {"layers", c.arch.layers},
          {"mlp_depth", c.arch.mlp_depth},
          {"mlp_width", c.arch.mlp_width},
          {"baseline_width", c.baseline_width},
          {"init_seed", c.init_seed}}},
        {"train",
         {{"tau", c.train.tau},
          {"lr_grid", c.train.lr_grid},
          {"batch_grid", c.train.batch_grid},
          {"max_epochs", c.train.max_epochs},
          {"patience", c.train.patience},
          {"train_fraction", c.train.train_fraction},
          {"val_fraction", c.train.val_fraction},
          {"seed", c.train.seed},
          {"reduction", c.train.reduction == LossReduction::sum ? "sum" : "mean"},
          {"momentum", c.train.momentum},
          {"parallel", c.train.parallel},
          {"threads", c.train.threads}}},
        {"window", {{"days", c.window.days}, {"include_day_t", c.window.include_day_t}}},
    };
}

} // namespace covarlab::cli
