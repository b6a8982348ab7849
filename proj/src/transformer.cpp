#include "covarlab/transformer.hpp"

#include "byte_io.hpp"

#include <cmath>
#include <random>

namespace covarlab
{

namespace
{
constexpr double layer_norm_eps = 1e-5;
}

std::string to_string(Variant v)
{
    return v == Variant::plain ? "plain" : "residual_layernorm";
}

Variant parse_variant(const std::string& s)
{
    if (s == "plain")
        return Variant::plain;
    if (s == "residual_layernorm")
        return Variant::residual_layernorm;
    throw std::invalid_argument("unknown variant '" + s + "' (expected plain or residual_layernorm)");
}

void ArchConfig::validate() const
{
    if (institutions < 2)
        throw std::invalid_argument("ArchConfig: need at least two institutions");
    if (tokens < 1)
        throw std::invalid_argument("ArchConfig: tokens must be >= 1");
    if (mlp_depth < 1)
        throw std::invalid_argument("ArchConfig: MLP depth must be >= 1");
    if (mlp_depth > 1 && mlp_width < 1)
        throw std::invalid_argument("ArchConfig: MLP width must be >= 1");
    if (backbone == Backbone::returns_only) {
        if (tokens != 1 || layers != 0)
            throw std::invalid_argument("ArchConfig: returns-only backbone takes one token and no layers");
        return;
    }
    if (layers < 1)
        throw std::invalid_argument("ArchConfig: layers must be >= 1");
    if (heads < 1 || model_dim() % heads != 0)
        throw std::invalid_argument("ArchConfig: head count must divide d = " + std::to_string(model_dim()));
    if (ffn_hidden < 1)
        throw std::invalid_argument("ArchConfig: FFN hidden dimension must be >= 1");
}

ArchConfig returns_only_config(std::size_t institutions, std::size_t side_features, std::size_t mlp_depth,
                               std::size_t mlp_width)
{
    ArchConfig c;
    c.backbone = Backbone::returns_only;
    c.tokens = 1;
    c.embed_dim = side_features;
    c.institutions = institutions;
    c.heads = 1;
    c.ffn_hidden = 0;
    c.layers = 0;
    c.mlp_depth = mlp_depth;
    c.mlp_width = mlp_width;
    c.validate();
    return c;
}

TokenBatch concat_pi(const Vector& returns, const Matrix& embeddings, const Mask& mask)
{
    if (embeddings.cols() != mask.size())
        throw std::invalid_argument("concat_pi: embedding columns and mask length differ");
    const Eigen::Index r = returns.size();
    TokenBatch batch{Matrix::Zero(r + embeddings.rows(), embeddings.cols()), mask};
    for (Eigen::Index j = 0; j < embeddings.cols(); ++j) {
        if (!mask(j))
            continue;
        batch.Z.col(j).head(r) = returns;
        batch.Z.col(j).tail(embeddings.rows()) = embeddings.col(j);
    }
    return batch;
}

Vector positional_encoding(std::size_t k, std::size_t embed_dim, double scale)
{
    // Odd dimensions end on a sine coordinate; d = 1 gives sin(k).
    Vector pe(embed_dim);
    for (std::size_t i = 0; i < embed_dim; ++i) {
        const double angle = double(k) / std::pow(10000.0, double(i - i % 2) / double(embed_dim));
        pe(Eigen::Index(i)) = scale * (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
    return pe;
}

Matrix encode_positions(const Matrix& embeddings, const Mask& mask, const std::vector<int>& positions)
{
    if (embeddings.cols() != mask.size() || positions.size() != std::size_t(mask.size()))
        throw std::invalid_argument("encode_positions: window shapes disagree");
    Matrix out = Matrix::Zero(embeddings.rows(), embeddings.cols());
    const auto valid = mask.count();
    if (valid == 0)
        return out;
    double norm_sum = 0.0;
    for (Eigen::Index j = 0; j < mask.size(); ++j)
        if (mask(j))
            norm_sum += embeddings.col(j).norm();
    const double scale = norm_sum / double(valid);
    for (Eigen::Index j = 0; j < mask.size(); ++j) {
        if (!mask(j))
            continue;
        if (positions[std::size_t(j)] < 0)
            throw std::invalid_argument("encode_positions: negative position");
        out.col(j) = embeddings.col(j) +
                     positional_encoding(std::size_t(positions[std::size_t(j)]), std::size_t(embeddings.rows()), scale);
    }
    return out;
}

TransformerModel zero_model(const ArchConfig& config)
{
    config.validate();
    TransformerModel model{config, {}};
    auto& w = model.weights;
    const auto d = Eigen::Index(config.model_dim());
    if (config.backbone == Backbone::transformer) {
        const auto dh = Eigen::Index(config.head_dim());
        const auto hidden = Eigen::Index(config.ffn_hidden);
        for (std::size_t l = 0; l < config.layers; ++l) {
            TransformerLayer<Matrix> layer;
            for (std::size_t h = 0; h < config.heads; ++h)
                layer.heads.push_back({Matrix::Zero(dh, d), Matrix::Zero(dh, d), Matrix::Zero(dh, d),
                                       Matrix::Zero(d, dh)});
            layer.ffn_in = Matrix::Zero(hidden, d);
            layer.ffn_in_bias = Matrix::Zero(hidden, 1);
            layer.ffn_out = Matrix::Zero(d, hidden);
            layer.ffn_out_bias = Matrix::Zero(d, 1);
            w.layers.push_back(std::move(layer));
        }
        w.readout = Matrix::Zero(Eigen::Index(config.tokens), 1);
    } else {
        w.readout = Matrix(0, 0);
    }
    Eigen::Index in = d;
    for (std::size_t i = 0; i < config.mlp_depth; ++i) {
        const Eigen::Index out = (i + 1 == config.mlp_depth) ? 1 : Eigen::Index(config.mlp_width);
        w.mlp.push_back({Matrix::Zero(out, in), Matrix::Zero(out, 1)});
        in = out;
    }
    return model;
}

TransformerModel init_model(const ArchConfig& config, std::uint64_t seed)
{
    TransformerModel model = zero_model(config);
    std::mt19937_64 rng(seed);
    for_each_weight(model.weights, [&](const std::string& name, Matrix& m) {
        if (m.size() == 0 || name.ends_with("bias"))
            return;
        const double a = std::sqrt(6.0 / double(m.rows() + m.cols()));
        std::uniform_real_distribution<double> dist(-a, a);
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                m(i, j) = dist(rng);
    });
    return model;
}

ModelWeights<TapeVar> record_weights(Tape<double>& tape, const ModelWeights<Matrix>& weights)
{
    ModelWeights<TapeVar> out;
    out.layers.resize(weights.layers.size());
    for (std::size_t l = 0; l < weights.layers.size(); ++l)
        out.layers[l].heads.resize(weights.layers[l].heads.size());
    out.mlp.resize(weights.mlp.size());

    std::vector<const Matrix*> source;
    for_each_weight(weights, [&](const std::string&, const Matrix& m) { source.push_back(&m); });
    std::size_t k = 0;
    for_each_weight(out, [&](const std::string&, TapeVar& v) {
        const Matrix& m = *source[k++];
        if (m.size() > 0)
            v = tape.parameter(m);
    });
    return out;
}

void check_batch(const ArchConfig& config, const TokenBatch& batch)
{
    if (batch.Z.rows() != Eigen::Index(config.model_dim()) || batch.Z.cols() != Eigen::Index(config.tokens) ||
        batch.mask.size() != batch.Z.cols())
        throw std::invalid_argument("token batch shape " + std::to_string(batch.Z.rows()) + "x" +
                                    std::to_string(batch.Z.cols()) + " does not match the model (" +
                                    std::to_string(config.model_dim()) + "x" + std::to_string(config.tokens) + ")");
    if (!batch.mask.any())
        throw std::invalid_argument("token batch has no valid token");
}

namespace
{

TapeVar record_msa(Tape<double>& tape, TapeVar Z, const TransformerLayer<TapeVar>& layer, const Mask& mask,
                   double inv_sqrt_d)
{
    TapeVar total;
    for (const auto& head : layer.heads) {
        const TapeVar keys = tape.matmul(head.key, Z);
        const TapeVar queries = tape.matmul(head.query, Z);
        const TapeVar scores = tape.scale(tape.matmul(tape.transpose(keys), queries), inv_sqrt_d);
        const TapeVar attention = tape.softmax_cols(scores, mask);
        const TapeVar values = tape.matmul(head.value, Z);
        const TapeVar out = tape.matmul(head.output, tape.matmul(values, attention));
        total = total.valid() ? tape.add(total, out) : out;
    }
    return total;
}

TapeVar record_ffn(Tape<double>& tape, TapeVar X, const TransformerLayer<TapeVar>& layer)
{
    const TapeVar hidden = tape.relu(tape.add_bias(tape.matmul(layer.ffn_in, X), layer.ffn_in_bias));
    return tape.add_bias(tape.matmul(layer.ffn_out, hidden), layer.ffn_out_bias);
}

} // namespace

TapeVar record_forward(Tape<double>& tape, const ModelWeights<TapeVar>& weights, const ArchConfig& config,
                       const TokenBatch& batch)
{
    check_batch(config, batch);
    TapeVar Z = tape.input(batch.Z);
    TapeVar h;
    if (config.backbone == Backbone::transformer) {
        const double inv_sqrt_d = 1.0 / std::sqrt(double(config.model_dim()));
        const bool residual = config.variant == Variant::residual_layernorm;
        for (const auto& layer : weights.layers) {
            const TapeVar attn = record_msa(tape, Z, layer, batch.mask, inv_sqrt_d);
            Z = residual ? tape.mask_cols(tape.layer_norm_cols(tape.add(Z, attn), layer_norm_eps), batch.mask) : attn;
            const TapeVar ffn = record_ffn(tape, Z, layer);
            Z = residual ? tape.layer_norm_cols(tape.add(Z, ffn), layer_norm_eps) : ffn;
            Z = tape.mask_cols(Z, batch.mask);
        }
        h = tape.matmul(Z, weights.readout);
    } else {
        h = Z;
    }
    for (std::size_t i = 0; i < weights.mlp.size(); ++i) {
        h = tape.add_bias(tape.matmul(weights.mlp[i].weight, h), weights.mlp[i].bias);
        if (i + 1 < weights.mlp.size())
            h = tape.relu(h);
    }
    return h;
}

Matrix msa_forward(const TokenBatch& batch, const TransformerLayer<Matrix>& layer, const ArchConfig& config)
{
    config.validate();
    check_batch(config, batch);
    Tape<double> tape;
    TransformerLayer<TapeVar> vars;
    for (const auto& head : layer.heads)
        vars.heads.push_back({tape.parameter(head.key), tape.parameter(head.query), tape.parameter(head.value),
                              tape.parameter(head.output)});
    const TapeVar out = record_msa(tape, tape.input(batch.Z), vars, batch.mask,
                                   1.0 / std::sqrt(double(config.model_dim())));
    return tape.value(out);
}

Matrix ffn_forward(const Matrix& X, const Matrix& W1, const Matrix& b1, const Matrix& W2, const Matrix& b2)
{
    if (W1.cols() != X.rows() || b1.rows() != W1.rows() || b1.cols() != 1 || W2.cols() != W1.rows() ||
        b2.rows() != W2.rows() || b2.cols() != 1)
        throw std::invalid_argument("ffn_forward: shape mismatch");
    Tape<double> tape;
    TransformerLayer<TapeVar> vars;
    vars.ffn_in = tape.parameter(W1);
    vars.ffn_in_bias = tape.parameter(b1);
    vars.ffn_out = tape.parameter(W2);
    vars.ffn_out_bias = tape.parameter(b2);
    return tape.value(record_ffn(tape, tape.input(X), vars));
}

double model_forward(const TransformerModel& model, const TokenBatch& batch)
{
    Tape<double> tape;
    const auto vars = record_weights(tape, model.weights);
    const double y = tape.value(record_forward(tape, vars, model.config, batch))(0, 0);
    if (!std::isfinite(y))
        throw std::runtime_error("model_forward: non-finite prediction");
    return y;
}

WeightNorms matrix_norms(const std::string& name, const Matrix& m)
{
    WeightNorms n{name, m.rows(), m.cols(), 0.0, 0.0, 0.0};
    if (m.size() == 0)
        return n;
    n.spectral = Eigen::JacobiSVD<Matrix>(m).singularValues()(0);
    n.l21 = m.rowwise().norm().sum();
    n.max_abs = m.cwiseAbs().maxCoeff();
    return n;
}

std::vector<WeightNorms> weight_norm_report(const TransformerModel& model)
{
    std::vector<WeightNorms> rows;
    for_each_weight(model.weights, [&](const std::string& name, const Matrix& m) {
        if (m.size() > 0)
            rows.push_back(matrix_norms(name, m));
    });
    return rows;
}

std::vector<std::uint8_t> checkpoint_bytes(const TransformerModel& model)
{
    detail::ByteWriter w;
    w.raw("CVTF", 4);
    w.u32(checkpoint_version);
    const ArchConfig& c = model.config;
    for (std::uint32_t v : {std::uint32_t(c.backbone), std::uint32_t(c.variant), std::uint32_t(c.tokens),
                            std::uint32_t(c.embed_dim), std::uint32_t(c.institutions), std::uint32_t(c.heads),
                            std::uint32_t(c.ffn_hidden), std::uint32_t(c.layers), std::uint32_t(c.mlp_depth),
                            std::uint32_t(c.mlp_width)})
        w.u32(v);
    for_each_weight(model.weights, [&](const std::string&, const Matrix& m) {
        w.u32(std::uint32_t(m.rows()));
        w.u32(std::uint32_t(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                w.f64(m(i, j));
    });
    return std::move(w.bytes());
}

TransformerModel checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes)
{
    detail::ByteReader r(bytes);
    if (r.raw(4, "checkpoint header") != "CVTF")
        throw std::runtime_error("not a CVTF checkpoint (bad magic)");
    const auto version = r.u32("checkpoint header");
    if (version != checkpoint_version)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    ArchConfig c;
    const auto backbone = r.u32("checkpoint header");
    const auto variant = r.u32("checkpoint header");
    if (backbone > 1 || variant > 1)
        throw std::runtime_error("corrupt checkpoint header");
    c.backbone = Backbone(backbone);
    c.variant = Variant(variant);
    c.tokens = r.u32("checkpoint header");
    c.embed_dim = r.u32("checkpoint header");
    c.institutions = r.u32("checkpoint header");
    c.heads = r.u32("checkpoint header");
    c.ffn_hidden = r.u32("checkpoint header");
    c.layers = r.u32("checkpoint header");
    c.mlp_depth = r.u32("checkpoint header");
    c.mlp_width = r.u32("checkpoint header");

    TransformerModel model = zero_model(c);
    for_each_weight(model.weights, [&](const std::string& name, Matrix& m) {
        const auto rows = r.u32("matrix header");
        const auto cols = r.u32("matrix header");
        if (Eigen::Index(rows) != m.rows() || Eigen::Index(cols) != m.cols())
            throw std::runtime_error("checkpoint matrix " + name + " has unexpected shape");
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j)
                m(i, j) = r.f64("matrix data");
    });
    if (!r.done())
        throw std::runtime_error("trailing bytes after checkpoint at offset " + std::to_string(r.offset()));
    return model;
}

void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path)
{
    detail::write_file_bytes(path, checkpoint_bytes(model));
}

TransformerModel load_checkpoint(const std::filesystem::path& path)
{
    return checkpoint_from_bytes(detail::read_file_bytes(path));
}

} // namespace covarlab
