#pragma once

// Transformer quantile function class: return-augmented tokens, masked
// multi-head self-attention, position-wise FFN, linear readout over token
// positions and an MLP head producing one scalar.

#include "covarlab/numcore.hpp"
#include "covarlab/tape.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace covarlab
{

enum class Backbone : std::uint32_t
{
    transformer = 0,
    /// No attention: the single input column feeds the MLP directly.
    returns_only = 1,
};

enum class Variant : std::uint32_t
{
    plain = 0,
    residual_layernorm = 1,
};

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

struct ArchConfig
{
    Backbone backbone = Backbone::transformer;
    Variant variant = Variant::plain;
    std::size_t tokens = 97;        ///< n
    std::size_t embed_dim = 64;     ///< d_e; side-feature count for returns_only
    std::size_t institutions = 8;   ///< J, the model sees J - 1 returns
    std::size_t heads = 1;          ///< H
    std::size_t ffn_hidden = 64;    ///< d_h
    std::size_t layers = 1;         ///< L
    std::size_t mlp_depth = 2;      ///< D
    std::size_t mlp_width = 64;     ///< d_m

    std::size_t return_dim() const { return institutions - 1; }
    std::size_t model_dim() const { return return_dim() + embed_dim; }
    std::size_t head_dim() const { return model_dim() / heads; }

    /// Throws std::invalid_argument on an inconsistent configuration.
    void validate() const;

    bool operator==(const ArchConfig&) const = default;
};

/// Degenerate configuration for the MLP baselines: J - 1 returns plus
/// `side_features` scalar inputs, one token, no attention.
ArchConfig returns_only_config(std::size_t institutions, std::size_t side_features, std::size_t mlp_depth,
                               std::size_t mlp_width);

// Weight containers are templated on the slot type so the same layout holds
// concrete matrices (Matrix) and their tape handles (Tape<double>::Var).

template <typename T>
struct AttentionHead
{
    T key, query, value, output;
};

template <typename T>
struct TransformerLayer
{
    std::vector<AttentionHead<T>> heads;
    T ffn_in, ffn_in_bias, ffn_out, ffn_out_bias;
};

template <typename T>
struct DenseLayer
{
    T weight, bias;
};

template <typename T>
struct ModelWeights
{
    std::vector<TransformerLayer<T>> layers;
    T readout;
    std::vector<DenseLayer<T>> mlp;
};

/// Visits every slot in canonical (checkpoint) order as f(name, slot).
template <typename W, typename F>
void for_each_weight(W& weights, F&& f)
{
    for (std::size_t l = 0; l < weights.layers.size(); ++l) {
        auto& layer = weights.layers[l];
        const std::string lp = "layer" + std::to_string(l) + ".";
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            const std::string hp = lp + "head" + std::to_string(h) + ".";
            f(hp + "key", layer.heads[h].key);
            f(hp + "query", layer.heads[h].query);
            f(hp + "value", layer.heads[h].value);
            f(hp + "output", layer.heads[h].output);
        }
        f(lp + "ffn_in", layer.ffn_in);
        f(lp + "ffn_in_bias", layer.ffn_in_bias);
        f(lp + "ffn_out", layer.ffn_out);
        f(lp + "ffn_out_bias", layer.ffn_out_bias);
    }
    f(std::string("readout"), weights.readout);
    for (std::size_t i = 0; i < weights.mlp.size(); ++i) {
        const std::string p = "mlp" + std::to_string(i) + ".";
        f(p + "weight", weights.mlp[i].weight);
        f(p + "bias", weights.mlp[i].bias);
    }
}

struct TransformerModel
{
    ArchConfig config;
    ModelWeights<Matrix> weights;
};

/// Model input: Z is d x n, pad columns are zero and flagged false in mask.
struct TokenBatch
{
    Matrix Z;
    Mask mask;
};

/// Stacks the replicated return vector above the embeddings. Returns are
/// written into valid columns only; pad columns stay entirely zero.
TokenBatch concat_pi(const Vector& returns, const Matrix& embeddings, const Mask& mask);

/// Sinusoidal code for position k: entries 2i, 2i + 1 hold
/// sin, cos of k / 10000^(2i / d_e), all multiplied by `scale`.
Vector positional_encoding(std::size_t k, std::size_t embed_dim, double scale);

/// Adds positional codes to the valid columns of a window. The code of
/// column c uses positions[c] and is scaled by the mean l2 norm of the
/// valid embedding columns. Pad columns are returned as zeros.
Matrix encode_positions(const Matrix& embeddings, const Mask& mask, const std::vector<int>& positions);

/// All-zero model with the shapes implied by `config`.
TransformerModel zero_model(const ArchConfig& config);

/// Uniform(-a, a), a = sqrt(6 / (fan_in + fan_out)), on every weight; biases zero.
TransformerModel init_model(const ArchConfig& config, std::uint64_t seed);

using TapeVar = Tape<double>::Var;

/// Records every non-empty weight as a tape parameter.
ModelWeights<TapeVar> record_weights(Tape<double>& tape, const ModelWeights<Matrix>& weights);

/// Records the full forward pass; the result is a 1x1 node.
TapeVar record_forward(Tape<double>& tape, const ModelWeights<TapeVar>& weights, const ArchConfig& config,
                       const TokenBatch& batch);

/// sum_h W_O W_V Z softmax_cols(Z' W_K' W_Q Z / sqrt(d)), pad keys masked.
Matrix msa_forward(const TokenBatch& batch, const TransformerLayer<Matrix>& layer, const ArchConfig& config);

/// W2 relu(W1 X + b1) + b2, column by column.
Matrix ffn_forward(const Matrix& X, const Matrix& W1, const Matrix& b1, const Matrix& W2, const Matrix& b2);

/// Scalar prediction g(Z) of the model on one token batch.
double model_forward(const TransformerModel& model, const TokenBatch& batch);

void check_batch(const ArchConfig& config, const TokenBatch& batch);

struct WeightNorms
{
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    double spectral = 0.0;
    double l21 = 0.0;  ///< sum of row l2 norms
    double max_abs = 0.0;
};

WeightNorms matrix_norms(const std::string& name, const Matrix& m);
std::vector<WeightNorms> weight_norm_report(const TransformerModel& model);

// Checkpoint ("CVTF"): magic, u32 version, ArchConfig as u32 fields, then
// every weight slot in for_each_weight order as (u32 rows, u32 cols,
// rows * cols little-endian f64 in row-major order).

inline constexpr std::uint32_t checkpoint_version = 1;

std::vector<std::uint8_t> checkpoint_bytes(const TransformerModel& model);
TransformerModel checkpoint_from_bytes(const std::vector<std::uint8_t>& bytes);
void save_checkpoint(const TransformerModel& model, const std::filesystem::path& path);
TransformerModel load_checkpoint(const std::filesystem::path& path);

} // namespace covarlab
