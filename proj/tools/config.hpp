#pragma once

// JSON run configuration. Every section and key is optional; unknown keys
// are rejected so typos do not silently fall back to defaults.

#include "covarlab/pipeline.hpp"
#include "covarlab/simulation.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>

namespace covarlab::cli
{

struct RunConfig
{
    std::string scenario = "ar1";  ///< simulate: "ar1" or "crisis"
    SimConfig sim;
    NoiseTextConfig text;
    CrisisConfig crisis;
    ModelKind kind = ModelKind::text_transformer;
    ArchConfig arch;
    std::size_t baseline_width = 64;  ///< hidden units of the MLP baselines
    std::uint64_t init_seed = 11;
    TrainConfig train;
    WindowOptions window;

    /// Architecture for `kind` with the baseline width applied to MLP kinds.
    ArchConfig arch_for_kind() const;
};

RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& config);

} // namespace covarlab::cli
