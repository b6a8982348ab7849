#pragma once

// Run manifests: what a command read and wrote, with git-style blob hashes,
// so later stages can refuse stale inputs.

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace covarlab::cli
{

inline constexpr const char* manifest_name = "manifest.json";

/// SHA-1 of "blob <size>\0<content>", as `git hash-object` prints it.
std::string git_blob_hash(const std::filesystem::path& file);

class Manifest
{
  public:
    Manifest(std::string command, nlohmann::json config, std::uint64_t seed);

    /// Hashes an input and checks it against the manifest next to it, if any.
    void add_input(const std::filesystem::path& file);
    void add_output(const std::filesystem::path& file);
    /// Writes <dir>/manifest.json.
    void write(const std::filesystem::path& dir);

  private:
    nlohmann::json doc_;
};

/// Throws when `file` is listed as an output of the manifest in its
/// directory and its current hash differs from the recorded one.
void check_against_upstream(const std::filesystem::path& file, const std::string& hash);

/// The manifest stored beside `file`, or null when there is none.
nlohmann::json upstream_manifest(const std::filesystem::path& file);

} // namespace covarlab::cli
