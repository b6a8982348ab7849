#include "manifest.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <memory>
#include <sstream>
#include <stdexcept>

namespace covarlab::cli
{

namespace
{

std::string utc_now()
{
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

} // namespace

std::string git_blob_hash(const std::filesystem::path& file)
{
    std::ifstream in(file, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + file.string());
    const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string header = "blob " + std::to_string(content.size()) + '\0';

    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), header.data(), header.size()) != 1 ||
        EVP_DigestUpdate(ctx.get(), content.data(), content.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
        throw std::runtime_error("SHA-1 failed for " + file.string());
    std::ostringstream hex;
    for (unsigned int i = 0; i < len; ++i)
        hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return hex.str();
}

nlohmann::json upstream_manifest(const std::filesystem::path& file)
{
    const auto path = std::filesystem::absolute(file).parent_path() / manifest_name;
    std::ifstream in(path);
    if (!in)
        return nullptr;
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(path.string() + ": unreadable manifest: " + e.what());
    }
}

void check_against_upstream(const std::filesystem::path& file, const std::string& hash)
{
    const nlohmann::json m = upstream_manifest(file);
    if (m.is_null() || !m.contains("outputs"))
        return;
    const std::string name = file.filename().string();
    for (const auto& out : m["outputs"]) {
        if (out.value("path", "") != name)
            continue;
        if (out.value("sha1", "") != hash)
            throw std::runtime_error("manifest mismatch: " + file.string() + " has hash " + hash + " but " +
                                     m.value("command", std::string("upstream")) + " recorded " +
                                     out.value("sha1", std::string("?")));
        return;
    }
}

Manifest::Manifest(std::string command, nlohmann::json config, std::uint64_t seed)
{
    doc_["command"] = std::move(command);
    doc_["config"] = std::move(config);
    doc_["seed"] = seed;
    doc_["started"] = utc_now();
    doc_["inputs"] = nlohmann::json::array();
    doc_["outputs"] = nlohmann::json::array();
}

void Manifest::add_input(const std::filesystem::path& file)
{
    const std::string hash = git_blob_hash(file);
    check_against_upstream(file, hash);
    doc_["inputs"].push_back({{"path", std::filesystem::absolute(file).lexically_normal().string()}, {"sha1", hash}});
}

void Manifest::add_output(const std::filesystem::path& file)
{
    doc_["outputs"].push_back({{"path", file.filename().string()}, {"sha1", git_blob_hash(file)}});
}

void Manifest::write(const std::filesystem::path& dir)
{
    doc_["finished"] = utc_now();
    std::ofstream out(dir / manifest_name, std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + (dir / manifest_name).string());
    out << doc_.dump(2) << '\n';
}

} // namespace covarlab::cli
