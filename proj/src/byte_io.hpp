#pragma once

// Little-endian primitive encoding shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace covarlab::detail
{

class ByteWriter
{
  public:
    void raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }

    template <typename U>
    void unsigned_le(U v)
    {
        for (std::size_t i = 0; i < sizeof(U); ++i)
            bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
    }

    void u32(std::uint32_t v) { unsigned_le(v); }
    void i64(std::int64_t v) { unsigned_le(static_cast<std::uint64_t>(v)); }
    void f64(double v) { unsigned_le(std::bit_cast<std::uint64_t>(v)); }

    std::vector<std::uint8_t>& bytes() { return bytes_; }

  private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader
{
  public:
    explicit ByteReader(const std::vector<std::uint8_t>& bytes) : bytes_(bytes) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }
    bool done() const { return pos_ == bytes_.size(); }

    void need(std::size_t n, const char* what) const
    {
        if (remaining() < n)
            throw std::runtime_error(std::string("truncated ") + what + " at offset " + std::to_string(pos_));
    }

    std::string raw(std::size_t n, const char* what)
    {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
        pos_ += n;
        return s;
    }

    template <typename U>
    U unsigned_le(const char* what)
    {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }

    std::uint32_t u32(const char* what) { return unsigned_le<std::uint32_t>(what); }
    std::int64_t i64(const char* what) { return static_cast<std::int64_t>(unsigned_le<std::uint64_t>(what)); }
    double f64(const char* what) { return std::bit_cast<double>(unsigned_le<std::uint64_t>(what)); }

  private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw std::runtime_error("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out)
        throw std::runtime_error("write failed for " + path.string());
}

} // namespace covarlab::detail
