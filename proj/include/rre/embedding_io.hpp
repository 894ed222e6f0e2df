#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "rre/types.hpp"

namespace rre {

namespace detail {

inline void put_u32(std::string& buf, std::uint32_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
    buf.push_back(static_cast<char>((v >> 16) & 0xff));
    buf.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u64(std::string& buf, std::uint64_t v) {
    put_u32(buf, static_cast<std::uint32_t>(v & 0xffffffffu));
    put_u32(buf, static_cast<std::uint32_t>(v >> 32));
}

inline void put_f32(std::string& buf, float v) {
    put_u32(buf, std::bit_cast<std::uint32_t>(v));
}

class ByteReader {
public:
    ByteReader(const std::filesystem::path& path) : path_(path.string()), in_(path, std::ios::binary) {
        if (!in_) throw std::runtime_error("cannot open " + path_);
    }

    void read_exact(char* dst, std::size_t n, const char* what) {
        in_.read(dst, static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n)
            throw std::runtime_error(path_ + ": truncated file while reading " + std::string(what));
    }

    std::uint32_t read_u32(const char* what) {
        unsigned char b[4];
        read_exact(reinterpret_cast<char*>(b), 4, what);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }

    std::uint64_t read_u64(const char* what) {
        const std::uint64_t lo = read_u32(what);
        const std::uint64_t hi = read_u32(what);
        return lo | (hi << 32);
    }

    void read_f32_block(float* dst, std::size_t count, const char* what) {
        static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
        read_exact(reinterpret_cast<char*>(dst), count * 4, what);
        if constexpr (std::endian::native == std::endian::big) {
            for (std::size_t i = 0; i < count; ++i) {
                std::uint32_t v = std::bit_cast<std::uint32_t>(dst[i]);
                v = __builtin_bswap32(v);
                dst[i] = std::bit_cast<float>(v);
            }
        }
    }

    bool at_eof() {
        return in_.peek() == std::char_traits<char>::eof();
    }

    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::ifstream in_;
};

/// Write-to-temp-then-rename so a crashed writer never leaves a torn file.
inline void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw std::runtime_error("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

inline void append_f32_le(std::string& buf, const float* src, std::size_t count) {
    if constexpr (std::endian::native == std::endian::little) {
        const std::size_t off = buf.size();
        buf.resize(off + count * 4);
        std::memcpy(buf.data() + off, src, count * 4);
    } else {
        for (std::size_t i = 0; i < count; ++i) put_f32(buf, src[i]);
    }
}

}  // namespace detail

inline constexpr char kDenseMagic[4] = {'R', 'R', 'E', '1'};
inline constexpr char kRaggedMagic[4] = {'R', 'R', 'T', '1'};
inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

/// .rre: "RRE1", u32 version, u64 count, u32 dim, count*dim f32, row-major,
/// all little-endian.
inline void save_embeddings(const EmbeddingMatrix& m, const std::filesystem::path& path) {
    std::string buf;
    buf.reserve(20 + m.values.size() * 4);
    buf.append(kDenseMagic, 4);
    detail::put_u32(buf, kEmbeddingFormatVersion);
    detail::put_u64(buf, m.count());
    detail::put_u32(buf, static_cast<std::uint32_t>(m.dim()));
    detail::append_f32_le(buf, m.values.data(), m.values.size());
    detail::atomic_write(path, buf);
}

inline EmbeddingMatrix load_embeddings(const std::filesystem::path& path,
                                       std::optional<std::size_t> expected_dim = std::nullopt) {
    detail::ByteReader in(path);
    char magic[4];
    in.read_exact(magic, 4, "magic");
    if (std::memcmp(magic, kDenseMagic, 4) != 0)
        throw std::runtime_error(in.path() + ": bad magic, not a dense embedding file");
    const std::uint32_t version = in.read_u32("version");
    if (version != kEmbeddingFormatVersion)
        throw std::runtime_error(in.path() + ": unsupported version " + std::to_string(version));
    const std::uint64_t count = in.read_u64("count");
    const std::uint32_t dim = in.read_u32("dim");
    if (dim == 0) throw std::runtime_error(in.path() + ": dim must be positive");
    if (expected_dim && *expected_dim != dim)
        throw std::runtime_error(in.path() + ": dim " + std::to_string(dim) +
                                 " does not match expected " + std::to_string(*expected_dim));
    EmbeddingMatrix m;
    m.values = Matrix<float>(count, dim);
    in.read_f32_block(m.values.data(), m.values.size(), "values");
    if (!in.at_eof())
        throw std::runtime_error(in.path() + ": trailing bytes after declared payload");
    if (!m.values.all_finite())
        throw std::runtime_error(in.path() + ": non-finite value in embedding matrix");
    return m;
}

/// .rrt: "RRT1", u32 version, u64 count, u32 dim, then per record a u32
/// length followed by length*dim f32 values.
inline void save_ragged_embeddings(const RaggedEmbeddings& r, const std::filesystem::path& path) {
    std::string buf;
    buf.append(kRaggedMagic, 4);
    detail::put_u32(buf, kEmbeddingFormatVersion);
    detail::put_u64(buf, r.records.size());
    detail::put_u32(buf, static_cast<std::uint32_t>(r.dim));
    for (const auto& rec : r.records) {
        detail::put_u32(buf, static_cast<std::uint32_t>(rec.rows()));
        detail::append_f32_le(buf, rec.data(), rec.size());
    }
    detail::atomic_write(path, buf);
}

inline RaggedEmbeddings load_ragged_embeddings(const std::filesystem::path& path,
                                               std::optional<std::size_t> expected_dim = std::nullopt) {
    detail::ByteReader in(path);
    char magic[4];
    in.read_exact(magic, 4, "magic");
    if (std::memcmp(magic, kRaggedMagic, 4) != 0)
        throw std::runtime_error(in.path() + ": bad magic, not a ragged embedding file");
    const std::uint32_t version = in.read_u32("version");
    if (version != kEmbeddingFormatVersion)
        throw std::runtime_error(in.path() + ": unsupported version " + std::to_string(version));
    const std::uint64_t count = in.read_u64("count");
    const std::uint32_t dim = in.read_u32("dim");
    if (dim == 0) throw std::runtime_error(in.path() + ": dim must be positive");
    if (expected_dim && *expected_dim != dim)
        throw std::runtime_error(in.path() + ": dim " + std::to_string(dim) +
                                 " does not match expected " + std::to_string(*expected_dim));
    RaggedEmbeddings r;
    r.dim = dim;
    r.records.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t len = in.read_u32("record length");
        Matrix<float> rec(len, dim);
        in.read_f32_block(rec.data(), rec.size(), "record values");
        if (!rec.all_finite())
            throw std::runtime_error(in.path() + ": non-finite value in record " + std::to_string(i));
        r.records.push_back(std::move(rec));
    }
    if (!in.at_eof())
        throw std::runtime_error(in.path() + ": trailing bytes after declared payload");
    return r;
}

}  // namespace rre
