#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>

#include <json.hpp>

#include "rre/embedding_io.hpp"
#include "rre/reranker.hpp"

namespace rre {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

inline std::uint64_t fnv1a64(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string to_hex(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[static_cast<std::size_t>(i)] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

/// Checkpoint directory: manifest.json (config + tensor table + checksum)
/// and params.bin (tensors concatenated in manifest order, f32 LE).
inline void save_checkpoint(const RerankerParams<float>& params, const RerankerConfig& config,
                            const std::filesystem::path& dir) {
    auto views = tensor_views(params);
    for (const auto& v : views)
        for (std::size_t i = 0; i < v.size; ++i)
            if (!std::isfinite(static_cast<double>(v.data[i])))
                throw std::invalid_argument("save_checkpoint: non-finite value in " + v.name);

    std::filesystem::create_directories(dir);

    std::string payload;
    nlohmann::json table = nlohmann::json::array();
    for (const auto& v : views) {
        const std::size_t offset = payload.size();
        detail::append_f32_le(payload, v.data, v.size);
        table.push_back({{"name", v.name},
                         {"shape", v.shape},
                         {"offset", offset},
                         {"bytes", v.size * 4}});
    }

    nlohmann::json manifest{{"format_version", kCheckpointFormatVersion},
                            {"config", config},
                            {"tensors", table},
                            {"payload_bytes", payload.size()},
                            {"payload_fnv1a64", to_hex(fnv1a64(payload.data(), payload.size()))}};

    detail::atomic_write(dir / "params.bin", payload);
    detail::atomic_write(dir / "manifest.json", manifest.dump(2) + "\n");
}

inline std::pair<RerankerParams<float>, RerankerConfig> load_checkpoint(
    const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    std::ifstream min(manifest_path);
    if (!min) throw std::runtime_error("cannot open " + manifest_path.string());
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(min);
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(manifest_path.string() + ": malformed manifest: " + e.what());
    }

    const auto version = manifest.at("format_version").get<std::uint32_t>();
    if (version != kCheckpointFormatVersion)
        throw std::runtime_error(manifest_path.string() + ": unsupported format version " +
                                 std::to_string(version));

    RerankerConfig config = manifest.at("config").get<RerankerConfig>();
    RerankerParams<float> params = init_params<float>(config);
    auto views = tensor_views(params);

    const auto& table = manifest.at("tensors");
    if (table.size() != views.size())
        throw std::runtime_error(manifest_path.string() + ": tensor table lists " +
                                 std::to_string(table.size()) + " tensors, expected " +
                                 std::to_string(views.size()));

    const auto params_path = dir / "params.bin";
    std::ifstream bin(params_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + params_path.string());
    std::string payload((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    const auto declared_bytes = manifest.at("payload_bytes").get<std::size_t>();
    std::size_t table_bytes = 0;
    for (const auto& entry : table) table_bytes += entry.at("bytes").get<std::size_t>();
    if (declared_bytes != payload.size() || table_bytes != payload.size())
        throw std::runtime_error(params_path.string() + ": payload size mismatch (file " +
                                 std::to_string(payload.size()) + " bytes, manifest " +
                                 std::to_string(declared_bytes) + ", tensor table " +
                                 std::to_string(table_bytes) + ")");

    const std::string checksum = to_hex(fnv1a64(payload.data(), payload.size()));
    if (checksum != manifest.at("payload_fnv1a64").get<std::string>())
        throw std::runtime_error(params_path.string() + ": payload checksum mismatch");

    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < views.size(); ++i) {
        const auto& entry = table[i];
        if (entry.at("name").get<std::string>() != views[i].name)
            throw std::runtime_error(manifest_path.string() + ": tensor " +
                                     std::to_string(i) + " is \"" +
                                     entry.at("name").get<std::string>() + "\", expected \"" +
                                     views[i].name + "\"");
        const auto offset = entry.at("offset").get<std::size_t>();
        const auto bytes = entry.at("bytes").get<std::size_t>();
        if (offset != expected_offset || bytes != views[i].size * 4)
            throw std::runtime_error(manifest_path.string() + ": tensor \"" + views[i].name +
                                     "\" has inconsistent offset or size");
        expected_offset += bytes;
        const auto* src = reinterpret_cast<const unsigned char*>(payload.data()) + offset;
        for (std::size_t j = 0; j < views[i].size; ++j) {
            const std::uint32_t u = static_cast<std::uint32_t>(src[j * 4]) |
                                    (static_cast<std::uint32_t>(src[j * 4 + 1]) << 8) |
                                    (static_cast<std::uint32_t>(src[j * 4 + 2]) << 16) |
                                    (static_cast<std::uint32_t>(src[j * 4 + 3]) << 24);
            views[i].data[j] = std::bit_cast<float>(u);
        }
        for (std::size_t j = 0; j < views[i].size; ++j)
            if (!std::isfinite(static_cast<double>(views[i].data[j])))
                throw std::runtime_error(params_path.string() + ": non-finite value in tensor \"" +
                                         views[i].name + "\"");
    }
    return {std::move(params), std::move(config)};
}

}  // namespace rre
