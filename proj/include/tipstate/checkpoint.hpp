// Checkpoint container: "TSCK" magic, u32 format version, length-prefixed
// JSON header, float64 little-endian blobs, trailing CRC32 over everything
// before it. Networks rebuild from architecture_id + hyperparams, then the
// blobs restore parameters and running statistics bit-exactly.
#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tipstate/io.hpp"
#include "tipstate/network.hpp"
#include "tipstate/zoo.hpp"

namespace tipstate {

constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    return table;
}

inline std::uint32_t crc32(std::uint32_t crc, const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    crc ^= 0xFFFFFFFFu;
    for (std::size_t i = 0; i < len; ++i) crc = crc32_table()[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

// Accumulating writer so the trailing checksum covers every byte written.
struct CrcWriter {
    std::ofstream os;
    std::uint32_t crc = 0;

    explicit CrcWriter(const std::filesystem::path& path) : os(path, std::ios::binary) {
        require(os.good(), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    }
    void write(const void* data, std::size_t len) {
        os.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
        crc = crc32(crc, data, len);
    }
    void write_u32(std::uint32_t v) {
        unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>((v >> 8) & 0xff),
                              static_cast<unsigned char>((v >> 16) & 0xff),
                              static_cast<unsigned char>((v >> 24) & 0xff)};
        write(b, 4);
    }
    void write_f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
        write(b, 8);
    }
};

struct CrcReader {
    std::ifstream is;
    std::uint32_t crc = 0;
    std::string path;

    explicit CrcReader(const std::filesystem::path& p) : is(p, std::ios::binary), path(p.string()) {
        require(is.good(), ErrorCode::IoError, "cannot open " + path);
    }
    void read(void* data, std::size_t len) {
        is.read(static_cast<char*>(data), static_cast<std::streamsize>(len));
        require(is.good(), ErrorCode::CorruptFile, path + ": truncated");
        crc = crc32(crc, data, len);
    }
    std::uint32_t read_u32() {
        unsigned char b[4];
        read(b, 4);
        return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
               (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
    }
    double read_f64() {
        unsigned char b[8];
        read(b, 8);
        std::uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
};

}  // namespace detail

template <typename T>
void save_checkpoint(NetworkGraph<T>& net, const std::filesystem::path& path) {
    nlohmann::json header;
    header["architecture_id"] = net.architecture_id;
    header["hyperparams"] = net.hyperparams;

    detail::CrcWriter w(path);
    w.write("TSCK", 4);
    w.write_u32(kCheckpointVersion);
    const std::string hs = header.dump();
    w.write_u32(static_cast<std::uint32_t>(hs.size()));
    w.write(hs.data(), hs.size());

    const auto dump_blob = [&](const T* data, std::size_t n) {
        w.write_u32(static_cast<std::uint32_t>(n));
        for (std::size_t i = 0; i < n; ++i) w.write_f64(static_cast<double>(data[i]));
    };
    auto params = net.params();
    w.write_u32(static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) dump_blob(p.data, p.size);
    auto stats = net.running_stats();
    w.write_u32(static_cast<std::uint32_t>(stats.size()));
    for (const auto& s : stats) dump_blob(s.data, s.size);

    const std::uint32_t crc = w.crc;
    w.write_u32(crc);  // folds the crc bytes into w.crc, which is discarded
    require(w.os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

struct CheckpointHeader {
    std::uint32_t version = 0;
    std::string architecture_id;
    std::map<std::string, std::string> hyperparams;
};

inline CheckpointHeader read_checkpoint_header(detail::CrcReader& r) {
    char magic[4];
    r.read(magic, 4);
    require(std::memcmp(magic, "TSCK", 4) == 0, ErrorCode::CorruptFile, r.path + ": bad magic");
    CheckpointHeader h;
    h.version = r.read_u32();
    require(h.version == kCheckpointVersion, ErrorCode::VersionMismatch,
            r.path + ": format version " + std::to_string(h.version) + " unsupported");
    const std::uint32_t len = r.read_u32();
    require(len < (1u << 20), ErrorCode::CorruptFile, r.path + ": header too large");
    std::string hs(len, '\0');
    r.read(hs.data(), len);
    nlohmann::json header = nlohmann::json::parse(hs, nullptr, false);
    require(!header.is_discarded(), ErrorCode::CorruptFile, r.path + ": bad header JSON");
    h.architecture_id = header.at("architecture_id").get<std::string>();
    h.hyperparams = header.at("hyperparams").get<std::map<std::string, std::string>>();
    return h;
}

inline void verify_checkpoint_crc(detail::CrcReader& r) {
    const std::uint32_t computed = r.crc;
    const std::uint32_t stored = r.read_u32();
    require(stored == computed, ErrorCode::CorruptFile, r.path + ": checksum mismatch");
}

// Reads only the header (arch id + hyperparams), without the blobs.
inline CheckpointHeader peek_checkpoint(const std::filesystem::path& path) {
    detail::CrcReader r(path);
    return read_checkpoint_header(r);
}

template <typename T>
NetworkGraph<T> load_checkpoint(const std::filesystem::path& path) {
    detail::CrcReader r(path);
    const CheckpointHeader h = read_checkpoint_header(r);
    require(h.architecture_id != "rfc", ErrorCode::BadConfig,
            r.path + ": holds a forest, not a network");

    NetworkGraph<T> net = build_network<T>(
        h.architecture_id, std::stoi(h.hyperparams.at("classes")),
        std::stoi(h.hyperparams.at("side")), head_activation_from_name(h.hyperparams.at("head")),
        std::stoull(h.hyperparams.at("init_seed")));
    net.hyperparams = h.hyperparams;

    const auto load_blob = [&](T* data, std::size_t n) {
        const std::uint32_t stored = r.read_u32();
        require(stored == n, ErrorCode::CorruptFile, r.path + ": blob size mismatch");
        for (std::size_t i = 0; i < n; ++i) data[i] = static_cast<T>(r.read_f64());
    };
    auto params = net.params();
    require(r.read_u32() == params.size(), ErrorCode::CorruptFile, r.path + ": blob count");
    for (auto& p : params) load_blob(p.data, p.size);
    auto stats = net.running_stats();
    require(r.read_u32() == stats.size(), ErrorCode::CorruptFile, r.path + ": stat count");
    for (auto& s : stats) load_blob(s.data, s.size);
    verify_checkpoint_crc(r);
    net.mode = Mode::Infer;
    return net;
}

}  // namespace tipstate
