// On-disk formats: SPMF image files and dataset manifests.
//
// Image file: little-endian "SPMF", u32 height, u32 width, then
// height*width float32 values row-major.
// Manifest: UTF-8 text, one record per line:
//   source_id<TAB>relative_path<TAB>surface<TAB>label
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tipstate/common.hpp"
#include "tipstate/dataset.hpp"
#include "tipstate/image.hpp"
#include "tipstate/labels.hpp"

namespace tipstate {

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_spmf(const ScanImage& img, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    os.write("SPMF", 4);
    detail::put_u32(os, static_cast<std::uint32_t>(img.height));
    detail::put_u32(os, static_cast<std::uint32_t>(img.width));
    for (double v : img.values) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(os, bits);
    }
    require(os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

inline ScanImage read_spmf(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrorCode::IoError, "cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    require(is.good() && std::memcmp(magic, "SPMF", 4) == 0, ErrorCode::CorruptFile,
            path.string() + ": bad magic");
    const std::uint32_t h = detail::get_u32(is);
    const std::uint32_t w = detail::get_u32(is);
    require(is.good() && h > 0 && w > 0 && h <= 1u << 16 && w <= 1u << 16,
            ErrorCode::CorruptFile, path.string() + ": bad dimensions");
    ScanImage img(static_cast<int>(h), static_cast<int>(w));
    for (double& v : img.values) {
        const std::uint32_t bits = detail::get_u32(is);
        require(is.good(), ErrorCode::CorruptFile, path.string() + ": truncated");
        float f;
        std::memcpy(&f, &bits, 4);
        v = static_cast<double>(f);
    }
    return img;
}

struct ManifestEntry {
    std::string source_id;
    std::string relative_path;
    Surface surface = Surface::Synthetic;
    std::string label;
};

inline void write_manifest(const std::vector<ManifestEntry>& entries,
                           const std::filesystem::path& path) {
    std::ofstream os(path);
    require(os.good(), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    for (const auto& e : entries)
        os << e.source_id << '\t' << e.relative_path << '\t' << surface_name(e.surface) << '\t'
           << e.label << '\n';
    require(os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(is.good(), ErrorCode::IoError, "cannot open " + path.string());
    std::vector<ManifestEntry> entries;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestEntry e;
        std::string surface;
        if (!std::getline(ss, e.source_id, '\t') || !std::getline(ss, e.relative_path, '\t') ||
            !std::getline(ss, surface, '\t') || !std::getline(ss, e.label))
            fail(ErrorCode::CorruptFile,
                 path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
        e.surface = surface_from_name(surface);
        entries.push_back(std::move(e));
    }
    return entries;
}

// Load every manifest entry as a LabeledSample. Image paths resolve relative
// to the manifest's directory. Labels are checked against the surface and
// source ids against each other.
inline std::vector<LabeledSample> load_dataset(const std::filesystem::path& manifest_path) {
    const auto entries = read_manifest(manifest_path);
    const auto base = manifest_path.parent_path();
    std::vector<LabeledSample> samples;
    samples.reserve(entries.size());
    for (const auto& e : entries) {
        LabeledSample s;
        s.image = read_spmf(base / e.relative_path);
        s.surface = e.surface;
        s.label = ClassLabel{e.label, Desirability::Undesirable};
        s.source_id = e.source_id;
        validate_sample(s);
        samples.push_back(std::move(s));
    }
    validate_unique_ids(samples);
    // Fill in desirability from whichever registered set carries the label.
    for (auto& s : samples) {
        for (const ClassSet* set :
             {&si_four_classes(), &si_binary_classes(), &metal_six_classes()}) {
            const int id = set->index_of(s.label.name);
            if (id >= 0) {
                s.label.desirability = set->at(id).desirability;
                break;
            }
        }
    }
    return samples;
}

}  // namespace tipstate
