// Label-preserving augmentation with per-class policies.
//
// Tip-change images get a restricted policy (horizontal flips and noise
// only) because rotations and crops can move or remove the scan-line
// discontinuity that defines the class.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tipstate/common.hpp"
#include "tipstate/dataset.hpp"
#include "tipstate/image.hpp"
#include "tipstate/rng.hpp"

namespace tipstate {

enum class FlipAxis { Horizontal, Vertical };
enum class FlipPolicy { None, HorizontalOnly, Both };

struct NoiseRange {
    double lo = 0.0;
    double hi = 0.15;
};

struct AugmentPolicy {
    bool rotations = true;
    FlipPolicy flips = FlipPolicy::Both;
    bool crop_pan = true;
    NoiseRange noise_sigma_range{};
    int repeats = 4;
};

inline AugmentPolicy restricted_tip_change_policy() {
    AugmentPolicy p;
    p.rotations = false;
    p.flips = FlipPolicy::HorizontalOnly;
    p.crop_pan = false;
    return p;
}

inline void validate_policy(const AugmentPolicy& p) {
    require(p.noise_sigma_range.lo >= 0.0 && p.noise_sigma_range.hi <= 0.5 &&
                p.noise_sigma_range.lo <= p.noise_sigma_range.hi,
            ErrorCode::SigmaOutOfRange, "noise sigma range must lie within [0, 0.5]");
    require(p.repeats >= 0, ErrorCode::BadConfig, "repeats must be >= 0");
}

// A policy fits a label unless the label is TipChange and the policy allows
// an op the restricted scheme forbids.
inline void validate_policy_for_label(const std::string& label, const AugmentPolicy& p) {
    validate_policy(p);
    if (label == "TipChange")
        require(!p.rotations && !p.crop_pan && p.flips != FlipPolicy::Both,
                ErrorCode::PolicyMismatch,
                "TipChange permits only horizontal flips and Gaussian noise");
}

inline AugmentPolicy default_policy_for(const std::string& label) {
    if (label == "TipChange") return restricted_tip_change_policy();
    return AugmentPolicy{};
}

inline ScanImage rotate(const ScanImage& img, double theta_deg) {
    theta_deg = std::fmod(theta_deg, 360.0);
    if (theta_deg < 0.0) theta_deg += 360.0;
    const double theta = theta_deg * (3.14159265358979323846 / 180.0);
    const double ct = std::cos(theta), st = std::sin(theta);
    const double cy = 0.5 * (img.height - 1), cx = 0.5 * (img.width - 1);
    const double eps = 1e-9;
    ScanImage out(img.height, img.width);
    for (int r = 0; r < img.height; ++r) {
        for (int c = 0; c < img.width; ++c) {
            const double dy = r - cy, dx = c - cx;
            const double sx = cx + ct * dx + st * dy;
            const double sy = cy - st * dx + ct * dy;
            if (sx < -eps || sx > img.width - 1 + eps || sy < -eps || sy > img.height - 1 + eps) {
                out.at(r, c) = 0.0;
            } else {
                const double qx = std::min(std::max(sx, 0.0), double(img.width - 1));
                const double qy = std::min(std::max(sy, 0.0), double(img.height - 1));
                out.at(r, c) = detail::bilinear_at(img, qy, qx);
            }
        }
    }
    return out;
}

inline ScanImage flip(const ScanImage& img, FlipAxis axis) {
    ScanImage out(img.height, img.width);
    for (int r = 0; r < img.height; ++r)
        for (int c = 0; c < img.width; ++c)
            out.at(r, c) = axis == FlipAxis::Horizontal ? img.at(r, img.width - 1 - c)
                                                        : img.at(img.height - 1 - r, c);
    return out;
}

struct CropBox {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
};

inline ScanImage crop_pan(const ScanImage& img, const CropBox& box, int out_side) {
    require(box.height > 0 && box.width > 0 && box.top >= 0 && box.left >= 0 &&
                box.top + box.height <= img.height && box.left + box.width <= img.width,
            ErrorCode::BoxOutOfBounds, "crop box must lie within the image");
    require(2 * box.height >= img.height && 2 * box.width >= img.width, ErrorCode::BoxTooSmall,
            "crop box sides must be at least half the image sides");
    require(supported_side(out_side), ErrorCode::UnsupportedSize,
            "output side must be one of 32, 64, 128, 256");
    ScanImage crop(box.height, box.width);
    for (int r = 0; r < box.height; ++r)
        for (int c = 0; c < box.width; ++c) crop.at(r, c) = img.at(box.top + r, box.left + c);
    return detail::resize_any(crop, out_side, out_side);
}

inline ScanImage add_gaussian_noise(const ScanImage& img, double sigma, std::uint64_t seed) {
    require(sigma >= 0.0 && sigma <= 0.5, ErrorCode::SigmaOutOfRange,
            "sigma must lie within [0, 0.5]");
    ScanImage out = img;
    if (sigma == 0.0) return out;
    Rng rng(seed);
    for (double& v : out.values) v = std::min(1.0, std::max(-1.0, v + sigma * rng.normal()));
    return out;
}

struct AugmentRecord {
    std::vector<std::string> ops;
};

inline std::vector<LabeledSample> augment_sample(const LabeledSample& s,
                                                 const AugmentPolicy& policy, std::uint64_t seed,
                                                 std::vector<AugmentRecord>* audit = nullptr) {
    validate_policy_for_label(s.label.name, policy);
    std::vector<LabeledSample> out;
    out.reserve(static_cast<std::size_t>(policy.repeats));
    for (int k = 0; k < policy.repeats; ++k) {
        Rng rng(derive_seed(seed, s.source_id, static_cast<std::uint64_t>(k)));
        LabeledSample a = s;
        AugmentRecord rec;
        if (policy.rotations && rng.coin()) {
            const double theta = rng.uniform(0.0, 360.0);
            a.image = rotate(a.image, theta);
            rec.ops.push_back("rotate");
        }
        if (policy.flips != FlipPolicy::None && rng.coin()) {
            a.image = flip(a.image, FlipAxis::Horizontal);
            rec.ops.push_back("flip_h");
        }
        if (policy.flips == FlipPolicy::Both && rng.coin()) {
            a.image = flip(a.image, FlipAxis::Vertical);
            rec.ops.push_back("flip_v");
        }
        if (policy.crop_pan && rng.coin()) {
            const int h = a.image.height, w = a.image.width;
            const int bh = (h + 1) / 2 + static_cast<int>(rng.index(h - (h + 1) / 2 + 1));
            const int bw = (w + 1) / 2 + static_cast<int>(rng.index(w - (w + 1) / 2 + 1));
            CropBox box{static_cast<int>(rng.index(h - bh + 1)),
                        static_cast<int>(rng.index(w - bw + 1)), bh, bw};
            a.image = crop_pan(a.image, box, h);
            rec.ops.push_back("crop_pan");
        }
        const double sigma =
            rng.uniform(policy.noise_sigma_range.lo, policy.noise_sigma_range.hi);
        a.image = add_gaussian_noise(a.image, sigma, rng.bits());
        rec.ops.push_back("noise");
        a.source_id = s.source_id + "#aug" + std::to_string(k);
        out.push_back(std::move(a));
        if (audit) audit->push_back(std::move(rec));
    }
    return out;
}

// Expand the train and test pools in place with per-class default policies
// (repeats overridable). The holdout pool is never augmented.
inline void augment_split(DatasetSplit& split, std::uint64_t seed, int repeats = -1,
                          std::vector<AugmentRecord>* audit = nullptr) {
    for (auto* pool : {&split.train, &split.test}) {
        std::vector<LabeledSample> fresh;
        for (const auto& s : *pool) {
            AugmentPolicy p = default_policy_for(s.label.name);
            if (repeats >= 0) p.repeats = repeats;
            auto extra = augment_sample(s, p, seed, audit);
            fresh.insert(fresh.end(), std::make_move_iterator(extra.begin()),
                         std::make_move_iterator(extra.end()));
        }
        pool->insert(pool->end(), std::make_move_iterator(fresh.begin()),
                     std::make_move_iterator(fresh.end()));
    }
}

// Policy files are UTF-8 text, one class per line:
//   <label>: rotations=<bool> flips=<none|horizontal|both> crop_pan=<bool>
//            noise=<lo>,<hi> repeats=<int>
// Omitted keys keep the compiled-in defaults for that label.
inline std::map<std::string, AugmentPolicy> load_policies(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(is.good(), ErrorCode::IoError, "cannot open " + path.string());
    std::map<std::string, AugmentPolicy> policies;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const auto colon = line.find(':');
        require(colon != std::string::npos, ErrorCode::BadConfig,
                path.string() + ":" + std::to_string(lineno) + ": expected '<label>: ...'");
        const std::string label = line.substr(0, colon);
        AugmentPolicy p = default_policy_for(label);
        std::istringstream ss(line.substr(colon + 1));
        std::string kv;
        while (ss >> kv) {
            const auto eq = kv.find('=');
            require(eq != std::string::npos, ErrorCode::BadConfig,
                    path.string() + ":" + std::to_string(lineno) + ": expected key=value");
            const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
            if (key == "rotations") {
                p.rotations = val == "true";
            } else if (key == "flips") {
                if (val == "none")
                    p.flips = FlipPolicy::None;
                else if (val == "horizontal")
                    p.flips = FlipPolicy::HorizontalOnly;
                else if (val == "both")
                    p.flips = FlipPolicy::Both;
                else
                    fail(ErrorCode::BadConfig, "unknown flips value: " + val);
            } else if (key == "crop_pan") {
                p.crop_pan = val == "true";
            } else if (key == "noise") {
                const auto comma = val.find(',');
                require(comma != std::string::npos, ErrorCode::BadConfig,
                        "noise expects <lo>,<hi>");
                p.noise_sigma_range.lo = std::stod(val.substr(0, comma));
                p.noise_sigma_range.hi = std::stod(val.substr(comma + 1));
            } else if (key == "repeats") {
                p.repeats = std::stoi(val);
            } else {
                fail(ErrorCode::BadConfig, "unknown policy key: " + key);
            }
        }
        validate_policy_for_label(label, p);
        policies[label] = p;
    }
    return policies;
}

}  // namespace tipstate
