// Scan images: the normalized height grid every classifier consumes.
//
// Normalization recipe: subtract the per-image mean, divide by 3x the
// standard deviation, clamp to [-1, 1]. Constant images map to all zeros.
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "tipstate/common.hpp"

namespace tipstate {

struct ScanImage {
    int height = 0;
    int width = 0;
    std::vector<double> values;  // row-major, height*width

    ScanImage() = default;
    ScanImage(int h, int w) : height(h), width(w), values(static_cast<std::size_t>(h) * w, 0.0) {}

    double& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
    double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }

    bool all_finite() const {
        return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
    }

    bool in_unit_range() const {
        return std::all_of(values.begin(), values.end(),
                           [](double v) { return v >= -1.0 && v <= 1.0; });
    }
};

constexpr int kMinImageSide = 8;

inline ScanImage normalize(const ScanImage& raw) {
    require(raw.height >= kMinImageSide && raw.width >= kMinImageSide, ErrorCode::TooSmall,
            "image must be at least 8x8");
    require(raw.all_finite(), ErrorCode::NonFiniteInput, "image contains non-finite values");

    ScanImage out(raw.height, raw.width);
    const std::size_t count = raw.values.size();

    double mean = 0.0;
    for (double v : raw.values) mean += v;
    mean /= static_cast<double>(count);
    for (std::size_t i = 0; i < count; ++i) out.values[i] = raw.values[i] - mean;

    // Second centering pass removes the O(eps * |raw|) residual left by the
    // first when raw values are large compared to their spread.
    double resid = 0.0;
    for (double v : out.values) resid += v;
    resid /= static_cast<double>(count);
    for (double& v : out.values) v -= resid;

    double var = 0.0;
    for (double v : out.values) var += v * v;
    var /= static_cast<double>(count);
    const double sigma = std::sqrt(var);
    if (sigma == 0.0) return out;  // no contrast: all zeros

    const double scale = 1.0 / (3.0 * sigma);
    for (double& v : out.values) v = std::clamp(v * scale, -1.0, 1.0);
    return out;
}

namespace detail {

// Half-pixel-centered bilinear sample with edge clamping.
inline double bilinear_at(const ScanImage& img, double sy, double sx) {
    sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
    sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
    const int y0 = static_cast<int>(sy);
    const int x0 = static_cast<int>(sx);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const double fy = sy - y0;
    const double fx = sx - x0;
    const double top = img.at(y0, x0) * (1.0 - fx) + img.at(y0, x1) * fx;
    const double bot = img.at(y1, x0) * (1.0 - fx) + img.at(y1, x1) * fx;
    return top * (1.0 - fy) + bot * fy;
}

inline ScanImage resize_any(const ScanImage& img, int out_h, int out_w) {
    if (img.height == out_h && img.width == out_w) return img;
    ScanImage out(out_h, out_w);
    const double ry = static_cast<double>(img.height) / out_h;
    const double rx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        const double sy = (y + 0.5) * ry - 0.5;
        for (int x = 0; x < out_w; ++x) {
            const double sx = (x + 0.5) * rx - 0.5;
            out.at(y, x) = bilinear_at(img, sy, sx);
        }
    }
    return out;
}

}  // namespace detail

inline bool supported_side(int side) {
    return side == 32 || side == 64 || side == 128 || side == 256;
}

inline ScanImage resize(const ScanImage& img, int side) {
    require(supported_side(side), ErrorCode::UnsupportedSize,
            "side must be one of 32/64/128/256, got " + std::to_string(side));
    return detail::resize_any(img, side, side);
}

}  // namespace tipstate
