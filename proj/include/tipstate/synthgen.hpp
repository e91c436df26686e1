// Procedural generator of labeled synthetic scan images.
//
// Each class is a physically inspired cartoon, not a tunneling simulation:
// the only contract is that classes are visually distinct, deterministic for
// a given seed, and carry the structure their label names (stripes, lattice
// bumps, shears, ghosts, steps, corruption). Metal-surface renders use the
// fixed acquisition geometry (150 px native, resized to the requested side);
// everything else renders at the requested side directly.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tipstate/common.hpp"
#include "tipstate/dataset.hpp"
#include "tipstate/image.hpp"
#include "tipstate/io.hpp"
#include "tipstate/labels.hpp"
#include "tipstate/rng.hpp"

namespace tipstate {

constexpr int kMetalRenderSide = 150;

struct RenderParams {
    int side = 128;               // output side, one of 32/64/128/256
    double row_period = 12.0;     // lattice row spacing, output px
    double atom_radius = 2.0;     // site bump sigma, output px
    int double_tip_dy = 3;        // ghost offset, render px
    int double_tip_dx = 6;
    double double_tip_gain = 0.6; // ghost amplitude relative to the primary
    double step_height = 2.0;     // terrace offset relative to unit corrugation
    double shear_lo = 0.25;       // shear row drawn from [lo, hi) * side
    double shear_hi = 0.75;
    double noise_floor = 0.04;    // uniform noise amplitude before normalization
};

inline void validate_render_params(const RenderParams& p) {
    require(supported_side(p.side), ErrorCode::UnsupportedSize,
            "render side must be one of 32/64/128/256, got " + std::to_string(p.side));
    require(p.row_period >= 4.0 && p.row_period <= p.side / 4.0, ErrorCode::BadConfig,
            "row period must sit in [4, side/4] px");
    require(p.atom_radius > 0.5 && p.atom_radius < p.row_period, ErrorCode::BadConfig,
            "atom radius must sit in (0.5, row_period) px");
    require(p.double_tip_dy != 0 || p.double_tip_dx != 0, ErrorCode::BadConfig,
            "ghost offset must be nonzero");
    require(std::abs(p.double_tip_dy) < p.side / 4 && std::abs(p.double_tip_dx) < p.side / 4,
            ErrorCode::BadConfig, "ghost offset must stay under side/4 px");
    require(p.double_tip_gain > 0.0 && p.double_tip_gain <= 1.0, ErrorCode::BadConfig,
            "ghost gain must sit in (0, 1]");
    require(p.step_height > 0.0, ErrorCode::BadConfig, "step height must be positive");
    require(p.shear_lo >= 0.0 && p.shear_lo < p.shear_hi && p.shear_hi <= 1.0,
            ErrorCode::BadConfig, "shear range must satisfy 0 <= lo < hi <= 1");
    require(static_cast<int>(p.shear_hi * p.side) - static_cast<int>(std::ceil(p.shear_lo * p.side)) >= 1,
            ErrorCode::BadConfig, "shear range leaves no legal scan row");
    require(p.noise_floor >= 0.0 && p.noise_floor < 0.5, ErrorCode::BadConfig,
            "noise floor must sit in [0, 0.5)");
}

// Intermediate fields handed to tests that verify renders against independent
// oracles. `clean` is the pre-effect field and `rendered` the post-effect one,
// both at render resolution and before the final normalization.
struct RenderTrace {
    ScanImage clean;
    ScanImage rendered;
    int render_side = 0;
    int shear_row = -1;        // output-image coordinates
    int shear_row_render = -1; // render-image coordinates
    int shear_shift = 0;
    int ghost_dy = 0;
    int ghost_dx = 0;
    double ghost_gain = 0.0;
};

namespace detail {

inline void add_gaussian(ScanImage& f, double cy, double cx, double sigma, double amp) {
    const int r = static_cast<int>(std::ceil(4.0 * sigma));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy)) - r);
    const int y1 = std::min(f.height - 1, static_cast<int>(std::ceil(cy)) + r);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx)) - r);
    const int x1 = std::min(f.width - 1, static_cast<int>(std::ceil(cx)) + r);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            const double dy = y - cy;
            const double dx = x - cx;
            f.at(y, x) += amp * std::exp(-(dy * dy + dx * dx) * inv);
        }
}

inline void add_uniform_noise(ScanImage& f, Rng& rng, double amp) {
    if (amp <= 0.0) return;
    for (double& v : f.values) v += rng.uniform(-amp, amp);
}

// Sinusoidal stripe lattice. theta is the tilt of the row normal: theta 0
// gives horizontal rows, pi/2 vertical ones. A weak second harmonic and a
// slow along-row amplitude modulation keep the texture off a pure tone.
inline ScanImage stripe_field(int side, double period, double theta, Rng& rng) {
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    const double harm = rng.uniform(0.08, 0.22);
    const double mod_amp = rng.uniform(0.10, 0.25);
    const double mod_phase = rng.uniform(0.0, 2.0 * M_PI);
    const double c = std::cos(theta), s = std::sin(theta);
    const double w = 2.0 * M_PI / period;
    const double wu = 2.0 * M_PI / (1.6 * side);
    ScanImage f(side, side);
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double v = y * c - x * s;
            const double u = x * c + y * s;
            const double amp = 1.0 + mod_amp * std::sin(wu * u + mod_phase);
            f.at(y, x) = amp * (std::sin(w * v + phase) + harm * std::sin(2.0 * w * v + 2.3 * phase));
        }
    return f;
}

// Per-site brightness jitter keyed on lattice indices so site enumeration
// order never touches the rng stream.
inline double site_jitter(std::uint64_t seed, int i, int j) {
    const std::uint64_t h =
        hash_combine(hash_combine(seed, static_cast<std::uint64_t>(i + (1 << 20))),
                     static_cast<std::uint64_t>(j + (1 << 20)));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

enum class SiteStyle { SingleAtom, AsymmetricPair };

// Row lattice with one bump (or one unequal pair of bumps) per site.
inline ScanImage si_lattice_field(int side, double period, double sigma, SiteStyle style,
                                  Rng& rng) {
    const double theta = rng.uniform(0.0, M_PI);
    const double q = 0.72 * period;  // along-row site spacing
    const double row_off = rng.uniform(0.0, period);
    const double col_off = rng.uniform(0.0, q);
    const double underlay = style == SiteStyle::AsymmetricPair ? 0.30 : 0.12;
    const double asym = rng.uniform(0.35, 0.60);
    const double pair_gap = 0.8 * sigma;
    const std::uint64_t jitter_seed = rng.bits();

    const double c = std::cos(theta), s = std::sin(theta);
    ScanImage f(side, side);
    const double w = 2.0 * M_PI / period;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) {
            const double v = y * c - x * s;
            f.at(y, x) = -0.25 + underlay * std::sin(w * v);
        }

    const int span = static_cast<int>(std::ceil(1.6 * side / std::min(period, q))) + 2;
    for (int i = -span; i <= span; ++i)
        for (int j = -span; j <= span; ++j) {
            const double sv = i * period + row_off;
            const double su = j * q + (i & 1 ? 0.5 * q : 0.0) + col_off;
            const double cx = su * c - sv * s;
            const double cy = su * s + sv * c;
            if (cx < -4.0 * sigma || cx > side + 4.0 * sigma || cy < -4.0 * sigma ||
                cy > side + 4.0 * sigma)
                continue;
            const double amp = 0.85 + 0.25 * site_jitter(jitter_seed, i, j);
            if (style == SiteStyle::SingleAtom) {
                add_gaussian(f, cy, cx, sigma, amp);
            } else {
                // Unequal lobes straddling the row line, bright side fixed
                // per image: the hallmark of an asymmetric dimer tip.
                const double lobe = 0.8 * sigma;
                add_gaussian(f, cy - pair_gap * c, cx + pair_gap * s, lobe, amp);
                add_gaussian(f, cy + pair_gap * c, cx - pair_gap * s, lobe, asym * amp);
            }
        }
    return f;
}

// Faint stripes overlaid with random blobs and horizontal streaks.
inline ScanImage defect_field(int side, double period, Rng& rng) {
    ScanImage f = stripe_field(side, period, rng.uniform(0.0, M_PI), rng);
    for (double& v : f.values) v *= 0.35;

    const int blobs = 5 + static_cast<int>(rng.index(7));
    for (int b = 0; b < blobs; ++b) {
        const double cy = rng.uniform(0.0, side);
        const double cx = rng.uniform(0.0, side);
        const double sg = rng.uniform(2.5, 7.0);
        const double amp = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.6, 1.4);
        add_gaussian(f, cy, cx, sg, amp);
    }
    const int streaks = 2 + static_cast<int>(rng.index(4));
    for (int t = 0; t < streaks; ++t) {
        const double yc = rng.uniform(2.0, side - 2.0);
        const double h = rng.uniform(0.8, 2.5);
        const int x0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(side * 3 / 4)));
        const int len = side / 4 + static_cast<int>(rng.index(static_cast<std::uint64_t>(side / 2)));
        const double amp = (rng.coin() ? 1.0 : -1.0) * rng.uniform(0.7, 1.5);
        const int y0 = std::max(0, static_cast<int>(yc - 3.0 * h));
        const int y1 = std::min(side - 1, static_cast<int>(yc + 3.0 * h));
        for (int y = y0; y <= y1; ++y) {
            const double fall = std::exp(-(y - yc) * (y - yc) / (2.0 * h * h));
            for (int x = x0; x < std::min(side, x0 + len); ++x) f.at(y, x) += amp * fall;
        }
    }
    return f;
}

// Smooth low-frequency background: a handful of broad cosines.
inline ScanImage smooth_background(int side, double gain, Rng& rng) {
    ScanImage f(side, side);
    for (int k = 0; k < 3; ++k) {
        const double lambda = side * rng.uniform(0.45, 1.1);
        const double phi = rng.uniform(0.0, M_PI);
        const double psi = rng.uniform(0.0, 2.0 * M_PI);
        const double a = gain * rng.uniform(0.15, 0.30);
        const double c = std::cos(phi), s = std::sin(phi);
        const double w = 2.0 * M_PI / lambda;
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) f.at(y, x) += a * std::cos(w * (x * c + y * s) + psi);
    }
    return f;
}

// Sparse isolated adatoms over a smooth background.
inline ScanImage adatom_field(int side, double sigma, Rng& rng, int min_count = 5,
                              int extra = 9) {
    ScanImage f = smooth_background(side, 1.0, rng);
    const int n = min_count + static_cast<int>(rng.index(static_cast<std::uint64_t>(extra)));
    std::vector<std::pair<double, double>> placed;
    for (int k = 0; k < n; ++k) {
        double cy = 0.0, cx = 0.0;
        bool ok = false;
        for (int attempt = 0; attempt < 30 && !ok; ++attempt) {
            cy = rng.uniform(2.0 * sigma, side - 2.0 * sigma);
            cx = rng.uniform(2.0 * sigma, side - 2.0 * sigma);
            ok = true;
            for (const auto& p : placed) {
                const double dy = cy - p.first, dx = cx - p.second;
                if (dy * dy + dx * dx < 16.0 * sigma * sigma) {
                    ok = false;
                    break;
                }
            }
        }
        if (!ok) continue;
        placed.emplace_back(cy, cx);
        add_gaussian(f, cy, cx, sigma, rng.uniform(0.8, 1.2));
    }
    return f;
}

// Columns of every row at and below `row` shift circularly by `shift`.
inline ScanImage shear_below(const ScanImage& base, int row, int shift) {
    ScanImage out = base;
    const int w = base.width;
    const int s = ((shift % w) + w) % w;
    for (int y = row; y < base.height; ++y)
        for (int x = 0; x < w; ++x) out.at(y, x) = base.at(y, (x + s) % w);
    return out;
}

// Two-delta ghost: primary plus a shifted, attenuated copy. Taps falling
// outside the frame contribute nothing.
inline ScanImage ghost_combine(const ScanImage& base, int dy, int dx, double gain) {
    ScanImage out = base;
    for (int y = 0; y < base.height; ++y)
        for (int x = 0; x < base.width; ++x) {
            const int sy = y - dy, sx = x - dx;
            if (sy >= 0 && sy < base.height && sx >= 0 && sx < base.width)
                out.at(y, x) += gain * base.at(sy, sx);
        }
    return out;
}

inline Desirability lookup_desirability(const std::string& label) {
    for (const ClassSet* set : {&si_four_classes(), &si_binary_classes(), &metal_six_classes()}) {
        const int id = set->index_of(label);
        if (id >= 0) return set->at(id).desirability;
    }
    return Desirability::Undesirable;
}

}  // namespace detail

// Deterministic labeled render. Same (surface, label, params, seed) always
// produces the same bytes. `trace`, when given, receives the pre-normalization
// fields and the injected effect parameters for oracle checks.
inline LabeledSample gen_image(Surface surface, const std::string& label,
                               const RenderParams& params, std::uint64_t seed,
                               RenderTrace* trace = nullptr) {
    validate_render_params(params);
    require(label_valid_for_surface(surface, label), ErrorCode::InvalidLabelForSurface,
            "label '" + label + "' not registered for surface " + surface_name(surface));

    const bool metal = surface == Surface::Au111 || surface == Surface::Cu111;
    const int rside = metal ? kMetalRenderSide : params.side;
    const double scale = static_cast<double>(rside) / params.side;
    const double period = params.row_period * scale;
    const double sigma = params.atom_radius * scale;
    Rng rng(seed);

    ScanImage clean, rendered;
    int shear_row_render = -1, shear_row_out = -1, shear_shift = 0;
    int ghost_dy = 0, ghost_dx = 0;
    double ghost_gain = 0.0;

    auto draw_shear_row = [&](int side) {
        const int lo = std::max(1, static_cast<int>(std::ceil(params.shear_lo * side)));
        const int hi = std::min(side - 1, static_cast<int>(params.shear_hi * side));
        return lo + static_cast<int>(rng.index(static_cast<std::uint64_t>(std::max(1, hi - lo))));
    };

    if (label == "Rows") {
        clean = detail::stripe_field(rside, period, rng.uniform(0.0, M_PI), rng);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
    } else if (label == "Atoms" && !metal) {
        clean = detail::si_lattice_field(rside, period, sigma, detail::SiteStyle::SingleAtom, rng);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
    } else if (label == "Atoms") {
        clean = detail::adatom_field(rside, sigma, rng);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
    } else if (label == "AsymmetryDimer") {
        clean =
            detail::si_lattice_field(rside, period, sigma, detail::SiteStyle::AsymmetricPair, rng);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
    } else if (label == "GenericDefect") {
        clean = detail::defect_field(rside, period, rng);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
    } else if (label == "TipChange") {
        if (metal) {
            // Sparse adatoms alone leave most scan rows featureless, which
            // would hide the shear; a visible near-vertical corrugation keeps
            // the discontinuity present on every row.
            clean = detail::adatom_field(rside, sigma, rng);
            const ScanImage corrugation =
                detail::stripe_field(rside, period, M_PI / 2.0 + rng.uniform(-0.2, 0.2), rng);
            for (std::size_t i = 0; i < clean.values.size(); ++i)
                clean.values[i] += 0.5 * corrugation.values[i];
            shear_shift = std::max(4, static_cast<int>(std::llround(period / 2.0)));
        } else {
            // Stripes tilted near vertical so a column shift is visible.
            const double theta = M_PI / 2.0 + rng.uniform(-0.25, 0.25);
            clean = detail::stripe_field(rside, period, theta, rng);
            shear_shift = std::max(2, static_cast<int>(std::llround(period / 2.0)));
        }
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        shear_row_render = draw_shear_row(rside);
        rendered = detail::shear_below(clean, shear_row_render, shear_shift);
        shear_row_out =
            rside == params.side
                ? shear_row_render
                : static_cast<int>(std::llround((shear_row_render + 0.5) / scale - 0.5));
    } else if (label == "NoTipChange") {
        const int style = metal ? 3 : static_cast<int>(rng.index(3));
        if (style == 0)
            clean = detail::stripe_field(rside, period, rng.uniform(0.0, M_PI), rng);
        else if (style == 1)
            clean =
                detail::si_lattice_field(rside, period, sigma, detail::SiteStyle::SingleAtom, rng);
        else if (style == 2)
            clean = detail::si_lattice_field(rside, period, sigma,
                                             detail::SiteStyle::AsymmetricPair, rng);
        else
            clean = detail::adatom_field(rside, sigma, rng);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
    } else if (label == "DoubleTip") {
        clean = detail::adatom_field(rside, sigma, rng, 6, 9);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        // Offsets are output px; the ghost is applied in render space so the
        // displacement survives the resize.
        ghost_dy = static_cast<int>(std::llround(params.double_tip_dy * scale));
        ghost_dx = static_cast<int>(std::llround(params.double_tip_dx * scale));
        if (ghost_dy == 0 && ghost_dx == 0) ghost_dx = params.double_tip_dx >= 0 ? 1 : -1;
        ghost_gain = params.double_tip_gain;
        rendered = detail::ghost_combine(clean, ghost_dy, ghost_dx, ghost_gain);
    } else if (label == "StepEdge") {
        clean = detail::smooth_background(rside, 0.5, rng);
        const int adatoms = 2 + static_cast<int>(rng.index(3));
        for (int k = 0; k < adatoms; ++k)
            detail::add_gaussian(clean, rng.uniform(0.0, rside), rng.uniform(0.0, rside), sigma,
                                 rng.uniform(0.7, 1.1));
        const double phi = rng.uniform(0.0, M_PI);
        const double cy = rside * rng.uniform(0.25, 0.75);
        const double cx = rside * rng.uniform(0.25, 0.75);
        const double c = std::cos(phi), s = std::sin(phi);
        for (int y = 0; y < rside; ++y)
            for (int x = 0; x < rside; ++x)
                clean.at(y, x) +=
                    params.step_height * std::tanh(((x - cx) * c + (y - cy) * s) / 1.5);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
    } else if (label == "Impurity") {
        clean = detail::adatom_field(rside, sigma, rng);
        for (double& v : clean.values) v *= 0.55;
        const int blobs = 1 + static_cast<int>(rng.index(2));
        for (int b = 0; b < blobs; ++b)
            detail::add_gaussian(clean, rside * rng.uniform(0.2, 0.8), rside * rng.uniform(0.2, 0.8),
                                 scale * rng.uniform(3.0, 6.0), rng.uniform(2.2, 3.2));
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
    } else if (label == "Corruption") {
        clean = detail::adatom_field(rside, sigma, rng);
        detail::add_uniform_noise(clean, rng, params.noise_floor);
        rendered = clean;
        const int bands = 2 + static_cast<int>(rng.index(3));
        for (int b = 0; b < bands; ++b) {
            const int y0 = static_cast<int>(rng.index(static_cast<std::uint64_t>(rside)));
            const int h = 1 + static_cast<int>(rng.index(static_cast<std::uint64_t>(
                                  std::max(2, rside / 12))));
            const double level = rng.uniform(-0.3, 0.3);
            for (int y = y0; y < std::min(rside, y0 + h); ++y)
                for (int x = 0; x < rside; ++x) rendered.at(y, x) = level;
        }
        const int impulses = static_cast<int>(
            std::llround(rside * rside * rng.uniform(0.02, 0.05)));
        for (int k = 0; k < impulses; ++k) {
            const int y = static_cast<int>(rng.index(static_cast<std::uint64_t>(rside)));
            const int x = static_cast<int>(rng.index(static_cast<std::uint64_t>(rside)));
            rendered.at(y, x) = (rng.coin() ? 1.0 : -1.0) * rng.uniform(1.8, 2.6);
        }
    } else {
        fail(ErrorCode::InvalidLabelForSurface, "no render registered for label '" + label + "'");
    }

    ScanImage out = rside == params.side ? rendered
                                         : detail::resize_any(rendered, params.side, params.side);
    out = normalize(out);

    if (trace) {
        trace->clean = clean;
        trace->rendered = rendered;
        trace->render_side = rside;
        trace->shear_row = shear_row_out;
        trace->shear_row_render = shear_row_render;
        trace->shear_shift = shear_shift;
        trace->ghost_dy = ghost_dy;
        trace->ghost_dx = ghost_dx;
        trace->ghost_gain = ghost_gain;
    }

    LabeledSample sample;
    sample.image = std::move(out);
    sample.surface = surface;
    sample.label = ClassLabel{label, detail::lookup_desirability(label)};
    sample.source_id = "synth/" + label + "/" + std::to_string(seed);
    return sample;
}

// ---------------------------------------------------------------------------
// Handcrafted diagnostic features. A linear probe over these separates the
// generated classes, which pins down that any downstream model failure is the
// model's fault rather than an inseparable dataset.

inline const std::vector<std::string>& probe_feature_names() {
    static const std::vector<std::string> names = {
        "spectral_peak",   "spectral_wavelength", "blob_density",      "max_blob_fraction",
        "coverage_bright", "coverage_dark",       "row_shear_ratio",   "col_shear_ratio",
        "ghost_corr",      "impulse_fraction",    "dead_row_fraction", "tilt_drift"};
    return names;
}

namespace detail {

// Peak of the 2-D power spectrum outside the DC neighborhood, as a fraction
// of total non-DC power, plus the normalized wavelength it sits at. Direct
// nested 1-D transforms; image sides are small enough that no FFT is needed.
inline std::pair<double, double> spectral_peak(const ScanImage& img) {
    const int h = img.height, w = img.width;
    std::vector<double> re(static_cast<std::size_t>(h) * w), im(re.size());
    std::vector<double> ct(static_cast<std::size_t>(w) * w), st(ct.size());
    for (int k = 0; k < w; ++k)
        for (int x = 0; x < w; ++x) {
            const double a = -2.0 * M_PI * k * x / w;
            ct[static_cast<std::size_t>(k) * w + x] = std::cos(a);
            st[static_cast<std::size_t>(k) * w + x] = std::sin(a);
        }
    for (int y = 0; y < h; ++y)
        for (int k = 0; k < w; ++k) {
            double sr = 0.0, si = 0.0;
            for (int x = 0; x < w; ++x) {
                const double v = img.at(y, x);
                sr += v * ct[static_cast<std::size_t>(k) * w + x];
                si += v * st[static_cast<std::size_t>(k) * w + x];
            }
            re[static_cast<std::size_t>(y) * w + k] = sr;
            im[static_cast<std::size_t>(y) * w + k] = si;
        }

    double total = 0.0, best = 0.0, best_ky = 0.0, best_kx = 0.0;
    // Conjugate symmetry: scanning ky in [0, h/2] covers every distinct mode.
    for (int ky = 0; ky <= h / 2; ++ky) {
        for (int kx = 0; kx < w; ++kx) {
            double sr = 0.0, si = 0.0;
            for (int y = 0; y < h; ++y) {
                const double a = -2.0 * M_PI * ky * y / h;
                const double c = std::cos(a), s = std::sin(a);
                const double vr = re[static_cast<std::size_t>(y) * w + kx];
                const double vi = im[static_cast<std::size_t>(y) * w + kx];
                sr += vr * c - vi * s;
                si += vr * s + vi * c;
            }
            const double fy = ky;
            const double fx = kx <= w / 2 ? kx : kx - w;
            const double mag = std::hypot(fy, fx);
            if (mag < 1.5) continue;  // DC neighborhood
            const double p = sr * sr + si * si;
            total += p;
            if (p > best) {
                best = p;
                best_ky = fy;
                best_kx = fx;
            }
        }
    }
    if (total <= 0.0) return {0.0, 0.0};
    const double mag = std::hypot(best_ky, best_kx);
    return {best / total, mag > 0.0 ? 1.0 / mag : 0.0};
}

struct BlobStats {
    int count = 0;
    int max_size = 0;
};

inline BlobStats blob_stats(const ScanImage& img, double threshold, int min_size) {
    const int h = img.height, w = img.width;
    std::vector<int> mark(static_cast<std::size_t>(h) * w, 0);
    std::vector<int> stack;
    BlobStats out;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int idx = y * w + x;
            if (mark[static_cast<std::size_t>(idx)] || img.values[static_cast<std::size_t>(idx)] <= threshold)
                continue;
            int size = 0;
            stack.assign(1, idx);
            mark[static_cast<std::size_t>(idx)] = 1;
            while (!stack.empty()) {
                const int cur = stack.back();
                stack.pop_back();
                ++size;
                const int cy = cur / w, cx = cur % w;
                const int ny[4] = {cy - 1, cy + 1, cy, cy};
                const int nx[4] = {cx, cx, cx - 1, cx + 1};
                for (int k = 0; k < 4; ++k) {
                    if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                    const int nidx = ny[k] * w + nx[k];
                    if (mark[static_cast<std::size_t>(nidx)] ||
                        img.values[static_cast<std::size_t>(nidx)] <= threshold)
                        continue;
                    mark[static_cast<std::size_t>(nidx)] = 1;
                    stack.push_back(nidx);
                }
            }
            if (size >= min_size) {
                ++out.count;
                out.max_size = std::max(out.max_size, size);
            }
        }
    return out;
}

inline double diff_ratio(const std::vector<double>& d) {
    if (d.empty()) return 0.0;
    double mx = 0.0, mean = 0.0;
    for (double v : d) {
        mx = std::max(mx, v);
        mean += v;
    }
    mean /= static_cast<double>(d.size());
    return mx / (mean + 1e-12);
}

}  // namespace detail

inline std::vector<double> probe_features(const ScanImage& img) {
    require(img.height >= kMinImageSide && img.width >= kMinImageSide, ErrorCode::TooSmall,
            "image too small for feature extraction");
    const int h = img.height, w = img.width;
    const double n = static_cast<double>(h) * w;

    const auto [peak, wavelength] = detail::spectral_peak(img);
    const auto blobs = detail::blob_stats(img, 0.5, 3);

    double bright = 0.0, dark = 0.0;
    for (double v : img.values) {
        if (v > 0.35) bright += 1.0;
        if (v < -0.35) dark += 1.0;
    }

    std::vector<double> row_diff(static_cast<std::size_t>(h - 1), 0.0);
    for (int y = 1; y < h; ++y) {
        double e = 0.0;
        for (int x = 0; x < w; ++x) {
            const double d = img.at(y, x) - img.at(y - 1, x);
            e += d * d;
        }
        row_diff[static_cast<std::size_t>(y - 1)] = e;
    }
    std::vector<double> col_diff(static_cast<std::size_t>(w - 1), 0.0);
    for (int x = 1; x < w; ++x) {
        double e = 0.0;
        for (int y = 0; y < h; ++y) {
            const double d = img.at(y, x) - img.at(y, x - 1);
            e += d * d;
        }
        col_diff[static_cast<std::size_t>(x - 1)] = e;
    }

    // Ghost correlation runs on the high-passed residual: smooth backgrounds
    // correlate with themselves at every small lag, which would drown the
    // doubled-feature signal the feature is after.
    ScanImage res(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            int cnt = 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += img.at(yy, xx);
                    ++cnt;
                }
            res.at(y, x) = img.at(y, x) - acc / cnt;
        }
    double energy = 0.0;
    for (double v : res.values) energy += v * v;
    double ghost = 0.0;
    for (int dy = 0; dy <= 9; ++dy)
        for (int dx = -9; dx <= 9; ++dx) {
            if (std::max(std::abs(dy), std::abs(dx)) < 2) continue;
            double acc = 0.0;
            for (int y = std::max(0, -dy); y < h - std::max(0, dy); ++y)
                for (int x = std::max(0, -dx); x < w - std::max(0, dx); ++x)
                    acc += res.at(y, x) * res.at(y + dy, x + dx);
            ghost = std::max(ghost, acc / (energy + 1e-12));
        }

    double impulses = 0.0;
    for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
            const double around = 0.25 * (img.at(y - 1, x) + img.at(y + 1, x) + img.at(y, x - 1) +
                                          img.at(y, x + 1));
            if (std::abs(img.at(y, x) - around) > 0.45) impulses += 1.0;
        }

    double dead_rows = 0.0;
    for (int y = 0; y < h; ++y) {
        double lo = img.at(y, 0), hi = img.at(y, 0);
        for (int x = 1; x < w; ++x) {
            lo = std::min(lo, img.at(y, x));
            hi = std::max(hi, img.at(y, x));
        }
        if (hi - lo < 1e-12) dead_rows += 1.0;
    }

    auto region_mean = [&](int y0, int y1, int x0, int x1) {
        double acc = 0.0;
        for (int y = y0; y < y1; ++y)
            for (int x = x0; x < x1; ++x) acc += img.at(y, x);
        return acc / (static_cast<double>(y1 - y0) * (x1 - x0));
    };
    const double drift = std::abs(region_mean(0, h / 3, 0, w) - region_mean(h - h / 3, h, 0, w)) +
                         std::abs(region_mean(0, h, 0, w / 3) - region_mean(0, h, w - w / 3, w));

    return {peak,
            wavelength,
            blobs.count / (n / 1024.0),
            blobs.max_size / n,
            bright / n,
            dark / n,
            detail::diff_ratio(row_diff),
            detail::diff_ratio(col_diff),
            ghost,
            impulses / n,
            dead_rows / h,
            drift};
}

// ---------------------------------------------------------------------------
// Dataset synthesis.

struct SynthSpec {
    Surface surface = Surface::Synthetic;
    std::vector<std::pair<std::string, double>> distribution;  // label -> fraction
    int count = 0;
    RenderParams params;
    std::uint64_t seed = 0;
};

inline void validate_synth_spec(const SynthSpec& spec) {
    validate_render_params(spec.params);
    require(spec.count > 0, ErrorCode::BadConfig, "image count must be positive");
    require(!spec.distribution.empty(), ErrorCode::BadConfig, "class distribution is empty");
    double sum = 0.0;
    for (std::size_t i = 0; i < spec.distribution.size(); ++i) {
        const auto& [label, fraction] = spec.distribution[i];
        require(fraction >= 0.0, ErrorCode::BadConfig, "fraction for '" + label + "' is negative");
        require(label_valid_for_surface(spec.surface, label), ErrorCode::InvalidLabelForSurface,
                "label '" + label + "' not registered for surface " +
                    surface_name(spec.surface));
        for (std::size_t j = 0; j < i; ++j)
            require(spec.distribution[j].first != label, ErrorCode::BadConfig,
                    "duplicate class '" + label + "' in distribution");
        sum += fraction;
    }
    require(std::abs(sum - 1.0) < 1e-9, ErrorCode::BadConfig,
            "class fractions must sum to 1, got " + std::to_string(sum));
}

// Apportion `total` by the fractions: floor everything, then hand the
// leftover units to the largest remainders (earliest index on ties).
inline std::vector<int> largest_remainder_counts(const std::vector<double>& fractions,
                                                 int total) {
    require(total >= 0, ErrorCode::BadConfig, "total must be nonnegative");
    std::vector<int> counts(fractions.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    int assigned = 0;
    for (std::size_t i = 0; i < fractions.size(); ++i) {
        const double ideal = fractions[i] * total;
        counts[i] = static_cast<int>(std::floor(ideal));
        assigned += counts[i];
        remainders.emplace_back(ideal - counts[i], i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (int k = 0; k < total - assigned; ++k) ++counts[remainders[static_cast<std::size_t>(k)].second];
    return counts;
}

// Render the whole dataset into `out_dir` and return the manifest path.
// Images parallelize over derived per-image seeds; writes stay serial.
inline std::filesystem::path gen_dataset(const SynthSpec& spec,
                                         const std::filesystem::path& out_dir) {
    validate_synth_spec(spec);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    require(!ec && std::filesystem::is_directory(out_dir), ErrorCode::IoError,
            "cannot create output directory " + out_dir.string());

    std::vector<double> fractions;
    for (const auto& [label, fraction] : spec.distribution) fractions.push_back(fraction);
    const std::vector<int> counts = largest_remainder_counts(fractions, spec.count);

    struct Job {
        std::string label;
        int index = 0;
        std::uint64_t seed = 0;
    };
    std::vector<Job> jobs;
    jobs.reserve(static_cast<std::size_t>(spec.count));
    for (std::size_t c = 0; c < spec.distribution.size(); ++c)
        for (int k = 0; k < counts[c]; ++k)
            jobs.push_back({spec.distribution[c].first, k,
                            derive_seed(spec.seed, spec.distribution[c].first,
                                        static_cast<std::uint64_t>(k))});

    std::vector<LabeledSample> samples(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(jobs.size()); ++i) {
        const Job& job = jobs[static_cast<std::size_t>(i)];
        samples[static_cast<std::size_t>(i)] =
            gen_image(spec.surface, job.label, spec.params, job.seed);
    }

    std::vector<ManifestEntry> entries;
    entries.reserve(jobs.size());
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        const Job& job = jobs[i];
        ManifestEntry e;
        e.source_id = job.label + "_" + std::to_string(job.index);
        e.relative_path = e.source_id + ".spmf";
        e.surface = spec.surface;
        e.label = job.label;
        write_spmf(samples[i].image, out_dir / e.relative_path);
        entries.push_back(std::move(e));
    }
    const std::filesystem::path manifest = out_dir / "manifest.tsv";
    write_manifest(entries, manifest);
    return manifest;
}

// ---------------------------------------------------------------------------
// Plain-text spec files: `key = value` lines, `class <Name> = <fraction>` for
// the distribution, '#' comments.

inline void save_synth_spec(const SynthSpec& spec, const std::filesystem::path& path) {
    std::ofstream os(path);
    require(os.good(), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    os << "surface = " << surface_name(spec.surface) << '\n';
    os << "count = " << spec.count << '\n';
    os << "seed = " << spec.seed << '\n';
    os << "side = " << spec.params.side << '\n';
    os << "row_period = " << spec.params.row_period << '\n';
    os << "atom_radius = " << spec.params.atom_radius << '\n';
    os << "double_tip_dy = " << spec.params.double_tip_dy << '\n';
    os << "double_tip_dx = " << spec.params.double_tip_dx << '\n';
    os << "double_tip_gain = " << spec.params.double_tip_gain << '\n';
    os << "step_height = " << spec.params.step_height << '\n';
    os << "shear_lo = " << spec.params.shear_lo << '\n';
    os << "shear_hi = " << spec.params.shear_hi << '\n';
    os << "noise_floor = " << spec.params.noise_floor << '\n';
    for (const auto& [label, fraction] : spec.distribution)
        os << "class " << label << " = " << fraction << '\n';
    require(os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

inline SynthSpec load_synth_spec(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(is.good(), ErrorCode::IoError, "cannot open " + path.string());
    SynthSpec spec;
    spec.distribution.clear();
    std::string line;
    int lineno = 0;
    auto bad = [&](const std::string& what) {
        fail(ErrorCode::BadConfig, path.string() + ":" + std::to_string(lineno) + ": " + what);
    };
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) bad("expected 'key = value'");
        std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty() || value.empty()) bad("expected 'key = value'");

        double num = 0.0;
        bool numeric = false;
        try {
            std::size_t used = 0;
            num = std::stod(value, &used);
            numeric = used == value.size();
        } catch (const std::exception&) {
        }
        auto want_number = [&]() {
            if (!numeric) bad("value for '" + key + "' must be a number");
            return num;
        };

        if (key.rfind("class ", 0) == 0) {
            const std::string label = trim(key.substr(6));
            if (label.empty()) bad("class entry has no label");
            spec.distribution.emplace_back(label, want_number());
        } else if (key == "surface") {
            try {
                spec.surface = surface_from_name(value);
            } catch (const Error&) {
                bad("unknown surface '" + value + "'");
            }
        } else if (key == "count") {
            spec.count = static_cast<int>(want_number());
        } else if (key == "seed") {
            try {
                spec.seed = std::stoull(value);
            } catch (const std::exception&) {
                bad("value for 'seed' must be a nonnegative integer");
            }
        } else if (key == "side") {
            spec.params.side = static_cast<int>(want_number());
        } else if (key == "row_period") {
            spec.params.row_period = want_number();
        } else if (key == "atom_radius") {
            spec.params.atom_radius = want_number();
        } else if (key == "double_tip_dy") {
            spec.params.double_tip_dy = static_cast<int>(want_number());
        } else if (key == "double_tip_dx") {
            spec.params.double_tip_dx = static_cast<int>(want_number());
        } else if (key == "double_tip_gain") {
            spec.params.double_tip_gain = want_number();
        } else if (key == "step_height") {
            spec.params.step_height = want_number();
        } else if (key == "shear_lo") {
            spec.params.shear_lo = want_number();
        } else if (key == "shear_hi") {
            spec.params.shear_hi = want_number();
        } else if (key == "noise_floor") {
            spec.params.noise_floor = want_number();
        } else {
            bad("unknown key '" + key + "'");
        }
    }
    validate_synth_spec(spec);
    return spec;
}

}  // namespace tipstate
