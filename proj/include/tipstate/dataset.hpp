// Labeled samples, deterministic splits, and class statistics.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <unordered_set>
#include <vector>

#include "tipstate/common.hpp"
#include "tipstate/image.hpp"
#include "tipstate/labels.hpp"
#include "tipstate/rng.hpp"

namespace tipstate {

struct LabeledSample {
    ScanImage image;
    Surface surface = Surface::Synthetic;
    ClassLabel label;
    std::string source_id;
};

inline void validate_sample(const LabeledSample& s) {
    require(label_valid_for_surface(s.surface, s.label.name), ErrorCode::InvalidLabelForSurface,
            "label '" + s.label.name + "' not registered for surface " +
                surface_name(s.surface));
}

inline void validate_unique_ids(const std::vector<LabeledSample>& samples) {
    std::unordered_set<std::string> seen;
    for (const auto& s : samples)
        require(seen.insert(s.source_id).second, ErrorCode::DuplicateSourceId,
                "duplicate source_id '" + s.source_id + "'");
}

struct DatasetSplit {
    std::vector<LabeledSample> train;
    std::vector<LabeledSample> test;
    std::vector<LabeledSample> holdout;
    std::uint64_t seed = 0;
};

// Shuffle, carve off the holdout, then split the remainder 80/20.
// Test size is round(0.2 * remaining); train gets the rest.
inline DatasetSplit split_dataset(const std::vector<LabeledSample>& samples, int holdout_count,
                                  std::uint64_t seed) {
    require(holdout_count >= 0 && holdout_count < static_cast<int>(samples.size()),
            ErrorCode::HoldoutTooLarge,
            "holdout " + std::to_string(holdout_count) + " of " + std::to_string(samples.size()));
    validate_unique_ids(samples);

    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order.begin(), order.end());

    const std::size_t remaining = samples.size() - static_cast<std::size_t>(holdout_count);
    const std::size_t test_count =
        static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(remaining)));

    DatasetSplit split;
    split.seed = seed;
    split.holdout.reserve(holdout_count);
    split.test.reserve(test_count);
    split.train.reserve(remaining - test_count);
    std::size_t k = 0;
    for (; k < static_cast<std::size_t>(holdout_count); ++k)
        split.holdout.push_back(samples[order[k]]);
    for (; k < static_cast<std::size_t>(holdout_count) + test_count; ++k)
        split.test.push_back(samples[order[k]]);
    for (; k < samples.size(); ++k) split.train.push_back(samples[order[k]]);
    return split;
}

struct ClassStats {
    // Indexed by class id within `classes`.
    ClassSet classes;
    std::vector<std::int64_t> counts;
    std::vector<double> frequencies;
    std::vector<double> weights;
};

namespace detail {

inline double ulp_step(double x, int k) {
    while (k > 0) {
        x = std::nextafter(x, HUGE_VAL);
        --k;
    }
    while (k < 0) {
        x = std::nextafter(x, -HUGE_VAL);
        ++k;
    }
    return x;
}

// The reciprocal weight, rounded so that freq * weight == 1.0 holds exactly
// in double arithmetic. fl(f * fl(1/f)) misses 1.0 for ~14% of fractions, so
// both operands get a few ulps of slack; the frequency moves at most 8 ulps
// (~4e-15 relative), orders of magnitude below any statistical meaning.
inline void exact_reciprocal_pair(double freq_in, double& freq_out, double& weight_out) {
    static const int kOffsets[] = {0, 1, -1, 2, -2, 3, -3, 4, -4, 5, -5, 6, -6, 7, -7, 8, -8};
    for (int df : kOffsets) {
        const double f = ulp_step(freq_in, df);
        if (!(f > 0.0) || f > 1.0) continue;
        const double w0 = 1.0 / f;
        for (int dw : kOffsets) {
            const double w = ulp_step(w0, dw);
            if (f * w == 1.0) {
                freq_out = f;
                weight_out = w;
                return;
            }
        }
    }
    freq_out = freq_in;  // unreachable in practice; keep the plain reciprocal
    weight_out = 1.0 / freq_in;
}

}  // namespace detail

inline ClassStats class_stats(const std::vector<LabeledSample>& samples, const ClassSet& classes) {
    ClassStats stats;
    stats.classes = classes;
    stats.counts.assign(classes.size(), 0);
    for (const auto& s : samples) {
        const int id = classes.index_of(s.label.name);
        require(id >= 0, ErrorCode::LabelOutOfRange,
                "label '" + s.label.name + "' not in class set " + classes.id);
        ++stats.counts[static_cast<std::size_t>(id)];
    }
    const double total = static_cast<double>(samples.size());
    stats.frequencies.resize(classes.size());
    stats.weights.resize(classes.size());
    for (int c = 0; c < classes.size(); ++c) {
        require(stats.counts[c] > 0, ErrorCode::EmptyClass,
                "class '" + classes.at(c).name + "' has no samples");
        const double f = static_cast<double>(stats.counts[c]) / total;
        detail::exact_reciprocal_pair(f, stats.frequencies[c], stats.weights[c]);
    }
    return stats;
}

}  // namespace tipstate
