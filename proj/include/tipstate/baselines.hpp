// Comparison baselines: seeded uniform random guessing and a random forest
// (CART trees, Gini impurity, bootstrap resamples, sqrt-feature subsets).
//
// Forest features are the raw pixels of the image downsampled to a fixed
// side (default 32) and flattened row-major. Prediction averages the leaf
// class histograms across trees, so confidences always form a distribution.
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tipstate/checkpoint.hpp"
#include "tipstate/dataset.hpp"
#include "tipstate/ensemble.hpp"
#include "tipstate/image.hpp"
#include "tipstate/rng.hpp"

namespace tipstate {

// Uniform confidences per class; the argmax is then uniform over classes by
// symmetry, so decisions and scores are both chance-level.
inline std::vector<Prediction> random_guess(int class_count, int n, std::uint64_t seed) {
    require(class_count >= 2, ErrorCode::BadConfig, "need at least two classes");
    require(n >= 1, ErrorCode::BadConfig, "need at least one prediction");
    std::vector<Prediction> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng rng(derive_seed(seed, "guess", static_cast<std::uint64_t>(i)));
        std::vector<double> conf(static_cast<std::size_t>(class_count));
        for (double& v : conf) v = rng.uniform();
        out.push_back(make_prediction(std::move(conf)));
    }
    return out;
}

// ---- random forest ----------------------------------------------------------

struct ForestConfig {
    int tree_count = 100;  // published runs use 5000; 100 is the desk default
    int max_depth = -1;    // -1 = unlimited
    int feature_side = 32;
    int max_features = -1;  // -1 = floor(sqrt(feature count))
    bool bootstrap = true;
    std::uint64_t seed = 0;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<double> histogram;  // leaf only: class distribution
};

struct DecisionTree {
    std::vector<TreeNode> nodes;  // node 0 is the root
};

struct ForestModel {
    std::vector<DecisionTree> trees;
    int class_count = 0;
    int feature_side = 32;
    int max_features = 0;
    int max_depth = -1;
    std::uint64_t seed = 0;
};

// Flattened pixel features; images at the target side pass through directly,
// anything else goes through the bilinear resize.
inline std::vector<double> forest_features(const ScanImage& img, int feature_side) {
    if (img.height == feature_side && img.width == feature_side) return img.values;
    return resize(img, feature_side).values;
}

namespace detail {

// Split quality Q = sum_c nL_c^2 / nL + sum_c nR_c^2 / nR; maximizing Q
// minimizes the weighted Gini impurity (they differ by an affine map).
inline double split_quality(const std::vector<long>& left_counts, long left_total,
                            const std::vector<long>& right_counts, long right_total) {
    double ql = 0.0, qr = 0.0;
    for (long c : left_counts) ql += double(c) * double(c);
    for (long c : right_counts) qr += double(c) * double(c);
    return ql / double(left_total) + qr / double(right_total);
}

struct TreeBuilder {
    const std::vector<std::vector<double>>& features;  // n rows x F columns
    const std::vector<int>& labels;
    int class_count;
    int feature_count;
    int max_features;
    int max_depth;
    Rng& rng;
    std::vector<TreeNode> nodes;

    struct Split {
        bool found = false;
        int feature = -1;
        double threshold = 0.0;
        double quality = -1.0;
    };

    // Best threshold on one feature over the node's samples; ties keep the
    // first (lowest-threshold) optimum for determinism.
    void scan_feature(const std::vector<int>& idx, int f, Split& best) const {
        std::vector<std::pair<double, int>> column(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i)
            column[i] = {features[static_cast<std::size_t>(idx[i])][static_cast<std::size_t>(f)],
                         labels[static_cast<std::size_t>(idx[i])]};
        std::sort(column.begin(), column.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::vector<long> left(static_cast<std::size_t>(class_count), 0);
        std::vector<long> right(static_cast<std::size_t>(class_count), 0);
        for (const auto& [v, lab] : column) ++right[static_cast<std::size_t>(lab)];
        long left_total = 0, right_total = long(column.size());
        for (std::size_t i = 1; i < column.size(); ++i) {
            const int lab = column[i - 1].second;
            ++left[static_cast<std::size_t>(lab)];
            --right[static_cast<std::size_t>(lab)];
            ++left_total;
            --right_total;
            if (column[i].first == column[i - 1].first) continue;
            const double q = split_quality(left, left_total, right, right_total);
            if (q > best.quality) {
                best.found = true;
                best.feature = f;
                best.threshold = (column[i - 1].first + column[i].first) / 2.0;
                best.quality = q;
            }
        }
    }

    Split choose_split(const std::vector<int>& idx) {
        Split best;
        // Random distinct feature subset, insertion-ordered.
        std::vector<int> chosen;
        chosen.reserve(static_cast<std::size_t>(max_features));
        while (int(chosen.size()) < max_features) {
            const int f = int(rng.index(static_cast<std::uint64_t>(feature_count)));
            if (std::find(chosen.begin(), chosen.end(), f) == chosen.end()) chosen.push_back(f);
        }
        for (int f : chosen) scan_feature(idx, f, best);
        if (!best.found) {
            // The sampled subset was constant on this node; fall back to a
            // full scan so distinct inputs always remain separable.
            for (int f = 0; f < feature_count; ++f) scan_feature(idx, f, best);
        }
        return best;
    }

    int build(const std::vector<int>& idx, int depth) {
        std::vector<long> counts(static_cast<std::size_t>(class_count), 0);
        for (int i : idx) ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
        const bool pure =
            std::count_if(counts.begin(), counts.end(), [](long c) { return c > 0; }) <= 1;
        Split split;
        if (!pure && idx.size() >= 2 && (max_depth < 0 || depth < max_depth))
            split = choose_split(idx);
        const int node_id = int(nodes.size());
        nodes.emplace_back();
        if (!split.found) {
            auto& leaf = nodes[static_cast<std::size_t>(node_id)];
            leaf.histogram.resize(static_cast<std::size_t>(class_count));
            for (int c = 0; c < class_count; ++c)
                leaf.histogram[static_cast<std::size_t>(c)] =
                    double(counts[static_cast<std::size_t>(c)]) / double(idx.size());
            return node_id;
        }
        std::vector<int> left_idx, right_idx;
        for (int i : idx) {
            const double v = features[static_cast<std::size_t>(i)]
                                     [static_cast<std::size_t>(split.feature)];
            (v <= split.threshold ? left_idx : right_idx).push_back(i);
        }
        nodes[static_cast<std::size_t>(node_id)].feature = split.feature;
        nodes[static_cast<std::size_t>(node_id)].threshold = split.threshold;
        const int left = build(left_idx, depth + 1);
        nodes[static_cast<std::size_t>(node_id)].left = left;
        const int right = build(right_idx, depth + 1);
        nodes[static_cast<std::size_t>(node_id)].right = right;
        return node_id;
    }
};

}  // namespace detail

inline ForestModel forest_train(const std::vector<LabeledSample>& samples,
                                const ClassSet& classes, const ForestConfig& config) {
    require(!samples.empty(), ErrorCode::EmptyTrainSet, "forest needs training samples");
    require(config.tree_count >= 1, ErrorCode::BadConfig, "tree_count must be >= 1");
    require(config.feature_side >= kMinImageSide, ErrorCode::UnsupportedSize,
            "feature side too small");

    const int n = int(samples.size());
    std::vector<std::vector<double>> features(static_cast<std::size_t>(n));
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& s = samples[static_cast<std::size_t>(i)];
        require(classes.contains(s.label.name), ErrorCode::LabelOutOfRange,
                "sample label '" + s.label.name + "' not in class set");
        features[static_cast<std::size_t>(i)] = forest_features(s.image, config.feature_side);
        labels[static_cast<std::size_t>(i)] = int(classes.index_of(s.label.name));
    }
    const int F = int(features.front().size());
    const int max_features = config.max_features > 0
                                 ? std::min(config.max_features, F)
                                 : std::max(1, int(std::floor(std::sqrt(double(F)))));

    ForestModel model;
    model.class_count = int(classes.size());
    model.feature_side = config.feature_side;
    model.max_features = max_features;
    model.max_depth = config.max_depth;
    model.seed = config.seed;
    model.trees.resize(static_cast<std::size_t>(config.tree_count));

    // Per-tree derived seeds keep the result identical at any thread count.
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (int t = 0; t < config.tree_count; ++t) {
        Rng rng(derive_seed(config.seed, "tree", static_cast<std::uint64_t>(t)));
        std::vector<int> idx(static_cast<std::size_t>(n));
        if (config.bootstrap) {
            for (int& i : idx) i = int(rng.index(static_cast<std::uint64_t>(n)));
        } else {
            for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
        }
        detail::TreeBuilder builder{features, labels, model.class_count, F,
                                    max_features, config.max_depth, rng, {}};
        builder.build(idx, 0);
        model.trees[static_cast<std::size_t>(t)].nodes = std::move(builder.nodes);
    }
    return model;
}

inline const std::vector<double>& tree_leaf(const DecisionTree& tree,
                                            const std::vector<double>& x) {
    int node = 0;
    while (tree.nodes[static_cast<std::size_t>(node)].feature >= 0) {
        const auto& nd = tree.nodes[static_cast<std::size_t>(node)];
        node = x[static_cast<std::size_t>(nd.feature)] <= nd.threshold ? nd.left : nd.right;
    }
    return tree.nodes[static_cast<std::size_t>(node)].histogram;
}

inline Prediction forest_predict(const ForestModel& model, const ScanImage& img) {
    require(!model.trees.empty(), ErrorCode::BadConfig, "empty forest");
    const std::vector<double> x = forest_features(img, model.feature_side);
    std::vector<double> mean(static_cast<std::size_t>(model.class_count), 0.0);
    for (const auto& tree : model.trees) {
        const auto& hist = tree_leaf(tree, x);
        for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += hist[c];
    }
    for (double& v : mean) v /= double(model.trees.size());
    return make_prediction(std::move(mean));
}

// ---- forest checkpoints ------------------------------------------------------
//
// Same container as the network checkpoints, architecture_id "rfc". Each tree
// is one parameter blob: [node_count, then per node feature, threshold, left,
// right, histogram[class_count]]; leaves encode feature -1.

inline void save_forest(const ForestModel& model, const std::filesystem::path& path) {
    nlohmann::json header;
    header["architecture_id"] = "rfc";
    header["hyperparams"] = std::map<std::string, std::string>{
        {"classes", std::to_string(model.class_count)},
        {"feature_side", std::to_string(model.feature_side)},
        {"tree_count", std::to_string(model.trees.size())},
        {"max_features", std::to_string(model.max_features)},
        {"max_depth", std::to_string(model.max_depth)},
        {"init_seed", std::to_string(model.seed)},
    };
    detail::CrcWriter w(path);
    w.write("TSCK", 4);
    w.write_u32(kCheckpointVersion);
    const std::string hs = header.dump();
    w.write_u32(static_cast<std::uint32_t>(hs.size()));
    w.write(hs.data(), hs.size());

    w.write_u32(static_cast<std::uint32_t>(model.trees.size()));
    const std::size_t per_node = 4 + static_cast<std::size_t>(model.class_count);
    for (const auto& tree : model.trees) {
        w.write_u32(static_cast<std::uint32_t>(1 + tree.nodes.size() * per_node));
        w.write_f64(double(tree.nodes.size()));
        for (const auto& nd : tree.nodes) {
            w.write_f64(double(nd.feature));
            w.write_f64(nd.threshold);
            w.write_f64(double(nd.left));
            w.write_f64(double(nd.right));
            for (int c = 0; c < model.class_count; ++c)
                w.write_f64(nd.feature < 0 ? nd.histogram[static_cast<std::size_t>(c)] : 0.0);
        }
    }
    w.write_u32(0);  // no running statistics
    w.write_u32(w.crc);
    require(w.os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

inline ForestModel load_forest(const std::filesystem::path& path) {
    detail::CrcReader r(path);
    const CheckpointHeader h = read_checkpoint_header(r);
    require(h.architecture_id == "rfc", ErrorCode::BadConfig,
            r.path + ": holds a network, not a forest");
    ForestModel model;
    model.class_count = std::stoi(h.hyperparams.at("classes"));
    model.feature_side = std::stoi(h.hyperparams.at("feature_side"));
    model.max_features = std::stoi(h.hyperparams.at("max_features"));
    model.max_depth = std::stoi(h.hyperparams.at("max_depth"));
    model.seed = std::stoull(h.hyperparams.at("init_seed"));
    require(model.class_count >= 2, ErrorCode::CorruptFile, r.path + ": bad class count");

    const std::uint32_t tree_count = r.read_u32();
    const std::size_t per_node = 4 + static_cast<std::size_t>(model.class_count);
    model.trees.resize(tree_count);
    for (auto& tree : model.trees) {
        const std::uint32_t blob = r.read_u32();
        const double nodes_d = r.read_f64();
        const std::size_t node_count = static_cast<std::size_t>(nodes_d);
        require(nodes_d >= 1.0 && blob == 1 + node_count * per_node, ErrorCode::CorruptFile,
                r.path + ": tree blob size mismatch");
        tree.nodes.resize(node_count);
        for (auto& nd : tree.nodes) {
            nd.feature = int(r.read_f64());
            nd.threshold = r.read_f64();
            nd.left = int(r.read_f64());
            nd.right = int(r.read_f64());
            if (nd.feature < 0) nd.histogram.resize(static_cast<std::size_t>(model.class_count));
            for (int c = 0; c < model.class_count; ++c) {
                const double v = r.read_f64();
                if (nd.feature < 0) nd.histogram[static_cast<std::size_t>(c)] = v;
            }
            require(nd.feature >= -1, ErrorCode::CorruptFile, r.path + ": bad node feature");
            if (nd.feature >= 0)
                require(nd.left >= 0 && nd.right >= 0 &&
                            nd.left < int(node_count) && nd.right < int(node_count),
                        ErrorCode::CorruptFile, r.path + ": bad child index");
        }
    }
    require(r.read_u32() == 0, ErrorCode::CorruptFile, r.path + ": unexpected stat blobs");
    verify_checkpoint_crc(r);
    return model;
}

}  // namespace tipstate
