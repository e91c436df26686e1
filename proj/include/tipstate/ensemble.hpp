// Majority-voting ensembles over trained networks, confidence-thresholded
// abstention, and the good/bad binary collapse.
//
// Voting: each member casts its argmax class when its top confidence clears
// the threshold, otherwise it abstains. A strict majority wins; otherwise the
// tied vote leaders are separated by mean confidence across all members, and
// a fully abstaining ensemble abstains.
#pragma once

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tipstate/checkpoint.hpp"
#include "tipstate/image.hpp"
#include "tipstate/labels.hpp"
#include "tipstate/metrics.hpp"
#include "tipstate/network.hpp"
#include "tipstate/optim.hpp"

namespace tipstate {

struct Prediction {
    std::vector<double> confidences;  // indexed by class
    int argmax_class = 0;
    double argmax_confidence = 0.0;
};

inline Prediction make_prediction(std::vector<double> confidences) {
    require(!confidences.empty(), ErrorCode::ShapeMismatch, "empty confidence vector");
    Prediction p;
    p.confidences = std::move(confidences);
    std::size_t best = 0;
    for (std::size_t c = 1; c < p.confidences.size(); ++c)
        if (p.confidences[c] > p.confidences[best]) best = c;
    p.argmax_class = static_cast<int>(best);
    p.argmax_confidence = p.confidences[best];
    return p;
}

// Runs one image through one Infer-mode network. The image must already be
// normalized; it is resized to the network's input side when needed.
template <typename T>
Prediction predict_single(NetworkGraph<T>& net, const ScanImage& img) {
    const ScanImage sized = (img.height == net.input_side && img.width == net.input_side)
                                ? img
                                : resize(img, net.input_side);
    Tensor4<T> x(1, 1, net.input_side, net.input_side);
    for (std::size_t i = 0; i < sized.values.size(); ++i) x.v[i] = T(sized.values[i]);
    const Mode saved = net.mode;
    net.mode = Mode::Infer;
    const Tensor4<T> y = net.forward(x);
    net.mode = saved;
    std::vector<double> conf(y.v.size());
    for (std::size_t i = 0; i < conf.size(); ++i) conf[i] = double(y.v[i]);
    return make_prediction(std::move(conf));
}

enum class TieRule { MeanConfidence };

inline const char* tie_rule_name(TieRule) { return "mean_confidence"; }

inline TieRule tie_rule_from_name(const std::string& s) {
    require(s == "mean_confidence", ErrorCode::BadConfig, "unknown tie rule '" + s + "'");
    return TieRule::MeanConfidence;
}

template <typename T>
struct EnsembleModel {
    std::vector<NetworkGraph<T>> members;
    double threshold = 0.0;
    TieRule tie_rule = TieRule::MeanConfidence;
};

template <typename T>
void validate_ensemble(const EnsembleModel<T>& model) {
    require(!model.members.empty(), ErrorCode::BadConfig, "ensemble has no members");
    require(model.threshold >= 0.0 && model.threshold <= 1.0, ErrorCode::BadConfig,
            "threshold outside [0,1]");
    for (const auto& m : model.members) {
        require(m.num_classes == model.members.front().num_classes, ErrorCode::ClassSetMismatch,
                "members disagree on class count");
        require(m.input_side == model.members.front().input_side, ErrorCode::ClassSetMismatch,
                "members disagree on input side");
    }
}

// Element-wise mean of member confidences: the ensemble's score vector for
// ROC/PR sweeps.
inline Prediction mean_confidences(const std::vector<Prediction>& members) {
    require(!members.empty(), ErrorCode::BadConfig, "no member predictions");
    const std::size_t C = members.front().confidences.size();
    std::vector<double> mean(C, 0.0);
    for (const auto& m : members) {
        require(m.confidences.size() == C, ErrorCode::ClassSetMismatch,
                "member confidence widths differ");
        for (std::size_t c = 0; c < C; ++c) mean[c] += m.confidences[c];
    }
    for (double& v : mean) v /= double(members.size());
    return make_prediction(std::move(mean));
}

// Pure vote fold, usable without any networks.
inline int vote_from_predictions(const std::vector<Prediction>& members, double threshold) {
    require(!members.empty(), ErrorCode::BadConfig, "no member predictions");
    const std::size_t C = members.front().confidences.size();
    std::vector<int> counts(C, 0);
    int voting = 0;
    for (const auto& m : members) {
        require(m.confidences.size() == C, ErrorCode::ClassSetMismatch,
                "member confidence widths differ");
        if (m.argmax_confidence >= threshold) {
            ++counts[static_cast<std::size_t>(m.argmax_class)];
            ++voting;
        }
    }
    if (voting == 0) return kAbstain;
    const int top = *std::max_element(counts.begin(), counts.end());
    if (2 * top > voting) {  // strict majority
        for (std::size_t c = 0; c < C; ++c)
            if (counts[c] == top) return static_cast<int>(c);
    }
    // Tie: among the vote leaders, highest mean confidence across members.
    const Prediction mean = mean_confidences(members);
    int best = kAbstain;
    double best_conf = -1.0;
    for (std::size_t c = 0; c < C; ++c) {
        if (counts[c] != top) continue;
        if (mean.confidences[c] > best_conf) {
            best_conf = mean.confidences[c];
            best = static_cast<int>(c);
        }
    }
    return best;
}

template <typename T>
struct EnsembleVote {
    std::vector<Prediction> members;
    int vote = kAbstain;
};

template <typename T>
EnsembleVote<T> ensemble_predict(EnsembleModel<T>& model, const ScanImage& img) {
    validate_ensemble(model);
    EnsembleVote<T> out;
    for (auto& m : model.members) out.members.push_back(predict_single(m, img));
    out.vote = vote_from_predictions(out.members, model.threshold);
    return out;
}

// ---- good/bad collapse ----------------------------------------------------

// Total map from class index to good (desirable) / bad. Binary class order
// after collapsing is fixed: index 0 = Good, index 1 = Bad.
struct GoodBadMap {
    std::vector<bool> good;  // one entry per class

    static GoodBadMap from_class_set(const ClassSet& classes) {
        GoodBadMap map;
        for (const auto& label : classes.labels)
            map.good.push_back(label.desirability == Desirability::Desirable);
        return map;
    }
};

constexpr int kGoodClass = 0;
constexpr int kBadClass = 1;

inline const std::vector<std::string>& good_bad_names() {
    static const std::vector<std::string> names{"Good", "Bad"};
    return names;
}

// Collapses a class label (or abstention) to Good/Bad/abstain.
inline int collapse_label(int label, const GoodBadMap& map) {
    if (label == kAbstain) return kAbstain;
    require(label >= 0 && label < static_cast<int>(map.good.size()), ErrorCode::UnmappedClass,
            "label " + std::to_string(label) + " missing from good/bad map");
    return map.good[static_cast<std::size_t>(label)] ? kGoodClass : kBadClass;
}

inline std::vector<int> collapse_labels(const std::vector<int>& labels, const GoodBadMap& map) {
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = collapse_label(labels[i], map);
    return out;
}

// Good score = sum of confidences over good classes. With a sigmoid head the
// per-class masses do not sum to one, so the score is normalized by total
// mass; a softmax head keeps the raw sums.
inline std::vector<double> collapse_confidences(const std::vector<double>& confidences,
                                                const GoodBadMap& map,
                                                bool normalize_by_mass = false) {
    require(confidences.size() == map.good.size(), ErrorCode::UnmappedClass,
            "confidence width != good/bad map size");
    double good = 0.0, total = 0.0;
    for (std::size_t c = 0; c < confidences.size(); ++c) {
        total += confidences[c];
        if (map.good[c]) good += confidences[c];
    }
    double bad = total - good;
    if (normalize_by_mass && total > 0.0) {
        good /= total;
        bad /= total;
    }
    return {good, bad};
}

// Sums confusion rows and prediction columns by group; the abstention column
// carries over unchanged. Exactly commutes with collapsing the label lists.
inline std::vector<std::vector<long>> collapse_confusion(
    const std::vector<std::vector<long>>& confusion, const GoodBadMap& map) {
    require(confusion.size() == map.good.size(), ErrorCode::UnmappedClass,
            "confusion size != good/bad map size");
    std::vector<std::vector<long>> out(2, std::vector<long>(3, 0));
    for (std::size_t t = 0; t < confusion.size(); ++t) {
        const int tr = map.good[t] ? kGoodClass : kBadClass;
        require(confusion[t].size() == confusion.size() + 1, ErrorCode::ShapeMismatch,
                "confusion rows must have a trailing abstain column");
        for (std::size_t p = 0; p < confusion.size(); ++p) {
            const int pr = map.good[p] ? kGoodClass : kBadClass;
            out[static_cast<std::size_t>(tr)][static_cast<std::size_t>(pr)] += confusion[t][p];
        }
        out[static_cast<std::size_t>(tr)][2] += confusion[t][confusion.size()];
    }
    return out;
}

// ---- default configurations ----------------------------------------------

struct EnsembleMemberPlan {
    std::string architecture_id;
    OptimizerRule optimizer;
    double learning_rate = 0.0;
    std::uint64_t seed = 0;
};

// Si(100)-H: two squeezenet-like members and one batch-norm VGG, each with
// its own optimizer and rate.
inline std::vector<EnsembleMemberPlan> default_si_ensemble_plan() {
    return {
        {"squeezenet", OptimizerRule::Adam, 0.001, 1},
        {"squeezenet", OptimizerRule::SGD, 0.0001, 2},
        {"vgg-bn", OptimizerRule::RMSprop, 0.0001, 3},
    };
}

// Metal surfaces: three plain-VGG repeats that differ only by seed.
inline std::vector<EnsembleMemberPlan> default_metal_ensemble_plan() {
    return {
        {"vgg", OptimizerRule::Adam, 0.001, 1},
        {"vgg", OptimizerRule::Adam, 0.001, 2},
        {"vgg", OptimizerRule::Adam, 0.001, 3},
    };
}

// ---- manifest file ---------------------------------------------------------

struct EnsembleManifest {
    std::vector<std::string> member_paths;  // relative to the manifest file
    double threshold = 0.0;
    TieRule tie_rule = TieRule::MeanConfidence;
};

inline void write_ensemble_manifest(const std::filesystem::path& path,
                                    const EnsembleManifest& manifest) {
    nlohmann::json j;
    j["members"] = manifest.member_paths;
    j["threshold"] = manifest.threshold;
    j["tie_rule"] = tie_rule_name(manifest.tie_rule);
    std::ofstream os(path);
    require(os.good(), ErrorCode::IoError, "cannot write " + path.string());
    os << j.dump(2) << "\n";
    require(os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

inline EnsembleManifest read_ensemble_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(is.good(), ErrorCode::IoError, "cannot open " + path.string());
    nlohmann::json j = nlohmann::json::parse(is, nullptr, false);
    require(!j.is_discarded(), ErrorCode::CorruptFile, path.string() + ": bad JSON");
    EnsembleManifest m;
    require(j.contains("members") && j["members"].is_array(), ErrorCode::CorruptFile,
            path.string() + ": missing members list");
    for (const auto& entry : j["members"]) m.member_paths.push_back(entry.get<std::string>());
    m.threshold = j.value("threshold", 0.0);
    m.tie_rule = tie_rule_from_name(j.value("tie_rule", std::string("mean_confidence")));
    require(m.threshold >= 0.0 && m.threshold <= 1.0, ErrorCode::CorruptFile,
            path.string() + ": threshold outside [0,1]");
    return m;
}

template <typename T>
EnsembleModel<T> load_ensemble(const std::filesystem::path& manifest_path) {
    const EnsembleManifest manifest = read_ensemble_manifest(manifest_path);
    require(!manifest.member_paths.empty(), ErrorCode::CorruptFile,
            manifest_path.string() + ": empty member list");
    EnsembleModel<T> model;
    model.threshold = manifest.threshold;
    model.tie_rule = manifest.tie_rule;
    const auto base = manifest_path.parent_path();
    for (const auto& rel : manifest.member_paths)
        model.members.push_back(load_checkpoint<T>(base / rel));
    validate_ensemble(model);
    return model;
}

}  // namespace tipstate
