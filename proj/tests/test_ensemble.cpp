#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <unistd.h>
#include <vector>

#include "helpers.hpp"
#include "tipstate/ensemble.hpp"
#include "tipstate/rng.hpp"
#include "tipstate/zoo.hpp"

using namespace tipstate;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int counter = 0;
        path = fs::temp_directory_path() / ("tipstate_ensemble_" + std::to_string(::getpid()) +
                                            "_" + std::to_string(counter++));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

Prediction pred(std::vector<double> conf) { return make_prediction(std::move(conf)); }

ScanImage random_image(int side, std::uint64_t seed) {
    ScanImage img(side, side);
    Rng rng(seed);
    for (double& v : img.values) v = rng.uniform(-1.0, 1.0);
    return img;
}

}  // namespace

TEST_CASE("majority vote wins outright") {
    const std::vector<Prediction> members{pred({0.7, 0.2, 0.1}), pred({0.6, 0.3, 0.1}),
                                          pred({0.1, 0.8, 0.1})};
    REQUIRE(vote_from_predictions(members, 0.0) == 0);
}

TEST_CASE("three-way tie falls back to mean confidence") {
    // Votes A, B, C; means A 0.6, B 0.5, C 0.4 over the right entries.
    const std::vector<Prediction> members{pred({0.9, 0.05, 0.05}), pred({0.45, 0.5, 0.05}),
                                          pred({0.45, 0.05, 0.5})};
    // Mean per class: A (0.9+0.45+0.45)/3 = 0.6, B 0.2, C 0.2.
    REQUIRE(vote_from_predictions(members, 0.0) == 0);
}

TEST_CASE("threshold one with imperfect confidence abstains") {
    const std::vector<Prediction> members{pred({0.99, 0.01}), pred({0.95, 0.05}),
                                          pred({0.97, 0.03})};
    REQUIRE(vote_from_predictions(members, 1.0) == kAbstain);
    REQUIRE(vote_from_predictions(members, 0.95) == 0);
}

TEST_CASE("vote equals the mode whenever a strict majority exists") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const int C = 2 + int(rng.index(4));
        const int M = 3 + 2 * int(rng.index(2));  // 3 or 5 members
        std::vector<Prediction> members;
        for (int m = 0; m < M; ++m) {
            std::vector<double> conf(C);
            double total = 0.0;
            for (double& v : conf) {
                v = rng.uniform(0.01, 1.0);
                total += v;
            }
            for (double& v : conf) v /= total;
            members.push_back(pred(std::move(conf)));
        }
        // Direct mode computation over argmaxes (threshold 0: nobody abstains).
        std::map<int, int> counts;
        for (const auto& m : members) ++counts[m.argmax_class];
        int mode_class = -1, mode_count = 0;
        for (const auto& [cls, count] : counts)
            if (count > mode_count) {
                mode_count = count;
                mode_class = cls;
            }
        const int vote = vote_from_predictions(members, 0.0);
        if (2 * mode_count > M) {
            CAPTURE(trial, M, C);
            REQUIRE(vote == mode_class);
        } else {
            REQUIRE(vote != kAbstain);  // tie-broken, never dropped
        }
    }
}

TEST_CASE("raising the threshold never lets more members vote") {
    Rng rng(2);
    std::vector<Prediction> members;
    for (int m = 0; m < 5; ++m) {
        std::vector<double> conf(4);
        double total = 0.0;
        for (double& v : conf) {
            v = rng.uniform(0.01, 1.0);
            total += v;
        }
        for (double& v : conf) v /= total;
        members.push_back(pred(std::move(conf)));
    }
    auto voting_members = [&](double threshold) {
        int count = 0;
        for (const auto& m : members)
            if (m.argmax_confidence >= threshold) ++count;
        return count;
    };
    int prev = 6;
    for (double t : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) {
        const int now = voting_members(t);
        REQUIRE(now <= prev);
        prev = now;
    }
}

TEST_CASE("mean confidences average element-wise") {
    const std::vector<Prediction> members{pred({0.2, 0.8}), pred({0.8, 0.2})};
    const Prediction mean = mean_confidences(members);
    REQUIRE(mean.confidences[0] == 0.5);
    REQUIRE(mean.confidences[1] == 0.5);
    // Idempotence holds to rounding: (x+x+x)/3 lands within an ulp of x.
    const std::vector<Prediction> same{pred({0.3, 0.7}), pred({0.3, 0.7}), pred({0.3, 0.7})};
    const auto m3 = mean_confidences(same).confidences;
    REQUIRE(std::abs(m3[0] - 0.3) < 1e-15);
    REQUIRE(std::abs(m3[1] - 0.7) < 1e-15);
    for (double v : mean_confidences(members).confidences) {
        REQUIRE(v >= 0.0);
        REQUIRE(v <= 1.0);
    }
    REQUIRE_THROWS_MATCHES(mean_confidences({pred({0.5, 0.5}), pred({0.3, 0.3, 0.4})}), Error,
                           ErrorCodeIs(ErrorCode::ClassSetMismatch));
}

TEST_CASE("three identical members reproduce the member decision at threshold zero") {
    auto net = build_rw<double>(4, 32, HeadActivation::Softmax, 5);
    EnsembleModel<double> model;
    model.members.push_back(net);
    model.members.push_back(net);
    model.members.push_back(net);
    model.threshold = 0.0;
    for (int i = 0; i < 5; ++i) {
        const ScanImage img = random_image(32, 100 + i);
        auto solo = predict_single(model.members[0], img);
        auto vote = ensemble_predict(model, img);
        REQUIRE(vote.vote == solo.argmax_class);
        REQUIRE(vote.members.size() == 3);
        for (const auto& m : vote.members) REQUIRE(m.confidences == solo.confidences);
    }
}

TEST_CASE("ensembles reject mismatched members") {
    EnsembleModel<double> model;
    model.members.push_back(build_rw<double>(4, 32));
    model.members.push_back(build_rw<double>(3, 32));
    REQUIRE_THROWS_MATCHES(ensemble_predict(model, random_image(32, 1)), Error,
                           ErrorCodeIs(ErrorCode::ClassSetMismatch));
    EnsembleModel<double> sides;
    sides.members.push_back(build_rw<double>(4, 32));
    sides.members.push_back(build_rw<double>(4, 64));
    REQUIRE_THROWS_MATCHES(ensemble_predict(sides, random_image(32, 1)), Error,
                           ErrorCodeIs(ErrorCode::ClassSetMismatch));
    EnsembleModel<double> empty;
    REQUIRE_THROWS_MATCHES(ensemble_predict(empty, random_image(32, 1)), Error,
                           ErrorCodeIs(ErrorCode::BadConfig));
}

TEST_CASE("good/bad map from the Si class set") {
    const ClassSet classes = si_four_classes();
    const GoodBadMap map = GoodBadMap::from_class_set(classes);
    REQUIRE(map.good.size() == 4);
    REQUIRE(map.good[classes.index_of("AsymmetryDimer")]);
    REQUIRE(map.good[classes.index_of("Atoms")]);
    REQUIRE(map.good[classes.index_of("Rows")]);
    REQUIRE_FALSE(map.good[classes.index_of("GenericDefect")]);
}

TEST_CASE("label collapse maps classes and preserves abstentions") {
    const GoodBadMap map = GoodBadMap::from_class_set(si_four_classes());
    const int defect = int(si_four_classes().index_of("GenericDefect"));
    const std::vector<int> labels{0, 1, 2, defect, kAbstain};
    const auto collapsed = collapse_labels(labels, map);
    REQUIRE(collapsed[3] == kBadClass);
    REQUIRE(collapsed[4] == kAbstain);
    for (int i = 0; i < 3; ++i) REQUIRE(collapsed[i] == kGoodClass);
    REQUIRE_THROWS_MATCHES(collapse_label(7, map), Error,
                           ErrorCodeIs(ErrorCode::UnmappedClass));
}

TEST_CASE("confidence collapse sums class masses") {
    const GoodBadMap map = GoodBadMap::from_class_set(si_four_classes());
    const std::vector<double> conf{0.1, 0.2, 0.3, 0.4};  // defect is index 3
    const auto plain = collapse_confidences(conf, map);
    REQUIRE(std::abs(plain[0] - 0.6) < 1e-12);
    REQUIRE(std::abs(plain[1] - 0.4) < 1e-12);
    // Sigmoid-style masses get normalized by the total.
    const std::vector<double> sig{0.9, 0.8, 0.1, 0.2};
    const auto norm = collapse_confidences(sig, map, true);
    REQUIRE(std::abs(norm[0] - 1.8 / 2.0) < 1e-12);
    REQUIRE(std::abs(norm[0] + norm[1] - 1.0) < 1e-12);
    REQUIRE_THROWS_MATCHES(collapse_confidences({0.5, 0.5}, map), Error,
                           ErrorCodeIs(ErrorCode::UnmappedClass));
}

TEST_CASE("collapse commutes with confusion counting") {
    const GoodBadMap map = GoodBadMap::from_class_set(si_four_classes());
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = 50 + int(rng.index(100));
        std::vector<int> preds(n), truths(n);
        for (int i = 0; i < n; ++i) {
            truths[i] = int(rng.index(4));
            preds[i] = rng.uniform() < 0.08 ? kAbstain : int(rng.index(4));
        }
        const auto direct =
            confusion_matrix(collapse_labels(preds, map), collapse_labels(truths, map), 2);
        const auto via_matrix = collapse_confusion(confusion_matrix(preds, truths, 4), map);
        REQUIRE(direct == via_matrix);
    }
}

TEST_CASE("binary recall of Good equals multi-class mass landing in Good classes") {
    const GoodBadMap map = GoodBadMap::from_class_set(si_four_classes());
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<int> preds(120), truths(120);
        for (int i = 0; i < 120; ++i) {
            truths[i] = int(rng.index(3));  // all-Good truth set
            preds[i] = int(rng.index(4));
        }
        const auto multi = confusion_matrix(preds, truths, 4);
        long into_good = 0, total = 0;
        for (int t = 0; t < 3; ++t)
            for (int p = 0; p < 4; ++p) {
                if (map.good[p]) into_good += multi[t][p];
                total += multi[t][p];
            }
        const auto binary =
            confusion_matrix(collapse_labels(preds, map), collapse_labels(truths, map), 2);
        const double binary_recall =
            double(binary[kGoodClass][kGoodClass]) /
            double(binary[kGoodClass][0] + binary[kGoodClass][1] + binary[kGoodClass][2]);
        REQUIRE(std::abs(binary_recall - double(into_good) / double(total)) < 1e-12);
    }
}

TEST_CASE("default ensemble plans match the published configurations") {
    const auto si = default_si_ensemble_plan();
    REQUIRE(si.size() == 3);
    REQUIRE(si[0].architecture_id == "squeezenet");
    REQUIRE(si[0].optimizer == OptimizerRule::Adam);
    REQUIRE(si[0].learning_rate == 0.001);
    REQUIRE(si[1].architecture_id == "squeezenet");
    REQUIRE(si[1].optimizer == OptimizerRule::SGD);
    REQUIRE(si[1].learning_rate == 0.0001);
    REQUIRE(si[2].architecture_id == "vgg-bn");
    REQUIRE(si[2].optimizer == OptimizerRule::RMSprop);
    REQUIRE(si[2].learning_rate == 0.0001);
    const auto metal = default_metal_ensemble_plan();
    REQUIRE(metal.size() == 3);
    std::vector<std::uint64_t> seeds;
    for (const auto& m : metal) {
        REQUIRE(m.architecture_id == "vgg");
        seeds.push_back(m.seed);
    }
    std::sort(seeds.begin(), seeds.end());
    REQUIRE(std::unique(seeds.begin(), seeds.end()) == seeds.end());
}

TEST_CASE("ensemble manifests round-trip and load members") {
    TempDir dir;
    for (int i = 0; i < 3; ++i) {
        auto net = build_rw<double>(4, 32, HeadActivation::Softmax, 40 + i);
        save_checkpoint(net, dir.path / ("m" + std::to_string(i) + ".tsck"));
    }
    EnsembleManifest manifest;
    manifest.member_paths = {"m0.tsck", "m1.tsck", "m2.tsck"};
    manifest.threshold = 0.6;
    const fs::path file = dir.path / "ensemble.json";
    write_ensemble_manifest(file, manifest);

    const EnsembleManifest back = read_ensemble_manifest(file);
    REQUIRE(back.member_paths == manifest.member_paths);
    REQUIRE(back.threshold == 0.6);
    REQUIRE(back.tie_rule == TieRule::MeanConfidence);

    auto model = load_ensemble<double>(file);
    REQUIRE(model.members.size() == 3);
    REQUIRE(model.threshold == 0.6);
    const auto vote = ensemble_predict(model, random_image(32, 7));
    REQUIRE(vote.members.size() == 3);

    REQUIRE_THROWS_MATCHES(read_ensemble_manifest(dir.path / "missing.json"), Error,
                           ErrorCodeIs(ErrorCode::IoError));
    std::ofstream bad(dir.path / "bad.json");
    bad << "{not json";
    bad.close();
    REQUIRE_THROWS_MATCHES(read_ensemble_manifest(dir.path / "bad.json"), Error,
                           ErrorCodeIs(ErrorCode::CorruptFile));
}

TEST_CASE("ensemble scores feed the metrics module") {
    // Mean-confidence scores from a stack of noisy members behave like a
    // single better-calibrated model: a full report computes cleanly.
    Rng rng(5);
    const int n = 80, C = 3;
    std::vector<std::vector<double>> conf(n);
    std::vector<int> truths(n);
    for (int i = 0; i < n; ++i) {
        truths[i] = int(rng.index(C));
        std::vector<Prediction> members;
        for (int m = 0; m < 3; ++m) {
            std::vector<double> c(C);
            double total = 0.0;
            for (int k = 0; k < C; ++k) {
                c[k] = rng.uniform(0.0, 0.3) + (k == truths[i] ? 0.5 : 0.0);
                total += c[k];
            }
            for (double& v : c) v /= total;
            members.push_back(pred(std::move(c)));
        }
        conf[i] = mean_confidences(members).confidences;
    }
    const MetricsReport report = compute_metrics(conf, truths, {"a", "b", "c"});
    REQUIRE(report.macro_auroc > 0.9);
}
