// The training loop: class-weighted loss, seeded per-epoch shuffles, early
// stopping on test loss, and the two-network scheme that splits tip-change
// detection into its own binary task.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "tipstate/augment.hpp"
#include "tipstate/common.hpp"
#include "tipstate/dataset.hpp"
#include "tipstate/ensemble.hpp"
#include "tipstate/loss.hpp"
#include "tipstate/metrics.hpp"
#include "tipstate/network.hpp"
#include "tipstate/optim.hpp"
#include "tipstate/rng.hpp"
#include "tipstate/zoo.hpp"

namespace tipstate {

struct TrainConfig {
    int batch_size = 128;
    int image_side = 128;
    int epochs = 1;
    OptimizerRule rule = OptimizerRule::Adam;
    double learning_rate = 0.001;
    double lr_decay = 1.0;
    LossSpec loss{LossKind::CategoricalCrossEntropy, {}};
    std::uint64_t seed = 0;
    int early_stop_patience = 10;
};

inline void validate_train_config(const TrainConfig& cfg) {
    require(cfg.batch_size >= 2, ErrorCode::BatchTooSmall,
            "batch size must be >= 2 for batch statistics");
    require(supported_side(cfg.image_side), ErrorCode::UnsupportedSize,
            "image side must be one of 32/64/128/256");
    require(cfg.epochs >= 1, ErrorCode::BadConfig, "epochs must be >= 1");
    require(cfg.learning_rate >= 0.0, ErrorCode::BadConfig, "learning rate must be >= 0");
    require(cfg.lr_decay > 0.0 && cfg.lr_decay <= 1.0, ErrorCode::BadConfig,
            "lr decay must sit in (0, 1]");
    require(cfg.early_stop_patience >= 1, ErrorCode::BadConfig,
            "early stop patience must be >= 1");
}

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> test_loss;
    std::vector<double> balanced_accuracy;
    int stopped_epoch = 0;  // epochs actually run; equals each vector's length
    int best_epoch = -1;    // 0-based index of the restored parameters
};

inline void write_history_csv(const TrainHistory& history, const std::filesystem::path& path) {
    std::ofstream os(path);
    require(os.good(), ErrorCode::IoError, "cannot open " + path.string() + " for writing");
    os << "epoch,train_loss,test_loss,balanced_accuracy\n";
    for (int e = 0; e < history.stopped_epoch; ++e)
        os << (e + 1) << ',' << detail::exact_decimal(history.train_loss[static_cast<std::size_t>(e)])
           << ',' << detail::exact_decimal(history.test_loss[static_cast<std::size_t>(e)]) << ','
           << detail::exact_decimal(history.balanced_accuracy[static_cast<std::size_t>(e)])
           << '\n';
    require(os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

namespace detail {

template <typename T>
Tensor4<T> batch_tensor(const std::vector<LabeledSample>& samples,
                        const std::vector<std::size_t>& order, std::size_t first,
                        std::size_t count, int side) {
    Tensor4<T> x(static_cast<int>(count), 1, side, side);
    for (std::size_t i = 0; i < count; ++i) {
        const ScanImage& img = samples[order[first + i]].image;
        const ScanImage sized =
            (img.height == side && img.width == side) ? img : resize(img, side);
        T* dst = x.sample(static_cast<int>(i));
        for (std::size_t k = 0; k < sized.values.size(); ++k) dst[k] = T(sized.values[k]);
    }
    return x;
}

inline std::vector<int> batch_targets(const std::vector<LabeledSample>& samples,
                                      const std::vector<std::size_t>& order, std::size_t first,
                                      std::size_t count, const ClassSet& classes) {
    std::vector<int> t(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::string& name = samples[order[first + i]].label.name;
        const int id = classes.index_of(name);
        require(id >= 0, ErrorCode::LabelOutOfRange,
                "label '" + name + "' not in class set " + classes.id);
        t[i] = id;
    }
    return t;
}

// Infer-mode confidences for every sample, batched for the GEMM path. Batch
// composition cannot affect the outputs: inference batchnorm is elementwise.
template <typename T>
std::vector<std::vector<double>> forward_confidences(NetworkGraph<T>& net,
                                                     const std::vector<LabeledSample>& samples,
                                                     int batch_size) {
    const Mode saved = net.mode;
    net.mode = Mode::Infer;
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<std::vector<double>> out(samples.size());
    for (std::size_t first = 0; first < samples.size(); first += static_cast<std::size_t>(batch_size)) {
        const std::size_t count =
            std::min(static_cast<std::size_t>(batch_size), samples.size() - first);
        const Tensor4<T> x = batch_tensor<T>(samples, order, first, count, net.input_side);
        const Tensor4<T> y = net.forward(x);
        for (std::size_t i = 0; i < count; ++i) {
            const T* row = y.sample(static_cast<int>(i));
            out[first + i].assign(row, row + net.num_classes);
        }
    }
    net.mode = saved;
    return out;
}

// Mean loss over all samples, assembled from per-batch means weighted by
// batch size (exact for any per-sample-mean loss).
template <typename T>
double dataset_loss(NetworkGraph<T>& net, const std::vector<LabeledSample>& samples,
                    const ClassSet& classes, const LossSpec& loss, int batch_size) {
    const Mode saved = net.mode;
    net.mode = Mode::Infer;
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    double acc = 0.0;
    for (std::size_t first = 0; first < samples.size(); first += static_cast<std::size_t>(batch_size)) {
        const std::size_t count =
            std::min(static_cast<std::size_t>(batch_size), samples.size() - first);
        const Tensor4<T> x = batch_tensor<T>(samples, order, first, count, net.input_side);
        const auto targets = batch_targets(samples, order, first, count, classes);
        const Tensor4<T> y = net.forward(x);
        acc += loss_eval(loss, y, targets).value * static_cast<double>(count);
    }
    net.mode = saved;
    return acc / static_cast<double>(samples.size());
}

// Macro recall over the classes that actually appear; epochs must not abort
// just because a small test split missed a class.
inline double supported_macro_recall(const std::vector<int>& preds,
                                     const std::vector<int>& truths, int classes) {
    std::vector<double> hit(static_cast<std::size_t>(classes), 0.0);
    std::vector<double> support(static_cast<std::size_t>(classes), 0.0);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        support[static_cast<std::size_t>(truths[i])] += 1.0;
        if (preds[i] == truths[i]) hit[static_cast<std::size_t>(truths[i])] += 1.0;
    }
    double sum = 0.0;
    int seen = 0;
    for (int c = 0; c < classes; ++c) {
        if (support[static_cast<std::size_t>(c)] == 0.0) continue;
        sum += hit[static_cast<std::size_t>(c)] / support[static_cast<std::size_t>(c)];
        ++seen;
    }
    require(seen > 0, ErrorCode::EmptyClassSupport, "no labeled samples to score");
    return sum / seen;
}

template <typename T>
struct ParamSnapshot {
    std::vector<std::vector<T>> params;
    std::vector<std::vector<T>> stats;

    static ParamSnapshot capture(NetworkGraph<T>& net) {
        ParamSnapshot s;
        for (const auto& v : net.params()) s.params.emplace_back(v.data, v.data + v.size);
        for (const auto& v : net.running_stats()) s.stats.emplace_back(v.data, v.data + v.size);
        return s;
    }

    void restore(NetworkGraph<T>& net) const {
        const auto views = net.params();
        for (std::size_t i = 0; i < views.size(); ++i)
            std::copy(params[i].begin(), params[i].end(), views[i].data);
        const auto stat_views = net.running_stats();
        for (std::size_t i = 0; i < stat_views.size(); ++i)
            std::copy(stats[i].begin(), stats[i].end(), stat_views[i].data);
    }
};

}  // namespace detail

// Train `net` in place and return the per-epoch history. The loss is always
// weighted by stats.weights (reciprocal class frequencies), each epoch
// shuffles with a seed derived from cfg.seed, the last partial batch is
// dropped in Train mode, and the parameters that scored the best test loss
// are restored before returning. `shuffle_audit`, when given, receives each
// epoch's visit order.
template <typename T>
TrainHistory train(NetworkGraph<T>& net, const DatasetSplit& split, const ClassStats& stats,
                   const TrainConfig& cfg,
                   std::vector<std::vector<std::size_t>>* shuffle_audit = nullptr) {
    validate_train_config(cfg);
    require(!split.train.empty(), ErrorCode::EmptyTrainSet, "training split is empty");
    require(split.train.size() >= static_cast<std::size_t>(cfg.batch_size),
            ErrorCode::BatchTooSmall,
            "training split smaller than one batch (partial batches are dropped)");
    require(!split.test.empty(), ErrorCode::EmptyTrainSet,
            "test split is empty; early stopping needs one");
    require(stats.classes.size() == net.num_classes, ErrorCode::ClassSetMismatch,
            "class set size " + std::to_string(stats.classes.size()) + " != network classes " +
                std::to_string(net.num_classes));
    require(cfg.image_side == net.input_side, ErrorCode::ShapeMismatch,
            "config image side != network input side");

    LossSpec loss = cfg.loss;
    loss.class_weights = stats.weights;

    Optimizer<T> optimizer(cfg.rule, cfg.learning_rate);
    TrainHistory history;
    detail::ParamSnapshot<T> best;
    double best_loss = 0.0;

    std::vector<std::size_t> order(split.train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<int> test_truths;
    for (const auto& s : split.test) {
        const int id = stats.classes.index_of(s.label.name);
        require(id >= 0, ErrorCode::LabelOutOfRange,
                "label '" + s.label.name + "' not in class set " + stats.classes.id);
        test_truths.push_back(id);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        optimizer.set_learning_rate(lr_schedule(cfg.learning_rate, epoch, cfg.lr_decay));

        Rng rng(derive_seed(cfg.seed, "epoch", static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order.begin(), order.end());
        if (shuffle_audit) shuffle_audit->push_back(order);

        net.mode = Mode::Train;
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        const std::size_t batch = static_cast<std::size_t>(cfg.batch_size);
        for (std::size_t first = 0; first + batch <= order.size(); first += batch) {
            const Tensor4<T> x =
                detail::batch_tensor<T>(split.train, order, first, batch, cfg.image_side);
            const auto targets =
                detail::batch_targets(split.train, order, first, batch, stats.classes);
            const Tensor4<T> y = net.forward(x);
            const LossResult<T> res = loss_eval(loss, y, targets);
            net.backward(res.grad);
            auto views = net.params();
            optimizer.step(views);
            epoch_loss += res.value * static_cast<double>(batch);
            seen += batch;
        }
        history.train_loss.push_back(epoch_loss / static_cast<double>(seen));

        const double test_loss =
            detail::dataset_loss(net, split.test, stats.classes, loss, cfg.batch_size);
        const auto confidences = detail::forward_confidences(net, split.test, cfg.batch_size);
        std::vector<int> preds;
        preds.reserve(confidences.size());
        for (const auto& c : confidences) preds.push_back(make_prediction(c).argmax_class);
        history.test_loss.push_back(test_loss);
        history.balanced_accuracy.push_back(
            detail::supported_macro_recall(preds, test_truths, net.num_classes));
        history.stopped_epoch = epoch + 1;

        if (history.best_epoch < 0 || test_loss < best_loss) {
            best = detail::ParamSnapshot<T>::capture(net);
            best_loss = test_loss;
            history.best_epoch = epoch;
        } else if (epoch - history.best_epoch >= cfg.early_stop_patience) {
            break;
        }
    }

    best.restore(net);
    net.mode = Mode::Infer;
    return history;
}

// One confidence vector per sample. The network must already be in Infer
// mode: evaluating a Train-mode network would silently depend on batch
// composition and update batchnorm running stats.
template <typename T>
std::vector<Prediction> evaluate(NetworkGraph<T>& net, const std::vector<LabeledSample>& samples,
                                 int batch_size = 64) {
    require(net.mode == Mode::Infer, ErrorCode::ModeError, "evaluate requires Infer mode");
    require(batch_size >= 1, ErrorCode::BadConfig, "batch size must be >= 1");
    const auto confidences = detail::forward_confidences(net, samples, batch_size);
    std::vector<Prediction> out;
    out.reserve(confidences.size());
    for (const auto& c : confidences) out.push_back(make_prediction(c));
    return out;
}

// ---------------------------------------------------------------------------
// The two-network scheme: tip changes come from a separate binary net so the
// four-class net never sees them, and the binary task keeps the restricted
// augmentation set (a rotation or crop could move or erase the shear line).

struct SiSchemeConfig {
    std::string four_class_arch = "squeezenet";
    std::string binary_arch = "squeezenet";
    TrainConfig four_class;
    TrainConfig binary;
    int augment_repeats = 0;  // 0 trains on the pools as given
    std::uint64_t augment_seed = 0;
};

template <typename T>
struct SiSchemeResult {
    NetworkGraph<T> four_class;
    NetworkGraph<T> binary;
    TrainHistory four_class_history;
    TrainHistory binary_history;
    std::vector<AugmentRecord> binary_audit;
};

namespace detail {

inline DatasetSplit drop_binary_labels(const DatasetSplit& split) {
    DatasetSplit out;
    out.seed = split.seed;
    auto keep = [](const LabeledSample& s) {
        return s.label.name != "TipChange" && s.label.name != "NoTipChange";
    };
    for (const auto& s : split.train)
        if (keep(s)) out.train.push_back(s);
    for (const auto& s : split.test)
        if (keep(s)) out.test.push_back(s);
    for (const auto& s : split.holdout)
        if (keep(s)) out.holdout.push_back(s);
    return out;
}

}  // namespace detail

template <typename T = double>
SiSchemeResult<T> train_si_scheme(const DatasetSplit& four_class_split,
                                  const DatasetSplit& binary_split, const SiSchemeConfig& cfg) {
    for (const auto* pool : {&binary_split.train, &binary_split.test}) {
        for (const auto& s : *pool)
            require(si_binary_classes().contains(s.label.name), ErrorCode::LabelOutOfRange,
                    "binary split carries label '" + s.label.name + "'");
    }

    DatasetSplit four = detail::drop_binary_labels(four_class_split);
    DatasetSplit binary = binary_split;

    SiSchemeResult<T> result;
    if (cfg.augment_repeats > 0) {
        augment_split(four, cfg.augment_seed, cfg.augment_repeats);
        const AugmentPolicy restricted = [&] {
            AugmentPolicy p = restricted_tip_change_policy();
            p.repeats = cfg.augment_repeats;
            return p;
        }();
        for (auto* pool : {&binary.train, &binary.test}) {
            std::vector<LabeledSample> fresh;
            for (const auto& s : *pool) {
                auto extra =
                    augment_sample(s, restricted, cfg.augment_seed, &result.binary_audit);
                fresh.insert(fresh.end(), std::make_move_iterator(extra.begin()),
                             std::make_move_iterator(extra.end()));
            }
            pool->insert(pool->end(), std::make_move_iterator(fresh.begin()),
                         std::make_move_iterator(fresh.end()));
        }
    }

    result.four_class = build_network<T>(cfg.four_class_arch, si_four_classes().size(),
                                         cfg.four_class.image_side, HeadActivation::Softmax,
                                         cfg.four_class.seed);
    result.binary = build_network<T>(cfg.binary_arch, si_binary_classes().size(),
                                     cfg.binary.image_side, HeadActivation::Sigmoid,
                                     cfg.binary.seed);

    result.four_class_history =
        train(result.four_class, four, class_stats(four.train, si_four_classes()),
              cfg.four_class);
    result.binary_history =
        train(result.binary, binary, class_stats(binary.train, si_binary_classes()),
              cfg.binary);
    return result;
}

// ---------------------------------------------------------------------------
// Plain-text train configs: `key = value`, '#' comments, all keys optional.

inline TrainConfig load_train_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    require(is.good(), ErrorCode::IoError, "cannot open " + path.string());
    TrainConfig cfg;
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
        const std::string key = trim(line.substr(0, eq));
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

        if (key == "batch_size") {
            cfg.batch_size = static_cast<int>(want_number());
        } else if (key == "image_side") {
            cfg.image_side = static_cast<int>(want_number());
        } else if (key == "epochs") {
            cfg.epochs = static_cast<int>(want_number());
        } else if (key == "optimizer") {
            try {
                cfg.rule = optimizer_rule_from_name(value);
            } catch (const Error&) {
                bad("unknown optimizer '" + value + "'");
            }
        } else if (key == "learning_rate") {
            cfg.learning_rate = want_number();
        } else if (key == "lr_decay") {
            cfg.lr_decay = want_number();
        } else if (key == "loss") {
            if (value == "bce")
                cfg.loss.kind = LossKind::BinaryCrossEntropy;
            else if (value == "cce")
                cfg.loss.kind = LossKind::CategoricalCrossEntropy;
            else
                bad("loss must be 'bce' or 'cce'");
        } else if (key == "seed") {
            try {
                cfg.seed = std::stoull(value);
            } catch (const std::exception&) {
                bad("value for 'seed' must be a nonnegative integer");
            }
        } else if (key == "early_stop_patience") {
            cfg.early_stop_patience = static_cast<int>(want_number());
        } else {
            bad("unknown key '" + key + "'");
        }
    }
    validate_train_config(cfg);
    return cfg;
}

}  // namespace tipstate
