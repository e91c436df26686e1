// Command-line front end: generate / train / evaluate / classify / plot.
//
// Exit codes: 0 success, 1 usage error, 2 data or I/O error. Every run drops
// a run_config.json into its output directory so it can be replayed later.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tipstate/baselines.hpp"
#include "tipstate/checkpoint.hpp"
#include "tipstate/dataset.hpp"
#include "tipstate/ensemble.hpp"
#include "tipstate/io.hpp"
#include "tipstate/metrics.hpp"
#include "tipstate/synthgen.hpp"
#include "tipstate/train.hpp"
#include "tipstate/zoo.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tipstate;

constexpr const char* kToolVersion = "1.0.0";

// ---- shared option plumbing ------------------------------------------------

struct CommonOpts {
    std::string out;
    std::string config;
    std::uint64_t seed = 0;
    std::string precision = "double";
};

struct DataOpts {
    std::string manifest;
    int holdout = 0;
    std::optional<std::uint64_t> split_seed;
    std::string split = "all";  // train | test | holdout | all
    std::string class_set;      // empty = infer from the dataset
};

struct ModelOpts {
    std::string checkpoint;
    std::string ensemble;
    double threshold = 0.0;
    bool collapse_good_bad = false;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool out_required) {
    auto* out = cmd->add_option("--out", o.out, "Output directory");
    if (out_required)
        out->required();
    else
        out->capture_default_str();
    cmd->add_option("--seed", o.seed, "Global random seed")->capture_default_str();
    cmd->add_option("--precision", o.precision, "Numeric precision")
        ->check(CLI::IsMember({"float", "double"}))
        ->capture_default_str();
}

void add_model(CLI::App* cmd, ModelOpts& o) {
    auto* ck = cmd->add_option("--checkpoint", o.checkpoint, "Model checkpoint (.tsck)");
    auto* en = cmd->add_option("--ensemble", o.ensemble, "Ensemble manifest (JSON)");
    ck->excludes(en);
    en->excludes(ck);
    cmd->add_option("--threshold", o.threshold, "Abstain below this confidence")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    cmd->add_flag("--collapse-good-bad", o.collapse_good_bad,
                  "Report desirable-vs-undesirable instead of full classes");
}

void require_model(const ModelOpts& o) {
    require(!o.checkpoint.empty() || !o.ensemble.empty(), ErrorCode::BadConfig,
            "need --checkpoint or --ensemble");
}

// Reproducibility record. Keys are sorted by nlohmann::json, so the bytes are
// a pure function of the recorded values.
void write_run_config(const fs::path& out_dir, const std::string& subcommand, json config) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    require(fs::is_directory(out_dir), ErrorCode::IoError, "cannot create " + out_dir.string());
    json record;
    record["subcommand"] = subcommand;
    record["tool_version"] = kToolVersion;
    record["checkpoint_version"] = kCheckpointVersion;
    record["config"] = std::move(config);
    const fs::path path = out_dir / "run_config.json";
    std::ofstream os(path);
    require(os.good(), ErrorCode::IoError, "cannot write " + path.string());
    os << record.dump(2) << "\n";
    require(os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

// ---- dataset helpers -------------------------------------------------------

const ClassSet& pick_class_set(const std::vector<LabeledSample>& samples,
                               const std::string& override_id) {
    if (!override_id.empty()) return class_set_by_id(override_id);
    require(!samples.empty(), ErrorCode::EmptyTrainSet, "dataset is empty");
    for (const auto& s : samples)
        if (s.surface == Surface::Au111 || s.surface == Surface::Cu111)
            return class_set_by_id("metal6");
    std::set<std::string> names;
    for (const auto& s : samples) names.insert(s.label.name);
    for (const char* id : {"si-binary", "si4", "metal6"}) {
        const ClassSet& cs = class_set_by_id(id);
        bool all = true;
        for (const auto& n : names) all = all && cs.contains(n);
        if (all) return cs;
    }
    fail(ErrorCode::LabelOutOfRange, "dataset labels match no registered class set");
}

// Fallback naming when only a model (with a class count) is at hand.
const ClassSet& class_set_for_count(int count, const std::string& override_id) {
    if (!override_id.empty()) {
        const ClassSet& cs = class_set_by_id(override_id);
        require(cs.size() == count, ErrorCode::ClassSetMismatch,
                "class set '" + override_id + "' has " + std::to_string(cs.size()) +
                    " classes, model expects " + std::to_string(count));
        return cs;
    }
    for (const char* id : {"si4", "si-binary", "metal6"})
        if (class_set_by_id(id).size() == count) return class_set_by_id(id);
    fail(ErrorCode::ClassSetMismatch,
         "no registered class set has " + std::to_string(count) + " classes; pass --class-set");
}

std::vector<LabeledSample> select_split(std::vector<LabeledSample> samples, const DataOpts& d,
                                        std::uint64_t default_seed) {
    if (d.split == "all") return samples;
    const std::uint64_t seed = d.split_seed.value_or(default_seed);
    DatasetSplit split = split_dataset(samples, d.holdout, seed);
    if (d.split == "train") return std::move(split.train);
    if (d.split == "test") return std::move(split.test);
    return std::move(split.holdout);
}

std::vector<int> truth_indices(const std::vector<LabeledSample>& samples, const ClassSet& classes) {
    std::vector<int> truths;
    truths.reserve(samples.size());
    for (const auto& s : samples) {
        const int idx = classes.index_of(s.label.name);
        require(idx >= 0, ErrorCode::LabelOutOfRange,
                "label '" + s.label.name + "' not in class set '" + classes.id + "'");
        truths.push_back(idx);
    }
    return truths;
}

// ---- model wrappers --------------------------------------------------------

// One scored decision per image, regardless of what produced it.
struct Scored {
    std::vector<double> confidences;
    int decision = kAbstain;
    bool sigmoid_head = false;  // confidences are per-class masses, not a simplex
};

template <typename T>
bool has_sigmoid_head(const NetworkGraph<T>& net) {
    return !net.layers.empty() && std::holds_alternative<Sigmoid>(net.layers.back());
}

template <typename T>
struct LoadedModel {
    std::optional<NetworkGraph<T>> net;
    std::optional<ForestModel> forest;
    std::optional<EnsembleModel<T>> ensemble;
    double threshold = 0.0;

    int class_count() const {
        if (net) return net->num_classes;
        if (forest) return forest->class_count;
        return ensemble->members.front().num_classes;
    }

    Scored score(const ScanImage& img) {
        Scored out;
        if (net) {
            const Prediction p = predict_single(*net, img);
            out.confidences = p.confidences;
            out.decision = argmax_or_abstain(p.confidences, threshold);
            out.sigmoid_head = has_sigmoid_head(*net);
        } else if (forest) {
            const Prediction p = forest_predict(*forest, img);
            out.confidences = p.confidences;
            out.decision = argmax_or_abstain(p.confidences, threshold);
        } else {
            EnsembleVote<T> vote = ensemble_predict(*ensemble, img);
            out.confidences = mean_confidences(vote.members).confidences;
            out.decision = vote.vote;
        }
        return out;
    }
};

template <typename T>
LoadedModel<T> load_model(const ModelOpts& opts) {
    LoadedModel<T> m;
    m.threshold = opts.threshold;
    if (!opts.ensemble.empty()) {
        m.ensemble = load_ensemble<T>(opts.ensemble);
        m.ensemble->threshold = opts.threshold;
    } else if (peek_checkpoint(opts.checkpoint).architecture_id == "rfc") {
        m.forest = load_forest(opts.checkpoint);
    } else {
        m.net = load_checkpoint<T>(opts.checkpoint);
    }
    return m;
}

// ---- generate ---------------------------------------------------------------

struct GenerateOpts {
    CommonOpts common;
    std::string config;
    std::string surface;
    std::string class_set;
    int count = 100;
    int side = 128;
};

json generate_record(const GenerateOpts& o, const SynthSpec& spec) {
    json j;
    j["out"] = o.common.out;
    j["seed"] = spec.seed;
    j["surface"] = surface_name(spec.surface);
    j["count"] = spec.count;
    j["side"] = spec.params.side;
    json dist = json::object();
    for (const auto& [label, frac] : spec.distribution) dist[label] = frac;
    j["distribution"] = dist;
    return j;
}

int run_generate(const GenerateOpts& o, const CLI::App* cmd) {
    SynthSpec spec;
    if (!o.config.empty()) spec = load_synth_spec(o.config);

    if (cmd->count("--surface") || o.config.empty()) {
        require(!o.surface.empty(), ErrorCode::BadConfig, "need --surface or --config");
        spec.surface = surface_from_name(o.surface);
        spec.distribution.clear();
    }
    if (cmd->count("--count") || o.config.empty()) spec.count = o.count;
    if (cmd->count("--seed") || o.config.empty()) spec.seed = o.common.seed;
    if (cmd->count("--side") || o.config.empty()) spec.params.side = o.side;

    // The stock geometry is tuned for 128 px; without a config file, scale it
    // to the requested side so every supported size renders out of the box.
    if (o.config.empty()) {
        const double s = double(spec.params.side) / 128.0;
        const RenderParams stock;
        auto& p = spec.params;
        p.row_period = std::clamp(stock.row_period * s, 4.0, p.side / 4.0);
        p.atom_radius = std::clamp(stock.atom_radius * s, 0.8, p.row_period - 0.2);
        p.double_tip_dy = std::max(1, int(std::lround(stock.double_tip_dy * s)));
        p.double_tip_dx = std::max(2, int(std::lround(stock.double_tip_dx * s)));
    }

    if (spec.distribution.empty()) {
        std::string set_id = o.class_set;
        if (set_id.empty()) {
            switch (spec.surface) {
                case Surface::Au111:
                case Surface::Cu111: set_id = "metal6"; break;
                default: set_id = "si4"; break;
            }
        }
        const ClassSet& cs = class_set_by_id(set_id);
        for (const auto& label : cs.labels)
            spec.distribution.emplace_back(label.name, 1.0 / cs.size());
    }

    const fs::path out_dir = o.common.out;
    const fs::path manifest = gen_dataset(spec, out_dir);
    save_synth_spec(spec, out_dir / "spec.cfg");
    write_run_config(out_dir, "generate", generate_record(o, spec));
    std::cout << manifest.string() << "\n";
    return 0;
}

// ---- train -------------------------------------------------------------------

struct TrainOpts {
    CommonOpts common;
    DataOpts data;
    std::string arch = "squeezenet";
    std::string optimizer = "adam";
    std::string loss = "cce";
    double lr = 0.001;
    double lr_decay = 1.0;
    int batch = 128;
    int side = 128;
    int epochs = 1;
    int patience = 10;
    int augment = 0;
    int trees = 100;
};

TrainConfig assemble_train_config(const TrainOpts& o, const CLI::App* cmd) {
    TrainConfig cfg;
    if (!o.common.config.empty()) cfg = load_train_config(o.common.config);
    auto pick = [&](const char* flag, auto& dst, const auto& src) {
        if (cmd->count(flag) || o.common.config.empty()) dst = src;
    };
    pick("--batch", cfg.batch_size, o.batch);
    pick("--side", cfg.image_side, o.side);
    pick("--epochs", cfg.epochs, o.epochs);
    pick("--optimizer", cfg.rule, optimizer_rule_from_name(o.optimizer));
    pick("--lr", cfg.learning_rate, o.lr);
    pick("--lr-decay", cfg.lr_decay, o.lr_decay);
    pick("--seed", cfg.seed, o.common.seed);
    pick("--patience", cfg.early_stop_patience, o.patience);
    if (cmd->count("--loss") || o.common.config.empty())
        cfg.loss.kind =
            o.loss == "bce" ? LossKind::BinaryCrossEntropy : LossKind::CategoricalCrossEntropy;
    validate_train_config(cfg);
    return cfg;
}

json train_record(const TrainOpts& o, const TrainConfig& cfg) {
    json j;
    j["manifest"] = o.data.manifest;
    j["out"] = o.common.out;
    j["arch"] = o.arch;
    j["class_set"] = o.data.class_set;
    j["precision"] = o.common.precision;
    j["holdout"] = o.data.holdout;
    j["split_seed"] = o.data.split_seed.value_or(cfg.seed);
    j["augment"] = o.augment;
    j["optimizer"] = optimizer_rule_name(cfg.rule);
    j["loss"] = loss_kind_name(cfg.loss.kind);
    j["lr"] = cfg.learning_rate;
    j["lr_decay"] = cfg.lr_decay;
    j["batch"] = cfg.batch_size;
    j["side"] = cfg.image_side;
    j["epochs"] = cfg.epochs;
    j["patience"] = cfg.early_stop_patience;
    j["seed"] = cfg.seed;
    if (o.arch == "rfc") j["trees"] = o.trees;
    return j;
}

int train_forest(const TrainOpts& o, const DatasetSplit& split, const ClassSet& classes,
                 const fs::path& out_dir) {
    ForestConfig cfg;
    cfg.tree_count = o.trees;
    cfg.seed = o.common.seed;
    const ForestModel model = forest_train(split.train, classes, cfg);
    save_forest(model, out_dir / "checkpoint.tsck");
    write_history_csv(TrainHistory{}, out_dir / "history.csv");

    if (!split.test.empty()) {
        std::vector<int> preds;
        for (const auto& s : split.test)
            preds.push_back(forest_predict(model, s.image).argmax_class);
        std::cout << "test balanced accuracy: "
                  << detail::supported_macro_recall(preds, truth_indices(split.test, classes),
                                                    classes.size())
                  << "\n";
    }
    return 0;
}

template <typename T>
int train_network(const TrainOpts& o, const TrainConfig& cfg, DatasetSplit& split,
                  const ClassSet& classes, const fs::path& out_dir) {
    const HeadActivation head = cfg.loss.kind == LossKind::BinaryCrossEntropy
                                    ? HeadActivation::Sigmoid
                                    : HeadActivation::Softmax;
    NetworkGraph<T> net = build_network<T>(o.arch, classes.size(), cfg.image_side, head, cfg.seed);
    const ClassStats stats = class_stats(split.train, classes);
    const TrainHistory history = train(net, split, stats, cfg);
    save_checkpoint(net, out_dir / "checkpoint.tsck");
    write_history_csv(history, out_dir / "history.csv");
    std::cout << "best epoch: " << history.best_epoch + 1 << " of " << history.stopped_epoch
              << "\n";
    std::cout << "test loss: " << history.test_loss[size_t(history.best_epoch)] << "\n";
    std::cout << "test balanced accuracy: "
              << history.balanced_accuracy[size_t(history.best_epoch)] << "\n";
    return 0;
}

int run_train(const TrainOpts& o, const CLI::App* cmd) {
    const TrainConfig cfg = assemble_train_config(o, cmd);
    const std::vector<LabeledSample> samples = load_dataset(o.data.manifest);
    const ClassSet& classes = pick_class_set(samples, o.data.class_set);
    DatasetSplit split =
        split_dataset(samples, o.data.holdout, o.data.split_seed.value_or(cfg.seed));
    if (o.augment > 0) augment_split(split, cfg.seed, o.augment);

    const fs::path out_dir = o.common.out;
    write_run_config(out_dir, "train", train_record(o, cfg));
    if (o.arch == "rfc") return train_forest(o, split, classes, out_dir);
    if (o.common.precision == "float") return train_network<float>(o, cfg, split, classes, out_dir);
    return train_network<double>(o, cfg, split, classes, out_dir);
}

// ---- evaluate ----------------------------------------------------------------

struct EvaluateOpts {
    CommonOpts common;
    DataOpts data;
    ModelOpts model;
};

json evaluate_record(const EvaluateOpts& o) {
    json j;
    j["manifest"] = o.data.manifest;
    j["out"] = o.common.out;
    j["checkpoint"] = o.model.checkpoint;
    j["ensemble"] = o.model.ensemble;
    j["split"] = o.data.split;
    j["holdout"] = o.data.holdout;
    j["split_seed"] = o.data.split_seed.value_or(o.common.seed);
    j["class_set"] = o.data.class_set;
    j["threshold"] = o.model.threshold;
    j["collapse_good_bad"] = o.model.collapse_good_bad;
    j["precision"] = o.common.precision;
    j["seed"] = o.common.seed;
    return j;
}

// Replaces the argmax decisions a report was built with. Curves and AUROC
// keep the scores; the confusion-derived numbers follow the new decisions.
void apply_decisions(MetricsReport& report, const std::vector<int>& decisions,
                     const std::vector<int>& truths) {
    const std::size_t C = report.class_names.size();
    report.confusion = confusion_matrix(decisions, truths, int(C));
    for (std::size_t c = 0; c < C; ++c) {
        auto& pc = report.per_class[c];
        long predicted = 0, support = 0;
        for (std::size_t t = 0; t < C; ++t) predicted += report.confusion[t][c];
        for (std::size_t p = 0; p <= C; ++p) support += report.confusion[c][p];
        pc.precision = predicted == 0 ? 1.0 : double(report.confusion[c][c]) / double(predicted);
        pc.recall = double(report.confusion[c][c]) / double(support);
    }
    report.balanced_accuracy = balanced_accuracy(report.confusion);
    report.macro_precision = macro_precision(report.confusion);
}

template <typename T>
int run_evaluate(const EvaluateOpts& o) {
    require_model(o.model);
    std::vector<LabeledSample> samples =
        select_split(load_dataset(o.data.manifest), o.data, o.common.seed);
    require(!samples.empty(), ErrorCode::EmptyTrainSet,
            "selected split '" + o.data.split + "' is empty");

    LoadedModel<T> model = load_model<T>(o.model);
    const ClassSet& classes = class_set_for_count(model.class_count(), o.data.class_set);
    std::vector<int> truths = truth_indices(samples, classes);

    std::vector<std::vector<double>> rows;
    std::vector<int> decisions;
    bool sigmoid_head = false;
    rows.reserve(samples.size());
    for (const auto& s : samples) {
        Scored scored = model.score(s.image);
        rows.push_back(std::move(scored.confidences));
        decisions.push_back(scored.decision);
        sigmoid_head = scored.sigmoid_head;
    }

    std::vector<std::string> names(classes.labels.size());
    for (std::size_t c = 0; c < names.size(); ++c) names[c] = classes.labels[c].name;
    if (o.model.collapse_good_bad) {
        const GoodBadMap map = GoodBadMap::from_class_set(classes);
        for (auto& row : rows) row = collapse_confidences(row, map, sigmoid_head);
        truths = collapse_labels(truths, map);
        decisions = collapse_labels(decisions, map);
        names = good_bad_names();
    }

    MetricsReport report = compute_metrics(rows, truths, names, 0.0);
    apply_decisions(report, decisions, truths);

    const fs::path out_dir = o.common.out;
    const auto written = emit_report(report, out_dir);
    write_run_config(out_dir, "evaluate", evaluate_record(o));
    std::cout << "AUROC: " << report.macro_auroc << "\n";
    std::cout << "balanced accuracy: " << report.balanced_accuracy << "\n";
    std::cout << "precision: " << report.macro_precision << "\n";
    for (const auto& p : written) std::cout << p.string() << "\n";
    return 0;
}

// ---- classify ------------------------------------------------------------------

struct ClassifyOpts {
    CommonOpts common;
    ModelOpts model;
    std::vector<std::string> images;
    std::string manifest;
    std::string class_set;
    bool normalize = false;
};

json classify_record(const ClassifyOpts& o) {
    json j;
    j["images"] = o.images;
    j["manifest"] = o.manifest;
    j["checkpoint"] = o.model.checkpoint;
    j["ensemble"] = o.model.ensemble;
    j["threshold"] = o.model.threshold;
    j["collapse_good_bad"] = o.model.collapse_good_bad;
    j["class_set"] = o.class_set;
    j["normalize"] = o.normalize;
    j["precision"] = o.common.precision;
    j["out"] = o.common.out;
    j["seed"] = o.common.seed;
    return j;
}

template <typename T>
int run_classify(const ClassifyOpts& o) {
    require_model(o.model);
    require(!o.images.empty() || !o.manifest.empty(), ErrorCode::BadConfig,
            "need --image or --manifest");

    std::vector<std::pair<std::string, ScanImage>> inputs;
    for (const auto& path : o.images) inputs.emplace_back(path, read_spmf(path));
    if (!o.manifest.empty()) {
        const fs::path base = fs::path(o.manifest).parent_path();
        for (const auto& e : read_manifest(o.manifest)) {
            const fs::path p = base / e.relative_path;
            inputs.emplace_back(p.string(), read_spmf(p));
        }
    }
    if (o.normalize)
        for (auto& [path, img] : inputs) img = normalize(img);

    LoadedModel<T> model = load_model<T>(o.model);
    const ClassSet& classes = class_set_for_count(model.class_count(), o.class_set);
    const GoodBadMap map = GoodBadMap::from_class_set(classes);

    for (auto& [path, img] : inputs) {
        Scored scored = model.score(img);
        int decision = scored.decision;
        std::vector<double> conf = scored.confidences;
        std::vector<std::string> names;
        if (o.model.collapse_good_bad) {
            decision = collapse_label(decision, map);
            conf = collapse_confidences(conf, map, scored.sigmoid_head);
            names = good_bad_names();
        } else {
            for (const auto& label : classes.labels) names.push_back(label.name);
        }
        const std::string label = decision == kAbstain ? "abstain" : names[size_t(decision)];
        const double shown =
            decision == kAbstain ? *std::max_element(conf.begin(), conf.end())
                                 : conf[size_t(decision)];
        std::cout << path << "\t" << label << "\t" << detail::exact_decimal(shown) << "\n";
    }
    write_run_config(o.common.out, "classify", classify_record(o));
    return 0;
}

// ---- plot ----------------------------------------------------------------------

struct PlotOpts {
    std::string report;
    std::string out;
};

std::vector<std::pair<double, double>> read_curve_csv(const fs::path& path) {
    std::ifstream is(path);
    require(is.good(), ErrorCode::IoError, "cannot open " + path.string());
    std::string line;
    std::getline(is, line);  // header
    std::vector<std::pair<double, double>> points;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto c1 = line.find(',');
        const auto c2 = line.find(',', c1 + 1);
        require(c1 != std::string::npos && c2 != std::string::npos, ErrorCode::CorruptFile,
                path.string() + ": expected three columns");
        char* end = nullptr;
        const double x = std::strtod(line.c_str() + c1 + 1, &end);
        const double y = std::strtod(line.c_str() + c2 + 1, &end);
        points.emplace_back(x, y);
    }
    require(!points.empty(), ErrorCode::CorruptFile, path.string() + ": no data rows");
    return points;
}

int run_plot(const PlotOpts& o) {
    const fs::path report_dir = o.report;
    require(fs::is_directory(report_dir), ErrorCode::IoError,
            "report directory " + report_dir.string() + " does not exist");
    const fs::path out_dir = o.out.empty() ? report_dir / "plots" : fs::path(o.out);

    std::map<std::string, std::vector<fs::path>> families;  // prefix -> sorted csv paths
    for (const auto& entry : fs::directory_iterator(report_dir)) {
        const std::string name = entry.path().filename().string();
        for (const std::string prefix : {"roc_", "pr_"})
            if (name.rfind(prefix, 0) == 0 && entry.path().extension() == ".csv")
                families[prefix].push_back(entry.path());
    }
    require(!families.empty(), ErrorCode::IoError,
            "no roc_*.csv or pr_*.csv files in " + report_dir.string());

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::vector<fs::path> written;
    for (auto& [prefix, paths] : families) {
        std::sort(paths.begin(), paths.end());
        std::vector<detail::SvgSeries> series;
        for (std::size_t i = 0; i < paths.size(); ++i) {
            const std::string stem = paths[i].stem().string();
            series.push_back(detail::SvgSeries{stem.substr(prefix.size()),
                                               detail::curve_color(i), read_curve_csv(paths[i])});
        }
        const bool roc = prefix == "roc_";
        const fs::path svg = out_dir / (roc ? "roc.svg" : "pr.svg");
        detail::write_svg_curves(svg,
                                 roc ? "Receiver operating characteristic" : "Precision vs recall",
                                 roc ? "False positive rate" : "Recall",
                                 roc ? "True positive rate" : "Precision", series);
        written.push_back(svg);
    }

    json record;
    record["report"] = o.report;
    record["out"] = out_dir.string();
    write_run_config(out_dir, "plot", record);
    for (const auto& p : written) std::cout << p.string() << "\n";
    return 0;
}

// ---- wiring ---------------------------------------------------------------------

void add_data(CLI::App* cmd, DataOpts& d, bool with_split_choice) {
    cmd->add_option("--manifest", d.manifest, "Dataset manifest (TSV)")->required();
    cmd->add_option("--holdout", d.holdout, "Images withheld from train/test")
        ->check(CLI::NonNegativeNumber)
        ->capture_default_str();
    cmd->add_option_function<std::uint64_t>(
        "--split-seed", [&d](std::uint64_t v) { d.split_seed = v; },
        "Shuffle seed for the split (defaults to --seed)");
    cmd->add_option("--class-set", d.class_set, "Class set id (si4 | si-binary | metal6)");
    if (with_split_choice)
        cmd->add_option("--split", d.split, "Which part of the split to score")
            ->check(CLI::IsMember({"train", "test", "holdout", "all"}))
            ->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Scanning-probe tip-state classification toolkit"};
    app.require_subcommand(1);

#ifdef _OPENMP
    if (const char* threads = std::getenv("TIPSTATE_THREADS")) {
        const int n = std::atoi(threads);
        if (n > 0) omp_set_num_threads(n);
    }
#endif

    GenerateOpts gen;
    auto* cmd_gen = app.add_subcommand("generate", "Render a labeled synthetic dataset");
    add_common(cmd_gen, gen.common, true);
    cmd_gen->add_option("--config", gen.config, "Dataset spec file");
    cmd_gen->add_option("--surface", gen.surface,
                        "Surface (SiH100 | Au111 | Cu111 | Synthetic)");
    cmd_gen->add_option("--class-set", gen.class_set,
                        "Class set for a uniform distribution (defaults by surface)");
    cmd_gen->add_option("--count", gen.count, "Total image count")->capture_default_str();
    cmd_gen->add_option("--side", gen.side, "Output image side")->capture_default_str();

    TrainOpts tr;
    auto* cmd_tr = app.add_subcommand("train", "Train a classifier and save a checkpoint");
    add_common(cmd_tr, tr.common, true);
    add_data(cmd_tr, tr.data, false);
    cmd_tr->add_option("--config", tr.common.config, "Training config file");
    cmd_tr->add_option("--arch", tr.arch, "Architecture")
        ->check(CLI::IsMember({"squeezenet", "vgg", "vgg-bn", "rw", "rfc"}))
        ->capture_default_str();
    cmd_tr->add_option("--optimizer", tr.optimizer, "Update rule")
        ->check(CLI::IsMember({"sgd", "adam", "rmsprop", "adadelta", "adagrad"}))
        ->capture_default_str();
    cmd_tr->add_option("--loss", tr.loss, "Loss")
        ->check(CLI::IsMember({"bce", "cce"}))
        ->capture_default_str();
    cmd_tr->add_option("--lr", tr.lr, "Learning rate")->capture_default_str();
    cmd_tr->add_option("--lr-decay", tr.lr_decay, "Per-epoch learning-rate decay")
        ->capture_default_str();
    cmd_tr->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
    cmd_tr->add_option("--side", tr.side, "Network input side")->capture_default_str();
    cmd_tr->add_option("--epochs", tr.epochs, "Training epochs")->capture_default_str();
    cmd_tr->add_option("--patience", tr.patience, "Early-stop patience (epochs)")
        ->capture_default_str();
    cmd_tr->add_option("--augment", tr.augment, "Augmented copies per image (0 = off)")
        ->capture_default_str();
    cmd_tr->add_option("--trees", tr.trees, "Tree count (rfc only)")->capture_default_str();

    EvaluateOpts ev;
    auto* cmd_ev = app.add_subcommand("evaluate", "Score a model and write a metrics report");
    add_common(cmd_ev, ev.common, true);
    add_data(cmd_ev, ev.data, true);
    add_model(cmd_ev, ev.model);

    ClassifyOpts cl;
    cl.common.out = ".";
    auto* cmd_cl = app.add_subcommand("classify", "Print class + confidence per image");
    add_common(cmd_cl, cl.common, false);
    add_model(cmd_cl, cl.model);
    cmd_cl->add_option("--image", cl.images, "Image file (.spmf); repeatable");
    cmd_cl->add_option("--manifest", cl.manifest, "Classify every image in this manifest");
    cmd_cl->add_option("--class-set", cl.class_set, "Class set id for label names");
    cmd_cl->add_flag("--normalize", cl.normalize, "Normalize raw inputs before scoring");

    PlotOpts pl;
    auto* cmd_pl = app.add_subcommand("plot", "Re-render SVG curves from report CSVs");
    cmd_pl->add_option("--report", pl.report, "Report directory with roc_*/pr_* CSVs")
        ->required();
    cmd_pl->add_option("--out", pl.out, "Output directory (default <report>/plots)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (cmd_gen->parsed()) return run_generate(gen, cmd_gen);
        if (cmd_tr->parsed()) return run_train(tr, cmd_tr);
        if (cmd_ev->parsed())
            return ev.common.precision == "float" ? run_evaluate<float>(ev)
                                                  : run_evaluate<double>(ev);
        if (cmd_cl->parsed())
            return cl.common.precision == "float" ? run_classify<float>(cl)
                                                  : run_classify<double>(cl);
        return run_plot(pl);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
