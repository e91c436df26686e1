// Classification metrics: confusion matrices with an abstention column,
// one-vs-rest ROC / PR curves, trapezoid AUROC, balanced accuracy (macro
// recall), and macro precision, plus CSV/SVG report emission.
//
// Conventions, applied consistently everywhere:
//   - an abstained prediction lands in a dedicated confusion column that is
//     excluded from precision denominators but still counts against recall
//     (an abstention is a false negative for the true class);
//   - precision with zero predicted positives is defined as 1;
//   - ROC curves include the (0,0) and (1,1) endpoints, PR curves only the
//     distinct-score thresholds.
#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "tipstate/common.hpp"

namespace tipstate {

// Prediction value meaning "confidence below threshold, no class assigned".
constexpr int kAbstain = -1;

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct PrPoint {
    double threshold = 0.0;
    double recall = 0.0;
    double precision = 0.0;
};

struct PerClassMetrics {
    std::vector<RocPoint> roc_points;
    double auroc = 0.0;
    std::vector<PrPoint> pr_points;
    double precision = 0.0;
    double recall = 0.0;
};

struct MetricsReport {
    std::vector<std::string> class_names;
    // class_count rows, class_count + 1 columns; last column = abstentions.
    std::vector<std::vector<long>> confusion;
    std::vector<PerClassMetrics> per_class;
    double balanced_accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_auroc = 0.0;
};

// Argmax decision with a confidence gate: below-threshold maxima abstain.
// Equal maxima resolve to the lowest class index.
inline int argmax_or_abstain(const std::vector<double>& confidences, double threshold) {
    require(!confidences.empty(), ErrorCode::ShapeMismatch, "empty confidence vector");
    std::size_t best = 0;
    for (std::size_t c = 1; c < confidences.size(); ++c)
        if (confidences[c] > confidences[best]) best = c;
    return confidences[best] >= threshold ? static_cast<int>(best) : kAbstain;
}

inline std::vector<std::vector<long>> confusion_matrix(const std::vector<int>& preds,
                                                       const std::vector<int>& truths,
                                                       int class_count) {
    require(preds.size() == truths.size(), ErrorCode::LengthMismatch,
            "prediction/truth length mismatch");
    require(class_count >= 1, ErrorCode::BadConfig, "need at least one class");
    std::vector<std::vector<long>> m(static_cast<std::size_t>(class_count),
                                     std::vector<long>(static_cast<std::size_t>(class_count) + 1,
                                                       0));
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int t = truths[i];
        const int p = preds[i];
        require(t >= 0 && t < class_count, ErrorCode::LabelOutOfRange, "truth label out of range");
        require(p == kAbstain || (p >= 0 && p < class_count), ErrorCode::LabelOutOfRange,
                "predicted label out of range");
        const std::size_t col = (p == kAbstain) ? static_cast<std::size_t>(class_count)
                                                : static_cast<std::size_t>(p);
        ++m[static_cast<std::size_t>(t)][col];
    }
    return m;
}

// TPR/FPR swept over every distinct score, highest threshold first.
inline std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                       const std::vector<int>& truths) {
    require(scores.size() == truths.size(), ErrorCode::LengthMismatch,
            "score/truth length mismatch");
    long pos = 0, neg = 0;
    for (int t : truths) {
        require(t == 0 || t == 1, ErrorCode::LabelOutOfRange, "roc truths must be 0/1");
        (t == 1 ? pos : neg) += 1;
    }
    require(pos > 0 && neg > 0, ErrorCode::DegenerateLabels,
            "roc needs at least one positive and one negative");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<RocPoint> points;
    points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    long tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        // Group ties: one threshold step per distinct score.
        while (i < order.size() && scores[order[i]] == s) {
            (truths[order[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        points.push_back({s, double(fp) / double(neg), double(tp) / double(pos)});
    }
    return points;  // last point is (1,1) by construction
}

// Trapezoid rule over the swept points.
inline double auroc(const std::vector<RocPoint>& points) {
    require(points.size() >= 2, ErrorCode::BadConfig, "auroc needs at least two points");
    double area = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i)
        area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) / 2.0;
    return area;
}

// (recall, precision) at every distinct score threshold, highest first.
inline std::vector<PrPoint> pr_curve(const std::vector<double>& scores,
                                     const std::vector<int>& truths) {
    require(scores.size() == truths.size(), ErrorCode::LengthMismatch,
            "score/truth length mismatch");
    long pos = 0;
    for (int t : truths) {
        require(t == 0 || t == 1, ErrorCode::LabelOutOfRange, "pr truths must be 0/1");
        if (t == 1) ++pos;
    }
    require(pos > 0, ErrorCode::NoPositives, "pr needs at least one positive");

    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<PrPoint> points;
    long tp = 0, predicted = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double s = scores[order[i]];
        while (i < order.size() && scores[order[i]] == s) {
            if (truths[order[i]] == 1) ++tp;
            ++predicted;
            ++i;
        }
        const double precision = predicted == 0 ? 1.0 : double(tp) / double(predicted);
        points.push_back({s, double(tp) / double(pos), precision});
    }
    return points;
}

namespace detail {

inline long row_sum(const std::vector<long>& row) {
    long s = 0;
    for (long v : row) s += v;
    return s;
}

}  // namespace detail

// Macro recall. Row sums include the abstention column, so abstaining on a
// class costs recall exactly like a misclassification.
inline double balanced_accuracy(const std::vector<std::vector<long>>& confusion) {
    require(!confusion.empty(), ErrorCode::BadConfig, "empty confusion matrix");
    double total = 0.0;
    for (std::size_t c = 0; c < confusion.size(); ++c) {
        const long support = detail::row_sum(confusion[c]);
        require(support > 0, ErrorCode::EmptyClassSupport,
                "class " + std::to_string(c) + " has no support");
        total += double(confusion[c][c]) / double(support);
    }
    return total / double(confusion.size());
}

// Unweighted mean of per-class precision over the prediction columns only;
// a class nobody predicted contributes precision 1.
inline double macro_precision(const std::vector<std::vector<long>>& confusion) {
    require(!confusion.empty(), ErrorCode::BadConfig, "empty confusion matrix");
    const std::size_t C = confusion.size();
    double total = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        long predicted = 0;
        for (std::size_t t = 0; t < C; ++t) predicted += confusion[t][c];
        total += predicted == 0 ? 1.0 : double(confusion[c][c]) / double(predicted);
    }
    return total / double(C);
}

// Full report over per-sample class confidences. One-vs-rest curves per
// class; thresholded argmax decisions feed the confusion matrix.
inline MetricsReport compute_metrics(const std::vector<std::vector<double>>& confidences,
                                     const std::vector<int>& truths,
                                     const std::vector<std::string>& class_names,
                                     double decision_threshold = 0.0) {
    require(confidences.size() == truths.size(), ErrorCode::LengthMismatch,
            "confidences/truth length mismatch");
    require(!class_names.empty(), ErrorCode::BadConfig, "need class names");
    require(!confidences.empty(), ErrorCode::LengthMismatch, "no samples");
    const std::size_t C = class_names.size();
    for (const auto& row : confidences)
        require(row.size() == C, ErrorCode::ShapeMismatch,
                "confidence vector width != class count");

    MetricsReport report;
    report.class_names = class_names;

    std::vector<int> preds(confidences.size());
    for (std::size_t i = 0; i < confidences.size(); ++i)
        preds[i] = argmax_or_abstain(confidences[i], decision_threshold);
    report.confusion = confusion_matrix(preds, truths, static_cast<int>(C));

    report.per_class.resize(C);
    double auroc_sum = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
        std::vector<double> scores(confidences.size());
        std::vector<int> binary(confidences.size());
        for (std::size_t i = 0; i < confidences.size(); ++i) {
            scores[i] = confidences[i][c];
            binary[i] = truths[i] == static_cast<int>(c) ? 1 : 0;
        }
        auto& pc = report.per_class[c];
        pc.roc_points = roc_curve(scores, binary);
        pc.auroc = auroc(pc.roc_points);
        pc.pr_points = pr_curve(scores, binary);
        long predicted = 0;
        for (std::size_t t = 0; t < C; ++t) predicted += report.confusion[t][c];
        pc.precision = predicted == 0 ? 1.0 : double(report.confusion[c][c]) / double(predicted);
        pc.recall = double(report.confusion[c][c]) / double(detail::row_sum(report.confusion[c]));
        auroc_sum += pc.auroc;
    }
    report.balanced_accuracy = balanced_accuracy(report.confusion);
    report.macro_precision = macro_precision(report.confusion);
    report.macro_auroc = auroc_sum / double(C);
    return report;
}

namespace detail {

// Shortest decimal form that round-trips a double exactly.
inline std::string exact_decimal(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v,
                                   std::chars_format::general,
                                   std::numeric_limits<double>::max_digits10);
    return std::string(buf, res.ptr);
}

struct SvgSeries {
    std::string name;
    std::string color;
    std::vector<std::pair<double, double>> points;  // (x, y) in [0,1]
};

// Minimal standalone SVG: unit-square axes with a polyline per series.
inline void write_svg_curves(const std::filesystem::path& path, const std::string& title,
                             const std::string& xlabel, const std::string& ylabel,
                             const std::vector<SvgSeries>& series) {
    std::ofstream os(path);
    require(os.good(), ErrorCode::IoError, "cannot write " + path.string());
    const double W = 640, H = 520, ml = 70, mr = 180, mt = 50, mb = 60;
    const double pw = W - ml - mr, ph = H - mt - mb;
    auto px = [&](double x) { return ml + x * pw; };
    auto py = [&](double y) { return mt + (1.0 - y) * ph; };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"28\" text-anchor=\"middle\" font-size=\"18\">"
       << title << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double f = i / 4.0;
        os << "<line x1=\"" << px(f) << "\" y1=\"" << py(0) << "\" x2=\"" << px(f) << "\" y2=\""
           << py(1) << "\" stroke=\"#dddddd\"/>\n";
        os << "<line x1=\"" << px(0) << "\" y1=\"" << py(f) << "\" x2=\"" << px(1) << "\" y2=\""
           << py(f) << "\" stroke=\"#dddddd\"/>\n";
        char lab[16];
        std::snprintf(lab, sizeof(lab), "%.2f", f);
        os << "<text x=\"" << px(f) << "\" y=\"" << py(0) + 20
           << "\" text-anchor=\"middle\" font-size=\"12\">" << lab << "</text>\n";
        os << "<text x=\"" << px(0) - 8 << "\" y=\"" << py(f) + 4
           << "\" text-anchor=\"end\" font-size=\"12\">" << lab << "</text>\n";
    }
    os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 16
       << "\" text-anchor=\"middle\" font-size=\"14\">" << xlabel << "</text>\n";
    os << "<text x=\"20\" y=\"" << mt + ph / 2
       << "\" text-anchor=\"middle\" font-size=\"14\" transform=\"rotate(-90 20 " << mt + ph / 2
       << ")\">" << ylabel << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << series[s].color
           << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : series[s].points) os << px(x) << "," << py(y) << " ";
        os << "\"/>\n";
        const double ly = mt + 20 + 18 * double(s);
        os << "<line x1=\"" << W - mr + 12 << "\" y1=\"" << ly << "\" x2=\"" << W - mr + 34
           << "\" y2=\"" << ly << "\" stroke=\"" << series[s].color
           << "\" stroke-width=\"1.5\"/>\n";
        os << "<text x=\"" << W - mr + 40 << "\" y=\"" << ly + 4 << "\" font-size=\"12\">"
           << series[s].name << "</text>\n";
    }
    os << "</svg>\n";
    require(os.good(), ErrorCode::IoError, "write failed for " + path.string());
}

inline const char* curve_color(std::size_t i) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    return palette[i % (sizeof(palette) / sizeof(palette[0]))];
}

}  // namespace detail

// One CSV per curve, one SVG per curve family, one fixed-width summary.
// CSV values use round-trip decimal form, so re-parsing is bit-exact.
inline std::vector<std::filesystem::path> emit_report(const MetricsReport& report,
                                                      const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    require(std::filesystem::is_directory(out_dir), ErrorCode::IoError,
            "cannot create " + out_dir.string());
    std::vector<std::filesystem::path> written;

    std::vector<detail::SvgSeries> roc_series, pr_series;
    for (std::size_t c = 0; c < report.class_names.size(); ++c) {
        const auto& pc = report.per_class[c];
        const std::string& name = report.class_names[c];

        const auto roc_path = out_dir / ("roc_" + name + ".csv");
        {
            std::ofstream os(roc_path);
            require(os.good(), ErrorCode::IoError, "cannot write " + roc_path.string());
            os << "threshold,fpr,tpr\n";
            for (const auto& p : pc.roc_points)
                os << detail::exact_decimal(p.threshold) << "," << detail::exact_decimal(p.fpr)
                   << "," << detail::exact_decimal(p.tpr) << "\n";
        }
        written.push_back(roc_path);

        const auto pr_path = out_dir / ("pr_" + name + ".csv");
        {
            std::ofstream os(pr_path);
            require(os.good(), ErrorCode::IoError, "cannot write " + pr_path.string());
            os << "threshold,recall,precision\n";
            for (const auto& p : pc.pr_points)
                os << detail::exact_decimal(p.threshold) << "," << detail::exact_decimal(p.recall)
                   << "," << detail::exact_decimal(p.precision) << "\n";
        }
        written.push_back(pr_path);

        char tag[160];
        std::snprintf(tag, sizeof(tag), "%s (AUC %.3f)", name.c_str(), pc.auroc);
        detail::SvgSeries rs{tag, detail::curve_color(c), {}};
        for (const auto& p : pc.roc_points) rs.points.push_back({p.fpr, p.tpr});
        roc_series.push_back(std::move(rs));
        detail::SvgSeries ps{name, detail::curve_color(c), {}};
        for (const auto& p : pc.pr_points) ps.points.push_back({p.recall, p.precision});
        pr_series.push_back(std::move(ps));
    }

    const auto roc_svg = out_dir / "roc.svg";
    detail::write_svg_curves(roc_svg, "Receiver operating characteristic", "False positive rate",
                             "True positive rate", roc_series);
    written.push_back(roc_svg);
    const auto pr_svg = out_dir / "pr.svg";
    detail::write_svg_curves(pr_svg, "Precision vs recall", "Recall", "Precision", pr_series);
    written.push_back(pr_svg);

    const auto summary = out_dir / "summary.txt";
    {
        std::ofstream os(summary);
        require(os.good(), ErrorCode::IoError, "cannot write " + summary.string());
        char line[160];
        std::snprintf(line, sizeof(line), "%-12s %10s\n", "metric", "value");
        os << line;
        std::snprintf(line, sizeof(line), "%-12s %10.4f\n", "AUROC", report.macro_auroc);
        os << line;
        std::snprintf(line, sizeof(line), "%-12s %10.4f\n", "Bal. Acc.", report.balanced_accuracy);
        os << line;
        std::snprintf(line, sizeof(line), "%-12s %10.4f\n", "Precision", report.macro_precision);
        os << line;
        os << "\nper-class AUROC\n";
        for (std::size_t c = 0; c < report.class_names.size(); ++c) {
            std::snprintf(line, sizeof(line), "%-24s %10.4f\n", report.class_names[c].c_str(),
                          report.per_class[c].auroc);
            os << line;
        }
        require(os.good(), ErrorCode::IoError, "write failed for " + summary.string());
    }
    written.push_back(summary);
    return written;
}

}  // namespace tipstate
