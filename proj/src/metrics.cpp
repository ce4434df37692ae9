#include "ceam/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <numeric>

namespace ceam {

namespace {

void check_sizes(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
}

std::size_t count_pos(std::span<const int> labels) {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
}

// Cumulative (tp, fp) at every distinct score, scores descending.
struct Cut {
    double threshold;
    std::size_t tp;
    std::size_t fp;
};

std::vector<Cut> cuts(std::span<const double> scores, std::span<const int> labels) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
    std::vector<Cut> out;
    std::size_t tp = 0;
    std::size_t fp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
        (labels[order[k]] == 1 ? tp : fp)++;
        if (k + 1 == order.size() || scores[order[k + 1]] != scores[order[k]]) {
            out.push_back({scores[order[k]], tp, fp});
        }
    }
    return out;
}

double f1(double tp, double fp, double fn) {
    double denom = 2 * tp + fp + fn;
    return denom == 0 ? 0.0 : 2 * tp / denom;
}

std::string num(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels) {
    check_sizes(scores, labels);
    auto pos = static_cast<double>(count_pos(labels));
    if (pos == 0) throw UndefinedMetric("precision-recall curve needs at least one positive");
    std::vector<CurvePoint> out;
    for (const auto& c : cuts(scores, labels)) {
        auto tp = static_cast<double>(c.tp);
        out.push_back({c.threshold, tp / static_cast<double>(c.tp + c.fp), tp / pos});
    }
    return out;
}

ThresholdedValue precision_at_recall(std::span<const double> scores, std::span<const int> labels,
                                     double target_recall) {
    auto curve = pr_curve(scores, labels);
    ThresholdedValue best{-1.0, 0.0};
    for (const auto& p : curve) {
        if (p.recall >= target_recall && p.precision > best.value) best = {p.precision, p.threshold};
    }
    return best;
}

double macro_f1(std::span<const double> scores, std::span<const int> labels, double threshold) {
    check_sizes(scores, labels);
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t k = 0; k < scores.size(); ++k) {
        bool pred = scores[k] >= threshold;
        bool pos = labels[k] == 1;
        if (pred && pos) ++tp;
        else if (pred) ++fp;
        else if (pos) ++fn;
        else ++tn;
    }
    return 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));
}

F1Selection f1_select_threshold(std::span<const double> val_scores, std::span<const int> val_labels,
                                std::span<const double> test_scores, std::span<const int> test_labels) {
    check_sizes(val_scores, val_labels);
    auto pos = count_pos(val_labels);
    if (pos == 0 || pos == val_labels.size()) {
        throw UndefinedMetric("threshold selection needs both classes in the validation split");
    }
    auto n = static_cast<double>(val_labels.size());
    auto p = static_cast<double>(pos);
    // +inf predicts everything negative
    double best_t = std::numeric_limits<double>::infinity();
    double best_f1 = 0.5 * (0.0 + f1(n - p, p, 0));
    for (const auto& c : cuts(val_scores, val_labels)) {
        auto tp = static_cast<double>(c.tp);
        auto fp = static_cast<double>(c.fp);
        double fn = p - tp;
        double tn = n - p - fp;
        double m = 0.5 * (f1(tp, fp, fn) + f1(tn, fn, fp));
        if (m > best_f1) {
            best_f1 = m;
            best_t = c.threshold;
        }
    }
    return {macro_f1(test_scores, test_labels, best_t), best_t, best_f1};
}

double prauc(std::span<const double> scores, std::span<const int> labels) {
    auto curve = pr_curve(scores, labels);
    double area = 0;
    double prev_r = 0;
    double prev_p = curve.front().precision;
    for (const auto& c : curve) {
        area += (c.recall - prev_r) * (c.precision + prev_p) / 2;
        prev_r = c.recall;
        prev_p = c.precision;
    }
    return area;
}

EvalReport evaluate(std::span<const double> val_scores, std::span<const int> val_labels,
                    std::span<const double> test_scores, std::span<const int> test_labels) {
    EvalReport r;
    auto par = precision_at_recall(test_scores, test_labels, 0.95);
    r.precision_at_recall95 = par.value;
    r.p_at_r_threshold = par.threshold;
    auto sel = f1_select_threshold(val_scores, val_labels, test_scores, test_labels);
    r.f1 = sel.f1;
    r.selected_threshold = sel.threshold;
    r.validation_f1 = sel.validation_f1;
    r.prauc = prauc(test_scores, test_labels);
    r.curve = pr_curve(test_scores, test_labels);
    r.n_pos = count_pos(test_labels);
    r.n_neg = test_labels.size() - r.n_pos;
    return r;
}

std::string format_report(const EvalReport& r) {
    std::string out;
    auto line = [&](const char* k, const std::string& v) { out += std::string(k) + "=" + v + "\n"; };
    line("precision_at_recall95", num(r.precision_at_recall95));
    line("precision_at_recall95_threshold", num(r.p_at_r_threshold));
    line("f1", num(r.f1));
    line("selected_threshold", num(r.selected_threshold));
    line("validation_f1", num(r.validation_f1));
    line("prauc", num(r.prauc));
    line("prauc_method", r.prauc_method);
    line("n_pos", std::to_string(r.n_pos));
    line("n_neg", std::to_string(r.n_neg));
    return out;
}

std::string format_curve(std::span<const CurvePoint> curve) {
    std::string out = "threshold\tprecision\trecall\n";
    for (const auto& c : curve) out += num(c.threshold) + "\t" + num(c.precision) + "\t" + num(c.recall) + "\n";
    return out;
}

}  // namespace ceam
