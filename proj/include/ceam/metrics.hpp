#pragma once
// Precision@Recall, macro-F1 with a validation-selected threshold, PRAUC.
// A threshold t predicts positive for every score >= t; candidate
// thresholds are the observed scores (plus +inf for F1 selection).

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ceam {

class UndefinedMetric : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CurvePoint {
    double threshold;
    double precision;
    double recall;
};

// One point per distinct score, thresholds descending (recall non-decreasing).
std::vector<CurvePoint> pr_curve(std::span<const double> scores, std::span<const int> labels);

struct ThresholdedValue {
    double value;
    double threshold;
};

// Max precision among thresholds with recall >= target; ties -> larger threshold.
ThresholdedValue precision_at_recall(std::span<const double> scores, std::span<const int> labels,
                                     double target_recall = 0.95);

// Unweighted mean of the positive- and negative-class F1 (0/0 counts as 0).
double macro_f1(std::span<const double> scores, std::span<const int> labels, double threshold);

struct F1Selection {
    double f1;              // on the test split
    double threshold;       // chosen on validation
    double validation_f1;
};
F1Selection f1_select_threshold(std::span<const double> val_scores, std::span<const int> val_labels,
                                std::span<const double> test_scores, std::span<const int> test_labels);

// Trapezoidal area over recall with a leading (0, first precision) anchor.
double prauc(std::span<const double> scores, std::span<const int> labels);

struct EvalReport {
    double precision_at_recall95 = 0;
    double p_at_r_threshold = 0;
    double f1 = 0;
    double selected_threshold = 0;
    double validation_f1 = 0;
    double prauc = 0;
    std::vector<CurvePoint> curve;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;
    std::string prauc_method = "trapezoid-recall-anchored";
};

EvalReport evaluate(std::span<const double> val_scores, std::span<const int> val_labels,
                    std::span<const double> test_scores, std::span<const int> test_labels);

// key=value lines with round-trippable numbers.
std::string format_report(const EvalReport& report);
// threshold\tprecision\trecall rows, thresholds descending.
std::string format_curve(std::span<const CurvePoint> curve);

}  // namespace ceam
