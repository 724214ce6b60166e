#pragma once

#include <optional>
#include <string>
#include <vector>

namespace avb {

// Raw-count confusion matrix, rows = true class, columns = predicted.
struct ConfusionMatrix {
    int k = 0;
    std::vector<long long> counts;  // k*k, row-major

    long long at(int t, int p) const { return counts[static_cast<std::size_t>(t) * k + p]; }
    long long& at(int t, int p) { return counts[static_cast<std::size_t>(t) * k + p]; }
    long long row_sum(int t) const;
    long long col_sum(int p) const;
    long long total() const;
};

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& truth, int k);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    long long support = 0;
};

struct F1Report {
    std::vector<ClassMetrics> per_class;
    double macro_f1 = 0.0;     // unweighted mean over classes with support > 0
    double weighted_f1 = 0.0;  // support-weighted mean, emitted for transparency
};

F1Report f1_scores(const ConfusionMatrix& cm);

// One training run as seen by the reporter: its per-epoch validation F1
// curve (possibly early-stopped short) and its final test macro-F1.
struct RunCurve {
    std::vector<double> val_f1;
    double test_f1 = 0.0;
};

struct RunAggregate {
    double max_f1 = 0.0;
    double avg_f1 = 0.0;
    double min_f1 = 0.0;
    std::vector<double> median_val_curve;  // epoch-wise median over runs reaching that epoch
    std::vector<int> top3;                 // run indices ranked by best validation F1
};

RunAggregate aggregate_runs(const std::vector<RunCurve>& runs);

// CSV with a header row/column of class names and integer cells.
std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& labels);

struct ComparisonRow {
    std::string name;
    double max_f1 = 0.0;
    double avg_f1 = 0.0;
    double min_f1 = 0.0;
    std::optional<double> reference;  // external F1 column, when available
};

// Plain-text max/avg/min table; the best row (by avg) is bolded.
// with_reference adds the external-result column.
std::string render_f1_table(const std::vector<ComparisonRow>& rows, bool with_reference);

}  // namespace avb
