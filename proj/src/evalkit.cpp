#include "avibench/evalkit.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "avibench/common.hpp"

namespace avb {

long long ConfusionMatrix::row_sum(int t) const {
    long long s = 0;
    for (int p = 0; p < k; ++p) s += at(t, p);
    return s;
}

long long ConfusionMatrix::col_sum(int p) const {
    long long s = 0;
    for (int t = 0; t < k; ++t) s += at(t, p);
    return s;
}

long long ConfusionMatrix::total() const {
    return std::accumulate(counts.begin(), counts.end(), 0ll);
}

ConfusionMatrix confusion(const std::vector<int>& preds, const std::vector<int>& truth, int k) {
    if (preds.size() != truth.size())
        throw ValidationError("confusion: preds and truth length mismatch");
    ConfusionMatrix cm;
    cm.k = k;
    cm.counts.assign(static_cast<std::size_t>(k) * k, 0);
    for (std::size_t i = 0; i < preds.size(); ++i) {
        const int t = truth[i];
        const int p = preds[i];
        if (t < 0 || t >= k || p < 0 || p >= k)
            throw ValidationError("confusion: label index out of range at sample " +
                                  std::to_string(i));
        ++cm.at(t, p);
    }
    return cm;
}

F1Report f1_scores(const ConfusionMatrix& cm) {
    F1Report rep;
    rep.per_class.resize(cm.k);
    double macro_sum = 0.0;
    long long macro_n = 0;
    double weighted_sum = 0.0;
    long long support_total = 0;
    for (int c = 0; c < cm.k; ++c) {
        ClassMetrics& m = rep.per_class[c];
        const long long tp = cm.at(c, c);
        const long long col = cm.col_sum(c);
        const long long row = cm.row_sum(c);
        m.support = row;
        // 0/0 ratios are defined as 0 to keep metrics total
        m.precision = col > 0 ? static_cast<double>(tp) / col : 0.0;
        m.recall = row > 0 ? static_cast<double>(tp) / row : 0.0;
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
        if (m.support > 0) {
            macro_sum += m.f1;
            ++macro_n;
            weighted_sum += m.f1 * static_cast<double>(m.support);
            support_total += m.support;
        }
    }
    rep.macro_f1 = macro_n > 0 ? macro_sum / macro_n : 0.0;
    rep.weighted_f1 = support_total > 0 ? weighted_sum / support_total : 0.0;
    return rep;
}

RunAggregate aggregate_runs(const std::vector<RunCurve>& runs) {
    if (runs.empty()) throw ValidationError("aggregate_runs: no runs");
    RunAggregate agg;
    agg.max_f1 = runs[0].test_f1;
    agg.min_f1 = runs[0].test_f1;
    double sum = 0.0;
    std::size_t max_len = 0;
    for (const RunCurve& r : runs) {
        agg.max_f1 = std::max(agg.max_f1, r.test_f1);
        agg.min_f1 = std::min(agg.min_f1, r.test_f1);
        sum += r.test_f1;
        max_len = std::max(max_len, r.val_f1.size());
    }
    agg.avg_f1 = sum / static_cast<double>(runs.size());

    // epoch-wise median over the runs that reached each epoch
    agg.median_val_curve.resize(max_len);
    std::vector<double> vals;
    for (std::size_t e = 0; e < max_len; ++e) {
        vals.clear();
        for (const RunCurve& r : runs)
            if (e < r.val_f1.size()) vals.push_back(r.val_f1[e]);
        std::sort(vals.begin(), vals.end());
        const std::size_t n = vals.size();
        agg.median_val_curve[e] =
            n % 2 == 1 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    }

    // top-3 runs by best validation F1, ties broken by run index
    std::vector<int> order(runs.size());
    std::iota(order.begin(), order.end(), 0);
    auto best_val = [&runs](int i) {
        const auto& v = runs[static_cast<std::size_t>(i)].val_f1;
        return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
    };
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return best_val(a) > best_val(b); });
    order.resize(std::min<std::size_t>(3, order.size()));
    agg.top3 = order;
    return agg;
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& labels) {
    if (static_cast<int>(labels.size()) != cm.k)
        throw ValidationError("confusion_csv: label count does not match matrix size");
    std::ostringstream os;
    os << "true\\pred";
    for (const auto& l : labels) os << ',' << l;
    os << '\n';
    for (int t = 0; t < cm.k; ++t) {
        os << labels[static_cast<std::size_t>(t)];
        for (int p = 0; p < cm.k; ++p) os << ',' << cm.at(t, p);
        os << '\n';
    }
    return os.str();
}

namespace {

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string fmt3(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string pad(const std::string& s, std::size_t w) {
    std::string out = s;
    out.resize(std::max(w, s.size()), ' ');
    return out;
}

}  // namespace

std::string render_f1_table(const std::vector<ComparisonRow>& rows, bool with_reference) {
    if (rows.empty()) throw ValidationError("render_f1_table: no rows");
    std::size_t best = 0;
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].avg_f1 > rows[best].avg_f1) best = i;

    std::vector<std::vector<std::string>> cells;
    std::vector<std::string> header{""};
    if (with_reference) header.push_back("F1-score (reference)");
    header.insert(header.end(),
                  {"Max test_f1_score", "Avg test_f1_score", "Min test_f1_score"});
    cells.push_back(header);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const ComparisonRow& r = rows[i];
        std::vector<std::string> c{r.name};
        if (with_reference) c.push_back(r.reference ? fmt3(*r.reference) : "-");
        c.push_back(fmt4(r.max_f1));
        c.push_back(fmt4(r.avg_f1));
        c.push_back(fmt4(r.min_f1));
        if (i == best)
            for (auto& s : c) s = "**" + s + "**";
        cells.push_back(c);
    }

    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& row : cells)
        for (std::size_t j = 0; j < row.size(); ++j)
            width[j] = std::max(width[j], row[j].size());

    std::ostringstream os;
    for (const auto& row : cells) {
        os << '|';
        for (std::size_t j = 0; j < row.size(); ++j)
            os << ' ' << pad(row[j], width[j]) << " |";
        os << '\n';
    }
    return os.str();
}

}  // namespace avb
