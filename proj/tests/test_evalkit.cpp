#include <doctest.h>

#include <algorithm>

#include "avibench/common.hpp"
#include "avibench/evalkit.hpp"
#include "avibench/rng.hpp"

using namespace avb;

TEST_CASE("confusion: hand tally") {
    const auto cm = confusion({0, 1, 1, 1}, {0, 0, 1, 1}, 2);
    CHECK(cm.at(0, 0) == 1);
    CHECK(cm.at(0, 1) == 1);
    CHECK(cm.at(1, 0) == 0);
    CHECK(cm.at(1, 1) == 2);
    CHECK(cm.total() == 4);
}

TEST_CASE("confusion: perfect predictions give a diagonal matrix") {
    const std::vector<int> y{0, 1, 2, 2, 1, 0, 2};
    const auto cm = confusion(y, y, 3);
    for (int t = 0; t < 3; ++t)
        for (int p = 0; p < 3; ++p)
            CHECK(cm.at(t, p) == (t == p ? cm.row_sum(t) : 0));
    CHECK(f1_scores(cm).macro_f1 == doctest::Approx(1.0));
}

TEST_CASE("confusion: empty input and bad index") {
    const auto cm = confusion({}, {}, 3);
    CHECK(cm.total() == 0);
    CHECK_THROWS_AS(confusion({3}, {0}, 3), ValidationError);
}

TEST_CASE("f1_scores: worked two-class example") {
    const auto rep = f1_scores(confusion({0, 1, 1, 1}, {0, 0, 1, 1}, 2));
    CHECK(rep.per_class[0].f1 == doctest::Approx(2.0 / 3.0));
    CHECK(rep.per_class[1].f1 == doctest::Approx(0.8));
    CHECK(rep.macro_f1 == doctest::Approx((2.0 / 3.0 + 0.8) / 2.0));
}

TEST_CASE("f1_scores: zero-support class excluded from the macro mean") {
    ConfusionMatrix cm;
    cm.k = 3;
    cm.counts = {2, 0, 0, 0, 2, 0, 0, 0, 0};  // class 2 never occurs
    const auto rep = f1_scores(cm);
    CHECK(rep.macro_f1 == doctest::Approx(1.0));
    CHECK(rep.per_class[2].support == 0);
}

TEST_CASE("confusion + f1 match a brute-force per-sample tally") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        const int k = 2 + static_cast<int>(rng.uniform_int(9));
        const int n = 1 + static_cast<int>(rng.uniform_int(1000));
        std::vector<int> truth(static_cast<std::size_t>(n)), preds(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            truth[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k)));
            preds[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(k)));
        }
        const auto cm = confusion(preds, truth, k);
        const auto rep = f1_scores(cm);
        CHECK(cm.total() == n);
        // oracle: direct tp/fp/fn counting per class
        for (int c = 0; c < k; ++c) {
            long tp = 0, fp = 0, fn = 0;
            for (int i = 0; i < n; ++i) {
                const bool t = truth[static_cast<std::size_t>(i)] == c;
                const bool p = preds[static_cast<std::size_t>(i)] == c;
                tp += t && p;
                fp += !t && p;
                fn += t && !p;
            }
            const double prec = tp + fp > 0 ? double(tp) / double(tp + fp) : 0.0;
            const double rec = tp + fn > 0 ? double(tp) / double(tp + fn) : 0.0;
            CHECK(rep.per_class[static_cast<std::size_t>(c)].precision == doctest::Approx(prec).epsilon(1e-12));
            CHECK(rep.per_class[static_cast<std::size_t>(c)].recall == doctest::Approx(rec).epsilon(1e-12));
        }
    }
}

TEST_CASE("aggregate_runs: basics") {
    SUBCASE("single run") {
        const auto agg = aggregate_runs({{{0.1, 0.5}, 0.42}});
        CHECK(agg.max_f1 == 0.42);
        CHECK(agg.avg_f1 == 0.42);
        CHECK(agg.min_f1 == 0.42);
    }
    SUBCASE("three runs") {
        const auto agg = aggregate_runs({{{0.1}, 0.2}, {{0.2}, 0.4}, {{0.9}, 0.9}});
        CHECK(agg.max_f1 == doctest::Approx(0.9));
        CHECK(agg.avg_f1 == doctest::Approx(0.5));
        CHECK(agg.min_f1 == doctest::Approx(0.2));
        CHECK(agg.top3 == std::vector<int>{2, 1, 0});
    }
}

TEST_CASE("aggregate_runs: median curve stays inside the run envelope") {
    Rng rng(7);
    std::vector<RunCurve> runs(5);
    for (auto& r : runs) {
        const int len = 3 + static_cast<int>(rng.uniform_int(5));
        for (int e = 0; e < len; ++e) r.val_f1.push_back(rng.uniform());
        r.test_f1 = rng.uniform();
    }
    const auto agg = aggregate_runs(runs);
    CHECK(agg.min_f1 <= agg.avg_f1);
    CHECK(agg.avg_f1 <= agg.max_f1);
    for (std::size_t e = 0; e < agg.median_val_curve.size(); ++e) {
        double lo = 1.0, hi = 0.0;
        for (const auto& r : runs)
            if (e < r.val_f1.size()) {
                lo = std::min(lo, r.val_f1[e]);
                hi = std::max(hi, r.val_f1[e]);
            }
        CHECK(agg.median_val_curve[e] >= lo);
        CHECK(agg.median_val_curve[e] <= hi);
    }
}

TEST_CASE("confusion_csv layout") {
    const auto cm = confusion({0, 1}, {0, 1}, 2);
    const std::string csv = confusion_csv(cm, {"a", "b"});
    CHECK(csv == "true\\pred,a,b\na,1,0\nb,0,1\n");
}

TEST_CASE("render_f1_table: stable row order, best row bolded") {
    const std::vector<ComparisonRow> rows{
        {"alpha", 0.5, 0.4, 0.3, std::nullopt},
        {"beta", 0.9, 0.8, 0.7, std::nullopt},
    };
    const std::string t = render_f1_table(rows, false);
    CHECK(t.find("alpha") < t.find("beta"));
    CHECK(t.find("**beta**") != std::string::npos);
    CHECK(t.find("0.8000") != std::string::npos);
    CHECK_THROWS_AS(render_f1_table({}, false), ValidationError);
}
