#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "avibench/common.hpp"
#include "avibench/rng.hpp"
#include "avibench/splitkit.hpp"
#include "test_util.hpp"

using namespace avb;

namespace {

// one clip per session, n_cuts = size
Manifest sized_manifest(const std::map<std::string, std::vector<int>>& class_sessions) {
    std::vector<SessionRecord> sessions;
    for (const auto& [label, sizes] : class_sessions)
        for (std::size_t i = 0; i < sizes.size(); ++i) {
            SessionRecord s;
            s.session_id = label + "_s" + std::to_string(i);
            s.class_label = label;
            s.clips.push_back({s.session_id + ".wav", static_cast<double>(sizes[i]), sizes[i]});
            sessions.push_back(std::move(s));
        }
    return make_manifest(std::move(sessions));
}

std::map<SplitSet, long> class_set_counts(const SplitAssignment& a, const Manifest& m,
                                          const std::string& label) {
    std::map<SplitSet, long> out{{SplitSet::train, 0}, {SplitSet::validation, 0},
                                 {SplitSet::test, 0}};
    for (const SessionRecord& s : m.sessions)
        if (s.class_label == label) out[a.assignment.at(s.session_id)] += s.sample_count;
    return out;
}

}  // namespace

TEST_CASE("split: greedy trace on session sizes [5,3,2]") {
    // need a second class so the manifest validates; give it a balanced shape
    const Manifest m = sized_manifest({{"a", {5, 3, 2}}, {"b", {7, 2, 1}}});
    const SplitAssignment a = stratified_session_split(m);
    CHECK(a.assignment.at("a_s0") == SplitSet::train);       // 5
    CHECK(a.assignment.at("a_s1") == SplitSet::train);       // 3 (5 < 7 target)
    CHECK(a.assignment.at("a_s2") == SplitSet::validation);  // 2
    const auto counts = class_set_counts(a, m, "a");
    CHECK(counts.at(SplitSet::train) == 8);
    CHECK(counts.at(SplitSet::validation) == 2);
    CHECK(counts.at(SplitSet::test) == 0);

    const SplitReport rep = split_report(a, m);
    for (const SplitReportRow& r : rep.rows)
        if (r.class_label == "a") {
            if (r.set == SplitSet::train) CHECK(r.percent == doctest::Approx(80.0));
            if (r.set == SplitSet::validation) CHECK(r.percent == doctest::Approx(20.0));
            if (r.set == SplitSet::test) CHECK(r.percent == doctest::Approx(0.0));
        }
    CHECK(rep.train_fraction_deviation.at("a") == doctest::Approx(0.1));
}

TEST_CASE("split: exact divisibility with ten unit sessions") {
    const Manifest m = sized_manifest({{"a", std::vector<int>(10, 1)},
                                       {"b", std::vector<int>(10, 1)}});
    const SplitAssignment a = stratified_session_split(m);
    const auto counts = class_set_counts(a, m, "a");
    CHECK(counts.at(SplitSet::train) == 7);
    CHECK(counts.at(SplitSet::validation) == 2);
    CHECK(counts.at(SplitSet::test) == 1);
    const SplitReport rep = split_report(a, m);
    CHECK(rep.set_totals[0] == 14);
    CHECK(rep.set_totals[1] == 4);
    CHECK(rep.set_totals[2] == 2);
}

TEST_CASE("split: ties broken by session_id, single-session class warns") {
    // sizes [4,1,1,1,1,1,1,1], total 11: train fills to 8 (target 7.7),
    // so among the tied unit sessions the lexicographically first four go
    // to train and the rest spill into validation.
    const Manifest m = sized_manifest({{"a", {4, 1, 1, 1, 1, 1, 1, 1}}, {"solo", {9}}});
    const SplitAssignment a = stratified_session_split(m);
    CHECK(a.assignment.at("a_s0") == SplitSet::train);
    for (int i = 1; i <= 4; ++i)
        CHECK(a.assignment.at("a_s" + std::to_string(i)) == SplitSet::train);
    CHECK(a.assignment.at("a_s5") == SplitSet::validation);
    REQUIRE(a.warnings.size() == 1);
    CHECK(a.warnings[0].find("solo") != std::string::npos);
}

TEST_CASE("split: properties over random manifests") {
    Rng rng(23);
    for (int t = 0; t < 40; ++t) {
        std::map<std::string, std::vector<int>> spec;
        const int k = 2 + static_cast<int>(rng.uniform_int(4));
        for (int c = 0; c < k; ++c) {
            std::vector<int> sizes(1 + rng.uniform_int(8));
            int largest = 0;
            for (int& s : sizes) {
                s = 1 + static_cast<int>(rng.uniform_int(9));
                largest = std::max(largest, s);
            }
            spec["c" + std::to_string(c)] = std::move(sizes);
        }
        const Manifest m = sized_manifest(spec);
        const SplitAssignment a = stratified_session_split(m);
        const SplitAssignment a2 = stratified_session_split(m);
        CHECK(a.assignment == a2.assignment);  // deterministic
        CHECK(a.assignment.size() == m.sessions.size());  // every session in exactly one set

        long total = 0;
        for (const auto& [label, sizes] : spec) {
            const auto counts = class_set_counts(a, m, label);
            long class_total = 0, largest = 0;
            for (int s : sizes) {
                class_total += s;
                largest = std::max<long>(largest, s);
            }
            CHECK(counts.at(SplitSet::train) + counts.at(SplitSet::validation) +
                      counts.at(SplitSet::test) ==
                  class_total);
            // granularity bound of whole-session greedy assignment
            const double dev =
                std::abs(counts.at(SplitSet::train) / static_cast<double>(class_total) - 0.7);
            CHECK(dev <= static_cast<double>(largest) / class_total + 1e-12);
            total += class_total;
        }
        const SplitReport rep = split_report(a, m);
        CHECK(rep.set_totals[0] + rep.set_totals[1] + rep.set_totals[2] == total);
    }
}

TEST_CASE("split: bad ratios and empty manifest") {
    const Manifest m = sized_manifest({{"a", {2, 1}}, {"b", {2, 1}}});
    CHECK_THROWS_AS(stratified_session_split(m, {0.5, 0.5, 0.5}), ConfigError);
    CHECK_THROWS_AS(stratified_session_split(m, {-0.1, 0.6, 0.5}), ConfigError);
    Manifest empty;
    CHECK_THROWS_AS(stratified_session_split(empty, {0.7, 0.2, 0.1}), ValidationError);
}

TEST_CASE("split_report_csv layout") {
    const Manifest m = sized_manifest({{"a", {5, 3, 2}}, {"b", {7, 2, 1}}});
    const std::string csv = split_report_csv(split_report(stratified_session_split(m), m));
    CHECK(csv.rfind("class,set,count,percent\n", 0) == 0);
    CHECK(csv.find("__total__") != std::string::npos);
    CHECK(csv.find("a,train,8,") != std::string::npos);
}

TEST_CASE("class_weights: worked example and invariant") {
    SUBCASE("imbalanced counts") {
        const auto w = class_weights({{"a", 100}, {"b", 50}, {"c", 50}});
        CHECK(w.at("a") == doctest::Approx(200.0 / (3 * 100.0)));
        CHECK(w.at("a") == doctest::Approx(0.6667).epsilon(1e-4));
        CHECK(w.at("b") == doctest::Approx(1.3333).epsilon(1e-4));
        CHECK(w.at("c") == doctest::Approx(1.3333).epsilon(1e-4));
    }
    SUBCASE("balanced counts give unit weights") {
        const auto w = class_weights({{"a", 7}, {"b", 7}});
        CHECK(w.at("a") == doctest::Approx(1.0));
        CHECK(w.at("b") == doctest::Approx(1.0));
    }
    SUBCASE("weighted total equals the training count") {
        Rng rng(31);
        for (int t = 0; t < 50; ++t) {
            std::map<std::string, long> counts;
            long n = 0;
            const int k = 2 + static_cast<int>(rng.uniform_int(10));
            for (int c = 0; c < k; ++c) {
                counts["c" + std::to_string(c)] = 1 + static_cast<long>(rng.uniform_int(500));
                n += counts["c" + std::to_string(c)];
            }
            const auto w = class_weights(counts);
            double sum = 0.0;
            for (const auto& [label, cnt] : counts) sum += static_cast<double>(cnt) * w.at(label);
            CHECK(sum == doctest::Approx(static_cast<double>(n)).epsilon(1e-9));
        }
    }
    SUBCASE("zero-count class rejected") {
        CHECK_THROWS_AS(class_weights({{"a", 5}, {"b", 0}}), ValidationError);
    }
}

TEST_CASE("minmax scaler") {
    MelSpectrogram a;
    a.n_mels = 1;
    a.n_frames = 3;
    a.values = {2.0f, 6.0f, 10.0f};
    SUBCASE("midpoint maps to 0.5, bounds attained") {
        const ScalerParams p = fit_minmax({&a});
        CHECK(p.min == doctest::Approx(2.0));
        CHECK(p.max == doctest::Approx(10.0));
        MelSpectrogram t = a;
        apply_minmax(p, t);
        CHECK(t.values[0] == doctest::Approx(0.0));
        CHECK(t.values[1] == doctest::Approx(0.5));
        CHECK(t.values[2] == doctest::Approx(1.0));
    }
    SUBCASE("out-of-range values clamp") {
        const ScalerParams p = fit_minmax({&a});
        MelSpectrogram t;
        t.n_mels = 1;
        t.n_frames = 2;
        t.values = {-5.0f, 100.0f};
        apply_minmax(p, t);
        CHECK(t.values[0] == 0.0f);
        CHECK(t.values[1] == 1.0f);
    }
    SUBCASE("constant training data maps to zeros") {
        MelSpectrogram c = a;
        c.values = {4.0f, 4.0f, 4.0f};
        const ScalerParams p = fit_minmax({&c});
        MelSpectrogram t = c;
        apply_minmax(p, t);
        for (float v : t.values) CHECK(v == 0.0f);
    }
    SUBCASE("fit spans multiple spectrograms") {
        MelSpectrogram b = a;
        b.values = {-1.0f, 0.0f, 3.0f};
        const ScalerParams p = fit_minmax({&a, &b});
        CHECK(p.min == doctest::Approx(-1.0));
        CHECK(p.max == doctest::Approx(10.0));
    }
    SUBCASE("no training spectrograms") {
        CHECK_THROWS_AS(fit_minmax({}), ValidationError);
    }
}

TEST_CASE("shuffle_training: determinism, permutation, uniformity") {
    std::vector<std::size_t> base{0, 1, 2, 3, 4, 5, 6, 7};
    CHECK(shuffle_training(base, 99) == shuffle_training(base, 99));
    const auto p = shuffle_training(base, 4242);
    auto sorted = p;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == base);
    CHECK(epoch_seed(10, 0) != epoch_seed(10, 1));

    // each of the 6 permutations of a 3-element list within 1/6 +- 0.02
    std::map<std::vector<std::size_t>, int> freq;
    const int n = 10000;
    for (int s = 0; s < n; ++s) ++freq[shuffle_training({0, 1, 2}, static_cast<std::uint64_t>(s))];
    CHECK(freq.size() == 6);
    for (const auto& [perm, count] : freq)
        CHECK(std::abs(count / static_cast<double>(n) - 1.0 / 6.0) < 0.02);
}

TEST_CASE("split artifact JSON round-trip") {
    TempDir tmp("split");
    const Manifest m = sized_manifest({{"a", {5, 3, 2}}, {"b", {7, 2, 1}}});
    const SplitAssignment a = stratified_session_split(m);
    const auto w = class_weights({{"a", 8}, {"b", 9}});
    const ScalerParams p{-1.5, 3.25};
    save_split(a, w, p, 77, tmp.file("split.json"));
    const SplitArtifact art = load_split(tmp.file("split.json"));
    CHECK(art.assignment.assignment == a.assignment);
    CHECK(art.assignment.ratios == a.ratios);
    CHECK(art.weights == w);
    CHECK(art.scaler.min == doctest::Approx(p.min));
    CHECK(art.scaler.max == doctest::Approx(p.max));
    CHECK(art.seed == 77);
}
