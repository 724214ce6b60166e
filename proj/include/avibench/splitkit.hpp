#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "avibench/dataset.hpp"
#include "avibench/dsp.hpp"

namespace avb {

enum class SplitSet { train = 0, validation = 1, test = 2 };

const char* split_name(SplitSet s);
SplitSet split_from_name(const std::string& name);

struct SplitAssignment {
    std::map<std::string, SplitSet> assignment;  // session_id -> set
    std::array<double, 3> ratios{0.70, 0.20, 0.10};
    std::vector<std::string> warnings;  // e.g. single-session classes
};

// Per class: sessions sorted by sample_count descending (ties by session_id
// ascending), assigned greedily to train while the assigned count is below
// ratio * class total, then to validation the same way, remainder to test.
SplitAssignment stratified_session_split(const Manifest& manifest,
                                         std::array<double, 3> ratios = {0.70, 0.20, 0.10});

struct SplitReportRow {
    std::string class_label;
    SplitSet set;
    long count = 0;
    double percent = 0.0;  // within-class share
};

struct SplitReport {
    std::vector<SplitReportRow> rows;     // class-major, set order train/val/test
    std::array<long, 3> set_totals{0, 0, 0};
    std::map<std::string, double> train_fraction_deviation;  // |achieved - target|
};

SplitReport split_report(const SplitAssignment& assignment, const Manifest& manifest);
std::string split_report_csv(const SplitReport& report);

// w_c = N_train / (K * n_c); the weighted sample mean over the training set
// is then exactly 1 (sum_c n_c * w_c = N_train).
std::map<std::string, double> class_weights(const std::map<std::string, long>& train_counts);

struct ScalerParams {
    double min = 0.0;
    double max = 0.0;
};

ScalerParams fit_minmax(const std::vector<const MelSpectrogram*>& train_specs);
// x -> (x - min)/(max - min) clamped to [0, 1]; all zeros when max == min.
void apply_minmax(const ScalerParams& p, MelSpectrogram& s);

// Uniform pseudorandom permutation, deterministic per seed.
std::vector<std::size_t> shuffle_training(std::vector<std::size_t> order, std::uint64_t seed);
std::uint64_t epoch_seed(std::uint64_t base_seed, int epoch);

// JSON round-trip of the split artifact (assignment + weights + scaler + seed).
void save_split(const SplitAssignment& a, const std::map<std::string, double>& weights,
                const ScalerParams& scaler, std::uint64_t seed, const std::string& path);

struct SplitArtifact {
    SplitAssignment assignment;
    std::map<std::string, double> weights;
    ScalerParams scaler;
    std::uint64_t seed = 0;
};

SplitArtifact load_split(const std::string& path);

}  // namespace avb
