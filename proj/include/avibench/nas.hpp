#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "avibench/nnet.hpp"
#include "avibench/rng.hpp"

namespace avb {

struct SearchSpace {
    std::vector<int> n_conv_blocks{1, 2, 3, 4};
    std::vector<int> filters{8, 16, 32};       // per-block choice
    std::vector<int> kernels{3, 5};
    bool pool_choice = true;                   // per-block pool yes/no; false = never pool
    std::vector<int> dense_units{32, 64, 128};
    double lr_min = 1e-4;
    double lr_max = 1e-2;                      // lr sampled log-uniform
    std::vector<std::string> optimizers{"adam", "sgd"};

    int max_blocks() const;
    void validate() const;
    std::size_t encoded_length() const;  // fixed regardless of block count
};

struct Genome {
    int n_blocks = 1;
    std::vector<int> filters;      // size n_blocks
    int kernel = 3;
    std::vector<bool> pool_after;  // size n_blocks
    int dense_units = 32;
    double lr = 1e-3;
    std::string optimizer = "adam";

    bool operator==(const Genome&) const = default;
    std::string summary() const;  // compact one-line description
};

nlohmann::json genome_to_json(const Genome& g);
Genome genome_from_json(const nlohmann::json& j);

// Ordinal dims on equally spaced points in [0,1], lr log-scaled to [0,1],
// optimizer one-hot; inactive block slots encode as 0. Injective over the
// space because n_blocks is itself a coordinate.
std::vector<double> encode(const Genome& g, const SearchSpace& space);

// True iff the genome's model shape-checks against this input (pooling
// never shrinks a dimension below 1).
bool shape_ok(const Genome& g, const std::vector<int>& input_shape, int n_classes);

Genome sample_genome(const SearchSpace& space, Rng& rng, const std::vector<int>& input_shape,
                     int n_classes);

ModelConfig to_model_config(const Genome& g, int n_classes, std::uint64_t init_seed);

enum class MorphOp { widen_filters, deepen_block, widen_dense };

struct MorphResult {
    Genome genome;
    bool changed = false;  // false: no applicable edit, input returned as-is
};

MorphResult morph(const Genome& g, MorphOp op, const SearchSpace& space);

struct Trial {
    int id = 0;
    Genome genome;
    std::uint64_t seed = 0;
    int epochs = 0;  // lifespan
    double best_val_f1 = 0.0;
    std::string status = "ok";  // ok | diverged
};

// GP with a squared-exponential kernel over encoded genomes; length scale
// and signal variance picked by marginal likelihood over a small grid.
class Surrogate {
public:
    void fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y);
    void posterior(const std::vector<double>& x, double& mean, double& var) const;
    double noise_var() const { return noise_var_; }
    bool fitted() const { return !x_.empty(); }

private:
    std::vector<std::vector<double>> x_;
    std::vector<double> alpha_;
    std::vector<double> chol_;  // lower-triangular factor, row-major
    double y_mean_ = 0.0;
    double lengthscale_ = 1.0;
    double signal_var_ = 1.0;
    double noise_var_ = 1e-6;

    double kernel(const std::vector<double>& a, const std::vector<double>& b) const;
};

Surrogate surrogate_fit(const std::vector<Trial>& trials, const SearchSpace& space);

// EI = (mu - best) * Phi(z) + sigma * phi(z), z = (mu - best)/sigma;
// max(mu - best, 0) in the sigma -> 0 limit.
double expected_improvement(double mean, double variance, double best_f1);
double expected_improvement(const Surrogate& s, const std::vector<double>& x, double best_f1);

// Candidate pool of 64 uniform genomes plus every valid morph of the
// incumbent; returns the EI argmax that has not been evaluated yet, or
// nullopt when the whole pool is exhausted.
std::optional<Genome> propose(const Surrogate& s, const std::vector<Trial>& trials,
                              const SearchSpace& space, Rng& rng,
                              const std::vector<int>& input_shape, int n_classes);

struct SearchOpts {
    int budget = 20;
    int k_init = 5;
    int patience = 5;
    int max_epochs = 50;
    int batch_size = 32;
    int retrain = 20;  // retraining cycles for the final best genome
    int retrain_epochs = 0;  // 0 = same as max_epochs
    std::uint64_t seed = 0;
};

struct SearchResult {
    std::vector<Trial> trials;
    std::vector<double> incumbent;  // best val F1 after each trial
    int best_trial = -1;
    std::vector<TrainingRun> retrain_runs;  // fresh-seed retrains of the best genome
    long total_epochs = 0;
};

SearchResult run_search(const SearchSpace& space, const DataSet& train_set,
                        const DataSet& val_set, const std::vector<double>& class_weights,
                        int n_classes, const SearchOpts& opts);

std::string lifespan_csv(const std::vector<Trial>& trials);
std::string incumbent_csv(const std::vector<double>& incumbent);
std::string trials_jsonl(const std::vector<Trial>& trials);

}  // namespace avb
