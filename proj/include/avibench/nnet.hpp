#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "avibench/evalkit.hpp"

namespace avb {

struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<std::size_t>(size_of(shape)), 0.0);
    }

    static long size_of(const std::vector<int>& s) {
        long n = 1;
        for (int d : s) n *= d;
        return n;
    }
    long size() const { return static_cast<long>(data.size()); }
    bool empty() const { return data.empty(); }
};

// --- layer specs --------------------------------------------------------------

struct Conv2D {
    int filters = 1;
    int kernel = 3;  // odd, square, 'same' padding
    int stride = 1;
};
struct ReLU {};
struct MaxPool {
    int size = 2;  // non-overlapping; trailing remainder is dropped
};
struct Flatten {};
struct Dense {
    int units = 1;
};
struct Softmax {};

using LayerSpec = std::variant<Conv2D, ReLU, MaxPool, Flatten, Dense, Softmax>;

std::string layer_name(const LayerSpec& l);

struct AdamCfg {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};
struct SgdCfg {
    double lr = 1e-2;
    double momentum = 0.0;
};
using OptimizerCfg = std::variant<AdamCfg, SgdCfg>;

struct ModelConfig {
    std::vector<LayerSpec> layers;
    OptimizerCfg optimizer = AdamCfg{};
    std::uint64_t init_seed = 0;
};

nlohmann::json model_config_to_json(const ModelConfig& m);
ModelConfig model_config_from_json(const nlohmann::json& j);

// Per-layer output shapes ({C,H,W} or {N} after Flatten), statically checked.
// Throws ConfigError naming the offending layer.
std::vector<std::vector<int>> infer_shapes(const ModelConfig& model,
                                           const std::vector<int>& input_shape);

// One {W, b} pair per layer; non-parametric layers hold empty tensors.
struct LayerParams {
    Tensor w, b;
};
using Params = std::vector<LayerParams>;

// i.i.d. uniform on [-L, L], L = sqrt(6 / (fan_in + fan_out))
Tensor glorot_init(int fan_in, int fan_out, std::uint64_t seed, std::vector<int> shape);

Params init_params(const ModelConfig& model, const std::vector<int>& input_shape);
long param_count(const Params& p);

struct ForwardCache {
    std::vector<Tensor> acts;                    // acts[0] = input, acts[i+1] = layer i output
    std::vector<std::vector<int>> pool_argmax;   // per layer; empty unless MaxPool
};

// batch: {B, C, H, W}; returns probabilities {B, K}
Tensor forward(const ModelConfig& model, const Params& params, const Tensor& batch,
               ForwardCache* cache = nullptr);

// loss = (1/B) sum_i w[y_i] * (-log p_i[y_i]), p clamped to >= 1e-12
double weighted_cross_entropy(const Tensor& probs, const std::vector<int>& labels,
                              const std::vector<double>& class_weights);

// Reverse-mode gradients; requires the final layer to be Softmax (the
// cross-entropy gradient is fused through it).
Params backward(const ModelConfig& model, const Params& params, const ForwardCache& cache,
                const Tensor& probs, const std::vector<int>& labels,
                const std::vector<double>& class_weights);

struct AdamState {
    std::vector<LayerParams> m, v;
    long t = 0;
};
struct SgdState {
    std::vector<LayerParams> velocity;
};
using OptState = std::variant<AdamState, SgdState>;

OptState init_opt_state(const OptimizerCfg& cfg, const Params& params);
void opt_step(Params& params, const Params& grads, OptState& state, const OptimizerCfg& cfg);

// --- training -----------------------------------------------------------------

struct DataSet {
    Tensor x;  // {N, C, H, W}
    std::vector<int> y;
    int n() const { return x.shape.empty() ? 0 : x.shape[0]; }
};

struct TrainConfig {
    int epochs = 1;
    int batch_size = 32;
    std::vector<double> class_weights;  // indexed by label; empty = all ones
    std::uint64_t seed = 0;
    std::optional<int> early_stop_patience;
};

enum class RunStatus { ok, diverged };

struct TrainingRun {
    std::vector<double> train_loss, val_loss, val_f1;
    int epochs_trained = 0;
    long opt_steps = 0;
    Params final_params;  // snapshot from the best-validation-F1 epoch
    int best_epoch = -1;
    double best_val_f1 = 0.0;
    RunStatus status = RunStatus::ok;
    std::string diagnostic;
    double wall_seconds = 0.0;
};

TrainingRun train(const ModelConfig& model, const DataSet& train_set, const DataSet& val_set,
                  const TrainConfig& cfg);

std::vector<int> predict(const ModelConfig& model, const Params& params, const DataSet& data,
                         int batch_size = 64);
double macro_f1_on(const ModelConfig& model, const Params& params, const DataSet& data,
                   int n_classes);

std::string training_run_csv(const TrainingRun& run);

// Checkpoint: "AVBC" magic, u32 JSON length, JSON header (model config, seed,
// epoch, extra metadata), then all parameters as little-endian f32.
void save_checkpoint(const std::string& path, const ModelConfig& model, const Params& params,
                     const nlohmann::json& meta);

struct Checkpoint {
    ModelConfig model;
    Params params;
    nlohmann::json meta;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace avb
