#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include <json.hpp>

#include "avibench/dataset.hpp"
#include "avibench/dsp.hpp"
#include "avibench/nas.hpp"
#include "avibench/nnet.hpp"
#include "avibench/splitkit.hpp"

namespace avb {

nlohmann::json dsp_config_to_json(const DspConfig& c);
DspConfig dsp_config_from_json(const nlohmann::json& j);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);
nlohmann::json search_space_to_json(const SearchSpace& s);
SearchSpace search_space_from_json(const nlohmann::json& j);

struct PipelineConfig {
    std::string output_dir = "out";

    // exactly one of the two dataset sources
    std::optional<SyntheticSpec> synthetic;
    std::optional<std::string> manifest_path;
    std::string audio_root;  // clip paths in the manifest are relative to this

    DspConfig dsp;
    std::array<double, 3> split_ratios{0.70, 0.20, 0.10};
    std::uint64_t split_seed = 1;

    // train stage
    std::optional<ModelConfig> model;
    int train_epochs = 50;
    int train_batch_size = 32;
    std::uint64_t train_seed = 1;
    int retrain_cycles = 20;
    std::optional<int> early_stop_patience;

    // search stage
    SearchSpace space;
    SearchOpts nas;

    // evaluate stage
    std::map<std::string, double> reference_f1;  // optional external column

    static PipelineConfig from_json(const nlohmann::json& j);
    static PipelineConfig from_file(const std::string& path);
};

// FNV-1a 64 over a canonical JSON dump; stage directories are keyed by the
// hash of the config slice that determines the stage's output.
std::string fnv1a_hex(const std::string& bytes);
std::string synth_hash(const PipelineConfig& c);
std::string prepare_hash(const PipelineConfig& c);
std::string train_hash(const PipelineConfig& c);
std::string search_hash(const PipelineConfig& c);

std::string stage_dir(const PipelineConfig& c, const std::string& stage,
                      const std::string& hash);

// Stages. Each writes out/<stage>/<hash>/ and a meta.json recording the
// config hash and upstream hashes; rerunning with identical inputs rewrites
// identical bytes. Missing prerequisites raise StageError naming the stage
// to run first.
std::string run_synth_stage(const PipelineConfig& c);
std::string run_prepare_stage(const PipelineConfig& c, int jobs = 1);
std::string run_train_stage(const PipelineConfig& c);
std::string run_search_stage(const PipelineConfig& c);
std::string run_evaluate_stage(const PipelineConfig& c);

DataSet dataset_from_store(const SpectrogramStore& store);

}  // namespace avb
