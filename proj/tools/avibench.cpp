#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "avibench/common.hpp"
#include "avibench/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;
constexpr int kExitNumeric = 4;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"avibench: bird-vocalization classification benchmark pipeline"};
    app.require_subcommand(1);
    app.fallthrough();  // accept global options after the subcommand name

    std::string config_path;
    std::string out_dir;
    int jobs = 1;
    std::uint64_t seed = 0;
    bool seed_set = false;

    app.add_option("--config", config_path, "pipeline config JSON")->required();
    app.add_option("--out", out_dir, "output root (overrides config/$AVIBENCH_OUT)");
    app.add_option("--jobs", jobs, "worker count for per-clip DSP")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "override split/train/search seeds")
        ->each([&seed_set](const std::string&) { seed_set = true; });

    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    auto* prepare =
        app.add_subcommand("prepare", "segment, mel-transform, split, and normalize");
    auto* train = app.add_subcommand("train", "retrain the configured model");
    auto* search = app.add_subcommand("search", "run the architecture search");
    auto* evaluate = app.add_subcommand("evaluate", "test-set evaluation and reports");

    CLI11_PARSE(app, argc, argv);

    try {
        avb::PipelineConfig cfg = avb::PipelineConfig::from_file(config_path);
        if (const char* env = std::getenv("AVIBENCH_OUT"); env && *env) cfg.output_dir = env;
        if (!out_dir.empty()) cfg.output_dir = out_dir;
        if (seed_set) {
            cfg.split_seed = seed;
            cfg.train_seed = seed;
            cfg.nas.seed = seed;
            if (cfg.synthetic) cfg.synthetic->seed = seed;
        }

        std::string dir;
        if (synth->parsed())
            dir = avb::run_synth_stage(cfg);
        else if (prepare->parsed())
            dir = avb::run_prepare_stage(cfg, jobs);
        else if (train->parsed())
            dir = avb::run_train_stage(cfg);
        else if (search->parsed())
            dir = avb::run_search_stage(cfg);
        else if (evaluate->parsed())
            dir = avb::run_evaluate_stage(cfg);
        std::cout << dir << '\n';
        return kExitOk;
    } catch (const avb::StageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitStage;
    } catch (const avb::NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const avb::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
}
