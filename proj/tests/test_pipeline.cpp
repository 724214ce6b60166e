#include <doctest.h>

#include <filesystem>
#include <vector>

#include "avibench/common.hpp"
#include "avibench/pipeline.hpp"
#include "test_util.hpp"

using namespace avb;
namespace fs = std::filesystem;

namespace {

// bundled synthetic dataset with a compact spectrogram shape and a small
// hand-written model, sized so the whole pipeline runs in seconds
nlohmann::json tiny_config(const std::string& out_dir) {
    return nlohmann::json{
        {"output_dir", out_dir},
        {"dataset", {{"synthetic", {{"bundled_4class", true}}}}},
        {"dsp",
         {{"sample_rate", 4000},
          {"n_fft", 256},
          {"hop", 128},
          {"n_mels", 16},
          {"fmin", 50.0},
          {"fmax", 2000.0}}},
        {"split", {{"seed", 3}}},
        {"train",
         {{"model",
           {{"init_seed", 1},
            {"optimizer", {{"type", "adam"}, {"lr", 0.003}}},
            {"layers",
             nlohmann::json::array({{{"type", "conv2d"}, {"filters", 6}, {"kernel", 3}},
                                    {{"type", "relu"}},
                                    {{"type", "maxpool"}, {"size", 2}},
                                    {{"type", "flatten"}},
                                    {{"type", "dense"}, {"units", 16}},
                                    {{"type", "relu"}},
                                    {{"type", "dense"}, {"units", 4}},
                                    {{"type", "softmax"}}})}}},
          {"epochs", 4},
          {"batch_size", 16},
          {"seed", 9},
          {"retrain_cycles", 2}}},
    };
}

std::vector<fs::path> all_files(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST_CASE("pipeline config validation") {
    SUBCASE("dataset section is required") {
        CHECK_THROWS_AS(PipelineConfig::from_json({{"output_dir", "x"}}), ConfigError);
    }
    SUBCASE("exactly one dataset source") {
        nlohmann::json j = tiny_config("x");
        j["dataset"]["manifest"] = "some.csv";
        CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
        j["dataset"].erase("synthetic");
        j["dataset"].erase("manifest");
        CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
    }
    SUBCASE("invalid dsp rejected") {
        nlohmann::json j = tiny_config("x");
        j["dsp"]["n_fft"] = 300;
        CHECK_THROWS_AS(PipelineConfig::from_json(j), ConfigError);
    }
    SUBCASE("missing config file") {
        CHECK_THROWS_AS(PipelineConfig::from_file("/nonexistent/cfg.json"), ConfigError);
    }
}

TEST_CASE("pipeline: stage dependencies are enforced") {
    TempDir tmp("pipedeps");
    const PipelineConfig cfg = PipelineConfig::from_json(tiny_config(tmp.path.string()));
    SUBCASE("prepare before synth names the missing stage") {
        CHECK_THROWS_WITH_AS(run_prepare_stage(cfg), doctest::Contains("synth"), StageError);
    }
    SUBCASE("evaluate before train points at train") {
        run_synth_stage(cfg);
        run_prepare_stage(cfg);
        CHECK_THROWS_WITH_AS(run_evaluate_stage(cfg), doctest::Contains("train"), StageError);
    }
    SUBCASE("train without prepared data points at prepare") {
        run_synth_stage(cfg);
        CHECK_THROWS_WITH_AS(run_train_stage(cfg), doctest::Contains("prepare"), StageError);
    }
}

TEST_CASE("pipeline: full synth-prepare-train-evaluate run") {
    TempDir tmp("pipefull");
    const PipelineConfig cfg = PipelineConfig::from_json(tiny_config(tmp.path.string()));

    const std::string synth_dir = run_synth_stage(cfg);
    CHECK(fs::exists(fs::path(synth_dir) / "manifest.csv"));

    const std::string prep_dir = run_prepare_stage(cfg, 2);
    for (const char* f : {"train.avb", "validation.avb", "test.avb", "split.json",
                          "split_report.csv", "meta.json"})
        CHECK(fs::exists(fs::path(prep_dir) / f));

    // the three stores partition the 80 cuts of the bundled dataset
    const auto tr = read_store((fs::path(prep_dir) / "train.avb").string());
    const auto va = read_store((fs::path(prep_dir) / "validation.avb").string());
    const auto te = read_store((fs::path(prep_dir) / "test.avb").string());
    CHECK(tr.records.size() + va.records.size() + te.records.size() == 80);
    CHECK(tr.n_classes == 4);
    // normalized training data spans [0,1]
    float lo = 1.0f, hi = 0.0f;
    for (const auto& r : tr.records)
        for (float v : r.spec.values) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    CHECK(lo == 0.0f);
    CHECK(hi == 1.0f);

    const std::string train_dir = run_train_stage(cfg);
    CHECK(fs::exists(fs::path(train_dir) / "run_0.csv"));
    CHECK(fs::exists(fs::path(train_dir) / "checkpoint_1.avbc"));
    CHECK(fs::exists(fs::path(train_dir) / "summary.json"));

    const std::string eval_dir = run_evaluate_stage(cfg);
    CHECK(fs::exists(fs::path(eval_dir) / "aggregate.json"));
    CHECK(fs::exists(fs::path(eval_dir) / "comparison.txt"));
    CHECK(fs::exists(fs::path(eval_dir) / "confusion_manual.csv"));
    const std::string table = read_text((fs::path(eval_dir) / "comparison.txt").string());
    CHECK(table.find("manual") != std::string::npos);
    CHECK(table.find("Avg test_f1_score") != std::string::npos);

    SUBCASE("rerunning a stage rewrites identical bytes") {
        const std::string before = read_text((fs::path(prep_dir) / "train.avb").string());
        run_prepare_stage(cfg, 1);  // different job count, same bytes
        CHECK(read_text((fs::path(prep_dir) / "train.avb").string()) == before);
        const std::string eval_before =
            read_text((fs::path(eval_dir) / "aggregate.json").string());
        run_evaluate_stage(cfg);
        CHECK(read_text((fs::path(eval_dir) / "aggregate.json").string()) == eval_before);
    }
}

TEST_CASE("pipeline: two runs from one config are byte-identical") {
    TempDir a("pipeA"), b("pipeB");
    for (const TempDir* d : {&a, &b}) {
        const PipelineConfig cfg = PipelineConfig::from_json(tiny_config(d->path.string()));
        run_synth_stage(cfg);
        run_prepare_stage(cfg, 2);
        run_train_stage(cfg);
        run_evaluate_stage(cfg);
    }
    const auto fa = all_files(a.path);
    const auto fb = all_files(b.path);
    REQUIRE(fa == fb);
    CHECK(fa.size() > 10);
    for (const fs::path& rel : fa)
        CHECK_MESSAGE(read_text((a.path / rel).string()) == read_text((b.path / rel).string()),
                      "file differs: ", rel.string());
}

TEST_CASE("pipeline: config changes re-key the stage directories") {
    TempDir tmp("pipehash");
    nlohmann::json j = tiny_config(tmp.path.string());
    const PipelineConfig c1 = PipelineConfig::from_json(j);
    j["dsp"]["n_mels"] = 20;
    const PipelineConfig c2 = PipelineConfig::from_json(j);
    CHECK(synth_hash(c1) == synth_hash(c2));      // dataset unchanged
    CHECK(prepare_hash(c1) != prepare_hash(c2));  // dsp is part of the prepare key
    CHECK(train_hash(c1) != train_hash(c2));      // and cascades downstream

    j = tiny_config(tmp.path.string());
    j["train"]["seed"] = 10;
    const PipelineConfig c3 = PipelineConfig::from_json(j);
    CHECK(prepare_hash(c1) == prepare_hash(c3));
    CHECK(train_hash(c1) != train_hash(c3));
}

TEST_CASE("pipeline: search stage produces logs and a best genome") {
    TempDir tmp("pipesearch");
    nlohmann::json j = tiny_config(tmp.path.string());
    j["nas"] = {{"space",
                 {{"n_conv_blocks", {1}},
                  {"filters", {4, 8}},
                  {"kernels", {3}},
                  {"dense_units", {16}},
                  {"optimizers", {"adam"}}}},
                {"budget", 3},
                {"k_init", 2},
                {"max_epochs", 2},
                {"batch_size", 16},
                {"retrain", 1},
                {"patience", 2},
                {"seed", 12}};
    const PipelineConfig cfg = PipelineConfig::from_json(j);
    run_synth_stage(cfg);
    run_prepare_stage(cfg);
    const std::string dir = run_search_stage(cfg);
    for (const char* f : {"trials.jsonl", "incumbent.csv", "lifespan.csv", "best_genome.json",
                          "checkpoint_0.avbc", "meta.json"})
        CHECK(fs::exists(fs::path(dir) / f));
    // evaluate picks up the searched model without a manual train stage
    const std::string eval_dir = run_evaluate_stage(cfg);
    CHECK(fs::exists(fs::path(eval_dir) / "confusion_searched.csv"));
    const std::string table = read_text((fs::path(eval_dir) / "comparison.txt").string());
    CHECK(table.find("searched") != std::string::npos);
}
