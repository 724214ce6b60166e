#include "avibench/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <thread>

#include "avibench/common.hpp"
#include "avibench/evalkit.hpp"

namespace fs = std::filesystem;

namespace avb {

// --- config (de)serialization -------------------------------------------------

nlohmann::json dsp_config_to_json(const DspConfig& c) {
    return {{"sample_rate", c.sample_rate}, {"window_sec", c.window_sec},
            {"n_fft", c.n_fft},             {"hop", c.hop},
            {"n_mels", c.n_mels},           {"fmin", c.fmin},
            {"fmax", c.fmax},               {"log_floor", c.log_floor}};
}

DspConfig dsp_config_from_json(const nlohmann::json& j) {
    DspConfig c;
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.window_sec = j.value("window_sec", c.window_sec);
    c.n_fft = j.value("n_fft", c.n_fft);
    c.hop = j.value("hop", c.hop);
    c.n_mels = j.value("n_mels", c.n_mels);
    c.fmin = j.value("fmin", c.fmin);
    c.fmax = j.value("fmax", c.fmax);
    c.log_floor = j.value("log_floor", c.log_floor);
    c.validate();
    return c;
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& s) {
    nlohmann::json classes = nlohmann::json::array();
    for (const SyntheticClassSpec& c : s.classes) {
        nlohmann::json jc{{"label", c.label}, {"tone_hz", c.tone_hz}};
        if (!c.sessions.empty()) jc["sessions"] = c.sessions;
        if (c.range)
            jc["range"] = {{"n_sessions", {c.range->n_sessions_min, c.range->n_sessions_max}},
                           {"session_cuts", {c.range->cuts_min, c.range->cuts_max}}};
        classes.push_back(jc);
    }
    return {{"sample_rate", s.sample_rate},
            {"noise_amplitude", s.noise_amplitude},
            {"seed", s.seed},
            {"classes", classes}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
    if (j.is_object() && j.value("bundled_4class", false)) return bundled_4class_spec();
    SyntheticSpec s;
    s.sample_rate = j.value("sample_rate", s.sample_rate);
    s.noise_amplitude = j.value("noise_amplitude", s.noise_amplitude);
    s.seed = j.value("seed", s.seed);
    for (const auto& jc : j.at("classes")) {
        SyntheticClassSpec c;
        c.label = jc.at("label").get<std::string>();
        c.tone_hz = jc.at("tone_hz").get<double>();
        if (jc.contains("sessions"))
            c.sessions = jc.at("sessions").get<std::vector<std::vector<double>>>();
        if (jc.contains("range")) {
            SessionRange r;
            const auto& jr = jc.at("range");
            r.n_sessions_min = jr.at("n_sessions").at(0).get<int>();
            r.n_sessions_max = jr.at("n_sessions").at(1).get<int>();
            r.cuts_min = jr.at("session_cuts").at(0).get<int>();
            r.cuts_max = jr.at("session_cuts").at(1).get<int>();
            c.range = r;
        }
        s.classes.push_back(std::move(c));
    }
    s.validate();
    return s;
}

nlohmann::json search_space_to_json(const SearchSpace& s) {
    return {{"n_conv_blocks", s.n_conv_blocks},
            {"filters", s.filters},
            {"kernels", s.kernels},
            {"pool_choice", s.pool_choice},
            {"dense_units", s.dense_units},
            {"lr_min", s.lr_min},
            {"lr_max", s.lr_max},
            {"optimizers", s.optimizers}};
}

SearchSpace search_space_from_json(const nlohmann::json& j) {
    SearchSpace s;
    s.n_conv_blocks = j.value("n_conv_blocks", s.n_conv_blocks);
    s.filters = j.value("filters", s.filters);
    s.kernels = j.value("kernels", s.kernels);
    s.pool_choice = j.value("pool_choice", s.pool_choice);
    s.dense_units = j.value("dense_units", s.dense_units);
    s.lr_min = j.value("lr_min", s.lr_min);
    s.lr_max = j.value("lr_max", s.lr_max);
    s.optimizers = j.value("optimizers", s.optimizers);
    s.validate();
    return s;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
    PipelineConfig c;
    c.output_dir = j.value("output_dir", c.output_dir);

    if (!j.contains("dataset")) throw ConfigError("config: missing 'dataset' section");
    const auto& jd = j.at("dataset");
    const bool has_synth = jd.contains("synthetic");
    const bool has_manifest = jd.contains("manifest");
    if (has_synth == has_manifest)
        throw ConfigError("config: dataset needs exactly one of 'synthetic' or 'manifest'");
    if (has_synth)
        c.synthetic = synthetic_spec_from_json(jd.at("synthetic"));
    else {
        c.manifest_path = jd.at("manifest").get<std::string>();
        c.audio_root = jd.value("audio_root", std::string{});
    }

    if (j.contains("dsp")) c.dsp = dsp_config_from_json(j.at("dsp"));
    c.dsp.validate();

    if (j.contains("split")) {
        const auto& js = j.at("split");
        if (js.contains("ratios")) c.split_ratios = js.at("ratios").get<std::array<double, 3>>();
        c.split_seed = js.value("seed", c.split_seed);
    }

    if (j.contains("train")) {
        const auto& jt = j.at("train");
        if (jt.contains("model")) c.model = model_config_from_json(jt.at("model"));
        c.train_epochs = jt.value("epochs", c.train_epochs);
        c.train_batch_size = jt.value("batch_size", c.train_batch_size);
        c.train_seed = jt.value("seed", c.train_seed);
        c.retrain_cycles = jt.value("retrain_cycles", c.retrain_cycles);
        if (jt.contains("early_stop_patience") && !jt.at("early_stop_patience").is_null())
            c.early_stop_patience = jt.at("early_stop_patience").get<int>();
        if (c.train_epochs < 1 || c.train_batch_size < 1 || c.retrain_cycles < 1)
            throw ConfigError("config: train epochs/batch_size/retrain_cycles must be >= 1");
    }

    if (j.contains("nas")) {
        const auto& jn = j.at("nas");
        if (jn.contains("space")) c.space = search_space_from_json(jn.at("space"));
        c.nas.budget = jn.value("budget", c.nas.budget);
        c.nas.k_init = jn.value("k_init", c.nas.k_init);
        c.nas.patience = jn.value("patience", c.nas.patience);
        c.nas.max_epochs = jn.value("max_epochs", c.nas.max_epochs);
        c.nas.batch_size = jn.value("batch_size", c.nas.batch_size);
        c.nas.retrain = jn.value("retrain", c.nas.retrain);
        c.nas.retrain_epochs = jn.value("retrain_epochs", c.nas.retrain_epochs);
        c.nas.seed = jn.value("seed", c.nas.seed);
    }

    if (j.contains("evaluate") && j.at("evaluate").contains("reference"))
        c.reference_f1 =
            j.at("evaluate").at("reference").get<std::map<std::string, double>>();
    return c;
}

PipelineConfig PipelineConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return from_json(j);
}

// --- hashing ---------------------------------------------------------------

std::string fnv1a_hex(const std::string& bytes) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

namespace {

nlohmann::json dataset_slice(const PipelineConfig& c) {
    nlohmann::json j;
    if (c.synthetic)
        j["synthetic"] = synthetic_spec_to_json(*c.synthetic);
    else {
        j["manifest"] = *c.manifest_path;
        j["audio_root"] = c.audio_root;
    }
    return j;
}

nlohmann::json prepare_slice(const PipelineConfig& c) {
    return {{"dataset", dataset_slice(c)},
            {"dsp", dsp_config_to_json(c.dsp)},
            {"split", {{"ratios", c.split_ratios}, {"seed", c.split_seed}}}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

void write_meta(const fs::path& dir, const std::string& stage, const std::string& hash,
                const nlohmann::json& upstream, std::uint64_t seed) {
    nlohmann::json j{{"stage", stage}, {"config_hash", hash}, {"upstream", upstream},
                     {"seed", seed}};
    write_text(dir / "meta.json", j.dump(2) + "\n");
}

nlohmann::json read_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
    return j;
}

void require_stage(const fs::path& dir, const std::string& expected_hash,
                   const std::string& stage_name) {
    const fs::path meta = dir / "meta.json";
    if (!fs::exists(meta))
        throw StageError("missing output of stage '" + stage_name + "' (expected " +
                         dir.string() + "); run `avibench " + stage_name + "` first");
    const auto j = read_json_file(meta);
    if (j.value("config_hash", std::string{}) != expected_hash)
        throw StageError("stage '" + stage_name + "' outputs in " + dir.string() +
                         " were built from a different config; rerun `avibench " + stage_name +
                         "`");
}

}  // namespace

std::string synth_hash(const PipelineConfig& c) {
    return fnv1a_hex(dataset_slice(c).dump());
}
std::string prepare_hash(const PipelineConfig& c) {
    return fnv1a_hex(prepare_slice(c).dump());
}
std::string train_hash(const PipelineConfig& c) {
    nlohmann::json j = prepare_slice(c);
    j["train"] = {{"model", c.model ? model_config_to_json(*c.model) : nlohmann::json{}},
                  {"epochs", c.train_epochs},
                  {"batch_size", c.train_batch_size},
                  {"seed", c.train_seed},
                  {"retrain_cycles", c.retrain_cycles},
                  {"early_stop_patience",
                   c.early_stop_patience ? nlohmann::json(*c.early_stop_patience)
                                         : nlohmann::json{}}};
    return fnv1a_hex(j.dump());
}
std::string search_hash(const PipelineConfig& c) {
    nlohmann::json j = prepare_slice(c);
    j["nas"] = {{"space", search_space_to_json(c.space)}, {"budget", c.nas.budget},
                {"k_init", c.nas.k_init},                 {"patience", c.nas.patience},
                {"max_epochs", c.nas.max_epochs},         {"batch_size", c.nas.batch_size},
                {"retrain", c.nas.retrain},               {"retrain_epochs", c.nas.retrain_epochs},
                {"seed", c.nas.seed}};
    return fnv1a_hex(j.dump());
}

std::string stage_dir(const PipelineConfig& c, const std::string& stage,
                      const std::string& hash) {
    return (fs::path(c.output_dir) / stage / hash).string();
}

// --- stages -------------------------------------------------------------------

std::string run_synth_stage(const PipelineConfig& c) {
    if (!c.synthetic)
        throw ConfigError("synth stage: config has no synthetic dataset section");
    const std::string hash = synth_hash(c);
    const fs::path dir = stage_dir(c, "synth", hash);
    fs::create_directories(dir);
    generate_synthetic(*c.synthetic, dir.string());
    write_meta(dir, "synth", hash, nlohmann::json::object(), c.synthetic->seed);
    return dir.string();
}

namespace {

struct SourceData {
    Manifest manifest;
    std::string audio_root;
};

SourceData resolve_source(const PipelineConfig& c) {
    if (c.synthetic) {
        const fs::path dir = stage_dir(c, "synth", synth_hash(c));
        require_stage(dir, synth_hash(c), "synth");
        return {load_manifest((dir / "manifest.csv").string()), dir.string()};
    }
    if (!fs::exists(*c.manifest_path))
        throw StageError("manifest not found: " + *c.manifest_path);
    return {load_manifest(*c.manifest_path), c.audio_root};
}

// fan work out over `jobs` threads; result ordering is by index, so output
// is identical to the sequential run
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn&& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> threads;
    const int j = std::min<int>(jobs, static_cast<int>(n));
    for (int t = 0; t < j; ++t)
        threads.emplace_back([&fn, t, j, n] {
            for (std::size_t i = static_cast<std::size_t>(t); i < n;
                 i += static_cast<std::size_t>(j))
                fn(i);
        });
    for (auto& th : threads) th.join();
}

}  // namespace

DataSet dataset_from_store(const SpectrogramStore& store) {
    DataSet ds;
    const int n = static_cast<int>(store.records.size());
    ds.x = Tensor({n, 1, store.n_mels, store.n_frames});
    ds.y.resize(static_cast<std::size_t>(n));
    const long sample = static_cast<long>(store.n_mels) * store.n_frames;
    for (int i = 0; i < n; ++i) {
        ds.y[static_cast<std::size_t>(i)] = store.records[static_cast<std::size_t>(i)].label;
        const auto& vals = store.records[static_cast<std::size_t>(i)].spec.values;
        for (long j = 0; j < sample; ++j)
            ds.x.data[static_cast<std::size_t>(i * sample + j)] =
                static_cast<double>(vals[static_cast<std::size_t>(j)]);
    }
    return ds;
}

std::string run_prepare_stage(const PipelineConfig& c, int jobs) {
    const SourceData src = resolve_source(c);
    const std::string hash = prepare_hash(c);
    const fs::path dir = stage_dir(c, "prepare", hash);
    fs::create_directories(dir);

    const SplitAssignment assignment = stratified_session_split(src.manifest, c.split_ratios);
    const SplitReport report = split_report(assignment, src.manifest);

    // per-clip mel extraction, parallelizable, output ordered by clip index
    struct ClipJob {
        const SessionRecord* session;
        const ClipRef* clip;
    };
    std::vector<ClipJob> clips;
    for (const SessionRecord& s : src.manifest.sessions)
        for (const ClipRef& clip : s.clips) clips.push_back({&s, &clip});

    const MelFilterbank fb = mel_filterbank(c.dsp);
    std::vector<std::vector<MelSpectrogram>> per_clip(clips.size());
    std::vector<std::string> worker_error(static_cast<std::size_t>(std::max(jobs, 1)));
    parallel_for(clips.size(), jobs, [&](std::size_t i) {
        const AudioClip audio = decode_audio(
            (fs::path(src.audio_root) / clips[i].clip->path).string());
        const auto windows = segment_clip(audio, c.dsp);
        per_clip[i].reserve(windows.size());
        for (const Window& w : windows) per_clip[i].push_back(mel_spectrogram(w, c.dsp, fb));
    });

    // assemble split stores in manifest order
    SpectrogramStore stores[3];
    for (auto& s : stores) {
        s.n_mels = c.dsp.n_mels;
        s.n_frames = c.dsp.n_frames();
        s.n_classes = static_cast<int>(src.manifest.classes.size());
    }
    for (std::size_t i = 0; i < clips.size(); ++i) {
        const auto set = static_cast<std::size_t>(
            assignment.assignment.at(clips[i].session->session_id));
        const int label = src.manifest.class_index(clips[i].session->class_label);
        for (MelSpectrogram& spec : per_clip[i])
            stores[set].records.push_back({label, std::move(spec)});
    }

    // scaler fitted on training spectrograms only, applied everywhere
    std::vector<const MelSpectrogram*> train_specs;
    for (const SpectrogramRecord& r : stores[0].records) train_specs.push_back(&r.spec);
    const ScalerParams scaler = fit_minmax(train_specs);
    for (auto& s : stores)
        for (SpectrogramRecord& r : s.records) apply_minmax(scaler, r.spec);

    std::map<std::string, long> train_counts;
    for (const SplitReportRow& row : report.rows)
        if (row.set == SplitSet::train) train_counts[row.class_label] = row.count;
    const auto weights = class_weights(train_counts);

    const char* names[3] = {"train", "validation", "test"};
    for (int s = 0; s < 3; ++s) {
        const std::string path = (dir / (std::string(names[s]) + ".avb")).string();
        write_store(stores[s], path);
        nlohmann::json sidecar{{"classes", src.manifest.classes},
                               {"dsp", dsp_config_to_json(c.dsp)},
                               {"split", names[s]},
                               {"config_hash", hash}};
        write_text(path + ".json", sidecar.dump(2) + "\n");
    }
    save_split(assignment, weights, scaler, c.split_seed, (dir / "split.json").string());
    write_text(dir / "split_report.csv", split_report_csv(report));
    write_meta(dir, "prepare", hash, {{"synth", c.synthetic ? synth_hash(c) : ""}},
               c.split_seed);
    return dir.string();
}

namespace {

struct PreparedData {
    DataSet train, val;
    std::vector<std::string> classes;
    std::vector<double> weight_vec;
    std::vector<int> input_shape;
    std::string prepare_dir;
};

PreparedData load_prepared(const PipelineConfig& c, bool need_val = true) {
    const std::string hash = prepare_hash(c);
    const fs::path dir = stage_dir(c, "prepare", hash);
    require_stage(dir, hash, "prepare");
    PreparedData d;
    d.prepare_dir = dir.string();
    const SpectrogramStore train_store = read_store((dir / "train.avb").string());
    d.train = dataset_from_store(train_store);
    if (need_val) d.val = dataset_from_store(read_store((dir / "validation.avb").string()));
    d.classes = read_json_file(dir / "train.avb.json").at("classes").get<std::vector<std::string>>();
    const SplitArtifact split = load_split((dir / "split.json").string());
    d.weight_vec.resize(d.classes.size(), 1.0);
    for (std::size_t i = 0; i < d.classes.size(); ++i) {
        const auto it = split.weights.find(d.classes[i]);
        if (it != split.weights.end()) d.weight_vec[i] = it->second;
    }
    d.input_shape = {1, train_store.n_mels, train_store.n_frames};
    return d;
}

}  // namespace

std::string run_train_stage(const PipelineConfig& c) {
    if (!c.model)
        throw ConfigError("train stage: config has no train.model; use `search` to find one");
    const PreparedData data = load_prepared(c);
    const std::string hash = train_hash(c);
    const fs::path dir = stage_dir(c, "train", hash);
    fs::create_directories(dir);

    nlohmann::json summary = nlohmann::json::array();
    for (int r = 0; r < c.retrain_cycles; ++r) {
        TrainConfig tc;
        tc.epochs = c.train_epochs;
        tc.batch_size = c.train_batch_size;
        tc.class_weights = data.weight_vec;
        tc.seed = mix_seed(c.train_seed, static_cast<std::uint64_t>(r));
        tc.early_stop_patience = c.early_stop_patience;
        ModelConfig model = *c.model;
        model.init_seed = mix_seed(c.train_seed, 10000 + static_cast<std::uint64_t>(r));
        const TrainingRun run = train(model, data.train, data.val, tc);
        if (run.status == RunStatus::diverged)
            throw NumericError("train stage run " + std::to_string(r) + ": " + run.diagnostic);
        write_text(dir / ("run_" + std::to_string(r) + ".csv"), training_run_csv(run));
        nlohmann::json meta{{"config_hash", hash},
                            {"prepare_hash", prepare_hash(c)},
                            {"seed", tc.seed},
                            {"epoch", run.best_epoch},
                            {"input_shape", data.input_shape},
                            {"classes", data.classes}};
        save_checkpoint((dir / ("checkpoint_" + std::to_string(r) + ".avbc")).string(), model,
                        run.final_params, meta);
        summary.push_back({{"run", r},
                           {"best_val_f1", run.best_val_f1},
                           {"best_epoch", run.best_epoch},
                           {"epochs_trained", run.epochs_trained}});
    }
    write_text(dir / "summary.json",
               nlohmann::json{{"runs", summary}}.dump(2) + "\n");
    write_meta(dir, "train", hash, {{"prepare", prepare_hash(c)}}, c.train_seed);
    return dir.string();
}

std::string run_search_stage(const PipelineConfig& c) {
    const PreparedData data = load_prepared(c);
    const std::string hash = search_hash(c);
    const fs::path dir = stage_dir(c, "search", hash);
    fs::create_directories(dir);

    const int k = static_cast<int>(data.classes.size());
    const SearchResult res =
        run_search(c.space, data.train, data.val, data.weight_vec, k, c.nas);

    write_text(dir / "trials.jsonl", trials_jsonl(res.trials));
    write_text(dir / "incumbent.csv", incumbent_csv(res.incumbent));
    write_text(dir / "lifespan.csv", lifespan_csv(res.trials));
    const Genome& best = res.trials[static_cast<std::size_t>(res.best_trial)].genome;
    write_text(dir / "best_genome.json",
               nlohmann::json{{"trial", res.best_trial},
                              {"genome", genome_to_json(best)}}
                       .dump(2) +
                   "\n");

    for (std::size_t r = 0; r < res.retrain_runs.size(); ++r) {
        const TrainingRun& run = res.retrain_runs[r];
        write_text(dir / ("run_" + std::to_string(r) + ".csv"), training_run_csv(run));
        const ModelConfig model = to_model_config(
            best, k, mix_seed(c.nas.seed, 2000 + static_cast<std::uint64_t>(r)));
        nlohmann::json meta{{"config_hash", hash},
                            {"prepare_hash", prepare_hash(c)},
                            {"seed", mix_seed(c.nas.seed, 1000 + static_cast<std::uint64_t>(r))},
                            {"epoch", run.best_epoch},
                            {"input_shape", data.input_shape},
                            {"classes", data.classes}};
        save_checkpoint((dir / ("checkpoint_" + std::to_string(r) + ".avbc")).string(), model,
                        run.final_params, meta);
    }
    write_meta(dir, "search", hash, {{"prepare", prepare_hash(c)}}, c.nas.seed);
    return dir.string();
}

namespace {

// evaluates every checkpoint of one model directory on the test set
struct ModelEval {
    std::vector<RunCurve> runs;
    ConfusionMatrix best_cm;  // confusion of the best run by test F1
};

ModelEval evaluate_model_dir(const fs::path& dir, const std::string& prepare_h,
                             const DataSet& test, int k) {
    ModelEval ev;
    double best_f1 = -1.0;
    for (int r = 0;; ++r) {
        const fs::path cp_path = dir / ("checkpoint_" + std::to_string(r) + ".avbc");
        if (!fs::exists(cp_path)) break;
        const Checkpoint cp = load_checkpoint(cp_path.string());
        if (cp.meta.value("prepare_hash", std::string{}) != prepare_h)
            throw StageError(cp_path.string() +
                             " was trained on different prepared data; rerun `avibench "
                             "prepare` and the training stage");
        const auto preds = predict(cp.model, cp.params, test);
        const ConfusionMatrix cm = confusion(preds, test.y, k);
        RunCurve rc;
        rc.test_f1 = f1_scores(cm).macro_f1;

        // validation curve from the run CSV
        std::ifstream csv(dir / ("run_" + std::to_string(r) + ".csv"));
        std::string line;
        std::getline(csv, line);  // header
        while (std::getline(csv, line)) {
            const auto pos = line.rfind(',');
            if (pos != std::string::npos) rc.val_f1.push_back(std::stod(line.substr(pos + 1)));
        }
        if (rc.test_f1 > best_f1) {
            best_f1 = rc.test_f1;
            ev.best_cm = cm;
        }
        ev.runs.push_back(std::move(rc));
    }
    if (ev.runs.empty())
        throw StageError("no checkpoints in " + dir.string());
    return ev;
}

std::string curve_csv(const std::vector<double>& curve, const char* col) {
    std::ostringstream os;
    os << "epoch," << col << '\n';
    for (std::size_t e = 0; e < curve.size(); ++e) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%zu,%.9g\n", e, curve[e]);
        os << buf;
    }
    return os.str();
}

}  // namespace

std::string run_evaluate_stage(const PipelineConfig& c) {
    const std::string prep_h = prepare_hash(c);
    const fs::path prep_dir = stage_dir(c, "prepare", prep_h);
    require_stage(prep_dir, prep_h, "prepare");
    const SpectrogramStore test_store = read_store((prep_dir / "test.avb").string());
    const auto classes =
        read_json_file(prep_dir / "test.avb.json").at("classes").get<std::vector<std::string>>();
    const DataSet test = dataset_from_store(test_store);
    const int k = static_cast<int>(classes.size());

    // evaluate whichever upstream model stages exist
    std::vector<std::pair<std::string, fs::path>> sources;
    if (c.model) {
        const fs::path d = stage_dir(c, "train", train_hash(c));
        if (fs::exists(d / "meta.json")) sources.emplace_back("manual", d);
    }
    {
        const fs::path d = stage_dir(c, "search", search_hash(c));
        if (fs::exists(d / "meta.json")) sources.emplace_back("searched", d);
    }
    if (sources.empty())
        throw StageError("evaluate: no model outputs found; run `avibench train` (or "
                         "`avibench search`) first");

    const std::string hash = fnv1a_hex(prep_h + "|" + train_hash(c) + "|" + search_hash(c));
    const fs::path dir = stage_dir(c, "evaluate", hash);
    fs::create_directories(dir);

    nlohmann::json aggregate = nlohmann::json::object();
    std::vector<ComparisonRow> rows;
    for (const auto& [name, src_dir] : sources) {
        const ModelEval ev = evaluate_model_dir(src_dir, prep_h, test, k);
        const RunAggregate agg = aggregate_runs(ev.runs);
        write_text(dir / ("confusion_" + name + ".csv"), confusion_csv(ev.best_cm, classes));
        write_text(dir / ("median_val_f1_" + name + ".csv"),
                   curve_csv(agg.median_val_curve, "median_val_f1"));
        nlohmann::json per_run = nlohmann::json::array();
        for (const RunCurve& rc : ev.runs) per_run.push_back(rc.test_f1);
        aggregate[name] = {{"max_test_f1", agg.max_f1},
                           {"avg_test_f1", agg.avg_f1},
                           {"min_test_f1", agg.min_f1},
                           {"per_run_test_f1", per_run},
                           {"top3_runs", agg.top3}};
        ComparisonRow row{name, agg.max_f1, agg.avg_f1, agg.min_f1, std::nullopt};
        const auto ref = c.reference_f1.find(name);
        if (ref != c.reference_f1.end()) row.reference = ref->second;
        rows.push_back(row);
    }
    write_text(dir / "aggregate.json", aggregate.dump(2) + "\n");
    write_text(dir / "comparison.txt", render_f1_table(rows, !c.reference_f1.empty()));
    write_meta(dir, "evaluate", hash,
               {{"prepare", prep_h}, {"train", train_hash(c)}, {"search", search_hash(c)}},
               c.split_seed);
    return dir.string();
}

}  // namespace avb
