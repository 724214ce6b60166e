#include "avibench/nas.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "avibench/common.hpp"

namespace avb {

int SearchSpace::max_blocks() const {
    return *std::max_element(n_conv_blocks.begin(), n_conv_blocks.end());
}

void SearchSpace::validate() const {
    if (n_conv_blocks.empty() || filters.empty() || kernels.empty() || dense_units.empty() ||
        optimizers.empty())
        throw ConfigError("search space: empty dimension");
    if (!(0.0 < lr_min && lr_min <= lr_max))
        throw ConfigError("search space: need 0 < lr_min <= lr_max");
    auto sorted = [](const std::vector<int>& v) {
        return std::is_sorted(v.begin(), v.end()) &&
               std::adjacent_find(v.begin(), v.end()) == v.end();
    };
    if (!sorted(n_conv_blocks) || !sorted(filters) || !sorted(kernels) || !sorted(dense_units))
        throw ConfigError("search space: choice lists must be strictly increasing");
}

std::size_t SearchSpace::encoded_length() const {
    return 1 + 2 * static_cast<std::size_t>(max_blocks()) + 3 + optimizers.size();
}

std::string Genome::summary() const {
    std::ostringstream os;
    os << "c[";
    for (int i = 0; i < n_blocks; ++i) {
        if (i) os << ' ';
        os << filters[static_cast<std::size_t>(i)];
        if (pool_after[static_cast<std::size_t>(i)]) os << 'p';
    }
    char lr_buf[24];
    std::snprintf(lr_buf, sizeof(lr_buf), "%.2e", lr);
    os << "]k" << kernel << " d" << dense_units << ' ' << optimizer << '@' << lr_buf;
    return os.str();
}

nlohmann::json genome_to_json(const Genome& g) {
    return {{"n_blocks", g.n_blocks},    {"filters", g.filters},
            {"kernel", g.kernel},        {"pool_after", g.pool_after},
            {"dense_units", g.dense_units}, {"lr", g.lr},
            {"optimizer", g.optimizer}};
}

Genome genome_from_json(const nlohmann::json& j) {
    Genome g;
    g.n_blocks = j.at("n_blocks").get<int>();
    g.filters = j.at("filters").get<std::vector<int>>();
    g.kernel = j.at("kernel").get<int>();
    g.pool_after = j.at("pool_after").get<std::vector<bool>>();
    g.dense_units = j.at("dense_units").get<int>();
    g.lr = j.at("lr").get<double>();
    g.optimizer = j.at("optimizer").get<std::string>();
    return g;
}

namespace {

double ordinal(const std::vector<int>& choices, int value, const char* what) {
    const auto it = std::find(choices.begin(), choices.end(), value);
    if (it == choices.end())
        throw ValidationError(std::string("encode: ") + what + " value " +
                              std::to_string(value) + " is outside the space");
    if (choices.size() == 1) return 0.0;
    return static_cast<double>(it - choices.begin()) /
           static_cast<double>(choices.size() - 1);
}

}  // namespace

std::vector<double> encode(const Genome& g, const SearchSpace& space) {
    space.validate();
    std::vector<double> v;
    v.reserve(space.encoded_length());
    v.push_back(ordinal(space.n_conv_blocks, g.n_blocks, "n_conv_blocks"));
    const int mb = space.max_blocks();
    for (int i = 0; i < mb; ++i)
        v.push_back(i < g.n_blocks
                        ? ordinal(space.filters, g.filters[static_cast<std::size_t>(i)],
                                  "filters")
                        : 0.0);
    v.push_back(ordinal(space.kernels, g.kernel, "kernel"));
    for (int i = 0; i < mb; ++i)
        v.push_back(i < g.n_blocks && g.pool_after[static_cast<std::size_t>(i)] ? 1.0 : 0.0);
    v.push_back(ordinal(space.dense_units, g.dense_units, "dense_units"));
    if (g.lr < space.lr_min * (1 - 1e-12) || g.lr > space.lr_max * (1 + 1e-12))
        throw ValidationError("encode: lr outside the space");
    v.push_back(space.lr_max > space.lr_min
                    ? (std::log(g.lr) - std::log(space.lr_min)) /
                          (std::log(space.lr_max) - std::log(space.lr_min))
                    : 0.0);
    for (const std::string& opt : space.optimizers) v.push_back(opt == g.optimizer ? 1.0 : 0.0);
    return v;
}

ModelConfig to_model_config(const Genome& g, int n_classes, std::uint64_t init_seed) {
    ModelConfig m;
    for (int i = 0; i < g.n_blocks; ++i) {
        m.layers.push_back(Conv2D{g.filters[static_cast<std::size_t>(i)], g.kernel, 1});
        m.layers.push_back(ReLU{});
        if (g.pool_after[static_cast<std::size_t>(i)]) m.layers.push_back(MaxPool{2});
    }
    m.layers.push_back(Flatten{});
    m.layers.push_back(Dense{g.dense_units});
    m.layers.push_back(ReLU{});
    m.layers.push_back(Dense{n_classes});
    m.layers.push_back(Softmax{});
    if (g.optimizer == "adam")
        m.optimizer = AdamCfg{g.lr};
    else
        m.optimizer = SgdCfg{g.lr, 0.9};
    m.init_seed = init_seed;
    return m;
}

bool shape_ok(const Genome& g, const std::vector<int>& input_shape, int n_classes) {
    try {
        infer_shapes(to_model_config(g, n_classes, 0), input_shape);
        return true;
    } catch (const ConfigError&) {
        return false;
    }
}

Genome sample_genome(const SearchSpace& space, Rng& rng, const std::vector<int>& input_shape,
                     int n_classes) {
    space.validate();
    auto pick = [&rng](const std::vector<int>& v) {
        return v[static_cast<std::size_t>(rng.uniform_int(v.size()))];
    };
    for (int attempt = 0; attempt < 1000; ++attempt) {
        Genome g;
        g.n_blocks = pick(space.n_conv_blocks);
        g.filters.resize(static_cast<std::size_t>(g.n_blocks));
        g.pool_after.resize(static_cast<std::size_t>(g.n_blocks));
        for (int i = 0; i < g.n_blocks; ++i) {
            g.filters[static_cast<std::size_t>(i)] = pick(space.filters);
            g.pool_after[static_cast<std::size_t>(i)] =
                space.pool_choice ? rng.uniform_int(2) == 1 : false;
        }
        g.kernel = pick(space.kernels);
        g.dense_units = pick(space.dense_units);
        g.lr = std::exp(rng.uniform(std::log(space.lr_min), std::log(space.lr_max)));
        g.optimizer =
            space.optimizers[static_cast<std::size_t>(rng.uniform_int(space.optimizers.size()))];
        if (shape_ok(g, input_shape, n_classes)) return g;
    }
    throw ConfigError("sample_genome: no shape-valid genome found for this input");
}

MorphResult morph(const Genome& g, MorphOp op, const SearchSpace& space) {
    Genome out = g;
    switch (op) {
        case MorphOp::widen_filters: {
            // widen the first block that still has headroom
            for (int i = 0; i < out.n_blocks; ++i) {
                int& f = out.filters[static_cast<std::size_t>(i)];
                const auto it = std::find(space.filters.begin(), space.filters.end(), f);
                if (it != space.filters.end() && it + 1 != space.filters.end()) {
                    f = *(it + 1);
                    return {out, true};
                }
            }
            return {g, false};
        }
        case MorphOp::deepen_block: {
            const auto it = std::find(space.n_conv_blocks.begin(), space.n_conv_blocks.end(),
                                      out.n_blocks);
            if (it == space.n_conv_blocks.end() || it + 1 == space.n_conv_blocks.end())
                return {g, false};
            const int target = *(it + 1);
            while (out.n_blocks < target) {
                out.filters.push_back(out.filters.back());
                out.pool_after.push_back(out.pool_after.back());
                ++out.n_blocks;
            }
            return {out, true};
        }
        default: {  // widen_dense
            const auto it =
                std::find(space.dense_units.begin(), space.dense_units.end(), out.dense_units);
            if (it == space.dense_units.end() || it + 1 == space.dense_units.end())
                return {g, false};
            out.dense_units = *(it + 1);
            return {out, true};
        }
    }
}

// --- GP surrogate -------------------------------------------------------------

namespace {

// lower-triangular Cholesky, row-major; returns false on a non-positive pivot
bool cholesky(std::vector<double>& a, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a[i * n + j];
            for (std::size_t k = 0; k < j; ++k) s -= a[i * n + k] * a[j * n + k];
            if (i == j) {
                if (s <= 0.0) return false;
                a[i * n + i] = std::sqrt(s);
            } else {
                a[i * n + j] = s / a[j * n + j];
            }
        }
        for (std::size_t j = i + 1; j < n; ++j) a[i * n + j] = 0.0;
    }
    return true;
}

void solve_lower(const std::vector<double>& l, std::size_t n, std::vector<double>& b) {
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l[i * n + k] * b[k];
        b[i] = s / l[i * n + i];
    }
}

void solve_upper_t(const std::vector<double>& l, std::size_t n, std::vector<double>& b) {
    for (std::size_t i = n; i-- > 0;) {
        double s = b[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= l[k * n + i] * b[k];
        b[i] = s / l[i * n + i];
    }
}

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

double Surrogate::kernel(const std::vector<double>& a, const std::vector<double>& b) const {
    return signal_var_ * std::exp(-0.5 * sq_dist(a, b) / (lengthscale_ * lengthscale_));
}

void Surrogate::fit(const std::vector<std::vector<double>>& x, const std::vector<double>& y) {
    if (x.empty() || x.size() != y.size()) throw ValidationError("surrogate: bad inputs");
    x_ = x;
    const std::size_t n = x.size();
    y_mean_ = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
    std::vector<double> yc(n);
    for (std::size_t i = 0; i < n; ++i) yc[i] = y[i] - y_mean_;
    double y_var = 0.0;
    for (double v : yc) y_var += v * v;
    y_var = std::max(y_var / static_cast<double>(n), 1e-6);

    const double ls_grid[] = {0.1, 0.25, 0.5, 1.0, 2.0};
    const double sv_grid[] = {0.5, 1.0, 2.0};  // multiples of the sample variance
    double best_ml = -std::numeric_limits<double>::infinity();
    double best_ls = 1.0, best_sv = y_var;
    std::vector<double> best_chol, best_alpha;

    std::vector<double> k(n * n), l, alpha;
    for (double ls : ls_grid)
        for (double svm : sv_grid) {
            const double sv = svm * y_var;
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    k[i * n + j] =
                        sv * std::exp(-0.5 * sq_dist(x[i], x[j]) / (ls * ls)) +
                        (i == j ? noise_var_ : 0.0);
            l = k;
            double jitter = 1e-8;
            bool ok = false;
            while (jitter <= 1e-2) {
                if (cholesky(l, n)) {
                    ok = true;
                    break;
                }
                l = k;
                for (std::size_t i = 0; i < n; ++i) l[i * n + i] += jitter;
                jitter *= 10.0;
            }
            if (!ok) continue;
            alpha = yc;
            solve_lower(l, n, alpha);
            double quad = 0.0, logdet = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                quad += alpha[i] * alpha[i];
                logdet += std::log(l[i * n + i]);
            }
            solve_upper_t(l, n, alpha);
            const double ml = -0.5 * quad - logdet -
                              0.5 * static_cast<double>(n) * std::log(2.0 * 3.14159265358979);
            if (ml > best_ml) {
                best_ml = ml;
                best_ls = ls;
                best_sv = sv;
                best_chol = l;
                best_alpha = alpha;
            }
        }

    if (best_chol.empty())
        throw NumericError("surrogate: covariance not positive definite after jitter");
    lengthscale_ = best_ls;
    signal_var_ = best_sv;
    chol_ = std::move(best_chol);
    alpha_ = std::move(best_alpha);
}

void Surrogate::posterior(const std::vector<double>& x, double& mean, double& var) const {
    if (!fitted()) throw ValidationError("surrogate: not fitted");
    const std::size_t n = x_.size();
    std::vector<double> ks(n);
    for (std::size_t i = 0; i < n; ++i) ks[i] = kernel(x_[i], x);
    mean = y_mean_;
    for (std::size_t i = 0; i < n; ++i) mean += ks[i] * alpha_[i];
    std::vector<double> v = ks;
    solve_lower(chol_, n, v);
    double reduction = 0.0;
    for (double vi : v) reduction += vi * vi;
    var = std::max(kernel(x, x) + noise_var_ - reduction, 0.0);
}

Surrogate surrogate_fit(const std::vector<Trial>& trials, const SearchSpace& space) {
    if (trials.empty()) throw ValidationError("surrogate_fit: no trials");
    std::vector<std::vector<double>> x;
    std::vector<double> y;
    for (const Trial& t : trials) {
        x.push_back(encode(t.genome, space));
        // diverged trials contribute F1 = 0 so the surrogate learns the region is bad
        y.push_back(t.status == "ok" ? t.best_val_f1 : 0.0);
    }
    Surrogate s;
    s.fit(x, y);
    return s;
}

double expected_improvement(double mean, double variance, double best_f1) {
    const double sigma = std::sqrt(std::max(variance, 0.0));
    const double delta = mean - best_f1;
    if (sigma < 1e-12) return std::max(delta, 0.0);
    const double z = delta / sigma;
    const double cdf = 0.5 * std::erfc(-z / 1.4142135623730951);
    const double pdf = std::exp(-0.5 * z * z) / 2.5066282746310002;
    return std::max(delta * cdf + sigma * pdf, 0.0);
}

double expected_improvement(const Surrogate& s, const std::vector<double>& x, double best_f1) {
    double mean = 0.0, var = 0.0;
    s.posterior(x, mean, var);
    return expected_improvement(mean, var, best_f1);
}

std::optional<Genome> propose(const Surrogate& s, const std::vector<Trial>& trials,
                              const SearchSpace& space, Rng& rng,
                              const std::vector<int>& input_shape, int n_classes) {
    if (trials.empty()) throw ValidationError("propose: no trials");
    double best_f1 = 0.0;
    std::size_t best_idx = 0;
    for (std::size_t i = 0; i < trials.size(); ++i) {
        const double f1 = trials[i].status == "ok" ? trials[i].best_val_f1 : 0.0;
        if (f1 > best_f1) {
            best_f1 = f1;
            best_idx = i;
        }
    }

    std::vector<Genome> pool;
    for (int i = 0; i < 64; ++i)
        pool.push_back(sample_genome(space, rng, input_shape, n_classes));
    for (MorphOp op : {MorphOp::widen_filters, MorphOp::deepen_block, MorphOp::widen_dense}) {
        const MorphResult m = morph(trials[best_idx].genome, op, space);
        if (m.changed && shape_ok(m.genome, input_shape, n_classes)) pool.push_back(m.genome);
    }

    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    std::vector<double> ei(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i)
        ei[i] = expected_improvement(s, encode(pool[i], space), best_f1);
    std::stable_sort(order.begin(), order.end(),
                     [&ei](std::size_t a, std::size_t b) { return ei[a] > ei[b]; });

    for (std::size_t idx : order) {
        const Genome& g = pool[idx];
        const bool seen = std::any_of(trials.begin(), trials.end(),
                                      [&g](const Trial& t) { return t.genome == g; });
        if (!seen) return g;
    }
    return std::nullopt;  // pool exhausted: search complete
}

SearchResult run_search(const SearchSpace& space, const DataSet& train_set,
                        const DataSet& val_set, const std::vector<double>& class_weights,
                        int n_classes, const SearchOpts& opts) {
    space.validate();
    if (opts.budget < 1) throw ConfigError("run_search: budget must be >= 1");
    const std::vector<int> input_shape{train_set.x.shape[1], train_set.x.shape[2],
                                       train_set.x.shape[3]};
    Rng rng(mix_seed(opts.seed, 0xba7e5));

    SearchResult res;
    auto run_trial = [&](const Genome& g, int id) {
        TrainConfig tc;
        tc.epochs = opts.max_epochs;
        tc.batch_size = opts.batch_size;
        tc.class_weights = class_weights;
        tc.seed = mix_seed(opts.seed, 100 + static_cast<std::uint64_t>(id));
        tc.early_stop_patience = opts.patience;
        const ModelConfig model =
            to_model_config(g, n_classes, mix_seed(opts.seed, 200 + static_cast<std::uint64_t>(id)));
        const TrainingRun run = train(model, train_set, val_set, tc);
        Trial t;
        t.id = id;
        t.genome = g;
        t.seed = tc.seed;
        t.epochs = std::max(run.epochs_trained, 1);
        t.best_val_f1 = run.status == RunStatus::ok ? run.best_val_f1 : 0.0;
        t.status = run.status == RunStatus::ok ? "ok" : "diverged";
        res.trials.push_back(t);
        res.total_epochs += run.epochs_trained;
        const double cur = t.status == "ok" ? t.best_val_f1 : 0.0;
        res.incumbent.push_back(res.incumbent.empty() ? cur
                                                      : std::max(res.incumbent.back(), cur));
    };

    // random warm start, deduplicated
    const int n_init = std::min(opts.k_init, opts.budget);
    for (int id = 0; id < n_init; ++id) {
        Genome g;
        for (int attempt = 0;; ++attempt) {
            g = sample_genome(space, rng, input_shape, n_classes);
            const bool dup = std::any_of(res.trials.begin(), res.trials.end(),
                                         [&g](const Trial& t) { return t.genome == g; });
            if (!dup) break;
            if (attempt > 1000) throw ConfigError("run_search: cannot draw distinct genomes");
        }
        run_trial(g, id);
    }

    for (int id = n_init; id < opts.budget; ++id) {
        const Surrogate s = surrogate_fit(res.trials, space);
        const auto g = propose(s, res.trials, space, rng, input_shape, n_classes);
        if (!g) break;  // search space exhausted
        run_trial(*g, id);
    }

    res.best_trial = 0;
    bool any_ok = false;
    for (std::size_t i = 0; i < res.trials.size(); ++i) {
        if (res.trials[i].status != "ok") continue;
        if (!any_ok || res.trials[i].best_val_f1 >
                           res.trials[static_cast<std::size_t>(res.best_trial)].best_val_f1) {
            res.best_trial = static_cast<int>(i);
            any_ok = true;
        }
    }
    if (!any_ok) throw NumericError("run_search: every trial diverged; search failed");

    const Genome& best = res.trials[static_cast<std::size_t>(res.best_trial)].genome;
    const int retrain_epochs = opts.retrain_epochs > 0 ? opts.retrain_epochs : opts.max_epochs;
    for (int r = 0; r < opts.retrain; ++r) {
        TrainConfig tc;
        tc.epochs = retrain_epochs;
        tc.batch_size = opts.batch_size;
        tc.class_weights = class_weights;
        tc.seed = mix_seed(opts.seed, 1000 + static_cast<std::uint64_t>(r));
        tc.early_stop_patience = opts.patience;
        const ModelConfig model = to_model_config(
            best, n_classes, mix_seed(opts.seed, 2000 + static_cast<std::uint64_t>(r)));
        res.retrain_runs.push_back(train(model, train_set, val_set, tc));
    }
    return res;
}

std::string lifespan_csv(const std::vector<Trial>& trials) {
    std::ostringstream os;
    os << "trial,genome,epochs_trained,best_val_f1,status\n";
    for (const Trial& t : trials) {
        char f1[24];
        std::snprintf(f1, sizeof(f1), "%.6f", t.best_val_f1);
        os << t.id << ',' << t.genome.summary() << ',' << t.epochs << ',' << f1 << ','
           << t.status << '\n';
    }
    return os.str();
}

std::string incumbent_csv(const std::vector<double>& incumbent) {
    std::ostringstream os;
    os << "trial,best_val_f1_so_far\n";
    for (std::size_t i = 0; i < incumbent.size(); ++i) {
        char f1[24];
        std::snprintf(f1, sizeof(f1), "%.6f", incumbent[i]);
        os << i << ',' << f1 << '\n';
    }
    return os.str();
}

std::string trials_jsonl(const std::vector<Trial>& trials) {
    std::ostringstream os;
    for (const Trial& t : trials) {
        nlohmann::json j{{"trial", t.id},
                         {"genome", genome_to_json(t.genome)},
                         {"seed", t.seed},
                         {"epochs", t.epochs},
                         {"best_val_f1", t.best_val_f1},
                         {"status", t.status}};
        os << j.dump() << '\n';
    }
    return os.str();
}

}  // namespace avb
