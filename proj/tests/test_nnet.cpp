#include <doctest.h>

#include <cmath>
#include <vector>

#include "avibench/common.hpp"
#include "avibench/nnet.hpp"
#include "avibench/rng.hpp"
#include "test_util.hpp"

using namespace avb;

namespace {

// flattened read/write access to every parameter entry, for finite differences
std::vector<double*> param_view(Params& p) {
    std::vector<double*> out;
    for (LayerParams& lp : p) {
        for (double& v : lp.w.data) out.push_back(&v);
        for (double& v : lp.b.data) out.push_back(&v);
    }
    return out;
}

std::vector<double> grad_flat(const Params& g) {
    std::vector<double> out;
    for (const LayerParams& lp : g) {
        out.insert(out.end(), lp.w.data.begin(), lp.w.data.end());
        out.insert(out.end(), lp.b.data.begin(), lp.b.data.end());
    }
    return out;
}

Tensor random_batch(std::vector<int> shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (double& v : t.data) v = rng.uniform();
    return t;
}

double loss_of(const ModelConfig& model, const Params& params, const Tensor& batch,
               const std::vector<int>& labels, const std::vector<double>& weights) {
    return weighted_cross_entropy(forward(model, params, batch), labels, weights);
}

// Zero-initialized biases put conv outputs of all-dead receptive fields
// exactly on the ReLU kink, where finite differences are meaningless; the
// check must run at a generic point, so jitter every parameter first.
void jitter_params(Params& p, std::uint64_t seed) {
    Rng rng(seed);
    for (LayerParams& lp : p) {
        for (double& v : lp.w.data) v += 0.02 * (rng.uniform() - 0.5);
        for (double& v : lp.b.data) v += 0.2 * (rng.uniform() - 0.5);
    }
}

// max relative error between reverse-mode and central finite differences
double max_grad_rel_err(const ModelConfig& model, Params params, const Tensor& batch,
                        const std::vector<int>& labels, const std::vector<double>& weights) {
    ForwardCache cache;
    const Tensor probs = forward(model, params, batch, &cache);
    const Params grads = backward(model, params, cache, probs, labels, weights);
    const std::vector<double> g = grad_flat(grads);
    const std::vector<double*> view = param_view(params);
    REQUIRE(g.size() == view.size());
    const double eps = 1e-4;
    double worst = 0.0;
    for (std::size_t i = 0; i < view.size(); ++i) {
        const double orig = *view[i];
        *view[i] = orig + eps;
        const double lp = loss_of(model, params, batch, labels, weights);
        *view[i] = orig - eps;
        const double lm = loss_of(model, params, batch, labels, weights);
        *view[i] = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double denom = std::max({std::abs(fd), std::abs(g[i]), 1e-8});
        worst = std::max(worst, std::abs(fd - g[i]) / denom);
    }
    return worst;
}

}  // namespace

TEST_CASE("glorot_init: bounds, variance, determinism") {
    SUBCASE("fan 3/3 gives L = 1") {
        const Tensor t = glorot_init(3, 3, 5, {3, 3});
        for (double v : t.data) {
            CHECK(v >= -1.0);
            CHECK(v <= 1.0);
        }
    }
    SUBCASE("empirical variance of 1e6 draws is L^2/3 within 2%") {
        const int n = 1'000'000;
        const Tensor t = glorot_init(100, 100, 6, {n});
        const double L = std::sqrt(6.0 / 200.0);
        double mean = 0.0;
        for (double v : t.data) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : t.data) var += (v - mean) * (v - mean);
        var /= n;
        CHECK(var == doctest::Approx(L * L / 3.0).epsilon(0.02));
    }
    SUBCASE("same seed twice is identical") {
        CHECK(glorot_init(10, 20, 77, {10, 20}).data == glorot_init(10, 20, 77, {10, 20}).data);
        CHECK(glorot_init(10, 20, 77, {10, 20}).data != glorot_init(10, 20, 78, {10, 20}).data);
    }
}

TEST_CASE("infer_shapes: conv/pool arithmetic and validation") {
    ModelConfig m;
    m.layers = {Conv2D{4, 3, 1}, ReLU{}, MaxPool{2}, Flatten{}, Dense{3}, Softmax{}};
    const auto shapes = infer_shapes(m, {1, 8, 10});
    CHECK(shapes[0] == std::vector<int>{4, 8, 10});  // same padding
    CHECK(shapes[2] == std::vector<int>{4, 4, 5});   // non-overlapping pool
    CHECK(shapes[3] == std::vector<int>{80});
    CHECK(shapes[4] == std::vector<int>{3});

    SUBCASE("strided conv rounds up") {
        ModelConfig s;
        s.layers = {Conv2D{2, 3, 2}, Flatten{}, Dense{2}, Softmax{}};
        CHECK(infer_shapes(s, {1, 7, 7})[0] == std::vector<int>{2, 4, 4});
    }
    SUBCASE("pool drops the trailing remainder") {
        ModelConfig s;
        s.layers = {MaxPool{2}, Flatten{}, Dense{2}, Softmax{}};
        CHECK(infer_shapes(s, {1, 5, 5})[0] == std::vector<int>{1, 2, 2});
    }
    SUBCASE("pool collapsing a dimension to zero names the layer") {
        ModelConfig s;
        s.layers = {MaxPool{4}, Flatten{}, Dense{2}, Softmax{}};
        CHECK_THROWS_AS(infer_shapes(s, {1, 3, 3}), ConfigError);
    }
    SUBCASE("network must end Dense -> Softmax") {
        ModelConfig s;
        s.layers = {Flatten{}, Dense{2}};
        CHECK_THROWS_AS(infer_shapes(s, {1, 4, 4}), ConfigError);
    }
    SUBCASE("even kernels rejected") {
        ModelConfig s;
        s.layers = {Conv2D{2, 4, 1}, Flatten{}, Dense{2}, Softmax{}};
        CHECK_THROWS_AS(infer_shapes(s, {1, 4, 4}), ConfigError);
    }
}

TEST_CASE("forward: closed-form cases") {
    SUBCASE("dense on zero input with zero bias is uniform") {
        ModelConfig m;
        m.layers = {Flatten{}, Dense{4}, Softmax{}};
        const Params p = init_params(m, {1, 2, 2});
        Tensor zero({3, 1, 2, 2});
        const Tensor probs = forward(m, p, zero);
        REQUIRE(probs.shape == std::vector<int>{3, 4});
        for (double v : probs.data) CHECK(v == doctest::Approx(0.25));
    }
    SUBCASE("1x1 identity conv passes the feature map through") {
        ModelConfig m;
        m.layers = {Conv2D{1, 1, 1}, Flatten{}, Dense{2}, Softmax{}};
        Params p = init_params(m, {1, 3, 3});
        p[0].w.data.assign(p[0].w.data.size(), 1.0);
        p[0].b.data.assign(p[0].b.data.size(), 0.0);
        Rng rng(2);
        const Tensor x = random_batch({1, 1, 3, 3}, rng);
        ForwardCache cache;
        forward(m, p, x, &cache);
        CHECK(cache.acts[1].data == x.data);
    }
    SUBCASE("softmax rows sum to one on random models") {
        ModelConfig m;
        m.layers = {Conv2D{3, 3, 1}, ReLU{}, MaxPool{2}, Flatten{}, Dense{5}, Softmax{}};
        m.init_seed = 3;
        const Params p = init_params(m, {1, 6, 6});
        Rng rng(4);
        const Tensor probs = forward(m, p, random_batch({4, 1, 6, 6}, rng));
        for (int b = 0; b < 4; ++b) {
            double row = 0.0;
            for (int k = 0; k < 5; ++k) {
                const double v = probs.data[static_cast<std::size_t>(b) * 5 + k];
                CHECK(v >= 0.0);
                row += v;
            }
            CHECK(row == doctest::Approx(1.0).epsilon(1e-6));
        }
    }
    SUBCASE("batch shape mismatch names the layer") {
        ModelConfig m;
        m.layers = {Flatten{}, Dense{2}, Softmax{}};
        const Params p = init_params(m, {1, 2, 2});
        Tensor bad({2, 1, 3, 3});
        CHECK_THROWS_AS(forward(m, p, bad), ConfigError);
    }
}

TEST_CASE("weighted_cross_entropy: closed forms") {
    SUBCASE("perfect prediction has zero loss") {
        Tensor probs({2, 2});
        probs.data = {1.0, 0.0, 0.0, 1.0};
        CHECK(weighted_cross_entropy(probs, {0, 1}, {}) == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("uniform probabilities, K=20 gives ln 20") {
        Tensor probs({1, 20});
        probs.data.assign(20, 1.0 / 20.0);
        CHECK(weighted_cross_entropy(probs, {7}, {}) == doctest::Approx(std::log(20.0)));
        CHECK(weighted_cross_entropy(probs, {7}, {}) == doctest::Approx(2.9957).epsilon(1e-4));
    }
    SUBCASE("doubling the weights doubles the loss") {
        Tensor probs({2, 3});
        probs.data = {0.5, 0.3, 0.2, 0.1, 0.6, 0.3};
        const std::vector<double> w{1.0, 2.0, 0.5};
        std::vector<double> w2 = w;
        for (double& v : w2) v *= 2.0;
        CHECK(weighted_cross_entropy(probs, {0, 2}, w2) ==
              doctest::Approx(2.0 * weighted_cross_entropy(probs, {0, 2}, w)));
    }
    SUBCASE("balanced weights on a balanced batch equal the unweighted loss") {
        Tensor probs({2, 2});
        probs.data = {0.7, 0.3, 0.4, 0.6};
        CHECK(weighted_cross_entropy(probs, {0, 1}, {1.0, 1.0}) ==
              weighted_cross_entropy(probs, {0, 1}, {}));
    }
}

TEST_CASE("backward: softmax+CE logit gradient is probs minus one-hot") {
    // single Dense on a 1-entry input: dL/d(logit) lands directly on the
    // bias gradient, so the closed form is visible without conv plumbing
    ModelConfig m;
    m.layers = {Flatten{}, Dense{3}, Softmax{}};
    Params p = init_params(m, {1, 1, 1});
    Rng rng(8);
    for (double& v : p[1].w.data) v = rng.uniform() - 0.5;
    for (double& v : p[1].b.data) v = rng.uniform() - 0.5;
    Tensor x({1, 1, 1, 1});
    x.data = {0.0};  // zero input isolates the bias path
    ForwardCache cache;
    const Tensor probs = forward(m, p, x, &cache);
    const Params grads = backward(m, p, cache, probs, {1}, {});
    for (int k = 0; k < 3; ++k)
        CHECK(grads[1].b.data[static_cast<std::size_t>(k)] ==
              doctest::Approx(probs.data[static_cast<std::size_t>(k)] - (k == 1 ? 1.0 : 0.0))
                  .epsilon(1e-12));
}

TEST_CASE("backward: finite-difference oracle on a 2-conv-1-dense model") {
    ModelConfig m;
    m.layers = {Conv2D{3, 3, 1}, ReLU{}, MaxPool{2}, Conv2D{4, 3, 1}, ReLU{},
                Flatten{},       Dense{3}, Softmax{}};
    m.init_seed = 11;
    Params p = init_params(m, {1, 8, 8});
    jitter_params(p, 99);
    Rng rng(12);
    const Tensor batch = random_batch({3, 1, 8, 8}, rng);
    const std::vector<int> labels{0, 2, 1};
    const std::vector<double> weights{0.5, 1.5, 1.0};
    CHECK(max_grad_rel_err(m, p, batch, labels, weights) < 1e-4);
}

TEST_CASE("backward: all-zero class weights zero every gradient") {
    ModelConfig m;
    m.layers = {Conv2D{2, 3, 1}, ReLU{}, Flatten{}, Dense{2}, Softmax{}};
    m.init_seed = 13;
    const Params p = init_params(m, {1, 4, 4});
    Rng rng(14);
    const Tensor batch = random_batch({2, 1, 4, 4}, rng);
    ForwardCache cache;
    const Tensor probs = forward(m, p, batch, &cache);
    const Params grads = backward(m, p, cache, probs, {0, 1}, {0.0, 0.0});
    for (double g : grad_flat(grads)) CHECK(g == 0.0);
}

TEST_CASE("adam: first-step closed form and degenerate cases") {
    ModelConfig m;
    m.layers = {Flatten{}, Dense{2}, Softmax{}};
    const AdamCfg adam{1e-3, 0.9, 0.999, 1e-8};
    Params p = init_params(m, {1, 1, 2});
    Params p0 = p;
    Params grads = p;  // same shapes
    for (LayerParams& lp : grads) {
        for (double& v : lp.w.data) v = 0.25;
        for (double& v : lp.b.data) v = -0.5;
    }
    OptState st = init_opt_state(adam, p);
    opt_step(p, grads, st, adam);
    // at t=1: m̂ = g, v̂ = g², so Δ = lr·g/(|g| + ε) regardless of |g|
    const auto v0 = param_view(p0);
    const auto v1 = param_view(p);
    const auto gv = grad_flat(grads);
    for (std::size_t i = 0; i < v1.size(); ++i) {
        const double g = gv[i];
        const double expect = adam.lr * g / (std::abs(g) + adam.eps);
        CHECK(*v1[i] - *v0[i] == doctest::Approx(-expect).epsilon(1e-10));
    }

    SUBCASE("an all-zero gradient stream never moves parameters") {
        Params q = p0;
        OptState fresh = init_opt_state(adam, q);
        Params zero_g = grads;
        for (LayerParams& lp : zero_g) {
            lp.w.data.assign(lp.w.data.size(), 0.0);
            lp.b.data.assign(lp.b.data.size(), 0.0);
        }
        for (int i = 0; i < 5; ++i) opt_step(q, zero_g, fresh, adam);
        CHECK(grad_flat(q) == grad_flat(p0));
    }
}

TEST_CASE("adam: identical streams give identical trajectories") {
    ModelConfig m;
    m.layers = {Flatten{}, Dense{3}, Softmax{}};
    const AdamCfg adam{1e-2, 0.9, 0.999, 1e-8};
    Params a = init_params(m, {1, 2, 2});
    Params b = a;
    OptState sa = init_opt_state(adam, a);
    OptState sb = init_opt_state(adam, b);
    Rng rng(15);
    for (int step = 0; step < 20; ++step) {
        Params g = a;
        for (LayerParams& lp : g) {
            for (double& v : lp.w.data) v = rng.normal();
            for (double& v : lp.b.data) v = rng.normal();
        }
        opt_step(a, g, sa, adam);
        opt_step(b, g, sb, adam);
    }
    CHECK(grad_flat(a) == grad_flat(b));
}

TEST_CASE("sgd momentum accumulates velocity") {
    ModelConfig m;
    m.layers = {Flatten{}, Dense{2}, Softmax{}};
    const SgdCfg sgd{0.1, 0.9};
    Params p = init_params(m, {1, 1, 1});
    for (LayerParams& lp : p) {
        lp.w.data.assign(lp.w.data.size(), 0.0);
        lp.b.data.assign(lp.b.data.size(), 0.0);
    }
    Params g = p;
    for (LayerParams& lp : g) {
        lp.w.data.assign(lp.w.data.size(), 1.0);
        lp.b.data.assign(lp.b.data.size(), 1.0);
    }
    OptState st = init_opt_state(sgd, p);
    opt_step(p, g, st, sgd);  // v = -0.1
    opt_step(p, g, st, sgd);  // v = -0.19
    for (double* v : param_view(p)) CHECK(*v == doctest::Approx(-0.29).epsilon(1e-12));
}

namespace {

// two well-separated point clouds, flattened into {N,1,2,2} tensors
DataSet separable_toy(int n_per_class, std::uint64_t seed) {
    DataSet ds;
    ds.x = Tensor({2 * n_per_class, 1, 2, 2});
    Rng rng(seed);
    for (int i = 0; i < 2 * n_per_class; ++i) {
        const int label = i < n_per_class ? 0 : 1;
        const double base = label == 0 ? 0.1 : 0.9;
        for (int j = 0; j < 4; ++j)
            ds.x.data[static_cast<std::size_t>(i) * 4 + j] = base + 0.05 * rng.normal();
        ds.y.push_back(label);
    }
    return ds;
}

}  // namespace

TEST_CASE("train: converges on a linearly separable toy") {
    ModelConfig m;
    m.layers = {Flatten{}, Dense{2}, Softmax{}};
    m.optimizer = AdamCfg{0.01, 0.9, 0.999, 1e-8};
    m.init_seed = 21;
    const DataSet train_set = separable_toy(20, 22);
    const DataSet val_set = separable_toy(5, 23);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.batch_size = 8;
    cfg.seed = 24;
    const TrainingRun run = train(m, train_set, val_set, cfg);
    CHECK(run.status == RunStatus::ok);
    CHECK(run.epochs_trained == 50);
    CHECK(run.train_loss.back() < 0.1);
    CHECK(run.best_val_f1 == doctest::Approx(1.0));
    CHECK(macro_f1_on(m, run.final_params, val_set, 2) == doctest::Approx(1.0));
}

TEST_CASE("train: bookkeeping and determinism") {
    ModelConfig m;
    m.layers = {Flatten{}, Dense{2}, Softmax{}};
    m.init_seed = 31;
    const DataSet train_set = separable_toy(4, 32);  // 8 samples
    const DataSet val_set = separable_toy(2, 33);
    TrainConfig cfg;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.seed = 34;
    SUBCASE("one epoch, one batch, one step") {
        const TrainingRun run = train(m, train_set, val_set, cfg);
        CHECK(run.opt_steps == 1);
        CHECK(run.train_loss.size() == 1);
        CHECK(run.val_loss.size() == 1);
        CHECK(run.val_f1.size() == 1);
    }
    SUBCASE("partial final batch kept") {
        cfg.batch_size = 3;  // 8 = 3+3+2
        const TrainingRun run = train(m, train_set, val_set, cfg);
        CHECK(run.opt_steps == 3);
    }
    SUBCASE("same seed gives bit-identical curves") {
        cfg.epochs = 5;
        const TrainingRun a = train(m, train_set, val_set, cfg);
        const TrainingRun b = train(m, train_set, val_set, cfg);
        CHECK(a.train_loss == b.train_loss);
        CHECK(a.val_loss == b.val_loss);
        CHECK(a.val_f1 == b.val_f1);
        CHECK(grad_flat(const_cast<Params&>(a.final_params)) ==
              grad_flat(const_cast<Params&>(b.final_params)));
    }
    SUBCASE("early stopping honors patience") {
        cfg.epochs = 40;
        cfg.early_stop_patience = 3;
        const TrainingRun run = train(m, train_set, val_set, cfg);
        CHECK(run.epochs_trained <= 40);
        CHECK(run.epochs_trained - 1 - run.best_epoch >= 0);
        if (run.epochs_trained < 40)
            CHECK(run.epochs_trained - 1 - run.best_epoch == *cfg.early_stop_patience);
    }
}

TEST_CASE("train: divergence is reported, not hidden") {
    ModelConfig m;
    // two stacked dense layers square the parameter scale each forward pass,
    // so a huge learning rate overflows the logits to inf and the softmax
    // to nan within a couple of steps
    m.layers = {Flatten{}, Dense{8}, Dense{2}, Softmax{}};
    m.optimizer = SgdCfg{1e100, 0.0};
    m.init_seed = 41;
    const DataSet ds = separable_toy(4, 42);
    TrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 4;
    cfg.seed = 43;
    const TrainingRun run = train(m, ds, ds, cfg);
    CHECK(run.status == RunStatus::diverged);
    CHECK(!run.diagnostic.empty());
}

TEST_CASE("training_run_csv header and row count") {
    TrainingRun run;
    run.train_loss = {1.0, 0.5};
    run.val_loss = {1.1, 0.6};
    run.val_f1 = {0.4, 0.7};
    run.epochs_trained = 2;
    const std::string csv = training_run_csv(run);
    CHECK(csv.rfind("epoch,train_loss,val_loss,val_macro_f1\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("checkpoint round-trip preserves config and f32 parameters") {
    TempDir tmp("ckpt");
    ModelConfig m;
    m.layers = {Conv2D{2, 3, 1}, ReLU{}, MaxPool{2}, Flatten{}, Dense{3}, Softmax{}};
    m.optimizer = SgdCfg{0.05, 0.9};
    m.init_seed = 51;
    const Params p = init_params(m, {1, 6, 6});
    nlohmann::json meta;
    meta["input_shape"] = std::vector<int>{1, 6, 6};
    meta["note"] = "round-trip";
    save_checkpoint(tmp.file("m.avbc"), m, p, meta);
    const Checkpoint back = load_checkpoint(tmp.file("m.avbc"));
    CHECK(back.meta.at("note") == "round-trip");
    CHECK(back.model.layers.size() == m.layers.size());
    CHECK(std::holds_alternative<SgdCfg>(back.model.optimizer));
    REQUIRE(back.params.size() == p.size());
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < p[i].w.data.size(); ++j)
            CHECK(back.params[i].w.data[j] ==
                  doctest::Approx(p[i].w.data[j]).epsilon(1e-6));  // f32 storage
    CHECK_THROWS_AS(load_checkpoint(tmp.file("missing.avbc")), IoError);
}

TEST_CASE("model config JSON round-trip") {
    ModelConfig m;
    m.layers = {Conv2D{8, 5, 2}, ReLU{}, MaxPool{3}, Flatten{}, Dense{4}, Softmax{}};
    m.optimizer = AdamCfg{3e-4, 0.9, 0.999, 1e-8};
    m.init_seed = 61;
    const ModelConfig back = model_config_from_json(model_config_to_json(m));
    CHECK(back.init_seed == 61);
    REQUIRE(back.layers.size() == m.layers.size());
    CHECK(std::get<Conv2D>(back.layers[0]).filters == 8);
    CHECK(std::get<Conv2D>(back.layers[0]).kernel == 5);
    CHECK(std::get<Conv2D>(back.layers[0]).stride == 2);
    CHECK(std::get<MaxPool>(back.layers[2]).size == 3);
    CHECK(std::get<Dense>(back.layers[4]).units == 4);
    CHECK(std::get<AdamCfg>(back.optimizer).lr == doctest::Approx(3e-4));
}
