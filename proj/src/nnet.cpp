#include "avibench/nnet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "avibench/common.hpp"
#include "avibench/rng.hpp"
#include "avibench/splitkit.hpp"

namespace avb {

std::string layer_name(const LayerSpec& l) {
    return std::visit(
        [](const auto& v) -> std::string {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, Conv2D>) return "conv2d";
            if constexpr (std::is_same_v<T, ReLU>) return "relu";
            if constexpr (std::is_same_v<T, MaxPool>) return "maxpool";
            if constexpr (std::is_same_v<T, Flatten>) return "flatten";
            if constexpr (std::is_same_v<T, Dense>) return "dense";
            return "softmax";
        },
        l);
}

nlohmann::json model_config_to_json(const ModelConfig& m) {
    nlohmann::json layers = nlohmann::json::array();
    for (const LayerSpec& l : m.layers) {
        nlohmann::json jl{{"type", layer_name(l)}};
        if (const auto* c = std::get_if<Conv2D>(&l)) {
            jl["filters"] = c->filters;
            jl["kernel"] = c->kernel;
            jl["stride"] = c->stride;
        } else if (const auto* p = std::get_if<MaxPool>(&l)) {
            jl["size"] = p->size;
        } else if (const auto* d = std::get_if<Dense>(&l)) {
            jl["units"] = d->units;
        }
        layers.push_back(jl);
    }
    nlohmann::json opt;
    if (const auto* a = std::get_if<AdamCfg>(&m.optimizer))
        opt = {{"type", "adam"}, {"lr", a->lr}, {"beta1", a->beta1}, {"beta2", a->beta2},
               {"eps", a->eps}};
    else {
        const auto& s = std::get<SgdCfg>(m.optimizer);
        opt = {{"type", "sgd"}, {"lr", s.lr}, {"momentum", s.momentum}};
    }
    return {{"layers", layers}, {"optimizer", opt}, {"init_seed", m.init_seed}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig m;
    for (const auto& jl : j.at("layers")) {
        const std::string type = jl.at("type").get<std::string>();
        if (type == "conv2d")
            m.layers.push_back(Conv2D{jl.at("filters").get<int>(), jl.at("kernel").get<int>(),
                                      jl.value("stride", 1)});
        else if (type == "relu")
            m.layers.push_back(ReLU{});
        else if (type == "maxpool")
            m.layers.push_back(MaxPool{jl.at("size").get<int>()});
        else if (type == "flatten")
            m.layers.push_back(Flatten{});
        else if (type == "dense")
            m.layers.push_back(Dense{jl.at("units").get<int>()});
        else if (type == "softmax")
            m.layers.push_back(Softmax{});
        else
            throw ParseError("model config: unknown layer type '" + type + "'");
    }
    const auto& jo = j.at("optimizer");
    const std::string ot = jo.at("type").get<std::string>();
    if (ot == "adam")
        m.optimizer = AdamCfg{jo.at("lr").get<double>(), jo.value("beta1", 0.9),
                              jo.value("beta2", 0.999), jo.value("eps", 1e-8)};
    else if (ot == "sgd")
        m.optimizer = SgdCfg{jo.at("lr").get<double>(), jo.value("momentum", 0.0)};
    else
        throw ParseError("model config: unknown optimizer '" + ot + "'");
    m.init_seed = j.value("init_seed", std::uint64_t{0});
    return m;
}

std::vector<std::vector<int>> infer_shapes(const ModelConfig& model,
                                           const std::vector<int>& input_shape) {
    if (model.layers.size() < 2 || !std::holds_alternative<Softmax>(model.layers.back()) ||
        !std::holds_alternative<Dense>(model.layers[model.layers.size() - 2]))
        throw ConfigError("model must end with Dense -> Softmax");
    std::vector<std::vector<int>> shapes;
    std::vector<int> cur = input_shape;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const LayerSpec& l = model.layers[i];
        const std::string where =
            "layer " + std::to_string(i) + " (" + layer_name(l) + ")";
        if (const auto* c = std::get_if<Conv2D>(&l)) {
            if (cur.size() != 3) throw ConfigError(where + ": needs a CxHxW input");
            if (c->kernel < 1 || c->kernel % 2 == 0)
                throw ConfigError(where + ": kernel must be odd");
            if (c->filters < 1 || c->stride < 1)
                throw ConfigError(where + ": filters and stride must be >= 1");
            cur = {c->filters, (cur[1] + c->stride - 1) / c->stride,
                   (cur[2] + c->stride - 1) / c->stride};
        } else if (const auto* p = std::get_if<MaxPool>(&l)) {
            if (cur.size() != 3) throw ConfigError(where + ": needs a CxHxW input");
            if (p->size < 1) throw ConfigError(where + ": size must be >= 1");
            const int h = cur[1] / p->size;
            const int w = cur[2] / p->size;
            if (h < 1 || w < 1)
                throw ConfigError(where + ": pooling would reduce a dimension below 1");
            cur = {cur[0], h, w};
        } else if (std::holds_alternative<Flatten>(l)) {
            if (cur.size() != 3) throw ConfigError(where + ": needs a CxHxW input");
            cur = {cur[0] * cur[1] * cur[2]};
        } else if (const auto* d = std::get_if<Dense>(&l)) {
            if (cur.size() != 1) throw ConfigError(where + ": needs a flat input");
            if (d->units < 1) throw ConfigError(where + ": units must be >= 1");
            cur = {d->units};
        } else if (std::holds_alternative<Softmax>(l)) {
            if (cur.size() != 1) throw ConfigError(where + ": needs a flat input");
        }  // ReLU keeps the shape
        shapes.push_back(cur);
    }
    return shapes;
}

Tensor glorot_init(int fan_in, int fan_out, std::uint64_t seed, std::vector<int> shape) {
    if (fan_in < 1 || fan_out < 1) throw ConfigError("glorot_init: fans must be >= 1");
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Tensor t(std::move(shape));
    Rng rng(seed);
    for (double& v : t.data) v = rng.uniform(-limit, limit);
    return t;
}

Params init_params(const ModelConfig& model, const std::vector<int>& input_shape) {
    const auto shapes = infer_shapes(model, input_shape);
    Params params(model.layers.size());
    std::vector<int> cur = input_shape;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const std::uint64_t seed = mix_seed(model.init_seed, i);
        if (const auto* c = std::get_if<Conv2D>(&model.layers[i])) {
            const int in_ch = cur[0];
            const int fan_in = in_ch * c->kernel * c->kernel;
            const int fan_out = c->filters * c->kernel * c->kernel;
            params[i].w =
                glorot_init(fan_in, fan_out, seed, {c->filters, in_ch, c->kernel, c->kernel});
            params[i].b = Tensor({c->filters});
        } else if (const auto* d = std::get_if<Dense>(&model.layers[i])) {
            const int in = cur[0];
            params[i].w = glorot_init(in, d->units, seed, {d->units, in});
            params[i].b = Tensor({d->units});
        }
        cur = shapes[i];
    }
    return params;
}

long param_count(const Params& p) {
    long n = 0;
    for (const LayerParams& lp : p) n += lp.w.size() + lp.b.size();
    return n;
}

// --- per-layer kernels ----------------------------------------------------

namespace {

struct Dims {
    int c, h, w;
};

Dims dims3(const std::vector<int>& s, int offset) {
    return {s[static_cast<std::size_t>(offset)], s[static_cast<std::size_t>(offset) + 1],
            s[static_cast<std::size_t>(offset) + 2]};
}

void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, int stride, Tensor& y) {
    const int batch = x.shape[0];
    const Dims in = dims3(x.shape, 1);
    const int filters = w.shape[0];
    const int k = w.shape[2];
    const Dims out = dims3(y.shape, 1);
    // 'same' padding
    const int pad_h = std::max((out.h - 1) * stride + k - in.h, 0) / 2;
    const int pad_w = std::max((out.w - 1) * stride + k - in.w, 0) / 2;
    const long in_plane = static_cast<long>(in.h) * in.w;
    const long out_plane = static_cast<long>(out.h) * out.w;
    for (int n = 0; n < batch; ++n) {
        const double* xb = x.data.data() + static_cast<long>(n) * in.c * in_plane;
        double* yb = y.data.data() + static_cast<long>(n) * filters * out_plane;
        for (int f = 0; f < filters; ++f) {
            double* yp = yb + static_cast<long>(f) * out_plane;
            const double bias = b.data[static_cast<std::size_t>(f)];
            for (long i = 0; i < out_plane; ++i) yp[i] = bias;
            for (int c = 0; c < in.c; ++c) {
                const double* xp = xb + static_cast<long>(c) * in_plane;
                const double* wp =
                    w.data.data() + ((static_cast<long>(f) * in.c + c) * k) * k;
                for (int u = 0; u < k; ++u)
                    for (int v = 0; v < k; ++v) {
                        const double wv = wp[u * k + v];
                        if (wv == 0.0) continue;
                        for (int oi = 0; oi < out.h; ++oi) {
                            const int ii = oi * stride + u - pad_h;
                            if (ii < 0 || ii >= in.h) continue;
                            const double* xrow = xp + static_cast<long>(ii) * in.w;
                            double* yrow = yp + static_cast<long>(oi) * out.w;
                            for (int oj = 0; oj < out.w; ++oj) {
                                const int jj = oj * stride + v - pad_w;
                                if (jj < 0 || jj >= in.w) continue;
                                yrow[oj] += wv * xrow[jj];
                            }
                        }
                    }
            }
        }
    }
}

void conv_backward(const Tensor& x, const Tensor& w, int stride, const Tensor& dy, Tensor& dx,
                   Tensor& dw, Tensor& db) {
    const int batch = x.shape[0];
    const Dims in = dims3(x.shape, 1);
    const int filters = w.shape[0];
    const int k = w.shape[2];
    const Dims out = dims3(dy.shape, 1);
    const int pad_h = std::max((out.h - 1) * stride + k - in.h, 0) / 2;
    const int pad_w = std::max((out.w - 1) * stride + k - in.w, 0) / 2;
    const long in_plane = static_cast<long>(in.h) * in.w;
    const long out_plane = static_cast<long>(out.h) * out.w;
    for (int n = 0; n < batch; ++n) {
        const double* xb = x.data.data() + static_cast<long>(n) * in.c * in_plane;
        const double* gb = dy.data.data() + static_cast<long>(n) * filters * out_plane;
        double* dxb = dx.data.data() + static_cast<long>(n) * in.c * in_plane;
        for (int f = 0; f < filters; ++f) {
            const double* gp = gb + static_cast<long>(f) * out_plane;
            double acc_b = 0.0;
            for (long i = 0; i < out_plane; ++i) acc_b += gp[i];
            db.data[static_cast<std::size_t>(f)] += acc_b;
            for (int c = 0; c < in.c; ++c) {
                const double* xp = xb + static_cast<long>(c) * in_plane;
                double* dxp = dxb + static_cast<long>(c) * in_plane;
                double* dwp =
                    dw.data.data() + ((static_cast<long>(f) * in.c + c) * k) * k;
                const double* wp =
                    w.data.data() + ((static_cast<long>(f) * in.c + c) * k) * k;
                for (int u = 0; u < k; ++u)
                    for (int v = 0; v < k; ++v) {
                        double acc_w = 0.0;
                        const double wv = wp[u * k + v];
                        for (int oi = 0; oi < out.h; ++oi) {
                            const int ii = oi * stride + u - pad_h;
                            if (ii < 0 || ii >= in.h) continue;
                            const double* xrow = xp + static_cast<long>(ii) * in.w;
                            double* dxrow = dxp + static_cast<long>(ii) * in.w;
                            const double* grow = gp + static_cast<long>(oi) * out.w;
                            for (int oj = 0; oj < out.w; ++oj) {
                                const int jj = oj * stride + v - pad_w;
                                if (jj < 0 || jj >= in.w) continue;
                                acc_w += grow[oj] * xrow[jj];
                                dxrow[jj] += grow[oj] * wv;
                            }
                        }
                        dwp[u * k + v] += acc_w;
                    }
            }
        }
    }
}

}  // namespace

Tensor forward(const ModelConfig& model, const Params& params, const Tensor& batch,
               ForwardCache* cache) {
    if (batch.shape.size() != 4)
        throw ValidationError("forward: batch must be {B, C, H, W}");
    const std::vector<int> input_shape{batch.shape[1], batch.shape[2], batch.shape[3]};
    const auto shapes = infer_shapes(model, input_shape);
    const int b = batch.shape[0];

    // the batch must match the shapes the parameters were built for
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const std::vector<int>& in = i == 0 ? input_shape : shapes[i - 1];
        if (const auto* c = std::get_if<Conv2D>(&model.layers[i])) {
            const std::vector<int> want{c->filters, in[0], c->kernel, c->kernel};
            if (params[i].w.shape != want)
                throw ConfigError("layer " + std::to_string(i) +
                                  " (conv2d): parameter shape does not match the batch");
        } else if (const auto* d = std::get_if<Dense>(&model.layers[i])) {
            const std::vector<int> want{d->units, in[0]};
            if (params[i].w.shape != want)
                throw ConfigError("layer " + std::to_string(i) +
                                  " (dense): parameter shape does not match the batch");
        }
    }

    if (cache) {
        cache->acts.clear();
        cache->pool_argmax.assign(model.layers.size(), {});
        cache->acts.push_back(batch);
    }

    Tensor cur = batch;
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        std::vector<int> out_shape{b};
        out_shape.insert(out_shape.end(), shapes[i].begin(), shapes[i].end());
        Tensor next(out_shape);

        if (const auto* c = std::get_if<Conv2D>(&model.layers[i])) {
            conv_forward(cur, params[i].w, params[i].b, c->stride, next);
        } else if (std::holds_alternative<ReLU>(model.layers[i])) {
            for (long j = 0; j < cur.size(); ++j)
                next.data[static_cast<std::size_t>(j)] =
                    std::max(cur.data[static_cast<std::size_t>(j)], 0.0);
        } else if (const auto* p = std::get_if<MaxPool>(&model.layers[i])) {
            const Dims in = dims3(cur.shape, 1);
            const Dims out = dims3(next.shape, 1);
            std::vector<int>* argmax = cache ? &cache->pool_argmax[i] : nullptr;
            if (argmax) argmax->assign(static_cast<std::size_t>(next.size()), 0);
            const long in_plane = static_cast<long>(in.h) * in.w;
            const long out_plane = static_cast<long>(out.h) * out.w;
            long oidx = 0;
            for (int n = 0; n < b; ++n)
                for (int ch = 0; ch < in.c; ++ch) {
                    const long base = (static_cast<long>(n) * in.c + ch) * in_plane;
                    for (int oi = 0; oi < out.h; ++oi)
                        for (int oj = 0; oj < out.w; ++oj, ++oidx) {
                            double best = -std::numeric_limits<double>::infinity();
                            long best_idx = 0;
                            for (int u = 0; u < p->size; ++u)
                                for (int v = 0; v < p->size; ++v) {
                                    const long idx = base +
                                                     static_cast<long>(oi * p->size + u) * in.w +
                                                     (oj * p->size + v);
                                    if (cur.data[static_cast<std::size_t>(idx)] > best) {
                                        best = cur.data[static_cast<std::size_t>(idx)];
                                        best_idx = idx;
                                    }
                                }
                            next.data[static_cast<std::size_t>(oidx)] = best;
                            if (argmax)
                                (*argmax)[static_cast<std::size_t>(oidx)] =
                                    static_cast<int>(best_idx - base);
                        }
                }
            (void)out_plane;
        } else if (std::holds_alternative<Flatten>(model.layers[i])) {
            next.data = cur.data;  // same row-major layout
        } else if (std::holds_alternative<Dense>(model.layers[i])) {
            const int in_n = cur.shape[1];
            const int out_n = next.shape[1];
            const Tensor& w = params[i].w;
            for (int n = 0; n < b; ++n) {
                const double* xp = cur.data.data() + static_cast<long>(n) * in_n;
                double* yp = next.data.data() + static_cast<long>(n) * out_n;
                for (int o = 0; o < out_n; ++o) {
                    const double* wp = w.data.data() + static_cast<long>(o) * in_n;
                    double acc = params[i].b.data[static_cast<std::size_t>(o)];
                    for (int j = 0; j < in_n; ++j) acc += wp[j] * xp[j];
                    yp[o] = acc;
                }
            }
        } else {  // Softmax
            const int k = cur.shape[1];
            for (int n = 0; n < b; ++n) {
                const double* xp = cur.data.data() + static_cast<long>(n) * k;
                double* yp = next.data.data() + static_cast<long>(n) * k;
                double mx = xp[0];
                for (int j = 1; j < k; ++j) mx = std::max(mx, xp[j]);
                double sum = 0.0;
                for (int j = 0; j < k; ++j) {
                    yp[j] = std::exp(xp[j] - mx);
                    sum += yp[j];
                }
                for (int j = 0; j < k; ++j) yp[j] /= sum;
            }
        }

        cur = std::move(next);
        if (cache) cache->acts.push_back(cur);
    }
    return cur;
}

double weighted_cross_entropy(const Tensor& probs, const std::vector<int>& labels,
                              const std::vector<double>& class_weights) {
    const int b = probs.shape[0];
    const int k = probs.shape[1];
    if (static_cast<int>(labels.size()) != b)
        throw ValidationError("weighted_cross_entropy: batch/label size mismatch");
    double loss = 0.0;
    for (int n = 0; n < b; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        if (y < 0 || y >= k) throw ValidationError("weighted_cross_entropy: label out of range");
        const double w = class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)];
        const double p =
            std::max(probs.data[static_cast<std::size_t>(n) * k + y], 1e-12);
        loss += w * -std::log(p);
    }
    return loss / b;
}

Params backward(const ModelConfig& model, const Params& params, const ForwardCache& cache,
                const Tensor& probs, const std::vector<int>& labels,
                const std::vector<double>& class_weights) {
    const std::size_t n_layers = model.layers.size();
    if (!std::holds_alternative<Softmax>(model.layers.back()))
        throw ConfigError("backward: final layer must be Softmax");
    const int b = probs.shape[0];
    const int k = probs.shape[1];

    Params grads(n_layers);
    for (std::size_t i = 0; i < n_layers; ++i) {
        if (!params[i].w.empty()) {
            grads[i].w = Tensor(params[i].w.shape);
            grads[i].b = Tensor(params[i].b.shape);
        }
    }

    // fused softmax + weighted cross-entropy: dL/dlogit = w_y/B * (p - onehot)
    Tensor grad(cache.acts[n_layers - 1].shape);
    for (int n = 0; n < b; ++n) {
        const int y = labels[static_cast<std::size_t>(n)];
        const double w =
            (class_weights.empty() ? 1.0 : class_weights[static_cast<std::size_t>(y)]) / b;
        for (int j = 0; j < k; ++j) {
            const std::size_t idx = static_cast<std::size_t>(n) * k + j;
            grad.data[idx] = w * (probs.data[idx] - (j == y ? 1.0 : 0.0));
        }
    }

    for (std::size_t li = n_layers - 1; li-- > 0;) {
        const LayerSpec& l = model.layers[li];
        const Tensor& x = cache.acts[li];
        Tensor next_grad(x.shape);

        if (const auto* c = std::get_if<Conv2D>(&l)) {
            conv_backward(x, params[li].w, c->stride, grad, next_grad, grads[li].w,
                          grads[li].b);
        } else if (std::holds_alternative<ReLU>(l)) {
            for (long j = 0; j < x.size(); ++j)
                next_grad.data[static_cast<std::size_t>(j)] =
                    x.data[static_cast<std::size_t>(j)] > 0.0
                        ? grad.data[static_cast<std::size_t>(j)]
                        : 0.0;
        } else if (std::holds_alternative<MaxPool>(l)) {
            const Dims in = dims3(x.shape, 1);
            const long in_plane = static_cast<long>(in.h) * in.w;
            const std::vector<int>& argmax = cache.pool_argmax[li];
            const long out_per_plane = grad.size() / (static_cast<long>(b) * in.c);
            long oidx = 0;
            for (int n = 0; n < b; ++n)
                for (int ch = 0; ch < in.c; ++ch) {
                    const long base = (static_cast<long>(n) * in.c + ch) * in_plane;
                    for (long j = 0; j < out_per_plane; ++j, ++oidx)
                        next_grad.data[static_cast<std::size_t>(
                            base + argmax[static_cast<std::size_t>(oidx)])] +=
                            grad.data[static_cast<std::size_t>(oidx)];
                }
        } else if (std::holds_alternative<Flatten>(l)) {
            next_grad.data = grad.data;
        } else if (std::holds_alternative<Dense>(l)) {
            const int in_n = x.shape[1];
            const int out_n = grad.shape[1];
            const Tensor& w = params[li].w;
            for (int n = 0; n < b; ++n) {
                const double* xp = x.data.data() + static_cast<long>(n) * in_n;
                const double* gp = grad.data.data() + static_cast<long>(n) * out_n;
                double* dxp = next_grad.data.data() + static_cast<long>(n) * in_n;
                for (int o = 0; o < out_n; ++o) {
                    const double g = gp[o];
                    grads[li].b.data[static_cast<std::size_t>(o)] += g;
                    double* dwp = grads[li].w.data.data() + static_cast<long>(o) * in_n;
                    const double* wp = w.data.data() + static_cast<long>(o) * in_n;
                    for (int j = 0; j < in_n; ++j) {
                        dwp[j] += g * xp[j];
                        dxp[j] += g * wp[j];
                    }
                }
            }
        } else {
            throw ConfigError("backward: unexpected inner Softmax layer");
        }

        grad = std::move(next_grad);
    }
    return grads;
}

// --- optimizers -------------------------------------------------------------

OptState init_opt_state(const OptimizerCfg& cfg, const Params& params) {
    auto zeros_like = [&params]() {
        std::vector<LayerParams> z(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            if (!params[i].w.empty()) {
                z[i].w = Tensor(params[i].w.shape);
                z[i].b = Tensor(params[i].b.shape);
            }
        return z;
    };
    if (std::holds_alternative<AdamCfg>(cfg)) {
        AdamState s;
        s.m = zeros_like();
        s.v = zeros_like();
        s.t = 0;
        return s;
    }
    SgdState s;
    s.velocity = zeros_like();
    return s;
}

namespace {

void adam_update(Tensor& p, const Tensor& g, Tensor& m, Tensor& v, const AdamCfg& cfg,
                 long t) {
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * g.data[i];
        v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * g.data[i] * g.data[i];
        const double mhat = m.data[i] / bc1;
        const double vhat = v.data[i] / bc2;
        p.data[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

void sgd_update(Tensor& p, const Tensor& g, Tensor& vel, const SgdCfg& cfg) {
    for (std::size_t i = 0; i < p.data.size(); ++i) {
        vel.data[i] = cfg.momentum * vel.data[i] - cfg.lr * g.data[i];
        p.data[i] += vel.data[i];
    }
}

}  // namespace

void opt_step(Params& params, const Params& grads, OptState& state, const OptimizerCfg& cfg) {
    if (auto* adam = std::get_if<AdamState>(&state)) {
        const AdamCfg& c = std::get<AdamCfg>(cfg);
        ++adam->t;
        for (std::size_t i = 0; i < params.size(); ++i)
            if (!params[i].w.empty()) {
                adam_update(params[i].w, grads[i].w, adam->m[i].w, adam->v[i].w, c, adam->t);
                adam_update(params[i].b, grads[i].b, adam->m[i].b, adam->v[i].b, c, adam->t);
            }
    } else {
        auto& sgd = std::get<SgdState>(state);
        const SgdCfg& c = std::get<SgdCfg>(cfg);
        for (std::size_t i = 0; i < params.size(); ++i)
            if (!params[i].w.empty()) {
                sgd_update(params[i].w, grads[i].w, sgd.velocity[i].w, c);
                sgd_update(params[i].b, grads[i].b, sgd.velocity[i].b, c);
            }
    }
}

// --- training ---------------------------------------------------------------

namespace {

Tensor slice_batch(const Tensor& x, const std::vector<std::size_t>& order, std::size_t begin,
                   std::size_t end) {
    const long sample = x.size() / x.shape[0];
    std::vector<int> shape = x.shape;
    shape[0] = static_cast<int>(end - begin);
    Tensor out(shape);
    for (std::size_t i = begin; i < end; ++i)
        std::memcpy(out.data.data() + static_cast<long>(i - begin) * sample,
                    x.data.data() + static_cast<long>(order[i]) * sample,
                    static_cast<std::size_t>(sample) * sizeof(double));
    return out;
}

}  // namespace

std::vector<int> predict(const ModelConfig& model, const Params& params, const DataSet& data,
                         int batch_size) {
    const int n = data.n();
    std::vector<std::size_t> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
    std::vector<int> preds(static_cast<std::size_t>(n));
    for (int begin = 0; begin < n; begin += batch_size) {
        const int end = std::min(n, begin + batch_size);
        const Tensor probs =
            forward(model, params,
                    slice_batch(data.x, order, static_cast<std::size_t>(begin),
                                static_cast<std::size_t>(end)));
        const int k = probs.shape[1];
        for (int i = 0; i < end - begin; ++i) {
            const double* row = probs.data.data() + static_cast<long>(i) * k;
            preds[static_cast<std::size_t>(begin + i)] =
                static_cast<int>(std::max_element(row, row + k) - row);
        }
    }
    return preds;
}

double macro_f1_on(const ModelConfig& model, const Params& params, const DataSet& data,
                   int n_classes) {
    const auto preds = predict(model, params, data);
    return f1_scores(confusion(preds, data.y, n_classes)).macro_f1;
}

TrainingRun train(const ModelConfig& model, const DataSet& train_set, const DataSet& val_set,
                  const TrainConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.epochs < 1 || cfg.batch_size < 1)
        throw ConfigError("train: epochs and batch_size must be >= 1");
    if (train_set.n() == 0 || val_set.n() == 0)
        throw ValidationError("train: empty train or validation set");
    const std::vector<int> input_shape{train_set.x.shape[1], train_set.x.shape[2],
                                       train_set.x.shape[3]};
    const auto shapes = infer_shapes(model, input_shape);
    const int k = shapes.back()[0];

    TrainingRun run;
    Params params = init_params(model, input_shape);
    OptState opt = init_opt_state(model.optimizer, params);
    const std::vector<double> no_weights;

    double best_f1 = -1.0;
    const int n = train_set.n();
    std::vector<std::size_t> base_order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        base_order[static_cast<std::size_t>(i)] = static_cast<std::size_t>(i);
    std::vector<int> batch_labels;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = shuffle_training(base_order, epoch_seed(cfg.seed, epoch));
        double loss_sum = 0.0;
        for (int begin = 0; begin < n; begin += cfg.batch_size) {
            const int end = std::min(n, begin + cfg.batch_size);
            const Tensor batch = slice_batch(train_set.x, order,
                                             static_cast<std::size_t>(begin),
                                             static_cast<std::size_t>(end));
            batch_labels.assign(static_cast<std::size_t>(end - begin), 0);
            for (int i = begin; i < end; ++i)
                batch_labels[static_cast<std::size_t>(i - begin)] =
                    train_set.y[order[static_cast<std::size_t>(i)]];
            ForwardCache cache;
            const Tensor probs = forward(model, params, batch, &cache);
            const double batch_loss =
                weighted_cross_entropy(probs, batch_labels, cfg.class_weights);
            if (!std::isfinite(batch_loss)) {
                run.status = RunStatus::diverged;
                run.diagnostic = "non-finite training loss at epoch " + std::to_string(epoch) +
                                 "; lower the learning rate";
                break;
            }
            loss_sum += batch_loss * (end - begin);
            const Params grads =
                backward(model, params, cache, probs, batch_labels, cfg.class_weights);
            opt_step(params, grads, opt, model.optimizer);
            ++run.opt_steps;
        }
        if (run.status == RunStatus::diverged) break;

        run.train_loss.push_back(loss_sum / n);

        // validation pass: unweighted loss + macro F1
        const Tensor val_probs = forward(model, params, val_set.x);
        const double vloss = weighted_cross_entropy(val_probs, val_set.y, no_weights);
        std::vector<int> val_preds(static_cast<std::size_t>(val_set.n()));
        for (int i = 0; i < val_set.n(); ++i) {
            const double* row = val_probs.data.data() + static_cast<long>(i) * k;
            val_preds[static_cast<std::size_t>(i)] =
                static_cast<int>(std::max_element(row, row + k) - row);
        }
        const double vf1 = f1_scores(confusion(val_preds, val_set.y, k)).macro_f1;
        if (!std::isfinite(vloss)) {
            run.status = RunStatus::diverged;
            run.diagnostic = "non-finite validation loss at epoch " + std::to_string(epoch);
            break;
        }
        run.val_loss.push_back(vloss);
        run.val_f1.push_back(vf1);
        ++run.epochs_trained;

        if (vf1 > best_f1) {
            best_f1 = vf1;
            run.best_epoch = epoch;
            run.best_val_f1 = vf1;
            run.final_params = params;
        }
        if (cfg.early_stop_patience && epoch - run.best_epoch >= *cfg.early_stop_patience)
            break;
    }

    if (run.final_params.empty()) run.final_params = params;  // diverged before any epoch
    run.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

std::string training_run_csv(const TrainingRun& run) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_macro_f1\n";
    for (int e = 0; e < run.epochs_trained; ++e) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", e,
                      run.train_loss[static_cast<std::size_t>(e)],
                      run.val_loss[static_cast<std::size_t>(e)],
                      run.val_f1[static_cast<std::size_t>(e)]);
        os << buf;
    }
    return os.str();
}

// --- checkpoint ---------------------------------------------------------------

void save_checkpoint(const std::string& path, const ModelConfig& model, const Params& params,
                     const nlohmann::json& meta) {
    nlohmann::json header;
    header["model"] = model_config_to_json(model);
    header["meta"] = meta;
    const std::string hs = header.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out.write("AVBC", 4);
    const std::uint32_t len = static_cast<std::uint32_t>(hs.size());
    const char lb[4] = {static_cast<char>(len), static_cast<char>(len >> 8),
                        static_cast<char>(len >> 16), static_cast<char>(len >> 24)};
    out.write(lb, 4);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    auto dump = [&out](const Tensor& t) {
        for (double v : t.data) {
            const float f = static_cast<float>(v);
            out.write(reinterpret_cast<const char*>(&f), 4);
        }
    };
    for (const LayerParams& lp : params) {
        dump(lp.w);
        dump(lp.b);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "AVBC", 4) != 0)
        throw ParseError(path + ": not a checkpoint file");
    unsigned char lb[4];
    in.read(reinterpret_cast<char*>(lb), 4);
    const std::uint32_t len = static_cast<std::uint32_t>(lb[0]) |
                              (static_cast<std::uint32_t>(lb[1]) << 8) |
                              (static_cast<std::uint32_t>(lb[2]) << 16) |
                              (static_cast<std::uint32_t>(lb[3]) << 24);
    std::string hs(len, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(len));
    if (!in) throw ParseError(path + ": truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": bad header: " + e.what());
    }
    Checkpoint cp;
    cp.model = model_config_from_json(header.at("model"));
    cp.meta = header.value("meta", nlohmann::json::object());

    const auto input_shape = cp.meta.at("input_shape").get<std::vector<int>>();
    cp.params = init_params(cp.model, input_shape);
    auto slurp = [&in, &path](Tensor& t) {
        for (double& v : t.data) {
            float f;
            in.read(reinterpret_cast<char*>(&f), 4);
            if (!in) throw ParseError(path + ": truncated parameter blob");
            v = static_cast<double>(f);
        }
    };
    for (LayerParams& lp : cp.params) {
        slurp(lp.w);
        slurp(lp.b);
    }
    return cp;
}

}  // namespace avb
