#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "difac/error.hpp"
#include "difac/graph.hpp"
#include "difac/matrix.hpp"
#include "difac/rng.hpp"

namespace difac {

enum class Activation { relu, linear };

inline Activation activation_from_string(const std::string& s) {
    if (s == "relu") return Activation::relu;
    if (s == "linear") return Activation::linear;
    throw ConfigError("unknown activation '" + s + "'");
}

inline std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

// Two-layer graph-convolution parameters: input -> hidden -> output, with
// optional biases added after neighborhood aggregation.
template <class T>
struct ModelParams {
    Dense<T> w1, w2;   // in x hidden, hidden x out
    Dense<T> b1, b2;   // 1 x hidden, 1 x out; empty rows when bias disabled
    bool has_bias() const { return !b1.a.empty(); }
    std::size_t in_dim() const { return w1.rows; }
    std::size_t hidden_dim() const { return w1.cols; }
    std::size_t out_dim() const { return w2.cols; }
};

struct TrainConfig {
    double lr = 0.01;
    int epochs = 200;
    double weight_decay = 5e-4;   // L2 on first-layer weights
    std::size_t hidden = 64;
    double dropout = 0.5;
    std::uint64_t seed = 0;
    Activation act = Activation::relu;
    int patience = 30;            // early stop on validation accuracy
    bool bias = true;
    std::size_t output_cap = 512; // ceiling on the softmax width (factor count x classes)

    void validate() const {
        if (lr <= 0) throw ConfigError("learning rate must be positive");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must lie in [0,1)");
    }
};

// Glorot-uniform weights, zero biases.
template <class T>
ModelParams<T> init_params(std::size_t in, std::size_t hidden, std::size_t out, bool bias, Rng& rng) {
    ModelParams<T> p;
    auto glorot = [&](std::size_t r, std::size_t c) {
        Dense<T> w(r, c);
        const double s = std::sqrt(6.0 / static_cast<double>(r + c));
        for (auto& v : w.a) v = static_cast<T>(rng.uniform(-s, s));
        return w;
    };
    p.w1 = glorot(in, hidden);
    p.w2 = glorot(hidden, out);
    if (bias) {
        p.b1 = Dense<T>(1, hidden);
        p.b2 = Dense<T>(1, out);
    }
    return p;
}

// Everything backward needs from one forward pass.
template <class T>
struct ForwardTrace {
    Csr<T> xd;          // layer-1 input after (optional) dropout
    Dense<T> act1;      // hidden activations before dropout
    Dense<T> drop1;     // hidden dropout mask (0 or 1/(1-p)); empty if none
    Dense<T> h1d;       // hidden activations after dropout (layer-2 input)
    Dense<T> logits;
};

namespace detail {

template <class T>
void add_bias_rows(Dense<T>& m, const Dense<T>& b) {
    if (b.a.empty()) return;
    for (std::size_t i = 0; i < m.rows; ++i) {
        T* row = m.row(i);
        for (std::size_t j = 0; j < m.cols; ++j) row[j] += b.a[j];
    }
}

template <class T>
void apply_activation(Dense<T>& m, Activation act) {
    if (act == Activation::relu)
        for (auto& v : m.a) v = v > T(0) ? v : T(0);
}

template <class T>
void check_finite(const Dense<T>& m, int layer) {
    if (!all_finite(m))
        throw NumericError("non-finite values after layer " + std::to_string(layer));
}

} // namespace detail

// Forward pass.  With dropout > 0 and an rng, inverted-scaling masks are
// drawn (input nonzeros first, then the hidden matrix row-major) and kept in
// the trace; with dropout 0 the pass is deterministic inference.  Columns in
// keep_cols are exempt from input dropout: their entries pass through at the
// original value and consume no rng draws (used to shield factor tag columns,
// whose job is to stay distinguishable).
template <class T>
ForwardTrace<T> gcn_forward(const ModelParams<T>& params, const Csr<double>& adj,
                            const Csr<T>& x, Activation act = Activation::relu,
                            double dropout = 0.0, Rng* rng = nullptr,
                            const std::vector<std::uint32_t>* keep_cols = nullptr) {
    if (x.cols != params.in_dim()) throw DimError("gcn_forward: input width vs layer-1 weights");
    if (adj.cols != x.rows) throw DimError("gcn_forward: adjacency vs node count");
    ForwardTrace<T> t;
    t.xd = x;
    const auto adj_t = adj.cast<T>();
    if (dropout > 0 && rng) {
        std::vector<char> keep(keep_cols && !keep_cols->empty() ? x.cols : 0, 0);
        if (!keep.empty())
            for (auto c : *keep_cols) keep[c] = 1;
        const T scale = static_cast<T>(1.0 / (1.0 - dropout));
        for (std::size_t i = 0; i < t.xd.values.size(); ++i) {
            if (!keep.empty() && keep[t.xd.indices[i]]) continue;
            auto& v = t.xd.values[i];
            v = rng->bernoulli(dropout) ? T(0) : v * scale;
        }
    }
    Dense<T> z1 = spmm(adj_t, spmm(t.xd, params.w1));
    detail::add_bias_rows(z1, params.b1);
    detail::apply_activation(z1, act);
    detail::check_finite(z1, 1);
    t.act1 = std::move(z1);
    if (dropout > 0 && rng) {
        const T scale = static_cast<T>(1.0 / (1.0 - dropout));
        t.drop1 = Dense<T>(t.act1.rows, t.act1.cols);
        for (std::size_t i = 0; i < t.drop1.a.size(); ++i)
            t.drop1.a[i] = rng->bernoulli(dropout) ? T(0) : scale;
        t.h1d = Dense<T>(t.act1.rows, t.act1.cols);
        for (std::size_t i = 0; i < t.h1d.a.size(); ++i) t.h1d.a[i] = t.act1.a[i] * t.drop1.a[i];
    } else {
        t.h1d = t.act1;
    }
    t.logits = spmm(adj_t, matmul(t.h1d, params.w2));
    detail::add_bias_rows(t.logits, params.b2);
    detail::check_finite(t.logits, 2);
    return t;
}

// One weighted cross-entropy term: rows[i] is trained toward targets[i] with
// weight weights[i].  Returns the loss and d(loss)/d(logits) (zero rows
// elsewhere).  Log-softmax uses the max-shift for stability.
template <class T>
std::pair<double, Dense<T>> weighted_cross_entropy(const Dense<T>& logits,
                                                   const std::vector<std::size_t>& rows,
                                                   const std::vector<int>& targets,
                                                   const std::vector<double>& weights) {
    if (rows.size() != targets.size() || rows.size() != weights.size())
        throw DimError("weighted_cross_entropy: rows/targets/weights lengths differ");
    Dense<T> grad(logits.rows, logits.cols);
    double loss = 0;
    std::vector<double> prob(logits.cols);
    for (std::size_t e = 0; e < rows.size(); ++e) {
        const std::size_t i = rows[e];
        const int y = targets[e];
        const double w = weights[e];
        if (i >= logits.rows || y < 0 || static_cast<std::size_t>(y) >= logits.cols)
            throw ContractError("weighted_cross_entropy: row or target out of range");
        const T* li = logits.row(i);
        double mx = static_cast<double>(li[0]);
        for (std::size_t j = 1; j < logits.cols; ++j) mx = std::max(mx, static_cast<double>(li[j]));
        double z = 0;
        for (std::size_t j = 0; j < logits.cols; ++j) {
            prob[j] = std::exp(static_cast<double>(li[j]) - mx);
            z += prob[j];
        }
        loss += w * (std::log(z) - (static_cast<double>(li[y]) - mx));
        T* gi = grad.row(i);
        for (std::size_t j = 0; j < logits.cols; ++j)
            gi[j] += static_cast<T>(w * (prob[j] / z - (static_cast<int>(j) == y ? 1.0 : 0.0)));
    }
    return {loss, std::move(grad)};
}

// Plain masked mean cross-entropy: grad = (softmax - onehot)/|mask| on mask
// rows, zero elsewhere.
template <class T>
std::pair<double, Dense<T>> softmax_cross_entropy(const Dense<T>& logits,
                                                  const std::vector<int>& labels,
                                                  const std::vector<std::size_t>& mask) {
    if (mask.empty()) throw ContractError("softmax_cross_entropy: empty mask");
    std::vector<std::size_t> rows(mask.begin(), mask.end());
    std::vector<int> targets;
    targets.reserve(rows.size());
    for (auto i : rows) targets.push_back(labels[i]);
    std::vector<double> weights(rows.size(), 1.0 / static_cast<double>(rows.size()));
    return weighted_cross_entropy(logits, rows, targets, weights);
}

template <class T>
struct Gradients {
    Dense<T> w1, w2, b1, b2;
};

// Reverse pass through the traced forward.  Weight decay (L2 on first-layer
// weights) is folded in here when configured.
template <class T>
Gradients<T> gcn_backward(const ForwardTrace<T>& t, const ModelParams<T>& params,
                          const Csr<double>& adj, const Dense<T>& grad_logits,
                          Activation act = Activation::relu, double weight_decay = 0.0) {
    if (grad_logits.rows != t.logits.rows || grad_logits.cols != t.logits.cols)
        throw DimError("gcn_backward: grad_logits shape");
    const auto adj_t = adj.cast<T>();
    Gradients<T> g;
    // logits = A (h1d w2) + b2
    Dense<T> dp2 = spmm(adj_t, grad_logits);   // A symmetric, so A^T == A
    g.w2 = matmul_tn(t.h1d, dp2);
    if (params.has_bias()) {
        g.b2 = Dense<T>(1, params.out_dim());
        for (std::size_t i = 0; i < grad_logits.rows; ++i) {
            const T* r = grad_logits.row(i);
            for (std::size_t j = 0; j < grad_logits.cols; ++j) g.b2.a[j] += r[j];
        }
    }
    Dense<T> dh1 = matmul_nt(dp2, params.w2);
    if (!t.drop1.a.empty())
        for (std::size_t i = 0; i < dh1.a.size(); ++i) dh1.a[i] *= t.drop1.a[i];
    if (act == Activation::relu)
        for (std::size_t i = 0; i < dh1.a.size(); ++i)
            if (t.act1.a[i] <= T(0)) dh1.a[i] = T(0);
    // act1 = sigma(A (xd w1) + b1)
    Dense<T> dp1 = spmm(adj_t, dh1);
    g.w1 = spmm_at_b(t.xd, dp1);
    if (params.has_bias()) {
        g.b1 = Dense<T>(1, params.hidden_dim());
        for (std::size_t i = 0; i < dh1.rows; ++i) {
            const T* r = dh1.row(i);
            for (std::size_t j = 0; j < dh1.cols; ++j) g.b1.a[j] += r[j];
        }
    }
    if (weight_decay > 0)
        for (std::size_t i = 0; i < g.w1.a.size(); ++i)
            g.w1.a[i] += static_cast<T>(weight_decay) * params.w1.a[i];
    return g;
}

template <class T>
void accumulate(Gradients<T>& into, const Gradients<T>& g) {
    auto add = [](Dense<T>& a, const Dense<T>& b) {
        if (a.a.empty()) { a = b; return; }
        for (std::size_t i = 0; i < a.a.size(); ++i) a.a[i] += b.a[i];
    };
    add(into.w1, g.w1);
    add(into.w2, g.w2);
    add(into.b1, g.b1);
    add(into.b2, g.b2);
}

// Standard Adam with bias correction; one state slot per parameter tensor.
template <class T>
struct AdamState {
    Dense<T> mw1, vw1, mw2, vw2, mb1, vb1, mb2, vb2;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

template <class T>
void adam_step(ModelParams<T>& params, const Gradients<T>& grads, AdamState<T>& s, double lr) {
    ++s.t;
    const double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
    const double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
    auto update = [&](Dense<T>& w, const Dense<T>& g, Dense<T>& m, Dense<T>& v) {
        if (w.a.empty()) return;
        if (m.a.empty()) { m = Dense<T>(w.rows, w.cols); v = Dense<T>(w.rows, w.cols); }
        for (std::size_t i = 0; i < w.a.size(); ++i) {
            const double gi = static_cast<double>(g.a[i]);
            const double mi = s.beta1 * static_cast<double>(m.a[i]) + (1 - s.beta1) * gi;
            const double vi = s.beta2 * static_cast<double>(v.a[i]) + (1 - s.beta2) * gi * gi;
            m.a[i] = static_cast<T>(mi);
            v.a[i] = static_cast<T>(vi);
            w.a[i] -= static_cast<T>(lr * (mi / c1) / (std::sqrt(vi / c2) + s.eps));
        }
    };
    update(params.w1, grads.w1, s.mw1, s.vw1);
    update(params.w2, grads.w2, s.mw2, s.vw2);
    update(params.b1, grads.b1, s.mb1, s.vb1);
    update(params.b2, grads.b2, s.mb2, s.vb2);
}

// --- training over one or more input variants ------------------------------

// One supervision stream: rows of one input variant trained toward targets
// with per-row weights.
template <class T>
struct TrainStream {
    const Csr<T>* x = nullptr;
    std::vector<std::size_t> rows;
    std::vector<int> targets;
    std::vector<double> weights;
    std::vector<std::uint32_t> keep_cols;   // columns exempt from input dropout
};

// Validation probe: argmax over [block_begin, block_end) of the logits from
// x_eval, compared to labels on val rows.
template <class T>
struct EvalSpec {
    const Csr<T>* x_eval = nullptr;
    std::size_t block_begin = 0, block_end = 0;
    std::vector<std::size_t> val_rows;
    const std::vector<int>* labels = nullptr;
};

// Softmax of one logit-column block per row, accumulated in double and stored
// as float so every caller sees bit-identical probabilities.
template <class T>
Dense<float> block_softmax_rows(const Dense<T>& logits, std::size_t begin, std::size_t end) {
    const std::size_t c = end - begin;
    Dense<float> p(logits.rows, c);
    for (std::size_t i = 0; i < logits.rows; ++i) {
        const T* r = logits.row(i) + begin;
        double mx = static_cast<double>(r[0]);
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, static_cast<double>(r[j]));
        double z = 0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(static_cast<double>(r[j]) - mx);
        float* out = p.row(i);
        for (std::size_t j = 0; j < c; ++j)
            out[j] = static_cast<float>(std::exp(static_cast<double>(r[j]) - mx) / z);
    }
    return p;
}

template <class T>
double block_argmax_accuracy(const Dense<T>& logits, std::size_t begin, std::size_t end,
                             const std::vector<std::size_t>& rows, const std::vector<int>& labels) {
    if (rows.empty()) return 0.0;
    std::size_t hit = 0;
    for (auto i : rows) {
        const T* r = logits.row(i);
        std::size_t best = begin;
        for (std::size_t j = begin + 1; j < end; ++j)
            if (r[j] > r[best]) best = j;
        if (static_cast<int>(best - begin) == labels[i]) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(rows.size());
}

template <class T>
struct FitResult {
    ModelParams<T> params;      // best-validation snapshot
    double best_val_acc = -1.0;
    int best_epoch = -1;
    int epochs_run = 0;
    std::vector<double> loss_per_epoch;
};

// Core trainer shared by the plain baseline and the factor model: full-batch
// Adam over the summed stream losses, early stop on validation accuracy
// (ties count as improvement so plateaus refresh patience), best snapshot
// restored.  Pass `init` to warm-start instead of Glorot-initialising.
template <class T>
FitResult<T> fit_shared_network(const Csr<double>& adj, const std::vector<TrainStream<T>>& streams,
                                const EvalSpec<T>& eval, std::size_t out_dim,
                                const TrainConfig& cfg, const ModelParams<T>* init = nullptr) {
    cfg.validate();
    if (streams.empty()) throw ContractError("fit_shared_network: no streams");
    Rng rng(cfg.seed);
    FitResult<T> fit;
    ModelParams<T> params = init ? *init
                                 : init_params<T>(streams[0].x->cols, cfg.hidden, out_dim, cfg.bias, rng);
    AdamState<T> adam;
    fit.params = params;
    int bad = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        Gradients<T> total;
        double loss = 0;
        for (const auto& s : streams) {
            auto trace = gcn_forward(params, adj, *s.x, cfg.act, cfg.dropout, &rng,
                                     s.keep_cols.empty() ? nullptr : &s.keep_cols);
            auto [l, grad_logits] = weighted_cross_entropy(trace.logits, s.rows, s.targets, s.weights);
            loss += l;
            accumulate(total, gcn_backward(trace, params, adj, grad_logits, cfg.act, 0.0));
        }
        if (!std::isfinite(loss))
            throw TrainError("non-finite loss at epoch " + std::to_string(epoch));
        if (cfg.weight_decay > 0)
            for (std::size_t i = 0; i < total.w1.a.size(); ++i)
                total.w1.a[i] += static_cast<T>(cfg.weight_decay) * params.w1.a[i];
        adam_step(params, total, adam, cfg.lr);
        fit.loss_per_epoch.push_back(loss);
        fit.epochs_run = epoch + 1;

        auto probe = gcn_forward(params, adj, *eval.x_eval, cfg.act);
        const double acc = block_argmax_accuracy(probe.logits, eval.block_begin, eval.block_end,
                                                 eval.val_rows, *eval.labels);
        if (acc >= fit.best_val_acc) {
            fit.best_val_acc = acc;
            fit.best_epoch = epoch;
            fit.params = params;
            bad = 0;
        } else if (++bad > cfg.patience) {
            break;
        }
    }
    return fit;
}

// --- finite differences -----------------------------------------------------

// Central-difference check of the full model loss (cross-entropy over mask +
// weight-decay term) against analytic gradients.  Returns the max relative
// error over every parameter coordinate.
template <class T>
double gradient_check(const ModelParams<T>& params, const Csr<double>& adj, const Csr<T>& x,
                      const std::vector<int>& targets, const std::vector<std::size_t>& mask,
                      double eps = 1e-5, Activation act = Activation::relu,
                      double weight_decay = 0.0) {
    auto loss_at = [&](const ModelParams<T>& p) {
        auto trace = gcn_forward(p, adj, x, act);
        auto [l, g] = softmax_cross_entropy(trace.logits, targets, mask);
        (void)g;
        if (weight_decay > 0) {
            double pen = 0;
            for (auto v : p.w1.a) pen += static_cast<double>(v) * static_cast<double>(v);
            l += 0.5 * weight_decay * pen;
        }
        return l;
    };
    auto trace = gcn_forward(params, adj, x, act);
    auto [l0, grad_logits] = softmax_cross_entropy(trace.logits, targets, mask);
    (void)l0;
    auto analytic = gcn_backward(trace, params, adj, grad_logits, act, weight_decay);

    double worst = 0;
    ModelParams<T> p = params;
    auto probe = [&](Dense<T>& w, const Dense<T>& g) {
        for (std::size_t i = 0; i < w.a.size(); ++i) {
            const T keep = w.a[i];
            w.a[i] = keep + static_cast<T>(eps);
            const double lp = loss_at(p);
            w.a[i] = keep - static_cast<T>(eps);
            const double lm = loss_at(p);
            w.a[i] = keep;
            const double fd = (lp - lm) / (2 * eps);
            const double an = static_cast<double>(g.a[i]);
            const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            worst = std::max(worst, std::abs(fd - an) / denom);
        }
    };
    probe(p.w1, analytic.w1);
    probe(p.w2, analytic.w2);
    if (p.has_bias()) {
        probe(p.b1, analytic.b1);
        probe(p.b2, analytic.b2);
    }
    return worst;
}

// --- checkpoints -------------------------------------------------------------

template <class T>
nlohmann::json params_to_json(const ModelParams<T>& p) {
    auto tensor = [](const Dense<T>& m) {
        nlohmann::json t;
        t["rows"] = m.rows;
        t["cols"] = m.cols;
        t["data"] = std::vector<double>(m.a.begin(), m.a.end());   // row-major
        return t;
    };
    nlohmann::json j;
    j["layout"] = "row-major";
    j["dims"] = {p.in_dim(), p.hidden_dim(), p.out_dim()};
    j["w1"] = tensor(p.w1);
    j["w2"] = tensor(p.w2);
    if (p.has_bias()) {
        j["b1"] = tensor(p.b1);
        j["b2"] = tensor(p.b2);
    }
    return j;
}

template <class T>
ModelParams<T> params_from_json(const nlohmann::json& j) {
    auto tensor = [](const nlohmann::json& t) {
        Dense<T> m(t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>());
        auto data = t.at("data").get<std::vector<double>>();
        if (data.size() != m.a.size()) throw SchemaError("checkpoint tensor size mismatch");
        for (std::size_t i = 0; i < data.size(); ++i) m.a[i] = static_cast<T>(data[i]);
        return m;
    };
    ModelParams<T> p;
    p.w1 = tensor(j.at("w1"));
    p.w2 = tensor(j.at("w2"));
    if (j.contains("b1")) {
        p.b1 = tensor(j.at("b1"));
        p.b2 = tensor(j.at("b2"));
    }
    if (p.w1.cols != p.w2.rows) throw SchemaError("checkpoint layer dims incompatible");
    return p;
}

} // namespace difac
