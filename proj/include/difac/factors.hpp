#pragma once

// Differentiated-factor construction and the shared network that hosts the
// factors: one source feature matrix becomes K input variants, labels are
// block-extended to K*C classes, and a single two-layer graph network learns
// all K decision functions at once.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include <difac/error.hpp>
#include <difac/graph.hpp>
#include <difac/nn.hpp>

namespace difac {

// --- construction recipes ----------------------------------------------------

enum class DiffKind { marker, random_reverse, random_exchange };

inline DiffKind diff_kind_from_string(const std::string& s) {
    if (s == "marker") return DiffKind::marker;
    if (s == "random_reverse" || s == "reverse") return DiffKind::random_reverse;
    if (s == "random_exchange" || s == "exchange") return DiffKind::random_exchange;
    throw ConfigError("unknown differentiation method '" + s + "'");
}

inline std::string to_string(DiffKind k) {
    switch (k) {
        case DiffKind::marker: return "marker";
        case DiffKind::random_reverse: return "random_reverse";
        case DiffKind::random_exchange: return "random_exchange";
    }
    throw ConfigError("unhandled differentiation method");
}

struct DiffMethod {
    DiffKind kind = DiffKind::marker;
    double perturb_frac = 0.05;   // fraction of columns touched (marker ignores it)
    std::uint64_t seed = 0;

    void validate() const {
        if (perturb_frac < 0 || perturb_frac > 1)
            throw ConfigError("perturb_frac must lie in [0,1]");
    }
    bool operator==(const DiffMethod&) const = default;
};

// Everything needed to rebuild the variants bit-for-bit: the method plus the
// per-variant column choices it drew.
struct FactorRecipe {
    DiffMethod method;
    std::size_t K = 0;
    std::size_t base_dim = 0;                           // columns before any tag block
    std::vector<std::vector<std::uint32_t>> columns;    // variant k's touched columns
    std::vector<std::vector<std::uint32_t>> sources;    // exchange: column i takes sources[k][i]

    bool operator==(const FactorRecipe&) const = default;
};

inline nlohmann::json recipe_to_json(const FactorRecipe& r) {
    return {{"method", to_string(r.method.kind)},
            {"perturb_frac", r.method.perturb_frac},
            {"seed", r.method.seed},
            {"factors", r.K},
            {"base_dim", r.base_dim},
            {"columns", r.columns},
            {"sources", r.sources}};
}

inline FactorRecipe recipe_from_json(const nlohmann::json& j) {
    FactorRecipe r;
    try {
        r.method.kind = diff_kind_from_string(j.at("method").get<std::string>());
        r.method.perturb_frac = j.at("perturb_frac").get<double>();
        r.method.seed = j.at("seed").get<std::uint64_t>();
        r.K = j.at("factors").get<std::size_t>();
        r.base_dim = j.at("base_dim").get<std::size_t>();
        r.columns = j.at("columns").get<std::vector<std::vector<std::uint32_t>>>();
        r.sources = j.at("sources").get<std::vector<std::vector<std::uint32_t>>>();
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("factor recipe: ") + e.what());
    }
    return r;
}

struct FactorizedInput {
    std::size_t K = 0;
    std::vector<Csr<float>> variants;      // K matrices over the same rows
    FactorRecipe recipe;
    std::vector<std::uint32_t> tag_cols;   // marker: appended tag columns (dropout-exempt)
};

// --- label block arithmetic ---------------------------------------------------

inline int extend_labels(int y, std::size_t k, std::size_t C) {
    if (y < 0 || static_cast<std::size_t>(y) >= C)
        throw ContractError("extend_labels: class " + std::to_string(y) + " outside [0," +
                            std::to_string(C) + ")");
    return static_cast<int>(k * C) + y;
}

struct FactorClass {
    std::size_t k;
    int y;
    bool operator==(const FactorClass&) const = default;
};

inline FactorClass decode_extended(int extended, std::size_t C) {
    if (extended < 0) throw ContractError("decode_extended: negative class");
    const auto e = static_cast<std::size_t>(extended);
    return {e / C, static_cast<int>(e % C)};
}

// --- variant construction -----------------------------------------------------

// Build the K input variants.  Variant 0 is always the untouched source
// (marker: plus its tag column); reverse and exchange perturb a seeded
// floor(perturb_frac * d) column subset per later variant.
inline FactorizedInput build_factor_inputs(const Dense<float>& X, std::size_t K,
                                           const DiffMethod& method) {
    if (K < 1) throw ContractError("build_factor_inputs: need at least one factor");
    method.validate();
    FactorizedInput fx;
    fx.K = K;
    fx.recipe.method = method;
    fx.recipe.K = K;
    fx.recipe.base_dim = X.cols;
    fx.recipe.columns.resize(K);
    fx.recipe.sources.resize(K);

    const std::size_t n = X.rows, d = X.cols;
    Rng rng(method.seed);

    if (method.kind == DiffKind::marker) {
        for (std::size_t k = 0; k < K; ++k) {
            Dense<float> v(n, d + K);
            for (std::size_t i = 0; i < n; ++i) {
                const float* src = X.row(i);
                float* dst = v.row(i);
                for (std::size_t j = 0; j < d; ++j) dst[j] = src[j];
                dst[d + k] = 1.0f;   // one-hot factor tag
            }
            fx.variants.push_back(csr_from_dense(v));
        }
        for (std::size_t k = 0; k < K; ++k)
            fx.tag_cols.push_back(static_cast<std::uint32_t>(d + k));
        return fx;
    }

    const auto m = static_cast<std::size_t>(method.perturb_frac * static_cast<double>(d));
    std::vector<float> col_max;
    if (method.kind == DiffKind::random_reverse) {
        col_max.assign(d, 0.0f);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                col_max[j] = std::max(col_max[j], X(i, j));
    }

    fx.variants.push_back(csr_from_dense(X));   // variant 0: unperturbed
    for (std::size_t k = 1; k < K; ++k) {
        auto cols = rng.sample_indices(d, m);
        std::sort(cols.begin(), cols.end());
        Dense<float> v = X;
        if (method.kind == DiffKind::random_reverse) {
            // value -> column max minus value (binary columns: 1 - v)
            for (auto j : cols)
                for (std::size_t i = 0; i < n; ++i)
                    v(i, j) = col_max[j] - X(i, j);
            fx.recipe.columns[k].assign(cols.begin(), cols.end());
        } else {
            // one permutation of the chosen columns, identical for every row
            auto perm = cols;
            rng.shuffle(perm);
            for (std::size_t t = 0; t < cols.size(); ++t)
                for (std::size_t i = 0; i < n; ++i)
                    v(i, cols[t]) = X(i, perm[t]);
            fx.recipe.columns[k].assign(cols.begin(), cols.end());
            fx.recipe.sources[k].assign(perm.begin(), perm.end());
        }
        fx.variants.push_back(csr_from_dense(v));
    }
    return fx;
}

// --- the shared factor model ----------------------------------------------------

struct FactorModel {
    ModelParams<float> params;   // output width K*C
    std::size_t K = 0, C = 0;
    FactorRecipe recipe;
    double best_val_acc = -1.0;
    int best_epoch = -1;
    int epochs_run = 0;
    std::vector<double> loss_per_epoch;
};

// Train the single network hosting all K factors: the K streams share one
// epoch loop (summed losses, weights 1/(K * |train|)), and early stopping
// watches the variant-0 block's validation accuracy.  Pass `init` to
// warm-start from a previous round's parameters.
inline FactorModel train_factors(const CitationGraph& g, const Csr<double>& adj,
                                 const FactorizedInput& fx, const SplitMasks& masks,
                                 const TrainConfig& cfg,
                                 const ModelParams<float>* init = nullptr) {
    if (masks.train.empty()) throw ContractError("train_factors: empty train mask");
    const std::size_t C = g.c;
    if (fx.K * C > cfg.output_cap)
        throw CapacityError("extended output width " + std::to_string(fx.K * C) +
                            " exceeds cap " + std::to_string(cfg.output_cap));

    std::vector<TrainStream<float>> streams(fx.K);
    const double w = 1.0 / (static_cast<double>(fx.K) * static_cast<double>(masks.train.size()));
    for (std::size_t k = 0; k < fx.K; ++k) {
        auto& s = streams[k];
        s.x = &fx.variants[k];
        s.keep_cols = fx.tag_cols;
        for (auto i : masks.train) {
            s.rows.push_back(i);
            s.targets.push_back(extend_labels(g.labels[i], k, C));
            s.weights.push_back(w);
        }
    }
    EvalSpec<float> eval;
    eval.x_eval = &fx.variants[0];
    eval.block_begin = 0;
    eval.block_end = C;
    eval.val_rows = masks.val;
    eval.labels = &g.labels;

    auto fit = fit_shared_network(adj, streams, eval, fx.K * C, cfg, init);
    FactorModel m;
    m.params = std::move(fit.params);
    m.K = fx.K;
    m.C = C;
    m.recipe = fx.recipe;
    m.best_val_acc = fit.best_val_acc;
    m.best_epoch = fit.best_epoch;
    m.epochs_run = fit.epochs_run;
    m.loss_per_epoch = std::move(fit.loss_per_epoch);
    return m;
}

// Joint training streams for the pseudo-label loop: the same construction as
// train_factors plus one extra weighted entry per adopted node, written into
// every factor block (the adopted class repeats at k*C + y_hat).
struct PseudoTarget {
    std::size_t node;
    int y_hat;
};

inline std::vector<TrainStream<float>> factor_streams(const CitationGraph& g,
                                                      const FactorizedInput& fx,
                                                      const std::vector<std::size_t>& train_rows,
                                                      const std::vector<PseudoTarget>& adopted,
                                                      double lambda_pseudo) {
    const std::size_t C = g.c;
    std::vector<TrainStream<float>> streams(fx.K);
    const double wl = 1.0 / (static_cast<double>(fx.K) * static_cast<double>(train_rows.size()));
    const double wu = adopted.empty()
                          ? 0.0
                          : lambda_pseudo / (static_cast<double>(fx.K) *
                                             static_cast<double>(adopted.size()));
    for (std::size_t k = 0; k < fx.K; ++k) {
        auto& s = streams[k];
        s.x = &fx.variants[k];
        s.keep_cols = fx.tag_cols;
        for (auto i : train_rows) {
            s.rows.push_back(i);
            s.targets.push_back(extend_labels(g.labels[i], k, C));
            s.weights.push_back(wl);
        }
        for (const auto& p : adopted) {
            s.rows.push_back(p.node);
            s.targets.push_back(extend_labels(p.y_hat, k, C));
            s.weights.push_back(wu);
        }
    }
    return streams;
}

// --- prediction -------------------------------------------------------------------

struct FactorPredictions {
    std::vector<std::size_t> nodes;
    std::size_t K = 0, C = 0;
    Dense<float> probs;   // |nodes| x (K*C); each block renormalized to sum 1
    Dense<int> argmax;    // |nodes| x K; ties resolve to the lowest class

    const float* block(std::size_t row, std::size_t k) const {
        return probs.row(row) + k * C;
    }
};

// Run the shared network once per variant and renormalize each factor's logit
// block into a class distribution.  Pure: same model and inputs, same bits.
inline FactorPredictions factor_predict(const FactorModel& model, const Csr<double>& adj,
                                        const FactorizedInput& fx,
                                        const std::vector<std::size_t>& nodes) {
    if (!(model.recipe == fx.recipe))
        throw ContractError("factor_predict: input recipe differs from the model's");
    FactorPredictions out;
    out.nodes = nodes;
    out.K = model.K;
    out.C = model.C;
    out.probs = Dense<float>(nodes.size(), model.K * model.C);
    out.argmax = Dense<int>(nodes.size(), model.K);
    for (std::size_t k = 0; k < model.K; ++k) {
        auto trace = gcn_forward(model.params, adj, fx.variants[k]);
        // softmax within the factor's own block
        auto block = block_softmax_rows(trace.logits, k * model.C, (k + 1) * model.C);
        for (std::size_t r = 0; r < nodes.size(); ++r) {
            const float* src = block.row(nodes[r]);
            float* p = out.probs.row(r) + k * model.C;
            std::size_t best = 0;
            for (std::size_t j = 0; j < model.C; ++j) {
                p[j] = src[j];
                if (p[j] > p[best]) best = j;   // strict: ties keep the lowest index
            }
            out.argmax(r, k) = static_cast<int>(best);
        }
    }
    return out;
}

} // namespace difac
