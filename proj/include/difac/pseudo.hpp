#pragma once

// The pseudo-label outer loop: consistency filtering across factors,
// min-confidence scoring, ranked top-ratio adoption with a rising schedule,
// joint supervised + pseudo loss, and the two reference baselines
// (self-training, intersection with a label-propagation co-judge).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include <difac/accountability.hpp>
#include <difac/error.hpp>
#include <difac/factors.hpp>
#include <difac/graph.hpp>
#include <difac/metrics.hpp>
#include <difac/nn.hpp>

namespace difac {

// --- candidate sets -----------------------------------------------------------

struct PseudoEntry {
    std::size_t node;
    int y_hat;        // the consensus class
    double s;         // base confidence score
    double s_tilde;   // accountability-adjusted score (equals s without aux)
};

struct PseudoLabelSet {
    enum class Stage { consistent, selected };
    Stage stage = Stage::consistent;
    std::vector<PseudoEntry> entries;

    std::vector<std::size_t> nodes() const {
        std::vector<std::size_t> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.node);
        return out;
    }
    std::vector<int> classes() const {
        std::vector<int> out;
        out.reserve(entries.size());
        for (const auto& e : entries) out.push_back(e.y_hat);
        return out;
    }
};

inline double pseudo_accuracy(const PseudoLabelSet& set, const std::vector<int>& labels) {
    return pseudo_accuracy(set.nodes(), set.classes(), labels);
}

// How the per-factor max-probabilities collapse into one ranking score.
enum class RankStrategy { min_conf, max_conf, mean_conf };

inline RankStrategy rank_strategy_from_string(const std::string& s) {
    if (s == "min") return RankStrategy::min_conf;
    if (s == "max") return RankStrategy::max_conf;
    if (s == "mean") return RankStrategy::mean_conf;
    throw ConfigError("unknown rank strategy '" + s + "'");
}

inline std::string to_string(RankStrategy r) {
    switch (r) {
        case RankStrategy::min_conf: return "min";
        case RankStrategy::max_conf: return "max";
        case RankStrategy::mean_conf: return "mean";
    }
    throw ConfigError("unhandled rank strategy");
}

namespace detail {

// Per-factor max probabilities of one prediction row, collapsed by strategy.
inline double collapse_confidence(const FactorPredictions& preds, std::size_t row,
                                  RankStrategy strategy) {
    double mn = 1.0, mx = 0.0, sum = 0.0;
    for (std::size_t k = 0; k < preds.K; ++k) {
        const float* p = preds.block(row, k);
        double best = p[0];
        for (std::size_t j = 1; j < preds.C; ++j) best = std::max(best, static_cast<double>(p[j]));
        mn = std::min(mn, best);
        mx = std::max(mx, best);
        sum += best;
    }
    switch (strategy) {
        case RankStrategy::min_conf: return mn;
        case RankStrategy::max_conf: return mx;
        case RankStrategy::mean_conf: return sum / static_cast<double>(preds.K);
    }
    throw ConfigError("unhandled rank strategy");
}

} // namespace detail

// Nodes whose K factor argmaxes coincide, labeled with the shared argmax and
// scored by the chosen confidence collapse (min by default: the shortest
// stave).  candidates index rows of `preds.nodes`.
inline PseudoLabelSet consistency_filter(const FactorPredictions& preds,
                                         const std::vector<std::size_t>& candidate_rows,
                                         RankStrategy strategy = RankStrategy::min_conf) {
    PseudoLabelSet su;
    su.stage = PseudoLabelSet::Stage::consistent;
    for (auto row : candidate_rows) {
        const int first = preds.argmax(row, 0);
        bool agree = true;
        for (std::size_t k = 1; k < preds.K && agree; ++k) agree = preds.argmax(row, k) == first;
        if (!agree) continue;
        const double s = detail::collapse_confidence(preds, row, strategy);
        su.entries.push_back({preds.nodes[row], first, s, s});
    }
    return su;
}

// The smallest per-factor max probability of one node.  Only defined for
// consistent nodes (the shortest-stave score of an inconsistent node would
// rank a candidate the filter already rejected).
inline double min_confidence(const FactorPredictions& preds, std::size_t node) {
    auto it = std::find(preds.nodes.begin(), preds.nodes.end(), node);
    if (it == preds.nodes.end())
        throw ContractError("min_confidence: node " + std::to_string(node) + " not predicted");
    const auto row = static_cast<std::size_t>(it - preds.nodes.begin());
    const int first = preds.argmax(row, 0);
    for (std::size_t k = 1; k < preds.K; ++k)
        if (preds.argmax(row, k) != first)
            throw ContractError("min_confidence: node " + std::to_string(node) + " is inconsistent");
    return detail::collapse_confidence(preds, row, RankStrategy::min_conf);
}

// Keep the ceil(tau * |S_u|) highest-scored entries; score ties fall to the
// lower node index.  An empty S_u yields an empty S_p (a signal, not an error).
inline PseudoLabelSet rank_select(const PseudoLabelSet& su, double tau) {
    if (tau <= 0 || tau > 1) throw ConfigError("rank_select: tau must lie in (0,1]");
    PseudoLabelSet sp;
    sp.stage = PseudoLabelSet::Stage::selected;
    if (su.entries.empty()) return sp;
    sp.entries = su.entries;
    std::sort(sp.entries.begin(), sp.entries.end(), [](const PseudoEntry& a, const PseudoEntry& b) {
        if (a.s_tilde != b.s_tilde) return a.s_tilde > b.s_tilde;
        return a.node < b.node;
    });
    const auto keep = static_cast<std::size_t>(
        std::ceil(tau * static_cast<double>(sp.entries.size())));
    sp.entries.resize(std::min(keep, sp.entries.size()));
    return sp;
}

// --- the loop -------------------------------------------------------------------

struct LoopConfig {
    int T = 5;                        // outer iterations
    double tau0 = 0.3;                // adoption ratio at t=0
    double tau_final = 0.9;           // adoption ratio at t=T-1
    double lambda_pseudo = 1.0;       // pseudo-loss balance coefficient
    double lambda_acc = 0.5;          // accountability coefficient
    double jaccard_stop = 0.99;       // selection-stability convergence bar
    bool retrain_from_scratch = false;   // default warm-starts each round
    bool accumulate = false;             // permanent-adoption variant (off: recompute)
    RankStrategy rank = RankStrategy::min_conf;

    void validate() const {
        if (T < 1) throw ConfigError("loop iterations must be >= 1");
        if (!(tau0 > 0) || !(tau0 <= tau_final) || !(tau_final <= 1))
            throw ConfigError("need 0 < tau0 <= tau_final <= 1");
        if (lambda_pseudo < 0 || lambda_acc < 0) throw ConfigError("negative loss coefficient");
        if (jaccard_stop < 0 || jaccard_stop > 1) throw ConfigError("jaccard threshold in [0,1]");
    }
};

// Linear ramp from tau0 (t=0) to tau_final (t=T-1).  A single-iteration loop
// jumps straight to tau_final.
inline double tau_schedule(int t, const LoopConfig& cfg) {
    if (t < 0 || t >= cfg.T) throw ContractError("tau_schedule: iteration outside [0,T)");
    if (cfg.T == 1) return cfg.tau_final;
    return cfg.tau0 + (cfg.tau_final - cfg.tau0) * static_cast<double>(t) /
                          static_cast<double>(cfg.T - 1);
}

// Jaccard similarity of two node sets given as sorted vectors; two empty sets
// count as identical.
inline double jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    if (a.empty() && b.empty()) return 1.0;
    std::size_t inter = 0, i = 0, j = 0;
    while (i < a.size() && j < b.size()) {
        if (a[i] == b[j]) { ++inter; ++i; ++j; }
        else if (a[i] < b[j]) ++i;
        else ++j;
    }
    return static_cast<double>(inter) /
           static_cast<double>(a.size() + b.size() - inter);
}

// Combined loss L_s + lambda * L_u and its parameter gradients, evaluated
// without dropout: L_s is the mean cross-entropy of the labeled nodes across
// all K factor blocks, L_u the same mean over the adopted set with the shared
// consensus label written into every block.
template <class T>
std::pair<double, Gradients<T>> joint_loss(const ModelParams<T>& params, const Csr<double>& adj,
                                           const FactorizedInput& fx,
                                           const std::vector<int>& labels, std::size_t C,
                                           const std::vector<std::size_t>& labeled,
                                           const PseudoLabelSet& sp, double lambda_pseudo) {
    for (const auto& e : sp.entries)
        if (std::binary_search(labeled.begin(), labeled.end(), e.node))
            throw ContractError("joint_loss: node " + std::to_string(e.node) +
                                " is both labeled and pseudo-labeled");
    std::vector<PseudoTarget> adopted;
    for (const auto& e : sp.entries) adopted.push_back({e.node, e.y_hat});
    CitationGraph shim;   // only labels and class count are consulted downstream
    shim.labels = labels;
    shim.c = C;
    auto streams = factor_streams(shim, fx, labeled, adopted, lambda_pseudo);
    double loss = 0;
    Gradients<T> total;
    for (const auto& s : streams) {
        auto trace = gcn_forward(params, adj, *s.x);
        auto [l, grad_logits] = weighted_cross_entropy(trace.logits, s.rows, s.targets, s.weights);
        loss += l;
        accumulate(total, gcn_backward(trace, params, adj, grad_logits));
    }
    return {loss, std::move(total)};
}

// --- reports ---------------------------------------------------------------------

struct IterationRow {
    int t = 0;
    double tau = 0;
    std::size_t su_size = 0;
    std::size_t sp_size = 0;
    double pseudo_acc_su = -1;   // -1 when the set is empty
    double pseudo_acc_sp = -1;
    double val_acc = 0;
    double test_acc = 0;
    double jac = 0;              // selection overlap with the previous round
};

struct LoopReport {
    std::vector<IterationRow> rows;
    std::vector<std::vector<std::size_t>> adopted_sets;   // sorted node ids per round
    int chosen_round = -1;       // round whose model is returned
    bool stopped_early = false;  // selection stabilized before the T cap
    double best_val_acc = 0;
    double final_test_acc = 0;   // test accuracy of the returned model

    // Mean pseudo-label accuracy of the adopted sets over rounds that adopted
    // anything; -1 if nothing was ever adopted.
    double mean_pseudo_acc() const {
        double sum = 0;
        std::size_t cnt = 0;
        for (const auto& r : rows)
            if (r.pseudo_acc_sp >= 0) { sum += r.pseudo_acc_sp; ++cnt; }
        return cnt ? sum / static_cast<double>(cnt) : -1.0;
    }
};

inline nlohmann::json loop_report_to_json(const LoopReport& rep) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : rep.rows)
        rows.push_back({{"t", r.t},
                        {"tau", r.tau},
                        {"su_size", r.su_size},
                        {"sp_size", r.sp_size},
                        {"pseudo_acc_su", r.pseudo_acc_su},
                        {"pseudo_acc_sp", r.pseudo_acc_sp},
                        {"val_acc", r.val_acc},
                        {"test_acc", r.test_acc},
                        {"jaccard", r.jac}});
    return {{"rows", rows},
            {"chosen_round", rep.chosen_round},
            {"stopped_early", rep.stopped_early},
            {"best_val_acc", rep.best_val_acc},
            {"final_test_acc", rep.final_test_acc}};
}

inline std::string loop_report_csv_header() {
    return "t,tau,su_size,sp_size,pseudo_acc_su,pseudo_acc_sp,val_acc,test_acc,jaccard";
}

inline std::string loop_report_csv_row(const IterationRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.4f,%zu,%zu,%.6f,%.6f,%.6f,%.6f,%.6f", r.t, r.tau,
                  r.su_size, r.sp_size, r.pseudo_acc_su, r.pseudo_acc_sp, r.val_acc, r.test_acc,
                  r.jac);
    return buf;
}

namespace detail {

// Per-node class decoded from factor predictions: average the K block
// distributions and take the argmax (ties to the lowest class).
inline std::vector<int> decode_mean(const FactorPredictions& preds) {
    std::vector<int> out(preds.nodes.size(), 0);
    std::vector<double> acc(preds.C);
    for (std::size_t r = 0; r < preds.nodes.size(); ++r) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < preds.K; ++k) {
            const float* p = preds.block(r, k);
            for (std::size_t j = 0; j < preds.C; ++j) acc[j] += p[j];
        }
        std::size_t best = 0;
        for (std::size_t j = 1; j < preds.C; ++j)
            if (acc[j] > acc[best]) best = j;
        out[r] = static_cast<int>(best);
    }
    return out;
}

inline std::vector<std::size_t> unlabeled_nodes(std::size_t n, const std::vector<std::size_t>& train) {
    std::vector<std::size_t> out;
    out.reserve(n - train.size());
    for (std::size_t i = 0, t = 0; i < n; ++i) {
        if (t < train.size() && train[t] == i) { ++t; continue; }
        out.push_back(i);
    }
    return out;
}

// Accuracy that tolerates an absent split: -1 marks "no nodes to score".
inline double accuracy_or_missing(const std::vector<int>& predicted, const std::vector<int>& labels,
                                  const std::vector<std::size_t>& mask) {
    return mask.empty() ? -1.0 : accuracy(predicted, labels, mask);
}

} // namespace detail

struct DifacOutcome {
    FactorModel model;        // best-validation round
    LoopReport report;
    FactorizedInput inputs;   // the variants the model was trained on
};

// The full differentiated-factor loop.  Each round trains the shared network
// on labeled plus currently adopted nodes (warm-starting from the previous
// round unless configured from-scratch), re-derives the consistent set on the
// unlabeled nodes, rescoring by auxiliary factors when given, and adopts the
// top-ranked fraction on a rising schedule.  The adopted set is recomputed
// from scratch every round; the loop stops early once consecutive selections
// stabilize (Jaccard >= threshold).  Returns the model of the round with the
// best decoded validation accuracy (later round wins ties).
inline DifacOutcome difac_loop(const CitationGraph& g, const Csr<double>& adj,
                               const SplitMasks& masks, const DiffMethod& method, std::size_t K,
                               const LoopConfig& lc, const TrainConfig& tc,
                               const AuxFactorOutput* aux = nullptr) {
    lc.validate();
    if (aux) aux->validate();
    DifacOutcome out;
    out.inputs = build_factor_inputs(g.features, K, method);
    const auto& fx = out.inputs;
    if (fx.K * g.c > tc.output_cap)
        throw CapacityError("extended output width " + std::to_string(fx.K * g.c) +
                            " exceeds cap " + std::to_string(tc.output_cap));

    const auto candidates = detail::unlabeled_nodes(g.n, masks.train);
    std::vector<std::size_t> all_nodes(g.n);
    for (std::size_t i = 0; i < g.n; ++i) all_nodes[i] = i;

    std::vector<PseudoTarget> adopted;
    std::map<std::size_t, int> accumulated;   // only used in accumulate mode
    std::vector<std::size_t> prev_sp;
    ModelParams<float> prev_params;
    double best_val = -1.0;

    for (int t = 0; t < lc.T; ++t) {
        auto streams = factor_streams(g, fx, masks.train, adopted, lc.lambda_pseudo);
        EvalSpec<float> eval;
        eval.x_eval = &fx.variants[0];
        eval.block_begin = 0;
        eval.block_end = g.c;
        eval.val_rows = masks.val;
        eval.labels = &g.labels;
        const bool warm = t > 0 && !lc.retrain_from_scratch;
        auto fit = fit_shared_network(adj, streams, eval, fx.K * g.c, tc,
                                      warm ? &prev_params : nullptr);

        FactorModel model;
        model.params = std::move(fit.params);
        model.K = fx.K;
        model.C = g.c;
        model.recipe = fx.recipe;
        model.best_val_acc = fit.best_val_acc;
        model.best_epoch = fit.best_epoch;
        model.epochs_run = fit.epochs_run;
        model.loss_per_epoch = std::move(fit.loss_per_epoch);

        auto preds = factor_predict(model, adj, fx, all_nodes);
        auto decoded = detail::decode_mean(preds);

        IterationRow row;
        row.t = t;
        row.tau = tau_schedule(t, lc);
        row.val_acc = detail::accuracy_or_missing(decoded, g.labels, masks.val);
        row.test_acc = detail::accuracy_or_missing(decoded, g.labels, masks.test);

        auto su = consistency_filter(preds, candidates, lc.rank);
        if (aux)
            for (auto& e : su.entries)
                e.s_tilde = accountability_score(e.s, e.y_hat, *aux, e.node, lc.lambda_acc);
        auto sp = rank_select(su, row.tau);

        row.su_size = su.entries.size();
        row.sp_size = sp.entries.size();
        if (!su.entries.empty()) row.pseudo_acc_su = pseudo_accuracy(su, g.labels);
        if (!sp.entries.empty()) row.pseudo_acc_sp = pseudo_accuracy(sp, g.labels);
        auto sp_nodes = sp.nodes();
        std::sort(sp_nodes.begin(), sp_nodes.end());
        row.jac = jaccard(sp_nodes, prev_sp);
        out.report.rows.push_back(row);
        out.report.adopted_sets.push_back(sp_nodes);

        if (row.val_acc >= best_val) {
            best_val = row.val_acc;
            out.report.chosen_round = t;
            out.report.best_val_acc = row.val_acc;
            out.report.final_test_acc = row.test_acc;
            out.model = model;   // copy: this round currently wins
        }

        // hand this round's parameters and selection to the next round
        prev_params = std::move(model.params);
        adopted.clear();
        if (lc.accumulate) {
            for (const auto& e : sp.entries) accumulated[e.node] = e.y_hat;
            for (const auto& [node, y] : accumulated) adopted.push_back({node, y});
        } else {
            for (const auto& e : sp.entries) adopted.push_back({e.node, e.y_hat});
        }
        if (row.jac >= lc.jaccard_stop) {
            out.report.stopped_early = true;
            break;
        }
        prev_sp = std::move(sp_nodes);
    }
    return out;
}

// --- baselines --------------------------------------------------------------------

struct BaselineOutcome {
    ModelParams<float> params;   // best-validation round's model
    LoopReport report;
};

namespace detail {

// Max class probability (as double, from the shared float probabilities) and
// argmax with ties to the lowest class.
inline std::pair<double, int> row_confidence(const Dense<float>& probs, std::size_t row) {
    const float* p = probs.row(row);
    std::size_t best = 0;
    for (std::size_t j = 1; j < probs.cols; ++j)
        if (p[j] > p[best]) best = j;
    double mx = p[0];
    for (std::size_t j = 1; j < probs.cols; ++j) mx = std::max(mx, static_cast<double>(p[j]));
    return {mx, static_cast<int>(best)};
}

struct BaselineRound {
    FitResult<float> fit;
    Dense<float> probs;           // n x C class probabilities
    std::vector<int> predicted;   // argmax per node
};

// One supervised + adopted training round of a plain single-output-block
// network, shared by both baselines.
inline BaselineRound baseline_round(const CitationGraph& g, const Csr<double>& adj,
                                    const Csr<float>& x, const SplitMasks& masks,
                                    const std::vector<PseudoTarget>& adopted,
                                    double lambda_pseudo, const TrainConfig& tc,
                                    const ModelParams<float>* init) {
    TrainStream<float> stream;
    stream.x = &x;
    const double wl = 1.0 / static_cast<double>(masks.train.size());
    for (auto i : masks.train) {
        stream.rows.push_back(i);
        stream.targets.push_back(g.labels[i]);
        stream.weights.push_back(wl);
    }
    const double wu = adopted.empty() ? 0.0 : lambda_pseudo / static_cast<double>(adopted.size());
    for (const auto& p : adopted) {
        stream.rows.push_back(p.node);
        stream.targets.push_back(p.y_hat);
        stream.weights.push_back(wu);
    }
    EvalSpec<float> eval;
    eval.x_eval = &x;
    eval.block_begin = 0;
    eval.block_end = g.c;
    eval.val_rows = masks.val;
    eval.labels = &g.labels;

    BaselineRound out;
    out.fit = fit_shared_network(adj, {stream}, eval, g.c, tc, init);
    auto probe = gcn_forward(out.fit.params, adj, x);
    out.probs = block_softmax_rows(probe.logits, 0, g.c);
    out.predicted.resize(g.n);
    for (std::size_t i = 0; i < g.n; ++i) out.predicted[i] = row_confidence(out.probs, i).second;
    return out;
}

} // namespace detail

// Classical self-training: one plain network, each round adopting the top-tau
// fraction of unlabeled nodes by max softmax probability — no consistency
// filter and no cross-factor ranking.  Schedule, warm-starting, convergence
// and model selection mirror the factor loop exactly.
inline BaselineOutcome self_training_baseline(const CitationGraph& g, const Csr<double>& adj,
                                              const SplitMasks& masks, const LoopConfig& lc,
                                              const TrainConfig& tc) {
    lc.validate();
    BaselineOutcome out;
    const auto x = csr_from_dense(g.features);
    const auto candidates = detail::unlabeled_nodes(g.n, masks.train);
    std::vector<PseudoTarget> adopted;
    std::map<std::size_t, int> accumulated;
    std::vector<std::size_t> prev_sp;
    ModelParams<float> prev_params;
    double best_val = -1.0;

    for (int t = 0; t < lc.T; ++t) {
        const bool warm = t > 0 && !lc.retrain_from_scratch;
        auto round = detail::baseline_round(g, adj, x, masks, adopted, lc.lambda_pseudo, tc,
                                            warm ? &prev_params : nullptr);

        IterationRow row;
        row.t = t;
        row.tau = tau_schedule(t, lc);
        row.val_acc = detail::accuracy_or_missing(round.predicted, g.labels, masks.val);
        row.test_acc = detail::accuracy_or_missing(round.predicted, g.labels, masks.test);

        PseudoLabelSet su;   // every unlabeled node is a candidate here
        su.stage = PseudoLabelSet::Stage::consistent;
        for (auto node : candidates) {
            auto [s, y_hat] = detail::row_confidence(round.probs, node);
            su.entries.push_back({node, y_hat, s, s});
        }
        auto sp = rank_select(su, row.tau);

        row.su_size = su.entries.size();
        row.sp_size = sp.entries.size();
        if (!su.entries.empty()) row.pseudo_acc_su = pseudo_accuracy(su, g.labels);
        if (!sp.entries.empty()) row.pseudo_acc_sp = pseudo_accuracy(sp, g.labels);
        auto sp_nodes = sp.nodes();
        std::sort(sp_nodes.begin(), sp_nodes.end());
        row.jac = jaccard(sp_nodes, prev_sp);
        out.report.rows.push_back(row);
        out.report.adopted_sets.push_back(sp_nodes);

        if (row.val_acc >= best_val) {
            best_val = row.val_acc;
            out.report.chosen_round = t;
            out.report.best_val_acc = row.val_acc;
            out.report.final_test_acc = row.test_acc;
            out.params = round.fit.params;
        }

        prev_params = std::move(round.fit.params);
        adopted.clear();
        if (lc.accumulate) {
            for (const auto& e : sp.entries) accumulated[e.node] = e.y_hat;
            for (const auto& [node, y] : accumulated) adopted.push_back({node, y});
        } else {
            for (const auto& e : sp.entries) adopted.push_back({e.node, e.y_hat});
        }
        if (row.jac >= lc.jaccard_stop) {
            out.report.stopped_early = true;
            break;
        }
        prev_sp = std::move(sp_nodes);
    }
    return out;
}

// Propagated label mass Y after `iters` rounds of Y <- alpha * A_hat * Y +
// (1 - alpha) * Y0, seeded with one-hot labels on the labeled nodes.
inline Dense<double> label_propagation(const Csr<double>& adj, const std::vector<int>& labels,
                                       const std::vector<std::size_t>& train, std::size_t C,
                                       double alpha = 0.9, int iters = 50) {
    Dense<double> y0(adj.rows, C);
    for (auto i : train) y0(i, labels[i]) = 1.0;
    Dense<double> y = y0;
    for (int it = 0; it < iters; ++it) {
        auto ay = spmm(adj, y);
        for (std::size_t i = 0; i < y.a.size(); ++i) y.a[i] = alpha * ay.a[i] + (1 - alpha) * y0.a[i];
    }
    return y;
}

// Two-judge baseline: the self-training network and a label-propagation
// co-judge each nominate their top-tau unlabeled nodes; a node is adopted only
// when both nominate it with the same class.
inline BaselineOutcome intersection_baseline(const CitationGraph& g, const Csr<double>& adj,
                                             const SplitMasks& masks, const LoopConfig& lc,
                                             const TrainConfig& tc, double lp_alpha = 0.9,
                                             int lp_iters = 50) {
    lc.validate();
    BaselineOutcome out;
    const auto x = csr_from_dense(g.features);
    const auto candidates = detail::unlabeled_nodes(g.n, masks.train);

    // the co-judge's verdicts never change across rounds: its seed labels and
    // the graph are fixed
    const auto lp = label_propagation(adj, g.labels, masks.train, g.c, lp_alpha, lp_iters);
    PseudoLabelSet lp_all;
    for (auto node : candidates) {
        const double* r = lp.row(node);
        std::size_t best = 0;
        double mx = r[0];
        for (std::size_t j = 1; j < g.c; ++j)
            if (r[j] > mx) { mx = r[j]; best = j; }
        lp_all.entries.push_back({node, static_cast<int>(best), mx, mx});
    }

    std::vector<PseudoTarget> adopted;
    std::map<std::size_t, int> accumulated;
    std::vector<std::size_t> prev_sp;
    ModelParams<float> prev_params;
    double best_val = -1.0;

    for (int t = 0; t < lc.T; ++t) {
        const bool warm = t > 0 && !lc.retrain_from_scratch;
        auto round = detail::baseline_round(g, adj, x, masks, adopted, lc.lambda_pseudo, tc,
                                            warm ? &prev_params : nullptr);

        IterationRow row;
        row.t = t;
        row.tau = tau_schedule(t, lc);
        row.val_acc = detail::accuracy_or_missing(round.predicted, g.labels, masks.val);
        row.test_acc = detail::accuracy_or_missing(round.predicted, g.labels, masks.test);

        PseudoLabelSet gcn_all;
        gcn_all.stage = PseudoLabelSet::Stage::consistent;
        for (auto node : candidates) {
            auto [s, y_hat] = detail::row_confidence(round.probs, node);
            gcn_all.entries.push_back({node, y_hat, s, s});
        }
        auto top_gcn = rank_select(gcn_all, row.tau);
        auto top_lp = rank_select(lp_all, row.tau);

        std::map<std::size_t, int> lp_class;
        for (const auto& e : top_lp.entries) lp_class[e.node] = e.y_hat;
        PseudoLabelSet sp;
        sp.stage = PseudoLabelSet::Stage::selected;
        for (const auto& e : top_gcn.entries) {
            auto it = lp_class.find(e.node);
            if (it != lp_class.end() && it->second == e.y_hat) sp.entries.push_back(e);
        }

        row.su_size = gcn_all.entries.size();
        row.sp_size = sp.entries.size();
        if (!gcn_all.entries.empty()) row.pseudo_acc_su = pseudo_accuracy(gcn_all, g.labels);
        if (!sp.entries.empty()) row.pseudo_acc_sp = pseudo_accuracy(sp, g.labels);
        auto sp_nodes = sp.nodes();
        std::sort(sp_nodes.begin(), sp_nodes.end());
        row.jac = jaccard(sp_nodes, prev_sp);
        out.report.rows.push_back(row);
        out.report.adopted_sets.push_back(sp_nodes);

        if (row.val_acc >= best_val) {
            best_val = row.val_acc;
            out.report.chosen_round = t;
            out.report.best_val_acc = row.val_acc;
            out.report.final_test_acc = row.test_acc;
            out.params = round.fit.params;
        }

        prev_params = std::move(round.fit.params);
        adopted.clear();
        if (lc.accumulate) {
            for (const auto& e : sp.entries) accumulated[e.node] = e.y_hat;
            for (const auto& [node, y] : accumulated) adopted.push_back({node, y});
        } else {
            for (const auto& e : sp.entries) adopted.push_back({e.node, e.y_hat});
        }
        if (row.jac >= lc.jaccard_stop) {
            out.report.stopped_early = true;
            break;
        }
        prev_sp = std::move(sp_nodes);
    }
    return out;
}

} // namespace difac
