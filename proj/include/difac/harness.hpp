#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include <difac/aux.hpp>
#include <difac/digest.hpp>
#include <difac/error.hpp>
#include <difac/factors.hpp>
#include <difac/graph.hpp>
#include <difac/metrics.hpp>
#include <difac/nn.hpp>
#include <difac/pseudo.hpp>

namespace difac {

inline constexpr const char* kCodeVersion = "difac/1.0.0";

// ---------------------------------------------------------------------------
// Experiment configuration: one JSON document, every field overridable from
// the command line under the same name.
// ---------------------------------------------------------------------------

enum class Method { gcn, self_train, intersection, difac };

inline Method method_from_string(const std::string& s) {
    if (s == "gcn") return Method::gcn;
    if (s == "self_train") return Method::self_train;
    if (s == "intersection") return Method::intersection;
    if (s == "difac") return Method::difac;
    throw ConfigError("unknown method '" + s + "' (want gcn|self_train|intersection|difac)");
}

inline std::string to_string(Method m) {
    switch (m) {
        case Method::gcn: return "gcn";
        case Method::self_train: return "self_train";
        case Method::intersection: return "intersection";
        default: return "difac";
    }
}

// Where auxiliary description vectors come from, written as a single token:
// "none", "file:PATH", "stub:ACCURACY", or "remote".
struct AuxSpec {
    enum class Source { none, file, stub, remote };
    Source source = Source::none;
    std::string file_path;        // source = file
    double stub_accuracy = 0.9;   // source = stub
    std::size_t stub_dim = 64;    // source = stub
    ProviderConfig provider;      // source = remote
    std::string texts_path;       // source = remote: one description text per node, one per line

    std::string token() const {
        switch (source) {
            case Source::none: return "none";
            case Source::file: return "file:" + file_path;
            case Source::stub: {
                std::ostringstream os;
                os << "stub:" << stub_accuracy;
                return os.str();
            }
            default: return "remote";
        }
    }
};

inline AuxSpec parse_aux_spec(const std::string& token) {
    AuxSpec spec;
    if (token == "none") return spec;
    if (token == "remote") {
        spec.source = AuxSpec::Source::remote;
        return spec;
    }
    if (token.rfind("file:", 0) == 0) {
        spec.source = AuxSpec::Source::file;
        spec.file_path = token.substr(5);
        if (spec.file_path.empty()) throw ConfigError("aux spec 'file:' needs a path");
        return spec;
    }
    if (token.rfind("stub:", 0) == 0) {
        spec.source = AuxSpec::Source::stub;
        try {
            spec.stub_accuracy = std::stod(token.substr(5));
        } catch (const std::exception&) {
            throw ConfigError("aux spec '" + token + "' needs a numeric accuracy");
        }
        return spec;
    }
    throw ConfigError("unknown aux spec '" + token + "' (want none|file:PATH|stub:ACC|remote)");
}

struct ExperimentConfig {
    std::string dataset = "cora";
    std::string data_dir = "data";
    Method method = Method::gcn;
    std::size_t k = 3;             // differentiated factor count
    DiffMethod diff;               // kind + perturbation fraction; seed set per run seed
    LoopConfig loop;
    TrainConfig train;
    AuxSpec aux;
    std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
    std::string out_dir = "runs";
    std::size_t per_class_train = 20;
    std::size_t n_val = 500;
    std::size_t n_test = 1000;
    double mask_fraction = 0.0;    // fraction of feature columns zeroed before training
    bool row_normalize = false;

    void validate() const {
        if (seeds.empty()) throw ConfigError("experiment needs at least one seed");
        if (k == 0) throw ConfigError("factor count must be at least 1");
        if (mask_fraction < 0.0 || mask_fraction >= 1.0)
            throw ConfigError("mask fraction must lie in [0,1)");
        diff.validate();
        loop.validate();
        train.validate();
        if (method == Method::difac && aux.source == AuxSpec::Source::remote &&
            aux.texts_path.empty())
            throw ConfigError("remote aux source needs texts_path (one description per node)");
    }

    // Dataset file resolution: plain files win over their gzipped twins.
    std::string node_file() const { return resolve(dataset + ".content"); }
    std::string edge_file() const { return resolve(dataset + ".cites"); }

  private:
    std::string resolve(const std::string& stem) const {
        const auto plain = std::filesystem::path(data_dir) / stem;
        if (std::filesystem::exists(plain)) return plain.string();
        return (plain.string() + ".gz");
    }
};

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
    nlohmann::json j;
    j["dataset"] = c.dataset;
    j["data_dir"] = c.data_dir;
    j["method"] = to_string(c.method);
    j["k"] = c.k;
    j["diff_method"] = to_string(c.diff.kind);
    j["perturb_frac"] = c.diff.perturb_frac;
    j["iters"] = c.loop.T;
    j["tau0"] = c.loop.tau0;
    j["tau_final"] = c.loop.tau_final;
    j["lambda_pseudo"] = c.loop.lambda_pseudo;
    j["lambda_acc"] = c.loop.lambda_acc;
    j["jaccard_stop"] = c.loop.jaccard_stop;
    j["from_scratch"] = c.loop.retrain_from_scratch;
    j["accumulate"] = c.loop.accumulate;
    j["rank"] = to_string(c.loop.rank);
    j["lr"] = c.train.lr;
    j["epochs"] = c.train.epochs;
    j["weight_decay"] = c.train.weight_decay;
    j["hidden"] = c.train.hidden;
    j["dropout"] = c.train.dropout;
    j["activation"] = to_string(c.train.act);
    j["patience"] = c.train.patience;
    j["bias"] = c.train.bias;
    j["output_cap"] = c.train.output_cap;
    j["aux"] = c.aux.token();
    j["aux_dim"] = c.aux.stub_dim;
    j["aux_texts"] = c.aux.texts_path;
    j["aux_endpoint"] = c.aux.provider.endpoint;
    j["aux_model"] = c.aux.provider.model;
    j["aux_auth_env"] = c.aux.provider.auth_env;
    j["aux_cache"] = c.aux.provider.cache_path;
    j["seeds"] = c.seeds;
    j["out_dir"] = c.out_dir;
    j["per_class_train"] = c.per_class_train;
    j["n_val"] = c.n_val;
    j["n_test"] = c.n_test;
    j["mask_fraction"] = c.mask_fraction;
    j["row_normalize"] = c.row_normalize;
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    static const char* known[] = {
        "dataset",     "data_dir",    "method",        "k",           "diff_method",
        "perturb_frac", "iters",      "tau0",          "tau_final",   "lambda_pseudo",
        "lambda_acc",  "jaccard_stop", "from_scratch", "accumulate",  "rank",
        "lr",          "epochs",      "weight_decay",  "hidden",      "dropout",
        "activation",  "patience",    "bias",          "output_cap",  "aux",
        "aux_dim",     "aux_texts",   "aux_endpoint",  "aux_model",   "aux_auth_env",
        "aux_cache",   "seeds",       "out_dir",       "per_class_train", "n_val",
        "n_test",      "mask_fraction", "row_normalize"};
    if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* name : known) ok = ok || key == name;
        if (!ok) throw ConfigError("unknown config key '" + key + "'");
    }
    ExperimentConfig c;
    auto get = [&](const char* key, auto& into) {
        if (j.contains(key)) into = j.at(key).get<std::decay_t<decltype(into)>>();
    };
    get("dataset", c.dataset);
    get("data_dir", c.data_dir);
    if (j.contains("method")) c.method = method_from_string(j.at("method").get<std::string>());
    get("k", c.k);
    if (j.contains("diff_method"))
        c.diff.kind = diff_kind_from_string(j.at("diff_method").get<std::string>());
    get("perturb_frac", c.diff.perturb_frac);
    get("iters", c.loop.T);
    get("tau0", c.loop.tau0);
    get("tau_final", c.loop.tau_final);
    get("lambda_pseudo", c.loop.lambda_pseudo);
    get("lambda_acc", c.loop.lambda_acc);
    get("jaccard_stop", c.loop.jaccard_stop);
    get("from_scratch", c.loop.retrain_from_scratch);
    get("accumulate", c.loop.accumulate);
    if (j.contains("rank")) c.loop.rank = rank_strategy_from_string(j.at("rank").get<std::string>());
    get("lr", c.train.lr);
    get("epochs", c.train.epochs);
    get("weight_decay", c.train.weight_decay);
    get("hidden", c.train.hidden);
    get("dropout", c.train.dropout);
    if (j.contains("activation"))
        c.train.act = activation_from_string(j.at("activation").get<std::string>());
    get("patience", c.train.patience);
    get("bias", c.train.bias);
    get("output_cap", c.train.output_cap);
    if (j.contains("aux")) c.aux = parse_aux_spec(j.at("aux").get<std::string>());
    get("aux_dim", c.aux.stub_dim);
    get("aux_texts", c.aux.texts_path);
    get("aux_endpoint", c.aux.provider.endpoint);
    get("aux_model", c.aux.provider.model);
    get("aux_auth_env", c.aux.provider.auth_env);
    get("aux_cache", c.aux.provider.cache_path);
    get("seeds", c.seeds);
    get("out_dir", c.out_dir);
    get("per_class_train", c.per_class_train);
    get("n_val", c.n_val);
    get("n_test", c.n_test);
    get("mask_fraction", c.mask_fraction);
    get("row_normalize", c.row_normalize);
    return c;
}

// The experiment's identity: canonical JSON with the location fields (data
// and output directories) and the seed list stripped, so a run is findable no
// matter where its inputs live or which seeds were requested.  nlohmann::json
// stores objects sorted by key, so field order in the source never matters.
inline std::string config_digest(const ExperimentConfig& c) {
    auto j = config_to_json(c);
    j.erase("seeds");
    j.erase("out_dir");
    j.erase("data_dir");
    return hex64(fnv1a64(j.dump()));
}

// ---------------------------------------------------------------------------
// Run manifest: what was executed, where the records landed.
// ---------------------------------------------------------------------------

struct SeedEntry {
    std::uint64_t seed = 0;
    std::string status;         // "done", "cached", or "failed"
    std::string metrics_path;   // relative to the output directory
    std::string error;
};

struct RunManifest {
    std::string digest;
    std::string code_version = kCodeVersion;
    std::string started, finished;   // UTC ISO-8601
    nlohmann::json config;
    std::vector<SeedEntry> seeds;

    bool all_done() const {
        for (const auto& s : seeds)
            if (s.status == "failed") return false;
        return true;
    }
};

inline nlohmann::json manifest_to_json(const RunManifest& m) {
    nlohmann::json j;
    j["digest"] = m.digest;
    j["code_version"] = m.code_version;
    j["started"] = m.started;
    j["finished"] = m.finished;
    j["config"] = m.config;
    j["seeds"] = nlohmann::json::array();
    for (const auto& s : m.seeds) {
        nlohmann::json e;
        e["seed"] = s.seed;
        e["status"] = s.status;
        e["metrics_path"] = s.metrics_path;
        e["error"] = s.error;
        j["seeds"].push_back(e);
    }
    return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
    RunManifest m;
    try {
        m.digest = j.at("digest").get<std::string>();
        m.code_version = j.at("code_version").get<std::string>();
        m.started = j.at("started").get<std::string>();
        m.finished = j.at("finished").get<std::string>();
        m.config = j.at("config");
        for (const auto& e : j.at("seeds")) {
            SeedEntry s;
            s.seed = e.at("seed").get<std::uint64_t>();
            s.status = e.at("status").get<std::string>();
            s.metrics_path = e.at("metrics_path").get<std::string>();
            s.error = e.at("error").get<std::string>();
            m.seeds.push_back(s);
        }
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("manifest: ") + e.what());
    }
    return m;
}

namespace detail {

inline std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Method executors.
// ---------------------------------------------------------------------------

struct PlainGcnOutcome {
    ModelParams<float> params;
    double val_acc = -1.0;
    double test_acc = -1.0;
    std::vector<int> predicted;
    int best_epoch = -1;
    int epochs_run = 0;
};

// Supervised reference model: trained on the labeled nodes alone.
inline PlainGcnOutcome plain_gcn(const CitationGraph& g, const Csr<double>& adj,
                                 const SplitMasks& masks, const TrainConfig& tc) {
    const auto x = csr_from_dense(g.features);
    auto round = detail::baseline_round(g, adj, x, masks, {}, 1.0, tc, nullptr);
    PlainGcnOutcome out;
    out.params = std::move(round.fit.params);
    out.val_acc = round.fit.best_val_acc;
    out.best_epoch = round.fit.best_epoch;
    out.epochs_run = round.fit.epochs_run;
    out.predicted = std::move(round.predicted);
    if (!masks.test.empty()) out.test_acc = accuracy(out.predicted, g.labels, masks.test);
    return out;
}

namespace detail {

// Predictions plus hidden representations of a finished model, used for the
// headline metrics.  For the factor model the variant-0 input is probed and
// the class distribution is the mean over factor blocks.
struct ProbeResult {
    std::vector<int> predicted;
    Dense<float> hidden;
    std::vector<double> max_prob;
};

inline ProbeResult probe_plain(const ModelParams<float>& params, const Csr<double>& adj,
                               const Csr<float>& x, std::size_t c, Activation act) {
    auto fwd = gcn_forward(params, adj, x, act);
    auto probs = block_softmax_rows(fwd.logits, 0, c);
    ProbeResult out;
    out.hidden = std::move(fwd.act1);
    out.predicted.resize(probs.rows);
    out.max_prob.resize(probs.rows);
    for (std::size_t i = 0; i < probs.rows; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < c; ++j)
            if (probs(i, j) > probs(i, best)) best = j;
        out.predicted[i] = static_cast<int>(best);
        out.max_prob[i] = probs(i, best);
    }
    return out;
}

inline ProbeResult probe_factors(const FactorModel& model, const Csr<double>& adj,
                                 const FactorizedInput& fx, Activation act) {
    std::vector<std::size_t> all(fx.variants[0].rows);
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    const auto preds = factor_predict(model, adj, fx, all);
    auto decoded = decode_mean(preds);
    auto fwd = gcn_forward(model.params, adj, fx.variants[0], act);
    ProbeResult out;
    out.hidden = std::move(fwd.act1);
    out.predicted = std::move(decoded);
    out.max_prob.resize(all.size());
    const std::size_t c = model.C;
    for (std::size_t i = 0; i < all.size(); ++i) {
        // Mean class distribution over factor blocks, probed at its peak.
        double best = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double m = 0.0;
            for (std::size_t k = 0; k < model.K; ++k) m += preds.block(i, k)[j];
            m /= static_cast<double>(model.K);
            if (m > best) best = m;
        }
        out.max_prob[i] = best;
    }
    return out;
}

} // namespace detail

// Executes one (config, seed) cell and returns its metrics record.
inline MetricsRecord execute_seed(const ExperimentConfig& cfg, const CitationGraph& base_graph,
                                  std::uint64_t seed) {
    CitationGraph g = base_graph;
    if (cfg.mask_fraction > 0.0) g = mask_features(g, cfg.mask_fraction, seed);
    if (cfg.row_normalize) g = row_normalize_features(g);
    const auto adj = normalize_adjacency(g);
    const auto masks = standard_split(g, cfg.per_class_train, cfg.n_val, cfg.n_test, seed);

    TrainConfig tc = cfg.train;
    tc.seed = seed;
    LoopConfig lc = cfg.loop;
    DiffMethod diff = cfg.diff;
    diff.seed = seed;

    MetricsRecord rec;
    rec.dataset = cfg.dataset;
    rec.method = to_string(cfg.method);
    rec.seed = seed;
    rec.config_digest = config_digest(cfg);
    rec.run_id = rec.config_digest + "-s" + std::to_string(seed);

    detail::ProbeResult probe;
    switch (cfg.method) {
        case Method::gcn: {
            auto out = plain_gcn(g, adj, masks, tc);
            rec.test_accuracy = 100.0 * out.test_acc;
            probe = detail::probe_plain(out.params, adj, csr_from_dense(g.features), g.c, tc.act);
            rec.trace = nlohmann::json::object();
            rec.trace["best_epoch"] = out.best_epoch;
            rec.trace["epochs_run"] = out.epochs_run;
            rec.trace["val_acc"] = out.val_acc;
            break;
        }
        case Method::self_train: {
            auto out = self_training_baseline(g, adj, masks, lc, tc);
            rec.test_accuracy = 100.0 * out.report.final_test_acc;
            rec.pseudo_acc = 100.0 * out.report.mean_pseudo_acc();
            rec.trace = loop_report_to_json(out.report);
            probe = detail::probe_plain(out.params, adj, csr_from_dense(g.features), g.c, tc.act);
            break;
        }
        case Method::intersection: {
            auto out = intersection_baseline(g, adj, masks, lc, tc);
            rec.test_accuracy = 100.0 * out.report.final_test_acc;
            rec.pseudo_acc = 100.0 * out.report.mean_pseudo_acc();
            rec.trace = loop_report_to_json(out.report);
            probe = detail::probe_plain(out.params, adj, csr_from_dense(g.features), g.c, tc.act);
            break;
        }
        case Method::difac: {
            AuxFactorOutput merged;
            const AuxFactorOutput* aux_ptr = nullptr;
            if (cfg.aux.source != AuxSpec::Source::none) {
                AuxVectorTable table;
                switch (cfg.aux.source) {
                    case AuxSpec::Source::stub:
                        table = stub_descriptions(g.labels, g.c, cfg.aux.stub_accuracy,
                                                  cfg.aux.stub_dim, seed);
                        break;
                    case AuxSpec::Source::file:
                        table = load_aux_jsonl(cfg.aux.file_path, "file:" + cfg.aux.file_path);
                        break;
                    default: {  // remote
                        std::ifstream in(cfg.aux.texts_path);
                        if (!in)
                            throw IoError("cannot read description texts from '" +
                                          cfg.aux.texts_path + "'");
                        std::vector<std::string> texts;
                        std::string line;
                        while (std::getline(in, line)) texts.push_back(line);
                        table = fetch_descriptions(cfg.aux.provider, g, texts);
                    }
                }
                auto bundle = train_aux_factors(g, adj, table, masks, tc);
                merged = std::move(bundle.merged);
                aux_ptr = &merged;
            }
            auto out = difac_loop(g, adj, masks, diff, cfg.k, lc, tc, aux_ptr);
            rec.test_accuracy = 100.0 * out.report.final_test_acc;
            rec.pseudo_acc = 100.0 * out.report.mean_pseudo_acc();
            rec.trace = loop_report_to_json(out.report);
            probe = detail::probe_factors(out.model, adj, out.inputs, tc.act);
            break;
        }
    }

    try {
        const auto con = conceit(probe.hidden, probe.predicted, g.labels, masks.test,
                                 &g.label_names);
        rec.conceit_mean = con.mean;
        rec.conceit_sum = con.raw_sum;
    } catch (const MetricError& e) {
        // A class without correct anchors leaves the metric undefined for
        // this seed; the record says so instead of faking a number.
        rec.conceit_mean = std::nan("");
        rec.conceit_sum = std::nan("");
        rec.trace["conceit_error"] = e.what();
    }
    return rec;
}

// ---------------------------------------------------------------------------
// run(): the orchestration entry point.  Completed (digest, seed) cells are
// recognized by their metrics file and skipped; failures are recorded and do
// not break the remaining seeds.
// ---------------------------------------------------------------------------

inline RunManifest run(const ExperimentConfig& cfg) {
    cfg.validate();
    if (!std::filesystem::exists(cfg.node_file()))
        throw ConfigError("dataset file '" + cfg.node_file() + "' does not exist");
    if (!std::filesystem::exists(cfg.edge_file()))
        throw ConfigError("dataset file '" + cfg.edge_file() + "' does not exist");
    std::filesystem::create_directories(cfg.out_dir);

    RunManifest manifest;
    manifest.digest = config_digest(cfg);
    manifest.config = config_to_json(cfg);
    manifest.started = detail::utc_now();

    const auto g = load_citation_dataset(cfg.node_file(), cfg.edge_file());

    const auto out_root = std::filesystem::path(cfg.out_dir);
    for (const auto seed : cfg.seeds) {
        SeedEntry entry;
        entry.seed = seed;
        entry.metrics_path = manifest.digest + "-s" + std::to_string(seed) + ".json";
        const auto metrics_file = out_root / entry.metrics_path;
        if (std::filesystem::exists(metrics_file)) {
            entry.status = "cached";
            manifest.seeds.push_back(entry);
            continue;
        }
        try {
            const auto rec = execute_seed(cfg, g, seed);
            std::ofstream out(metrics_file);
            if (!out) throw IoError("cannot write metrics to '" + metrics_file.string() + "'");
            out << metrics_to_json(rec).dump(2) << '\n';
            out.close();
            // The shared CSV index grows by exactly one appended line per
            // record; concurrent runs interleave whole lines.
            const auto index = out_root / "index.csv";
            const bool fresh = !std::filesystem::exists(index);
            std::ofstream idx(index, std::ios::app);
            if (fresh) idx << metrics_csv_header() << '\n';
            idx << metrics_csv_row(rec) << '\n';
            entry.status = "done";
        } catch (const Error& e) {
            entry.status = "failed";
            entry.error = e.what();
        }
        manifest.seeds.push_back(entry);
    }
    manifest.finished = detail::utc_now();

    const auto manifest_file = out_root / ("manifest-" + manifest.digest + ".json");
    std::ofstream out(manifest_file);
    if (!out) throw IoError("cannot write manifest to '" + manifest_file.string() + "'");
    out << manifest_to_json(manifest).dump(2) << '\n';
    return manifest;
}

inline std::vector<MetricsRecord> load_run_records(const RunManifest& m, const std::string& out_dir) {
    std::vector<MetricsRecord> records;
    for (const auto& s : m.seeds) {
        if (s.status == "failed") continue;
        const auto path = std::filesystem::path(out_dir) / s.metrics_path;
        std::ifstream in(path);
        if (!in) throw IoError("metrics file '" + path.string() + "' is missing");
        nlohmann::json j;
        in >> j;
        records.push_back(metrics_from_json(j));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Sweeps: one knob, many values, a tidy CSV.
// ---------------------------------------------------------------------------

enum class SweepKind { label_rate, factor_count, mask, tau, rank_strategy, diff_method };

inline SweepKind sweep_kind_from_string(const std::string& s) {
    if (s == "label_rate") return SweepKind::label_rate;
    if (s == "factor_count") return SweepKind::factor_count;
    if (s == "mask") return SweepKind::mask;
    if (s == "tau") return SweepKind::tau;
    if (s == "rank_strategy") return SweepKind::rank_strategy;
    if (s == "diff_method") return SweepKind::diff_method;
    throw ConfigError("unknown sweep kind '" + s + "'");
}

inline std::string to_string(SweepKind k) {
    switch (k) {
        case SweepKind::label_rate: return "label_rate";
        case SweepKind::factor_count: return "factor_count";
        case SweepKind::mask: return "mask";
        case SweepKind::tau: return "tau";
        case SweepKind::rank_strategy: return "rank_strategy";
        default: return "diff_method";
    }
}

// Applies one sweep value to a copy of the base configuration.  Value parsing
// doubles as validation: a bad token fails before anything runs.
inline ExperimentConfig apply_sweep_value(const ExperimentConfig& base, SweepKind kind,
                                          const std::string& value) {
    ExperimentConfig c = base;
    auto as_number = [&](const char* what) {
        try {
            return std::stod(value);
        } catch (const std::exception&) {
            throw ConfigError(std::string("sweep value '") + value + "' is not a valid " + what);
        }
    };
    switch (kind) {
        case SweepKind::label_rate: {
            const double v = as_number("labels-per-class count");
            if (v < 1 || v != std::floor(v)) throw ConfigError("label_rate needs a positive integer");
            c.per_class_train = static_cast<std::size_t>(v);
            break;
        }
        case SweepKind::factor_count: {
            const double v = as_number("factor count");
            if (v < 1 || v != std::floor(v)) throw ConfigError("factor_count needs a positive integer");
            c.k = static_cast<std::size_t>(v);
            break;
        }
        case SweepKind::mask: {
            const double v = as_number("mask fraction");
            if (v < 0.0 || v >= 1.0) throw ConfigError("mask fraction must lie in [0,1)");
            c.mask_fraction = v;
            break;
        }
        case SweepKind::tau: {
            const double v = as_number("initial adoption ratio");
            if (v <= 0.0 || v > 1.0) throw ConfigError("tau must lie in (0,1]");
            c.loop.tau0 = v;
            if (c.loop.tau_final < v) c.loop.tau_final = v;
            break;
        }
        case SweepKind::rank_strategy:
            c.loop.rank = rank_strategy_from_string(value);
            break;
        case SweepKind::diff_method:
            c.diff.kind = diff_kind_from_string(value);
            break;
    }
    c.validate();
    return c;
}

struct SweepRow {
    std::string kind, value;
    std::uint64_t seed = 0;
    std::string dataset, method, status;
    double test_accuracy = 0.0;
    double pseudo_acc = -1.0;
    double conceit_mean = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    std::string csv_path;
    std::vector<RunManifest> manifests;
};

inline std::string sweep_csv_header() {
    return "kind,value,seed,dataset,method,status,test_accuracy,pseudo_acc,conceit_mean";
}

inline SweepResult sweep(SweepKind kind, const ExperimentConfig& base,
                         const std::vector<std::string>& values) {
    if (values.empty()) throw ConfigError("sweep needs at least one value");
    // Parse every value before running anything.
    std::vector<ExperimentConfig> configs;
    for (const auto& v : values) configs.push_back(apply_sweep_value(base, kind, v));

    SweepResult result;
    for (std::size_t vi = 0; vi < values.size(); ++vi) {
        const auto manifest = run(configs[vi]);
        result.manifests.push_back(manifest);
        auto records = load_run_records(manifest, configs[vi].out_dir);
        std::map<std::uint64_t, const MetricsRecord*> by_seed;
        for (const auto& r : records) by_seed[r.seed] = &r;
        for (const auto& entry : manifest.seeds) {
            SweepRow row;
            row.kind = to_string(kind);
            row.value = values[vi];
            row.seed = entry.seed;
            row.dataset = configs[vi].dataset;
            row.method = to_string(configs[vi].method);
            row.status = entry.status;
            if (const auto it = by_seed.find(entry.seed); it != by_seed.end()) {
                row.test_accuracy = it->second->test_accuracy;
                row.pseudo_acc = it->second->pseudo_acc;
                row.conceit_mean = it->second->conceit_mean;
            }
            result.rows.push_back(row);
        }
    }

    // Canonical order: numeric value when every value parses, then seed.
    const bool numeric = [&] {
        for (const auto& v : values) {
            try {
                std::stod(v);
            } catch (const std::exception&) {
                return false;
            }
        }
        return true;
    }();
    std::sort(result.rows.begin(), result.rows.end(), [&](const SweepRow& a, const SweepRow& b) {
        if (a.value != b.value) {
            if (numeric) return std::stod(a.value) < std::stod(b.value);
            return a.value < b.value;
        }
        return a.seed < b.seed;
    });

    std::filesystem::create_directories(base.out_dir);
    const auto path = std::filesystem::path(base.out_dir) /
                      ("sweep-" + to_string(kind) + "-" + config_digest(base) + ".csv");
    std::ofstream out(path);
    if (!out) throw IoError("cannot write sweep CSV to '" + path.string() + "'");
    out << sweep_csv_header() << '\n';
    out << std::setprecision(17);
    for (const auto& r : result.rows) {
        out << r.kind << ',' << r.value << ',' << r.seed << ',' << r.dataset << ',' << r.method
            << ',' << r.status << ',' << r.test_accuracy << ',' << r.pseudo_acc << ','
            << r.conceit_mean << '\n';
    }
    result.csv_path = path.string();
    return result;
}

// ---------------------------------------------------------------------------
// Report: per-method means with deltas against the supervised baseline.
// ---------------------------------------------------------------------------

inline std::vector<RunManifest> load_manifests(const std::string& out_dir) {
    std::vector<std::filesystem::path> files;
    if (std::filesystem::exists(out_dir))
        for (const auto& e : std::filesystem::directory_iterator(out_dir)) {
            const auto name = e.path().filename().string();
            if (name.rfind("manifest-", 0) == 0 && e.path().extension() == ".json")
                files.push_back(e.path());
        }
    std::sort(files.begin(), files.end());
    std::vector<RunManifest> out;
    for (const auto& f : files) {
        std::ifstream in(f);
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("manifest '" + f.string() + "': " + e.what());
        }
        out.push_back(manifest_from_json(j));
    }
    return out;
}

inline void report(const std::vector<RunManifest>& manifests, const std::string& out_dir,
                   std::ostream& os) {
    struct Group {
        std::vector<double> accs;
        std::vector<std::pair<std::uint64_t, std::string>> failures;
    };
    std::map<std::pair<std::string, std::string>, Group> groups;   // (dataset, method)
    for (const auto& m : manifests) {
        const auto dataset = m.config.value("dataset", "?");
        const auto method = m.config.value("method", "?");
        auto& group = groups[{dataset, method}];
        for (const auto& s : m.seeds)
            if (s.status == "failed") group.failures.emplace_back(s.seed, s.error);
        for (const auto& r : load_run_records(m, out_dir))
            group.accs.push_back(r.test_accuracy);
    }

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    auto std_of = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean_of(v);
        double s = 0.0;
        for (double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size()));
    };

    os << "dataset      method        seeds  test acc (mean +/- std)   vs gcn\n";
    os << "-------      ------        -----  -----------------------   ------\n";
    for (const auto& [key, group] : groups) {
        const auto& [dataset, method] = key;
        const double mean = mean_of(group.accs);
        os << std::left << std::setw(13) << dataset << std::setw(14) << method << std::setw(7)
           << group.accs.size();
        os << std::right << std::fixed << std::setprecision(2) << std::setw(6) << mean << " +/- "
           << std::setw(5) << std_of(group.accs) << std::setw(12) << "";
        const auto base = groups.find({dataset, std::string("gcn")});
        if (method != "gcn" && base != groups.end() && !base->second.accs.empty()) {
            const double delta = mean - mean_of(base->second.accs);
            os << std::showpos << delta << std::noshowpos << (delta >= 0 ? " UP" : " DOWN");
        }
        os << '\n';
        for (const auto& [seed, why] : group.failures)
            os << "    FAILED seed " << seed << ": " << why << '\n';
    }
    os.unsetf(std::ios::fixed);
    os << std::setprecision(6);
}

} // namespace difac
