// Command-line front end: train/evaluate methods, sweep knobs, emit the
// two-judge theory grid, score conceit, fetch description vectors, and
// summarize finished runs.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include <difac/harness.hpp>
#include <difac/theory.hpp>

using namespace difac;

namespace {

// Every experiment flag writes through to the same JSON document that a
// --config file provides, so flags override file keys one for one.
struct ExperimentFlags {
    std::string config_path;
    std::string dataset, data_dir, method, diff_method, rank, activation, aux, out_dir;
    std::string aux_texts, aux_endpoint, aux_model, aux_auth_env, aux_cache;
    std::uint64_t k = 0, hidden = 0, output_cap = 0, aux_dim = 0;
    std::uint64_t per_class_train = 0, n_val = 0, n_test = 0;
    int iters = 0, epochs = 0, patience = 0;
    double tau0 = 0, tau_final = 0, lambda_pseudo = 0, lambda_acc = 0, jaccard_stop = 0;
    double lr = 0, weight_decay = 0, dropout = 0, perturb_frac = 0, mask_fraction = 0;
    bool from_scratch = false, accumulate = false, row_normalize = false, no_bias = false;
    std::vector<std::uint64_t> seeds;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "experiment config JSON; flags override its keys");
        cmd->add_option("--dataset", dataset, "dataset name (cora, citeseer, ...)");
        cmd->add_option("--data-dir", data_dir, "directory holding <dataset>.content/.cites");
        cmd->add_option("--method", method, "gcn | self_train | intersection | difac");
        cmd->add_option("--k", k, "differentiated factor count");
        cmd->add_option("--diff-method", diff_method, "marker | reverse | exchange");
        cmd->add_option("--perturb-frac", perturb_frac, "fraction of columns each factor perturbs");
        cmd->add_option("--iters", iters, "outer training iterations");
        cmd->add_option("--tau0", tau0, "initial adoption ratio");
        cmd->add_option("--tau-final", tau_final, "final adoption ratio");
        cmd->add_option("--lambda-pseudo", lambda_pseudo, "pseudo-label loss weight");
        cmd->add_option("--lambda-acc", lambda_acc, "accountability rescoring weight");
        cmd->add_option("--jaccard-stop", jaccard_stop, "selection-stability stop threshold");
        cmd->add_flag("--from-scratch", from_scratch, "retrain each round from fresh weights");
        cmd->add_flag("--accumulate", accumulate, "keep pseudo-labels adopted in earlier rounds");
        cmd->add_option("--rank", rank, "candidate ranking: min | max | mean");
        cmd->add_option("--lr", lr, "learning rate");
        cmd->add_option("--epochs", epochs, "training epochs per round");
        cmd->add_option("--weight-decay", weight_decay, "L2 penalty on first-layer weights");
        cmd->add_option("--hidden", hidden, "hidden width");
        cmd->add_option("--dropout", dropout, "dropout probability");
        cmd->add_option("--activation", activation, "relu | linear");
        cmd->add_option("--patience", patience, "early-stopping patience (epochs)");
        cmd->add_flag("--no-bias", no_bias, "disable bias terms");
        cmd->add_option("--output-cap", output_cap, "ceiling on factor-count x classes");
        cmd->add_option("--aux", aux, "auxiliary source: none | file:PATH | stub:ACC | remote");
        cmd->add_option("--aux-dim", aux_dim, "stub description width");
        cmd->add_option("--aux-texts", aux_texts, "node description texts, one line per node");
        cmd->add_option("--aux-endpoint", aux_endpoint, "remote provider URL");
        cmd->add_option("--aux-model", aux_model, "remote provider model name");
        cmd->add_option("--aux-auth-env", aux_auth_env, "env var holding the provider token");
        cmd->add_option("--aux-cache", aux_cache, "provider response cache (JSON lines)");
        cmd->add_option("--seed", seeds, "run seed; repeat for several");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--per-class-train", per_class_train, "labeled nodes per class");
        cmd->add_option("--n-val", n_val, "validation node count");
        cmd->add_option("--n-test", n_test, "test node count");
        cmd->add_option("--mask-fraction", mask_fraction, "fraction of feature columns to zero");
        cmd->add_flag("--row-normalize", row_normalize, "L1-normalize feature rows");
    }

    ExperimentConfig resolve(const CLI::App* cmd) const {
        nlohmann::json j = nlohmann::json::object();
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw ConfigError("cannot read config file '" + config_path + "'");
            try {
                in >> j;
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError("config file '" + config_path + "': " + e.what());
            }
        }
        auto given = [&](const char* flag) { return cmd->count(flag) > 0; };
        if (given("--dataset")) j["dataset"] = dataset;
        if (given("--data-dir")) j["data_dir"] = data_dir;
        if (given("--method")) j["method"] = method;
        if (given("--k")) j["k"] = k;
        if (given("--diff-method"))
            j["diff_method"] = to_string(diff_kind_from_string(diff_method));
        if (given("--perturb-frac")) j["perturb_frac"] = perturb_frac;
        if (given("--iters")) j["iters"] = iters;
        if (given("--tau0")) j["tau0"] = tau0;
        if (given("--tau-final")) j["tau_final"] = tau_final;
        if (given("--lambda-pseudo")) j["lambda_pseudo"] = lambda_pseudo;
        if (given("--lambda-acc")) j["lambda_acc"] = lambda_acc;
        if (given("--jaccard-stop")) j["jaccard_stop"] = jaccard_stop;
        if (given("--from-scratch")) j["from_scratch"] = from_scratch;
        if (given("--accumulate")) j["accumulate"] = accumulate;
        if (given("--rank")) j["rank"] = rank;
        if (given("--lr")) j["lr"] = lr;
        if (given("--epochs")) j["epochs"] = epochs;
        if (given("--weight-decay")) j["weight_decay"] = weight_decay;
        if (given("--hidden")) j["hidden"] = hidden;
        if (given("--dropout")) j["dropout"] = dropout;
        if (given("--activation")) j["activation"] = activation;
        if (given("--patience")) j["patience"] = patience;
        if (given("--no-bias")) j["bias"] = !no_bias;
        if (given("--output-cap")) j["output_cap"] = output_cap;
        if (given("--aux")) j["aux"] = aux;
        if (given("--aux-dim")) j["aux_dim"] = aux_dim;
        if (given("--aux-texts")) j["aux_texts"] = aux_texts;
        if (given("--aux-endpoint")) j["aux_endpoint"] = aux_endpoint;
        if (given("--aux-model")) j["aux_model"] = aux_model;
        if (given("--aux-auth-env")) j["aux_auth_env"] = aux_auth_env;
        if (given("--aux-cache")) j["aux_cache"] = aux_cache;
        if (given("--seed")) j["seeds"] = seeds;
        if (given("--out")) j["out_dir"] = out_dir;
        if (given("--per-class-train")) j["per_class_train"] = per_class_train;
        if (given("--n-val")) j["n_val"] = n_val;
        if (given("--n-test")) j["n_test"] = n_test;
        if (given("--mask-fraction")) j["mask_fraction"] = mask_fraction;
        if (given("--row-normalize")) j["row_normalize"] = row_normalize;
        return config_from_json(j);
    }
};

int cmd_train(const ExperimentConfig& cfg) {
    const auto manifest = run(cfg);
    std::cout << "experiment " << manifest.digest << " (" << to_string(cfg.method) << " on "
              << cfg.dataset << ")\n";
    double sum = 0.0;
    std::size_t done = 0;
    const auto records = load_run_records(manifest, cfg.out_dir);
    std::map<std::uint64_t, double> acc_of;
    for (const auto& r : records) acc_of[r.seed] = r.test_accuracy;
    for (const auto& s : manifest.seeds) {
        std::cout << "  seed " << s.seed << ": " << s.status;
        if (s.status == "failed")
            std::cout << " (" << s.error << ")";
        else if (const auto it = acc_of.find(s.seed); it != acc_of.end()) {
            std::cout << "  test acc " << std::fixed << std::setprecision(2) << it->second;
            std::cout.unsetf(std::ios::fixed);
            sum += it->second;
            ++done;
        }
        std::cout << '\n';
    }
    if (done > 0)
        std::cout << "mean test acc over " << done << " seed(s): " << std::fixed
                  << std::setprecision(2) << sum / static_cast<double>(done) << '\n';
    std::cout << "records in " << cfg.out_dir << "/ (index.csv, manifest-" << manifest.digest
              << ".json)\n";
    return manifest.all_done() ? 0 : 1;
}

int cmd_sweep(const ExperimentConfig& base, const std::string& kind_name,
              std::vector<std::string> values) {
    const auto kind = sweep_kind_from_string(kind_name);
    const auto result = sweep(kind, base, values);
    std::size_t failed = 0;
    for (const auto& r : result.rows)
        if (r.status == "failed") ++failed;
    std::cout << "sweep " << kind_name << " over " << values.size() << " value(s) x "
              << base.seeds.size() << " seed(s): " << result.rows.size() << " rows";
    if (failed > 0) std::cout << " (" << failed << " failed)";
    std::cout << "\ncsv: " << result.csv_path << '\n';
    return failed == 0 ? 0 : 1;
}

int cmd_theory(double lo, double hi, double step, std::size_t mc_trials, std::uint64_t seed,
               const std::string& out_path, std::size_t risk_repeats, std::uint64_t risk_seed) {
    const auto rows = theory_grid(lo, hi, step, mc_trials, seed);
    if (out_path.empty() || out_path == "-") {
        write_theory_csv(std::cout, rows);
    } else {
        std::ofstream out(out_path);
        if (!out) throw IoError("cannot write grid to '" + out_path + "'");
        write_theory_csv(out, rows);
        std::cout << rows.size() << " grid rows -> " << out_path << '\n';
    }
    if (risk_repeats > 0) {
        const auto stats = risk_delta_demo(risk_seed, risk_repeats);
        std::cout << "one-step pseudo-label risk over " << stats.repeats << " repeats:\n"
                  << "  mean risk change, correct label: " << std::scientific
                  << stats.mean_correct << "  (|.|: " << stats.mean_abs_correct << ")\n"
                  << "  mean risk change, wrong label:   " << stats.mean_wrong << '\n';
        std::cout.unsetf(std::ios::scientific);
    }
    return 0;
}

int cmd_conceit(const ExperimentConfig& cfg) {
    cfg.validate();
    if (!std::filesystem::exists(cfg.node_file()))
        throw ConfigError("dataset file '" + cfg.node_file() + "' does not exist");
    const auto g = load_citation_dataset(cfg.node_file(), cfg.edge_file());
    std::cout << "conceit of " << to_string(cfg.method) << " on " << cfg.dataset
              << " (misdirected confidence of wrong predictions; lower is better)\n";
    for (const auto seed : cfg.seeds) {
        const auto rec = execute_seed(cfg, g, seed);
        std::cout << "  seed " << seed << ": mean " << std::fixed << std::setprecision(4)
                  << rec.conceit_mean << "  raw sum " << rec.conceit_sum << "  (test acc "
                  << std::setprecision(2) << rec.test_accuracy << ")\n";
        std::cout.unsetf(std::ios::fixed);
    }
    return 0;
}

int cmd_fetch_aux(const std::string& dataset, const std::string& data_dir,
                  const ProviderConfig& provider, const std::string& texts_path,
                  const std::string& out_path) {
    ExperimentConfig paths;
    paths.dataset = dataset;
    paths.data_dir = data_dir;
    if (!std::filesystem::exists(paths.node_file()))
        throw ConfigError("dataset file '" + paths.node_file() + "' does not exist");
    const auto g = load_citation_dataset(paths.node_file(), paths.edge_file());
    std::ifstream in(texts_path);
    if (!in) throw IoError("cannot read description texts from '" + texts_path + "'");
    std::vector<std::string> texts;
    std::string line;
    while (std::getline(in, line)) texts.push_back(line);
    const auto table = fetch_descriptions(provider, g, texts);
    std::size_t remote = 0, cached = 0;
    for (const auto p : table.provenance) {
        if (p == Provenance::remote) ++remote;
        if (p == Provenance::cache) ++cached;
    }
    save_aux_jsonl(out_path, table);
    std::cout << table.n << " vectors (" << remote << " fetched, " << cached
              << " replayed from cache) -> " << out_path << '\n';
    return 0;
}

int cmd_report(const std::string& out_dir) {
    const auto manifests = load_manifests(out_dir);
    if (manifests.empty()) {
        std::cout << "no manifests under '" << out_dir << "'\n";
        return 0;
    }
    report(manifests, out_dir, std::cout);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"differentiated-factor graph learning laboratory"};
    app.set_version_flag("--version", std::string(kCodeVersion));
    app.require_subcommand(1);

    // train
    auto* train = app.add_subcommand("train", "run one method over its seeds and record metrics");
    ExperimentFlags train_flags;
    train_flags.attach(train);

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "run one knob across values x seeds into a CSV");
    ExperimentFlags sweep_flags;
    sweep_flags.attach(sweep_cmd);
    std::string sweep_kind;
    std::vector<std::string> sweep_values;
    sweep_cmd->add_option("--kind", sweep_kind,
                          "label_rate | factor_count | mask | tau | rank_strategy | diff_method")
        ->required();
    sweep_cmd->add_option("--values", sweep_values, "sweep values (comma separated or repeated)")
        ->required()
        ->delimiter(',');

    // theory
    auto* theory = app.add_subcommand("theory", "emit the two-judge posterior grid as CSV");
    double lo = 0.05, hi = 0.95, step = 0.05;
    std::size_t mc_trials = 0, risk_repeats = 0;
    std::uint64_t theory_seed = 0, risk_seed = 0;
    std::string theory_out;
    theory->add_option("--lo", lo, "grid start (exclusive of 0)");
    theory->add_option("--hi", hi, "grid end (exclusive of 1)");
    theory->add_option("--step", step, "grid step");
    theory->add_option("--mc-trials", mc_trials, "simulation trials per point (0 = analytic only)");
    theory->add_option("--mc-seed", theory_seed, "simulation seed");
    theory->add_option("--out", theory_out, "CSV path ('-' or empty for stdout)");
    theory->add_option("--risk-repeats", risk_repeats,
                       "also run the one-step pseudo-label risk demo this many times");
    theory->add_option("--risk-seed", risk_seed, "risk demo seed");

    // conceit
    auto* conceit_cmd =
        app.add_subcommand("conceit", "train once per seed and report misdirected confidence");
    ExperimentFlags conceit_flags;
    conceit_flags.attach(conceit_cmd);

    // fetch-aux
    auto* fetch = app.add_subcommand("fetch-aux", "fetch description vectors into a JSON-lines file");
    std::string f_dataset = "cora", f_data_dir = "data", f_texts, f_out = "aux.jsonl";
    ProviderConfig f_provider;
    fetch->add_option("--dataset", f_dataset, "dataset name");
    fetch->add_option("--data-dir", f_data_dir, "dataset directory");
    fetch->add_option("--texts", f_texts, "node description texts, one line per node")->required();
    fetch->add_option("--out", f_out, "output JSON-lines path");
    fetch->add_option("--endpoint", f_provider.endpoint, "provider URL")->required();
    fetch->add_option("--model", f_provider.model, "provider model name");
    fetch->add_option("--auth-env", f_provider.auth_env, "env var holding the bearer token");
    fetch->add_option("--cache", f_provider.cache_path, "response cache path (JSON lines)");
    fetch->add_option("--dim", f_provider.dim, "embedding width");
    fetch->add_option("--timeout-ms", f_provider.timeout_ms, "request timeout");
    fetch->add_option("--retries", f_provider.retries, "extra attempts per node");

    // report
    auto* report_cmd = app.add_subcommand("report", "summarize finished runs against the baseline");
    std::string report_dir = "runs";
    report_cmd->add_option("--out-dir", report_dir, "directory holding manifests and records");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(train_flags.resolve(train));
        if (sweep_cmd->parsed())
            return cmd_sweep(sweep_flags.resolve(sweep_cmd), sweep_kind, sweep_values);
        if (theory->parsed())
            return cmd_theory(lo, hi, step, mc_trials, theory_seed, theory_out, risk_repeats,
                              risk_seed);
        if (conceit_cmd->parsed()) return cmd_conceit(conceit_flags.resolve(conceit_cmd));
        if (fetch->parsed())
            return cmd_fetch_aux(f_dataset, f_data_dir, f_provider, f_texts, f_out);
        if (report_cmd->parsed()) return cmd_report(report_dir);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
