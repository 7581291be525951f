#pragma once

#include <cstdint>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include <difac/accountability.hpp>
#include <difac/digest.hpp>
#include <difac/error.hpp>
#include <difac/graph.hpp>
#include <difac/metrics.hpp>
#include <difac/nn.hpp>
#include <difac/rng.hpp>

namespace difac {

// ---------------------------------------------------------------------------
// Description vectors: one embedding per node, obtained from a remote
// provider, replayed from a cache, or synthesized by the deterministic stub.
// ---------------------------------------------------------------------------

enum class Provenance { remote, cache, stub };

inline const char* provenance_name(Provenance p) {
    switch (p) {
        case Provenance::remote: return "remote";
        case Provenance::cache: return "cache";
        default: return "stub";
    }
}

struct AuxVectorTable {
    std::size_t n = 0;
    std::size_t dim = 0;
    Dense<float> vectors;                 // n x dim
    std::vector<Provenance> provenance;   // per node
    std::string provider;

    void validate() const {
        if (vectors.rows != n || vectors.cols != dim)
            throw DimError("description table shape " + std::to_string(vectors.rows) + "x" +
                           std::to_string(vectors.cols) + " does not match " + std::to_string(n) +
                           "x" + std::to_string(dim));
        if (provenance.size() != n)
            throw DimError("description table has " + std::to_string(provenance.size()) +
                           " provenance marks for " + std::to_string(n) + " nodes");
        for (std::size_t i = 0; i < vectors.a.size(); ++i)
            if (!std::isfinite(vectors.a[i]))
                throw SchemaError("description vector entry " + std::to_string(i) + " is not finite");
    }
};

struct ProviderConfig {
    std::string endpoint;       // e.g. http://127.0.0.1:8080/embed
    std::string model;          // optional model name forwarded in the request body
    std::string auth_env;       // name of the environment variable holding a bearer token
    int timeout_ms = 10000;
    int retries = 2;            // additional attempts after the first failure
    std::string cache_path;     // JSON-lines replay cache; empty disables caching
    std::size_t dim = 64;       // expected embedding width

    void validate() const {
        if (endpoint.empty()) throw ConfigError("provider endpoint is empty");
        if (timeout_ms <= 0) throw ConfigError("provider timeout must be positive");
        if (retries < 0) throw ConfigError("provider retry count must be nonnegative");
        if (dim == 0) throw ConfigError("provider embedding dimension must be positive");
    }

    // Identity under which vectors are cached; a different model or endpoint
    // must never replay another provider's vectors.
    std::string id() const { return model.empty() ? endpoint : endpoint + "#" + model; }
};

namespace detail {

// Splits an http URL into the client base (scheme://host:port) and path.
inline std::pair<std::string, std::string> split_endpoint(const std::string& url) {
    const auto scheme = url.find("://");
    if (scheme == std::string::npos)
        throw ConfigError("provider endpoint '" + url + "' has no scheme");
    const auto slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, "/"};
    return {url.substr(0, slash), url.substr(slash)};
}

// Pulls the embedding out of a provider response: either a bare array, or an
// object carrying it under "vector", "embedding", or "data[0].embedding".
inline std::vector<double> vector_from_response(const nlohmann::json& j) {
    const nlohmann::json* arr = nullptr;
    if (j.is_array())
        arr = &j;
    else if (j.is_object()) {
        if (j.contains("vector") && j["vector"].is_array())
            arr = &j["vector"];
        else if (j.contains("embedding") && j["embedding"].is_array())
            arr = &j["embedding"];
        else if (j.contains("data") && j["data"].is_array() && !j["data"].empty() &&
                 j["data"][0].is_object() && j["data"][0].contains("embedding"))
            arr = &j["data"][0]["embedding"];
    }
    if (!arr) throw SchemaError("provider response contains no numeric vector");
    std::vector<double> out;
    out.reserve(arr->size());
    for (const auto& v : *arr) {
        if (!v.is_number()) throw SchemaError("provider response vector holds a non-number");
        out.push_back(v.get<double>());
    }
    return out;
}

struct CacheKey {
    std::size_t node = 0;
    std::string provider;
    std::string text_hash;
    std::string str() const { return std::to_string(node) + "|" + provider + "|" + text_hash; }
};

} // namespace detail

// Loads the append-only JSON-lines cache into a key -> vector map.  A missing
// file is an empty cache; a malformed line is a hard error.
inline std::unordered_map<std::string, std::vector<float>> load_description_cache(
    const std::string& path, std::size_t dim) {
    std::unordered_map<std::string, std::vector<float>> out;
    std::ifstream in(path);
    if (!in) return out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw CacheError("cache line " + std::to_string(lineno) + " is not valid JSON: " + e.what());
        }
        if (!j.is_object() || !j.contains("node_id") || !j.contains("provider") ||
            !j.contains("text_hash") || !j.contains("vector") || !j["vector"].is_array())
            throw CacheError("cache line " + std::to_string(lineno) + " is missing required fields");
        const auto& arr = j["vector"];
        if (arr.size() != dim)
            throw CacheError("cache line " + std::to_string(lineno) + " holds a " +
                             std::to_string(arr.size()) + "-dim vector, expected " + std::to_string(dim));
        std::vector<float> v(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            if (!arr[k].is_number())
                throw CacheError("cache line " + std::to_string(lineno) + " vector holds a non-number");
            v[k] = arr[k].get<float>();
        }
        detail::CacheKey key{j["node_id"].get<std::size_t>(), j["provider"].get<std::string>(),
                             j["text_hash"].get<std::string>()};
        out[key.str()] = std::move(v);
    }
    return out;
}

// Fetches one description vector per node.  Cached vectors (keyed by node id,
// provider identity, and text hash) are replayed without touching the
// network; fresh vectors are requested over HTTP POST and appended to the
// cache as they arrive.
inline AuxVectorTable fetch_descriptions(const ProviderConfig& provider, const CitationGraph& g,
                                         const std::vector<std::string>& texts) {
    provider.validate();
    if (texts.size() < g.n)
        throw ContractError("descriptions cover " + std::to_string(texts.size()) +
                            " nodes but the graph has " + std::to_string(g.n));
    for (std::size_t i = 0; i < g.n; ++i)
        if (texts[i].empty())
            throw ContractError("node " + std::to_string(i) + " has no description text");

    AuxVectorTable table;
    table.n = g.n;
    table.dim = provider.dim;
    table.vectors = Dense<float>(g.n, provider.dim);
    table.provenance.assign(g.n, Provenance::cache);
    table.provider = provider.id();

    auto cache = provider.cache_path.empty()
                     ? std::unordered_map<std::string, std::vector<float>>{}
                     : load_description_cache(provider.cache_path, provider.dim);

    std::vector<std::size_t> misses;
    for (std::size_t i = 0; i < g.n; ++i) {
        const detail::CacheKey key{i, table.provider, hex64(fnv1a64(texts[i]))};
        const auto hit = cache.find(key.str());
        if (hit == cache.end()) {
            misses.push_back(i);
            continue;
        }
        for (std::size_t k = 0; k < provider.dim; ++k) table.vectors(i, k) = hit->second[k];
    }
    if (misses.empty()) {
        table.validate();
        return table;
    }

    const auto [base, path] = detail::split_endpoint(provider.endpoint);
    httplib::Client client(base);
    client.set_connection_timeout(0, provider.timeout_ms * 1000);
    client.set_read_timeout(0, provider.timeout_ms * 1000);
    httplib::Headers headers;
    if (!provider.auth_env.empty()) {
        if (const char* token = std::getenv(provider.auth_env.c_str()))
            headers.emplace("Authorization", std::string("Bearer ") + token);
    }

    std::ofstream cache_out;
    if (!provider.cache_path.empty()) {
        cache_out.open(provider.cache_path, std::ios::app);
        if (!cache_out)
            throw CacheError("cannot open cache file '" + provider.cache_path + "' for append");
    }

    std::vector<std::size_t> failed;
    for (std::size_t i : misses) {
        nlohmann::json body;
        body["input"] = texts[i];
        if (!provider.model.empty()) body["model"] = provider.model;
        std::vector<double> vec;
        bool got = false;
        for (int attempt = 0; attempt <= provider.retries && !got; ++attempt) {
            auto res = client.Post(path, headers, body.dump(), "application/json");
            if (!res || res->status != 200) continue;
            nlohmann::json parsed;
            try {
                parsed = nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::exception&) {
                continue;  // garbled body counts as a failed attempt
            }
            vec = detail::vector_from_response(parsed);
            got = true;
        }
        if (!got) {
            failed.push_back(i);
            continue;
        }
        if (vec.size() != provider.dim)
            throw SchemaError("provider returned a " + std::to_string(vec.size()) +
                              "-dim vector for node " + std::to_string(i) + ", expected " +
                              std::to_string(provider.dim));
        for (std::size_t k = 0; k < provider.dim; ++k)
            table.vectors(i, k) = static_cast<float>(vec[k]);
        table.provenance[i] = Provenance::remote;
        if (cache_out) {
            nlohmann::json rec;
            rec["node_id"] = i;
            rec["provider"] = table.provider;
            rec["text_hash"] = hex64(fnv1a64(texts[i]));
            rec["vector"] = nlohmann::json::array();
            for (std::size_t k = 0; k < provider.dim; ++k) rec["vector"].push_back(table.vectors(i, k));
            cache_out << rec.dump() << '\n';
            cache_out.flush();
        }
    }
    if (!failed.empty()) {
        std::string list;
        for (std::size_t k = 0; k < failed.size() && k < 20; ++k) {
            if (k) list += ", ";
            list += std::to_string(failed[k]);
        }
        if (failed.size() > 20) list += ", ...";
        throw FetchError("provider failed for " + std::to_string(failed.size()) +
                         " node(s) after " + std::to_string(provider.retries + 1) +
                         " attempt(s) each: " + list);
    }
    table.validate();
    return table;
}

// Deterministic provider stand-in: each class gets a seeded unit-length
// centroid; each node emits a noisy copy of its true class centroid with
// probability `accuracy`, otherwise of a uniformly chosen wrong class.
inline AuxVectorTable stub_descriptions(const std::vector<int>& labels, std::size_t c,
                                        double accuracy, std::size_t dim, std::uint64_t seed,
                                        double noise = 0.1) {
    if (c < 2) throw ConfigError("stub descriptions need at least two classes");
    if (dim == 0) throw ConfigError("stub descriptions need a positive dimension");
    const double chance = 1.0 / static_cast<double>(c);
    if (!(accuracy >= chance - 1e-12 && accuracy <= 1.0))
        throw ConfigError("stub accuracy " + std::to_string(accuracy) + " outside [1/C, 1] = [" +
                          std::to_string(chance) + ", 1]");
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c)
            throw ContractError("label " + std::to_string(labels[i]) + " at node " +
                                std::to_string(i) + " outside " + std::to_string(c) + " classes");

    Rng rng(seed);
    Dense<float> centroids(c, dim);
    for (std::size_t k = 0; k < c; ++k) {
        double norm = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double v = rng.normal();
            centroids(k, j) = static_cast<float>(v);
            norm += v * v;
        }
        norm = std::sqrt(norm);
        for (std::size_t j = 0; j < dim; ++j)
            centroids(k, j) = static_cast<float>(centroids(k, j) / norm);
    }

    AuxVectorTable table;
    table.n = labels.size();
    table.dim = dim;
    table.vectors = Dense<float>(table.n, dim);
    table.provenance.assign(table.n, Provenance::stub);
    table.provider = "stub";
    for (std::size_t i = 0; i < table.n; ++i) {
        std::size_t cls = static_cast<std::size_t>(labels[i]);
        if (!rng.bernoulli(accuracy)) {
            std::size_t wrong = static_cast<std::size_t>(rng.below(c - 1));
            if (wrong >= cls) ++wrong;
            cls = wrong;
        }
        for (std::size_t j = 0; j < dim; ++j)
            table.vectors(i, j) =
                centroids(cls, j) + static_cast<float>(noise * rng.normal());
    }
    return table;
}

// ---------------------------------------------------------------------------
// JSON-lines import/export so third-party vectors can be dropped in.
// ---------------------------------------------------------------------------

inline void write_aux_jsonl(std::ostream& os, const AuxVectorTable& table) {
    for (std::size_t i = 0; i < table.n; ++i) {
        nlohmann::json rec;
        rec["node_id"] = i;
        rec["vector"] = nlohmann::json::array();
        for (std::size_t k = 0; k < table.dim; ++k) rec["vector"].push_back(table.vectors(i, k));
        os << rec.dump() << '\n';
    }
}

inline void save_aux_jsonl(const std::string& path, const AuxVectorTable& table) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write description table to '" + path + "'");
    write_aux_jsonl(out, table);
}

inline AuxVectorTable read_aux_jsonl(std::istream& in, const std::string& provider_id) {
    std::map<std::size_t, std::vector<float>> rows;
    std::size_t dim = 0, lineno = 0;
    std::string line;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw SchemaError("description line " + std::to_string(lineno) + " is not valid JSON: " +
                              e.what());
        }
        if (!j.is_object() || !j.contains("node_id") || !j.contains("vector") ||
            !j["vector"].is_array())
            throw SchemaError("description line " + std::to_string(lineno) +
                              " needs node_id and vector fields");
        const auto node = j["node_id"].get<std::size_t>();
        const auto& arr = j["vector"];
        if (dim == 0) dim = arr.size();
        if (arr.size() != dim || dim == 0)
            throw SchemaError("description line " + std::to_string(lineno) + " holds a " +
                              std::to_string(arr.size()) + "-dim vector, expected " +
                              std::to_string(dim));
        std::vector<float> v(dim);
        for (std::size_t k = 0; k < dim; ++k) v[k] = arr[k].get<float>();
        if (!rows.emplace(node, std::move(v)).second)
            throw SchemaError("node " + std::to_string(node) + " appears twice in the description file");
    }
    AuxVectorTable table;
    table.n = rows.size();
    table.dim = dim;
    table.vectors = Dense<float>(table.n, dim);
    table.provenance.assign(table.n, Provenance::cache);
    table.provider = provider_id;
    for (const auto& [node, v] : rows) {
        if (node >= table.n)
            throw SchemaError("description file skips some node: id " + std::to_string(node) +
                              " with only " + std::to_string(table.n) + " records");
        for (std::size_t k = 0; k < dim; ++k) table.vectors(node, k) = v[k];
    }
    table.validate();
    return table;
}

inline AuxVectorTable load_aux_jsonl(const std::string& path, const std::string& provider_id) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read description table from '" + path + "'");
    return read_aux_jsonl(in, provider_id);
}

// ---------------------------------------------------------------------------
// Auxiliary judgment factors: a description-only head and a combined
// graph-plus-description model, each yielding per-node class predictions
// with max-probability confidences.
// ---------------------------------------------------------------------------

struct AuxTrainResult {
    AuxFactorOutput factor;   // k_aux = 1
    Dense<float> probs;       // n x C softmax rows behind the factor
    double val_acc = -1.0;
    double test_acc = -1.0;
    int best_epoch = -1;
};

namespace detail {

inline Csr<double> identity_adjacency(std::size_t n) {
    Csr<double> a;
    a.rows = a.cols = n;
    a.indptr.resize(n + 1);
    a.indices.resize(n);
    a.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        a.indptr[i + 1] = static_cast<std::uint32_t>(i + 1);
        a.indices[i] = static_cast<std::uint32_t>(i);
        a.values[i] = 1.0;
    }
    return a;
}

// Trains one single-stream model and packages its softmax as an auxiliary
// factor over every node.
template <class Graph>
inline AuxTrainResult single_factor(const Graph& g, const Csr<double>& adj, const Csr<float>& x,
                                    const SplitMasks& masks, const TrainConfig& cfg) {
    if (masks.train.empty()) throw ContractError("auxiliary factor training needs labeled nodes");
    TrainStream<float> stream;
    stream.x = &x;
    stream.rows = masks.train;
    const double w = 1.0 / static_cast<double>(masks.train.size());
    for (auto i : masks.train) {
        stream.targets.push_back(g.labels[i]);
        stream.weights.push_back(w);
    }
    EvalSpec<float> eval;
    eval.x_eval = &x;
    eval.block_begin = 0;
    eval.block_end = g.c;
    eval.val_rows = masks.val;
    eval.labels = &g.labels;
    auto fit = fit_shared_network(adj, {stream}, eval, g.c, cfg);

    auto probe = gcn_forward(fit.params, adj, x, cfg.act);
    AuxTrainResult out;
    out.probs = block_softmax_rows(probe.logits, 0, g.c);
    out.factor.n = g.n;
    out.factor.k_aux = 1;
    out.factor.pred = Dense<int>(g.n, 1);
    out.factor.conf = Dense<double>(g.n, 1);
    std::vector<int> argmax(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < g.c; ++j)
            if (out.probs(i, j) > out.probs(i, best)) best = j;
        out.factor.pred(i, 0) = static_cast<int>(best);
        out.factor.conf(i, 0) = static_cast<double>(out.probs(i, best));
        argmax[i] = static_cast<int>(best);
    }
    out.val_acc = fit.best_val_acc;
    out.best_epoch = fit.best_epoch;
    if (!masks.test.empty()) out.test_acc = accuracy(argmax, g.labels, masks.test);
    out.factor.validate();
    return out;
}

} // namespace detail

// One-hidden-layer classifier on the description vectors alone (the graph
// contributes nothing: propagation is over the identity).
inline AuxTrainResult train_desc_head(const CitationGraph& g, const AuxVectorTable& aux,
                                      const SplitMasks& masks, const TrainConfig& cfg) {
    aux.validate();
    if (aux.n != g.n)
        throw DimError("description table covers " + std::to_string(aux.n) + " nodes, graph has " +
                       std::to_string(g.n));
    const auto x = csr_from_dense(aux.vectors);
    const auto eye = detail::identity_adjacency(g.n);
    return detail::single_factor(g, eye, x, masks, cfg);
}

// Concatenates [x_i || d_i] and keeps only nonzero entries, so an all-zero
// description block leaves the stored matrix identical to the plain features.
inline Csr<float> concat_features(const Csr<float>& x, const AuxVectorTable& aux) {
    if (x.rows != aux.n)
        throw DimError("feature matrix has " + std::to_string(x.rows) + " rows, description table " +
                       std::to_string(aux.n));
    Csr<float> out;
    out.rows = x.rows;
    out.cols = x.cols + aux.dim;
    out.indptr.resize(x.rows + 1, 0);
    for (std::size_t i = 0; i < x.rows; ++i) {
        std::size_t nnz = x.indptr[i + 1] - x.indptr[i];
        for (std::size_t k = 0; k < aux.dim; ++k)
            if (aux.vectors(i, k) != 0.0f) ++nnz;
        out.indptr[i + 1] = out.indptr[i] + static_cast<std::uint32_t>(nnz);
    }
    out.indices.resize(out.indptr.back());
    out.values.resize(out.indptr.back());
    for (std::size_t i = 0; i < x.rows; ++i) {
        std::size_t at = out.indptr[i];
        for (std::size_t p = x.indptr[i]; p < x.indptr[i + 1]; ++p) {
            out.indices[at] = x.indices[p];
            out.values[at] = x.values[p];
            ++at;
        }
        for (std::size_t k = 0; k < aux.dim; ++k) {
            if (aux.vectors(i, k) == 0.0f) continue;
            out.indices[at] = static_cast<std::uint32_t>(x.cols + k);
            out.values[at] = aux.vectors(i, k);
            ++at;
        }
    }
    return out;
}

// Graph model over the concatenated node features and description vectors.
inline AuxTrainResult train_combined_gcn(const CitationGraph& g, const Csr<double>& adj,
                                         const AuxVectorTable& aux, const SplitMasks& masks,
                                         const TrainConfig& cfg) {
    aux.validate();
    if (aux.n != g.n)
        throw DimError("description table covers " + std::to_string(aux.n) + " nodes, graph has " +
                       std::to_string(g.n));
    const auto x = concat_features(csr_from_dense(g.features), aux);
    return detail::single_factor(g, adj, x, masks, cfg);
}

// Stacks single-factor outputs into one table with k_aux columns.
inline AuxFactorOutput merge_aux(const std::vector<const AuxFactorOutput*>& factors) {
    if (factors.empty()) throw ContractError("merge_aux: no factors given");
    AuxFactorOutput out;
    out.n = factors[0]->n;
    out.k_aux = 0;
    for (const auto* f : factors) {
        if (f->n != out.n)
            throw DimError("auxiliary factors disagree on node count: " + std::to_string(f->n) +
                           " vs " + std::to_string(out.n));
        out.k_aux += f->k_aux;
    }
    out.pred = Dense<int>(out.n, out.k_aux);
    out.conf = Dense<double>(out.n, out.k_aux);
    std::size_t col = 0;
    for (const auto* f : factors) {
        for (std::size_t k = 0; k < f->k_aux; ++k, ++col)
            for (std::size_t i = 0; i < out.n; ++i) {
                out.pred(i, col) = f->pred(i, k);
                out.conf(i, col) = f->conf(i, k);
            }
    }
    out.validate();
    return out;
}

// The default two-factor auxiliary bundle: description-only head plus the
// combined graph model.
struct AuxBundle {
    AuxTrainResult desc;
    AuxTrainResult combined;
    AuxFactorOutput merged;   // k_aux = 2
};

inline AuxBundle train_aux_factors(const CitationGraph& g, const Csr<double>& adj,
                                   const AuxVectorTable& aux, const SplitMasks& masks,
                                   const TrainConfig& cfg) {
    AuxBundle out;
    out.desc = train_desc_head(g, aux, masks, cfg);
    out.combined = train_combined_gcn(g, adj, aux, masks, cfg);
    out.merged = merge_aux({&out.desc.factor, &out.combined.factor});
    return out;
}

} // namespace difac
