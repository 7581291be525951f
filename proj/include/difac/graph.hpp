#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <zlib.h>

#include <json.hpp>

#include "difac/error.hpp"
#include "difac/matrix.hpp"
#include "difac/rng.hpp"

namespace difac {

// A loaded citation network.  Features are kept dense (they are masked and
// normalized column/row-wise); training code sparsifies on demand.  Edges
// are undirected pairs stored once, lexicographically; duplicates, self
// loops and rows naming unknown ids are dropped on load (counted in
// dropped_edges).
struct CitationGraph {
    std::size_t n = 0, d = 0, c = 0;
    Dense<float> features;               // n x d
    std::vector<int> labels;             // contiguous ids, first-appearance order
    std::vector<std::string> label_names;
    std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
    std::vector<std::string> node_ids;
    std::size_t dropped_edges = 0;
};

struct SplitMasks {
    std::vector<std::size_t> train, val, test;   // sorted, pairwise disjoint
    std::size_t per_class_train = 0;
};

// Symmetric renormalized adjacency D^-1/2 (A+I) D^-1/2 in CSR form.
using NormalizedAdjacency = Csr<double>;

namespace detail {

// Reads a whole file, transparently inflating gzip (zlib's gz* API passes
// plain files through unchanged).
inline std::string read_file_maybe_gz(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open " + path);
    std::string out;
    char buf[1 << 16];
    int got;
    while ((got = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(got));
    bool bad = got < 0;
    gzclose(f);
    if (bad) throw IoError("read failure on " + path);
    return out;
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

template <class Fn>
void for_each_line(const std::string& text, Fn&& fn) {
    std::size_t start = 0, lineno = 0;
    while (start < text.size()) {
        std::size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        std::size_t len = end - start;
        if (len > 0 && text[start + len - 1] == '\r') --len;
        ++lineno;
        if (len > 0) fn(std::string_view(text.data() + start, len), lineno);
        start = end + 1;
    }
}

inline float parse_feature(std::string_view tok, std::size_t lineno) {
    char* end = nullptr;
    std::string owned(tok);
    float v = std::strtof(owned.c_str(), &end);
    if (end != owned.c_str() + owned.size())
        throw ParseError("line " + std::to_string(lineno) + ": bad feature value '" + owned + "'");
    return v;
}

} // namespace detail

// Parses the plain-text pair <name>.content / <name>.cites (optionally
// gzipped).  content rows: id, d feature values, label string.  cites rows:
// cited_id citing_id.
inline CitationGraph load_citation_dataset(const std::string& content_path,
                                           const std::string& cites_path) {
    CitationGraph g;
    std::unordered_map<std::string, std::uint32_t> id_of;
    std::unordered_map<std::string, int> label_of;
    std::vector<float> feat;

    const std::string content = detail::read_file_maybe_gz(content_path);
    detail::for_each_line(content, [&](std::string_view line, std::size_t lineno) {
        auto tok = detail::split_ws(line);
        if (tok.size() < 3)
            throw ParseError("line " + std::to_string(lineno) + ": expected id, features, label");
        const std::size_t width = tok.size() - 2;
        if (g.d == 0)
            g.d = width;
        else if (width != g.d)
            throw SchemaError("line " + std::to_string(lineno) + ": " + std::to_string(width) +
                              " feature values, expected " + std::to_string(g.d));
        std::string id(tok.front());
        if (!id_of.emplace(id, static_cast<std::uint32_t>(g.node_ids.size())).second)
            throw SchemaError("line " + std::to_string(lineno) + ": duplicate node id '" + id + "'");
        g.node_ids.push_back(std::move(id));
        for (std::size_t j = 1; j + 1 < tok.size(); ++j)
            feat.push_back(detail::parse_feature(tok[j], lineno));
        std::string label(tok.back());
        auto [it, fresh] = label_of.emplace(label, static_cast<int>(g.label_names.size()));
        if (fresh) g.label_names.push_back(label);
        g.labels.push_back(it->second);
    });
    g.n = g.node_ids.size();
    g.c = g.label_names.size();
    g.features.rows = g.n;
    g.features.cols = g.d;
    g.features.a = std::move(feat);

    std::set<std::pair<std::uint32_t, std::uint32_t>> undirected;
    const std::string cites = detail::read_file_maybe_gz(cites_path);
    detail::for_each_line(cites, [&](std::string_view line, std::size_t lineno) {
        auto tok = detail::split_ws(line);
        if (tok.size() != 2)
            throw ParseError("line " + std::to_string(lineno) + ": expected two node ids");
        auto a = id_of.find(std::string(tok[0]));
        auto b = id_of.find(std::string(tok[1]));
        if (a == id_of.end() || b == id_of.end() || a->second == b->second) {
            ++g.dropped_edges;   // unknown endpoint or self loop
            return;
        }
        std::uint32_t u = a->second, v = b->second;
        if (u > v) std::swap(u, v);
        if (!undirected.emplace(u, v).second) ++g.dropped_edges;   // duplicate pair
    });
    g.edges.assign(undirected.begin(), undirected.end());
    return g;
}

// Deterministic seed-shuffled split: walking one shuffled node order, the
// first per_class nodes of each class become train, then the next n_val
// leftover nodes become val and the following n_test become test.
inline SplitMasks standard_split(const CitationGraph& g, std::size_t per_class,
                                 std::size_t n_val, std::size_t n_test, std::uint64_t seed) {
    // Name the shortest class first: a deficient class is the most actionable
    // diagnosis, so check it before the coarse total-quota complaint.
    std::vector<std::size_t> have(g.c, 0);
    for (auto y : g.labels) ++have[y];
    for (std::size_t k = 0; k < g.c; ++k)
        if (have[k] < per_class)
            throw SplitError("class '" + g.label_names[k] + "' has only " +
                             std::to_string(have[k]) + " nodes, need " +
                             std::to_string(per_class));
    Rng rng(seed);
    auto order = rng.permutation(g.n);

    std::vector<std::size_t> quota(g.c, per_class);
    SplitMasks m;
    m.per_class_train = per_class;
    std::vector<std::size_t> leftover;
    for (auto node : order) {
        int cls = g.labels[node];
        if (quota[cls] > 0) {
            --quota[cls];
            m.train.push_back(node);
        } else {
            leftover.push_back(node);
        }
    }
    if (leftover.size() < n_val + n_test)
        throw SplitError("not enough nodes left for val/test");
    m.val.assign(leftover.begin(), leftover.begin() + n_val);
    m.test.assign(leftover.begin() + n_val, leftover.begin() + n_val + n_test);
    std::sort(m.train.begin(), m.train.end());
    std::sort(m.val.begin(), m.val.end());
    std::sort(m.test.begin(), m.test.end());
    return m;
}

// A_hat = D^-1/2 (A+I) D^-1/2 over the symmetrized edge set; isolated nodes
// end up with a pure self loop of weight 1.
inline NormalizedAdjacency normalize_adjacency(const CitationGraph& g) {
    std::vector<std::vector<std::uint32_t>> nbr(g.n);
    for (auto [u, v] : g.edges) {
        nbr[u].push_back(v);
        nbr[v].push_back(u);
    }
    std::vector<double> dinv(g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        nbr[i].push_back(static_cast<std::uint32_t>(i));   // self loop
        std::sort(nbr[i].begin(), nbr[i].end());
        dinv[i] = 1.0 / std::sqrt(static_cast<double>(nbr[i].size()));
    }
    NormalizedAdjacency A(g.n, g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        for (auto j : nbr[i]) {
            A.indices.push_back(j);
            A.values.push_back(dinv[i] * dinv[j]);
        }
        A.indptr[i + 1] = A.values.size();
    }
    return A;
}

// Zeroes floor(ratio*d) feature columns chosen by seed, the same columns for
// every node; returns a modified copy.
inline CitationGraph mask_features(const CitationGraph& g, double ratio, std::uint64_t seed) {
    CitationGraph out = g;
    const auto m = static_cast<std::size_t>(ratio * static_cast<double>(g.d));
    if (m == 0) return out;
    Rng rng(seed);
    auto cols = rng.sample_indices(g.d, m);
    for (std::size_t i = 0; i < g.n; ++i) {
        float* row = out.features.row(i);
        for (auto j : cols) row[j] = 0.0f;
    }
    return out;
}

// Scales every feature row to unit L1 norm (zero rows stay zero).
inline CitationGraph row_normalize_features(const CitationGraph& g) {
    CitationGraph out = g;
    for (std::size_t i = 0; i < g.n; ++i) {
        float* row = out.features.row(i);
        double s = 0;
        for (std::size_t j = 0; j < g.d; ++j) s += std::abs(static_cast<double>(row[j]));
        if (s <= 0) continue;
        const float inv = static_cast<float>(1.0 / s);
        for (std::size_t j = 0; j < g.d; ++j) row[j] *= inv;
    }
    return out;
}

// Single-document JSON export used for fixtures.
inline nlohmann::json graph_to_json(const CitationGraph& g) {
    nlohmann::json j;
    j["n"] = g.n;
    j["d"] = g.d;
    j["c"] = g.c;
    j["node_ids"] = g.node_ids;
    j["labels"] = g.labels;
    j["label_names"] = g.label_names;
    auto features = nlohmann::json::array();
    for (std::size_t i = 0; i < g.n; ++i)
        features.push_back(std::vector<float>(g.features.row(i), g.features.row(i) + g.d));
    j["features"] = std::move(features);
    auto edges = nlohmann::json::array();
    for (auto [u, v] : g.edges) edges.push_back({u, v});
    j["edges"] = std::move(edges);
    return j;
}

} // namespace difac
