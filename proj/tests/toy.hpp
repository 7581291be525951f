#pragma once

// Shared fixtures: lazily loaded citation datasets and a small separable
// synthetic graph used across the test suites.

#include <string>

#include <difac/graph.hpp>

namespace toy {

inline const difac::CitationGraph& cora() {
    static const auto g = difac::load_citation_dataset(std::string(DIFAC_DATA_DIR) + "/cora.content.gz",
                                                       std::string(DIFAC_DATA_DIR) + "/cora.cites.gz");
    return g;
}

inline const difac::CitationGraph& citeseer() {
    static const auto g =
        difac::load_citation_dataset(std::string(DIFAC_DATA_DIR) + "/citeseer.content.gz",
                                     std::string(DIFAC_DATA_DIR) + "/citeseer.cites.gz");
    return g;
}

// Two chain clusters whose features reveal the cluster: nodes [0,n/2) are
// class 0, the rest class 1.  Trivially separable, so trained models should
// hit 100% everywhere.
inline difac::CitationGraph two_cluster(std::size_t n = 20) {
    difac::CitationGraph g;
    g.n = n;
    g.c = 2;
    g.d = 2;
    g.features = difac::Dense<float>(n, 2);
    const std::size_t half = n / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const int cls = i < half ? 0 : 1;
        g.labels.push_back(cls);
        g.label_names = {"zero", "one"};
        g.node_ids.push_back("n" + std::to_string(i));
        g.features(i, cls) = 1.0f;
        if (i + 1 < n && i + 1 != half)
            g.edges.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i + 1)});
    }
    return g;
}

// Train on two nodes per cluster, validate on two more, test on the rest.
inline difac::SplitMasks two_cluster_masks(const difac::CitationGraph& g) {
    difac::SplitMasks m;
    const std::size_t half = g.n / 2;
    m.train = {0, 1, half, half + 1};
    m.val = {2, 3, half + 2, half + 3};
    for (std::size_t i = 0; i < g.n; ++i) {
        bool used = false;
        for (auto j : m.train) used |= i == j;
        for (auto j : m.val) used |= i == j;
        if (!used) m.test.push_back(i);
    }
    m.per_class_train = 2;
    return m;
}

} // namespace toy
