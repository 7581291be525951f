#pragma once

// Evaluation metrics: plain accuracy, pseudo-label accuracy, and the
// "conceit" overconfidence score (how much closer misclassified samples sit
// to their predicted class centroid than to their true one).

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include <difac/error.hpp>
#include <difac/matrix.hpp>

namespace difac {

inline double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels,
                       const std::vector<std::size_t>& mask) {
    if (mask.empty()) throw ContractError("accuracy: empty mask");
    std::size_t hit = 0;
    for (auto i : mask)
        if (predicted[i] == labels[i]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(mask.size());
}

// Fraction of adopted pseudo-labels that match the held-out truth.
inline double pseudo_accuracy(const std::vector<std::size_t>& nodes,
                              const std::vector<int>& y_hat,
                              const std::vector<int>& labels) {
    if (nodes.empty()) throw ContractError("pseudo_accuracy: empty selection");
    if (nodes.size() != y_hat.size())
        throw DimError("pseudo_accuracy: nodes vs labels length");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (y_hat[i] == labels[nodes[i]]) ++hit;
    return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

struct ConceitResult {
    double mean = 0.0;            // defined as 0 when nothing is misclassified
    double raw_sum = 0.0;
    std::size_t misclassified = 0;
};

namespace detail {

inline double cosine(const float* a, const float* b, std::size_t n) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0 || nb == 0) return 0.0;   // zero vectors carry no direction
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

} // namespace detail

// Mean over misclassified eval nodes (true class c, predicted k != c) of
// cos(z_i, centroid_k) - cos(z_i, centroid_c), where each centroid sums the
// representations of the eval nodes that were classified correctly into that
// class (cosine makes sum vs mean equivalent).  Positive = the model places
// its mistakes closer to the class it imagined than to the real one.
// `min_confidence` > 0 restricts the mean to mistakes whose max probability
// exceeds it (requires `max_prob`).
inline ConceitResult conceit(const Dense<float>& z, const std::vector<int>& predicted,
                             const std::vector<int>& labels,
                             const std::vector<std::size_t>& eval_mask,
                             const std::vector<std::string>* class_names = nullptr,
                             const std::vector<double>* max_prob = nullptr,
                             double min_confidence = 0.0) {
    std::size_t n_classes = 0;
    for (auto i : eval_mask)
        n_classes = std::max({n_classes, static_cast<std::size_t>(labels[i]) + 1,
                              static_cast<std::size_t>(predicted[i]) + 1});

    std::vector<std::vector<double>> centroid(n_classes, std::vector<double>(z.cols, 0.0));
    std::vector<std::size_t> correct_count(n_classes, 0);
    for (auto i : eval_mask) {
        if (predicted[i] != labels[i]) continue;
        const float* row = z.row(i);
        auto& c = centroid[labels[i]];
        for (std::size_t j = 0; j < z.cols; ++j) c[j] += row[j];
        ++correct_count[labels[i]];
    }

    auto require_centroid = [&](int cls) {
        if (correct_count[cls] == 0) {
            const std::string name = class_names && static_cast<std::size_t>(cls) < class_names->size()
                                         ? "'" + (*class_names)[cls] + "'"
                                         : std::to_string(cls);
            throw MetricError("class " + name + " has no correctly classified nodes to anchor a centroid");
        }
    };

    ConceitResult out;
    std::vector<float> mu_k, mu_c;
    for (auto i : eval_mask) {
        if (predicted[i] == labels[i]) continue;
        if (min_confidence > 0.0) {
            if (!max_prob) throw ContractError("conceit: confidence filter without probabilities");
            if ((*max_prob)[i] <= min_confidence) continue;
        }
        require_centroid(predicted[i]);
        require_centroid(labels[i]);
        mu_k.assign(centroid[predicted[i]].begin(), centroid[predicted[i]].end());
        mu_c.assign(centroid[labels[i]].begin(), centroid[labels[i]].end());
        out.raw_sum += detail::cosine(z.row(i), mu_k.data(), z.cols) -
                       detail::cosine(z.row(i), mu_c.data(), z.cols);
        ++out.misclassified;
    }
    if (out.misclassified > 0)
        out.mean = out.raw_sum / static_cast<double>(out.misclassified);
    return out;
}

// One run's results, serializable to JSON and to a flat CSV index row.
struct MetricsRecord {
    std::string run_id;
    std::string dataset;
    std::string method;
    std::uint64_t seed = 0;
    std::string config_digest;
    double test_accuracy = 0.0;
    double pseudo_acc = -1.0;     // -1 when the method adopts no pseudo-labels
    double conceit_mean = 0.0;
    double conceit_sum = 0.0;
    nlohmann::json trace = nlohmann::json::array();   // per-iteration loop records
};

inline nlohmann::json metrics_to_json(const MetricsRecord& r) {
    return {{"run_id", r.run_id},
            {"dataset", r.dataset},
            {"method", r.method},
            {"seed", r.seed},
            {"config_digest", r.config_digest},
            {"test_accuracy", r.test_accuracy},
            {"pseudo_accuracy", r.pseudo_acc},
            {"conceit_mean", r.conceit_mean},
            {"conceit_sum", r.conceit_sum},
            {"trace", r.trace}};
}

inline MetricsRecord metrics_from_json(const nlohmann::json& j) {
    MetricsRecord r;
    try {
        r.run_id = j.at("run_id").get<std::string>();
        r.dataset = j.at("dataset").get<std::string>();
        r.method = j.at("method").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config_digest = j.at("config_digest").get<std::string>();
        r.test_accuracy = j.at("test_accuracy").get<double>();
        r.pseudo_acc = j.at("pseudo_accuracy").get<double>();
        r.conceit_mean = j.at("conceit_mean").get<double>();
        r.conceit_sum = j.at("conceit_sum").get<double>();
        r.trace = j.at("trace");
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("metrics record: ") + e.what());
    }
    return r;
}

inline std::string metrics_csv_header() {
    return "run_id,dataset,method,seed,config_digest,test_accuracy,pseudo_accuracy,conceit_mean";
}

inline std::string metrics_csv_row(const MetricsRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%.6f", r.test_accuracy, r.pseudo_acc, r.conceit_mean);
    return r.run_id + "," + r.dataset + "," + r.method + "," + std::to_string(r.seed) + "," +
           r.config_digest + "," + buf;
}

} // namespace difac
