#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <thread>

#include <difac/aux.hpp>

#include "toy.hpp"

using namespace difac;

namespace {

// A balanced synthetic labeling task for the stub oracles.
struct StubTask {
    std::vector<int> labels;
    SplitMasks masks;
    CitationGraph g;
};

StubTask stub_task(std::size_t n, std::size_t c) {
    StubTask t;
    t.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) t.labels[i] = static_cast<int>(i % c);
    const std::size_t half = n / 2, three_quarter = n - n / 4;
    for (std::size_t i = 0; i < half; ++i) t.masks.train.push_back(i);
    for (std::size_t i = half; i < three_quarter; ++i) t.masks.val.push_back(i);
    for (std::size_t i = three_quarter; i < n; ++i) t.masks.test.push_back(i);
    t.g.n = n;
    t.g.c = c;
    t.g.labels = t.labels;
    return t;
}

TrainConfig head_config() {
    TrainConfig cfg;
    cfg.hidden = 16;
    cfg.epochs = 120;
    cfg.dropout = 0.2;
    return cfg;
}

std::string temp_file(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

// Local provider for the fetch tests: embeds "node-<i>" as an arithmetic
// ramp, counts requests, and records the authorization header.
struct LocalProvider {
    httplib::Server server;
    std::thread runner;
    int port = 0;
    std::atomic<int> requests{0};
    std::string last_auth;
    std::size_t dim = 4;
    int fail_first = 0;   // respond 500 to this many initial requests

    LocalProvider() {
        server.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
            const int seen = ++requests;
            last_auth = req.get_header_value("Authorization");
            if (seen <= fail_first) {
                res.status = 500;
                return;
            }
            const auto body = nlohmann::json::parse(req.body);
            const std::string text = body.at("input").get<std::string>();
            const double base = std::stod(text.substr(text.rfind('-') + 1));
            nlohmann::json out;
            out["embedding"] = nlohmann::json::array();
            for (std::size_t k = 0; k < dim; ++k) out["embedding"].push_back(base + 0.25 * (double)k);
            res.set_content(out.dump(), "application/json");
        });
        port = server.bind_to_any_port("127.0.0.1");
        runner = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~LocalProvider() {
        server.stop();
        runner.join();
    }
    ProviderConfig config(const std::string& cache) const {
        ProviderConfig p;
        p.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/embed";
        p.dim = dim;
        p.cache_path = cache;
        p.timeout_ms = 2000;
        p.retries = 0;
        return p;
    }
};

std::vector<std::string> node_texts(std::size_t n) {
    std::vector<std::string> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = "node-" + std::to_string(i);
    return t;
}

} // namespace

TEST_CASE("stub tables are bit-identical under a matched seed") {
    std::vector<int> labels = {0, 1, 2, 1, 0, 2, 2, 1};
    const auto a = stub_descriptions(labels, 3, 0.8, 12, 9);
    const auto b = stub_descriptions(labels, 3, 0.8, 12, 9);
    REQUIRE(a.vectors.a == b.vectors.a);
    REQUIRE(a.provider == "stub");
    REQUIRE(a.provenance == std::vector<Provenance>(labels.size(), Provenance::stub));
    const auto c = stub_descriptions(labels, 3, 0.8, 12, 10);
    REQUIRE(a.vectors.a != c.vectors.a);
}

TEST_CASE("stub accuracy bounds and labels are enforced") {
    std::vector<int> labels = {0, 1, 2};
    REQUIRE_THROWS_AS(stub_descriptions(labels, 3, 0.2, 8, 0), ConfigError);   // below chance
    REQUIRE_THROWS_AS(stub_descriptions(labels, 3, 1.01, 8, 0), ConfigError);  // above one
    REQUIRE_THROWS_AS(stub_descriptions(labels, 1, 1.0, 8, 0), ConfigError);   // single class
    REQUIRE_THROWS_AS(stub_descriptions(labels, 3, 0.9, 0, 0), ConfigError);   // no width
    std::vector<int> bad = {0, 3, 1};
    REQUIRE_THROWS_AS(stub_descriptions(bad, 3, 0.9, 8, 0), ContractError);
    REQUIRE_NOTHROW(stub_descriptions(labels, 3, 1.0 / 3.0, 8, 0));  // chance is allowed
}

TEST_CASE("a head trained on perfect stubs is nearly perfect") {
    auto task = stub_task(600, 3);
    const auto aux = stub_descriptions(task.labels, 3, 1.0, 16, 5);
    const auto head = train_desc_head(task.g, aux, task.masks, head_config());
    REQUIRE(head.test_acc >= 0.99);
    // The softmax rows behind the factor are genuine distributions.
    for (std::size_t i = 0; i < task.g.n; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < task.g.c; ++j) sum += head.probs(i, j);
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
        REQUIRE(head.factor.conf(i, 0) > 0.0);
        REQUIRE(head.factor.conf(i, 0) <= 1.0);
        REQUIRE(head.factor.pred(i, 0) < 3);
    }
}

TEST_CASE("a head trained on chance stubs stays at chance") {
    auto task = stub_task(3000, 3);
    const auto aux = stub_descriptions(task.labels, 3, 1.0 / 3.0, 16, 7);
    const auto head = train_desc_head(task.g, aux, task.masks, head_config());
    REQUIRE(std::abs(head.test_acc - 1.0 / 3.0) <= 0.05);
}

TEST_CASE("combined model with zero descriptions stores exactly the plain features") {
    auto g = toy::two_cluster();
    AuxVectorTable zeros;
    zeros.n = g.n;
    zeros.dim = 4;
    zeros.vectors = Dense<float>(g.n, 4);
    zeros.provenance.assign(g.n, Provenance::stub);
    zeros.provider = "zeros";

    const auto plain = csr_from_dense(g.features);
    const auto combined = concat_features(plain, zeros);
    REQUIRE(combined.cols == plain.cols + 4);
    REQUIRE(combined.indptr == plain.indptr);
    REQUIRE(combined.indices == plain.indices);
    REQUIRE(combined.values == plain.values);

    // With the extra weight rows zeroed, the forward pass is bitwise the
    // plain model's forward pass.
    Rng rng(3);
    const std::size_t hidden = 6;
    ModelParams<float> narrow;
    narrow.w1 = Dense<float>(plain.cols, hidden);
    narrow.b1 = Dense<float>(1, hidden);
    narrow.w2 = Dense<float>(hidden, (std::size_t)g.c);
    narrow.b2 = Dense<float>(1, (std::size_t)g.c);
    for (auto& v : narrow.w1.a) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    for (auto& v : narrow.w2.a) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    ModelParams<float> wide = narrow;
    wide.w1 = Dense<float>(combined.cols, hidden);
    for (std::size_t r = 0; r < plain.cols; ++r)
        for (std::size_t h = 0; h < hidden; ++h) wide.w1(r, h) = narrow.w1(r, h);

    auto adj = normalize_adjacency(g);
    const auto a = gcn_forward(narrow, adj, plain, Activation::relu);
    const auto b = gcn_forward(wide, adj, combined, Activation::relu);
    REQUIRE(a.logits.a == b.logits.a);
}

TEST_CASE("combined graph model solves the toy clusters with honest stubs") {
    auto g = toy::two_cluster();
    auto adj = normalize_adjacency(g);
    auto masks = toy::two_cluster_masks(g);
    const auto aux = stub_descriptions(g.labels, g.c, 1.0, 8, 2);
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.epochs = 80;
    cfg.dropout = 0.2;
    const auto out = train_combined_gcn(g, adj, aux, masks, cfg);
    REQUIRE(out.test_acc == 1.0);
    const auto bundle = train_aux_factors(g, adj, aux, masks, cfg);
    REQUIRE(bundle.merged.k_aux == 2);
    REQUIRE(bundle.merged.n == g.n);
    for (std::size_t i = 0; i < g.n; ++i) {
        REQUIRE(bundle.merged.pred(i, 0) == bundle.desc.factor.pred(i, 0));
        REQUIRE(bundle.merged.pred(i, 1) == bundle.combined.factor.pred(i, 0));
        REQUIRE(bundle.merged.conf(i, 1) == bundle.combined.factor.conf(i, 0));
    }
}

TEST_CASE("accountability arithmetic follows the worked examples") {
    AuxFactorOutput aux;
    aux.n = 1;
    aux.k_aux = 2;
    aux.pred = Dense<int>(1, 2);
    aux.conf = Dense<double>(1, 2);
    aux.pred(0, 0) = 4;
    aux.pred(0, 1) = 4;
    aux.conf(0, 0) = 0.8;
    aux.conf(0, 1) = 0.4;

    // Both factors agree: 0.6 + 0.5 * (0.8 + 0.4) = 1.2.
    REQUIRE(accountability_score(0.6, 4, aux, 0, 0.5) == Catch::Approx(1.2).margin(1e-12));
    // Nobody agrees: the score is untouched.
    REQUIRE(accountability_score(0.6, 2, aux, 0, 0.5) == 0.6);
    // A zero coupling also leaves it untouched.
    REQUIRE(accountability_score(0.6, 4, aux, 0, 0.0) == 0.6);
    // Partial agreement adds exactly the agreeing confidence.
    aux.pred(0, 1) = 1;
    REQUIRE(accountability_score(0.6, 4, aux, 0, 0.5) == Catch::Approx(0.6 + 0.5 * 0.8).margin(1e-12));

    // Rescoring never lowers a score for nonnegative coupling.
    Rng rng(11);
    for (int t = 0; t < 100; ++t) {
        aux.pred(0, 0) = static_cast<int>(rng.below(5));
        aux.pred(0, 1) = static_cast<int>(rng.below(5));
        aux.conf(0, 0) = rng.uniform(0.01, 1.0);
        aux.conf(0, 1) = rng.uniform(0.01, 1.0);
        const double s = rng.uniform(0.0, 1.0);
        REQUIRE(accountability_score(s, 3, aux, 0, 0.5) >= s);
    }
}

TEST_CASE("remote fetch round trips through the local provider and its cache") {
    LocalProvider provider;
    const auto cache = temp_file("difac_test_aux_cache.jsonl");
    std::filesystem::remove(cache);
    CitationGraph g;
    g.n = 5;
    const auto texts = node_texts(g.n);

    auto cfg = provider.config(cache);
    const auto first = fetch_descriptions(cfg, g, texts);
    REQUIRE(provider.requests.load() == 5);
    REQUIRE(first.n == 5);
    REQUIRE(first.dim == provider.dim);
    for (std::size_t i = 0; i < g.n; ++i) {
        REQUIRE(first.provenance[i] == Provenance::remote);
        for (std::size_t k = 0; k < provider.dim; ++k)
            REQUIRE(first.vectors(i, k) ==
                    Catch::Approx((double)i + 0.25 * (double)k).margin(1e-6));
    }

    // Warm cache: zero further requests, identical vectors.
    const auto second = fetch_descriptions(cfg, g, texts);
    REQUIRE(provider.requests.load() == 5);
    REQUIRE(second.vectors.a == first.vectors.a);
    for (std::size_t i = 0; i < g.n; ++i) REQUIRE(second.provenance[i] == Provenance::cache);

    // Changing the text of one node invalidates only that node's entry.
    auto edited = texts;
    edited[3] = "node-30";
    const auto third = fetch_descriptions(cfg, g, edited);
    REQUIRE(provider.requests.load() == 6);
    REQUIRE(third.provenance[3] == Provenance::remote);
    REQUIRE(third.provenance[0] == Provenance::cache);
    REQUIRE(third.vectors(3, 0) == Catch::Approx(30.0).margin(1e-6));
    std::filesystem::remove(cache);
}

TEST_CASE("fetch sends the bearer token and honors retries") {
    LocalProvider provider;
    ::setenv("DIFAC_TEST_AUX_TOKEN", "sekrit", 1);
    auto cfg = provider.config("");   // no cache
    cfg.auth_env = "DIFAC_TEST_AUX_TOKEN";
    CitationGraph g;
    g.n = 1;
    fetch_descriptions(cfg, g, node_texts(1));
    REQUIRE(provider.last_auth == "Bearer sekrit");

    // A provider that fails once per node succeeds when one retry is allowed.
    provider.fail_first = provider.requests.load() + 1;
    cfg.retries = 1;
    REQUIRE_NOTHROW(fetch_descriptions(cfg, g, node_texts(1)));
    cfg.retries = 0;
    provider.fail_first = provider.requests.load() + 1;
    REQUIRE_THROWS_AS(fetch_descriptions(cfg, g, node_texts(1)), FetchError);
}

TEST_CASE("fetch failures name the nodes left missing") {
    ProviderConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/embed";   // nothing listens here
    cfg.dim = 4;
    cfg.retries = 0;
    cfg.timeout_ms = 200;
    CitationGraph g;
    g.n = 3;
    try {
        fetch_descriptions(cfg, g, node_texts(3));
        FAIL("expected a fetch error");
    } catch (const FetchError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find("3 node(s)") != std::string::npos);
        REQUIRE(msg.find("0, 1, 2") != std::string::npos);
    }
}

TEST_CASE("fetch preconditions name the offending node") {
    ProviderConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/embed";
    CitationGraph g;
    g.n = 3;
    auto texts = node_texts(3);
    texts[1].clear();
    try {
        fetch_descriptions(cfg, g, texts);
        FAIL("expected a contract error");
    } catch (const ContractError& e) {
        REQUIRE(std::string(e.what()).find("node 1") != std::string::npos);
    }
    REQUIRE_THROWS_AS(fetch_descriptions(cfg, g, node_texts(2)), ContractError);
}

TEST_CASE("wrong provider dimension is rejected") {
    LocalProvider provider;
    auto cfg = provider.config("");
    cfg.dim = 7;   // server answers with 4
    CitationGraph g;
    g.n = 1;
    REQUIRE_THROWS_AS(fetch_descriptions(cfg, g, node_texts(1)), SchemaError);
}

TEST_CASE("corrupt cache lines are reported with their line number") {
    const auto cache = temp_file("difac_test_aux_bad_cache.jsonl");
    {
        std::ofstream out(cache);
        out << R"({"node_id":0,"provider":"p","text_hash":"h","vector":[1,2,3,4]})" << "\n";
        out << "this is not json\n";
    }
    try {
        load_description_cache(cache, 4);
        FAIL("expected a cache error");
    } catch (const CacheError& e) {
        REQUIRE(std::string(e.what()).find("line 2") != std::string::npos);
    }
    {
        std::ofstream out(cache);
        out << R"({"node_id":0,"provider":"p","text_hash":"h","vector":[1,2]})" << "\n";
    }
    REQUIRE_THROWS_AS(load_description_cache(cache, 4), CacheError);
    std::filesystem::remove(cache);
}

TEST_CASE("description tables round trip through json lines") {
    std::vector<int> labels = {0, 1, 2, 1, 0};
    const auto table = stub_descriptions(labels, 3, 0.9, 6, 3);
    const auto path = temp_file("difac_test_aux_table.jsonl");
    save_aux_jsonl(path, table);
    const auto back = load_aux_jsonl(path, "imported");
    REQUIRE(back.n == table.n);
    REQUIRE(back.dim == table.dim);
    REQUIRE(back.vectors.a == table.vectors.a);
    REQUIRE(back.provider == "imported");
    REQUIRE(back.provenance == std::vector<Provenance>(table.n, Provenance::cache));
    std::filesystem::remove(path);

    // Duplicate and missing node ids are structural errors.
    std::istringstream dup(R"({"node_id":0,"vector":[1,2]})"
                           "\n"
                           R"({"node_id":0,"vector":[3,4]})"
                           "\n");
    REQUIRE_THROWS_AS(read_aux_jsonl(dup, "x"), SchemaError);
    std::istringstream gap(R"({"node_id":0,"vector":[1,2]})"
                           "\n"
                           R"({"node_id":2,"vector":[3,4]})"
                           "\n");
    REQUIRE_THROWS_AS(read_aux_jsonl(gap, "x"), SchemaError);
    std::istringstream ragged(R"({"node_id":0,"vector":[1,2]})"
                              "\n"
                              R"({"node_id":1,"vector":[3,4,5]})"
                              "\n");
    REQUIRE_THROWS_AS(read_aux_jsonl(ragged, "x"), SchemaError);
}

TEST_CASE("merging auxiliary factors validates the node counts") {
    AuxFactorOutput a;
    a.n = 2;
    a.k_aux = 1;
    a.pred = Dense<int>(2, 1);
    a.conf = Dense<double>(2, 1);
    AuxFactorOutput b = a;
    b.n = 3;
    b.pred = Dense<int>(3, 1);
    b.conf = Dense<double>(3, 1);
    REQUIRE_THROWS_AS(merge_aux({&a, &b}), DimError);
    REQUIRE_THROWS_AS(merge_aux({}), ContractError);
    const auto merged = merge_aux({&a, &a});
    REQUIRE(merged.k_aux == 2);
}
