#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include <difac/factors.hpp>

#include "toy.hpp"

using namespace difac;

TEST_CASE("marker variants append a one-hot tag block") {
    const auto& g = toy::cora();
    auto fx = build_factor_inputs(g.features, 3, {DiffKind::marker, 0.05, 0});
    REQUIRE(fx.K == 3);
    REQUIRE(fx.variants.size() == 3);
    for (const auto& v : fx.variants) {
        REQUIRE(v.cols == 1436);   // 1433 + 3 tags
        REQUIRE(v.rows == g.n);
    }
    auto v1 = dense_from_csr(fx.variants[1]);
    for (std::size_t i = 0; i < g.n; ++i) {
        REQUIRE(v1(i, 1433) == 0.0f);
        REQUIRE(v1(i, 1434) == 1.0f);   // variant 1 carries tag column 1
        REQUIRE(v1(i, 1435) == 0.0f);
    }
    REQUIRE(fx.tag_cols == std::vector<std::uint32_t>{1433, 1434, 1435});
}

TEST_CASE("marker variants differ only in the tag block") {
    const auto& g = toy::two_cluster();
    auto fx = build_factor_inputs(g.features, 3, {DiffKind::marker, 0.05, 7});
    auto v0 = dense_from_csr(fx.variants[0]);
    for (std::size_t k = 1; k < 3; ++k) {
        auto vk = dense_from_csr(fx.variants[k]);
        for (std::size_t i = 0; i < g.n; ++i)
            for (std::size_t j = 0; j < g.d; ++j)
                REQUIRE(vk(i, j) == v0(i, j));   // bitwise: the source block is shared
        for (std::size_t i = 0; i < g.n; ++i)
            for (std::size_t t = 0; t < 3; ++t)
                REQUIRE(vk(i, g.d + t) == (t == k ? 1.0f : 0.0f));
    }
}

TEST_CASE("random_reverse with zero fraction leaves every variant equal to the source") {
    const auto& g = toy::two_cluster();
    auto fx = build_factor_inputs(g.features, 3, {DiffKind::random_reverse, 0.0, 3});
    for (const auto& v : fx.variants) {
        REQUIRE(v.cols == g.d);
        auto dv = dense_from_csr(v);
        REQUIRE(dv.a == g.features.a);
    }
}

TEST_CASE("random_reverse flips chosen binary columns to their complement") {
    Dense<float> X(4, 10);
    Rng rng(5);
    for (auto& v : X.a) v = rng.bernoulli(0.5) ? 1.0f : 0.0f;
    auto fx = build_factor_inputs(X, 2, {DiffKind::random_reverse, 0.5, 11});
    REQUIRE(dense_from_csr(fx.variants[0]).a == X.a);   // variant 0 untouched
    auto v1 = dense_from_csr(fx.variants[1]);
    const auto& cols = fx.recipe.columns[1];
    REQUIRE(cols.size() == 5);   // floor(0.5 * 10)
    std::set<std::uint32_t> flipped(cols.begin(), cols.end());
    // column max here is 1 unless a column is all zero (then max 0, flip keeps 0)
    for (std::size_t j = 0; j < 10; ++j) {
        float mx = 0;
        for (std::size_t i = 0; i < 4; ++i) mx = std::max(mx, X(i, j));
        for (std::size_t i = 0; i < 4; ++i) {
            const float expect = flipped.count(j) ? mx - X(i, j) : X(i, j);
            REQUIRE(v1(i, j) == expect);
        }
    }
}

TEST_CASE("random_exchange preserves every row's multiset of values") {
    const auto& g = toy::cora();
    auto fx = build_factor_inputs(g.features, 3, {DiffKind::random_exchange, 0.05, 9});
    REQUIRE(dense_from_csr(fx.variants[0]).a == g.features.a);
    for (std::size_t k = 1; k < 3; ++k) {
        auto vk = dense_from_csr(fx.variants[k]);
        for (std::size_t i = 0; i < 50; ++i) {   // spot-check rows
            std::multiset<float> a, b;
            for (std::size_t j = 0; j < g.d; ++j) {
                a.insert(g.features(i, j));
                b.insert(vk(i, j));
            }
            REQUIRE(a == b);
        }
        // and the permutation is shared by all rows: recipe says where values went
        const auto& cols = fx.recipe.columns[k];
        const auto& srcs = fx.recipe.sources[k];
        REQUIRE(cols.size() == srcs.size());
        for (std::size_t t = 0; t < cols.size(); ++t)
            for (std::size_t i = 0; i < 20; ++i)
                REQUIRE(vk(i, cols[t]) == g.features(i, srcs[t]));
    }
}

TEST_CASE("extended label arithmetic") {
    REQUIRE(extend_labels(2, 1, 7) == 9);
    for (int y = 0; y < 5; ++y) REQUIRE(extend_labels(y, 0, 5) == y);   // factor 0 keeps labels
    for (std::size_t k = 0; k < 4; ++k)
        for (int y = 0; y < 6; ++y) {
            auto dec = decode_extended(extend_labels(y, k, 6), 6);
            REQUIRE(dec.k == k);
            REQUIRE(dec.y == y);
        }
    REQUIRE_THROWS_AS(extend_labels(7, 0, 7), ContractError);
    REQUIRE_THROWS_AS(extend_labels(-1, 0, 7), ContractError);
}

TEST_CASE("extended encoding partitions the output range into factor blocks") {
    const std::size_t K = 3, C = 4;
    std::map<std::size_t, std::set<int>> blocks;
    for (std::size_t k = 0; k < K; ++k)
        for (int y = 0; y < static_cast<int>(C); ++y) {
            const int e = extend_labels(y, k, C);
            REQUIRE(e >= static_cast<int>(k * C));
            REQUIRE(e < static_cast<int>((k + 1) * C));
            blocks[k].insert(e);
        }
    std::set<int> all;
    for (auto& [k, s] : blocks) {
        REQUIRE(s.size() == C);
        all.insert(s.begin(), s.end());
    }
    REQUIRE(all.size() == K * C);   // disjoint cover of [0, K*C)
}

namespace {

TrainConfig toy_config(std::uint64_t seed = 0) {
    TrainConfig cfg;
    cfg.hidden = 8;
    cfg.epochs = 150;
    cfg.dropout = 0.2;
    cfg.seed = seed;
    return cfg;
}

} // namespace

TEST_CASE("all factors untangle the separable toy graph") {
    auto g = toy::two_cluster();
    auto masks = toy::two_cluster_masks(g);
    auto adj = normalize_adjacency(g);
    auto fx = build_factor_inputs(g.features, 2, {DiffKind::marker, 0.05, 0});
    auto model = train_factors(g, adj, fx, masks, toy_config());
    REQUIRE(model.K == 2);
    REQUIRE(model.C == 2);

    auto preds = factor_predict(model, adj, fx, masks.train);
    for (std::size_t r = 0; r < masks.train.size(); ++r)
        for (std::size_t k = 0; k < 2; ++k)
            REQUIRE(preds.argmax(r, k) == g.labels[masks.train[r]]);   // 100% train, every factor
}

TEST_CASE("single marker factor equals a plain network on a tag-augmented input") {
    auto g = toy::two_cluster();
    auto masks = toy::two_cluster_masks(g);
    auto adj = normalize_adjacency(g);
    auto cfg = toy_config(3);

    auto fx = build_factor_inputs(g.features, 1, {DiffKind::marker, 0.05, 0});
    auto model = train_factors(g, adj, fx, masks, cfg);

    // plain path: same features plus one always-on column, same seed
    Dense<float> aug(g.n, g.d + 1);
    for (std::size_t i = 0; i < g.n; ++i) {
        for (std::size_t j = 0; j < g.d; ++j) aug(i, j) = g.features(i, j);
        aug(i, g.d) = 1.0f;
    }
    auto x = csr_from_dense(aug);
    TrainStream<float> stream;
    stream.x = &x;
    stream.keep_cols = {static_cast<std::uint32_t>(g.d)};
    for (auto i : masks.train) {
        stream.rows.push_back(i);
        stream.targets.push_back(g.labels[i]);
        stream.weights.push_back(1.0 / static_cast<double>(masks.train.size()));
    }
    EvalSpec<float> eval;
    eval.x_eval = &x;
    eval.block_begin = 0;
    eval.block_end = g.c;
    eval.val_rows = masks.val;
    eval.labels = &g.labels;
    auto fit = fit_shared_network(adj, {stream}, eval, g.c, cfg);

    REQUIRE(model.params.w1.a == fit.params.w1.a);   // training is bit-identical
    auto preds = factor_predict(model, adj, fx, masks.test);
    auto probe = gcn_forward(fit.params, adj, x);
    for (std::size_t r = 0; r < masks.test.size(); ++r) {
        const float* row = probe.logits.row(masks.test[r]);
        std::size_t best = 0;
        for (std::size_t j = 1; j < static_cast<std::size_t>(g.c); ++j)
            if (row[j] > row[best]) best = j;
        REQUIRE(preds.argmax(r, 0) == static_cast<int>(best));
    }
}

TEST_CASE("factor training loss decreases over the first ten epochs on cora") {
    const auto& g = toy::cora();
    auto masks = standard_split(g, 20, 500, 1000, 0);
    auto adj = normalize_adjacency(g);
    auto fx = build_factor_inputs(g.features, 3, {DiffKind::marker, 0.05, 0});
    TrainConfig cfg;
    cfg.epochs = 12;   // only the early trend matters here
    cfg.seed = 0;
    auto model = train_factors(g, adj, fx, masks, cfg);
    REQUIRE(model.loss_per_epoch.size() >= 10);
    REQUIRE(model.loss_per_epoch[9] < model.loss_per_epoch[0]);
}

TEST_CASE("factor predictions are normalized, uniform for a zero model, and pure") {
    auto g = toy::two_cluster();
    auto adj = normalize_adjacency(g);
    auto fx = build_factor_inputs(g.features, 3, {DiffKind::random_reverse, 0.5, 1});

    FactorModel zero;
    zero.K = 3;
    zero.C = 2;
    zero.recipe = fx.recipe;
    Rng rng(0);
    zero.params = init_params<float>(g.d, 4, 6, true, rng);
    zero.params.w1.fill(0);
    zero.params.w2.fill(0);

    std::vector<std::size_t> nodes = {0, 5, 17};
    auto preds = factor_predict(zero, adj, fx, nodes);
    REQUIRE(preds.probs.rows == 3);
    REQUIRE(preds.probs.cols == 6);    // |nodes| x (K*C)
    REQUIRE(preds.argmax.cols == 3);   // one argmax per factor
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t k = 0; k < 3; ++k) {
            const float* p = preds.block(r, k);
            double sum = 0;
            for (std::size_t j = 0; j < 2; ++j) sum += p[j];
            REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
            REQUIRE(p[0] == Catch::Approx(0.5).margin(1e-6));   // softmax of zeros
            REQUIRE(preds.argmax(r, k) == 0);                   // tie falls to class 0
        }

    auto again = factor_predict(zero, adj, fx, nodes);
    REQUIRE(again.probs.a == preds.probs.a);   // pure function of its inputs
}

TEST_CASE("prediction rejects a mismatched recipe") {
    auto g = toy::two_cluster();
    auto adj = normalize_adjacency(g);
    auto fx = build_factor_inputs(g.features, 2, {DiffKind::marker, 0.05, 0});
    auto model = train_factors(g, adj, fx, toy::two_cluster_masks(g), toy_config());
    auto other = build_factor_inputs(g.features, 2, {DiffKind::marker, 0.05, 1});
    other.recipe.method.seed = 99;   // same shapes, different recipe
    REQUIRE_THROWS_AS(factor_predict(model, adj, other, {0}), ContractError);
}

TEST_CASE("output capacity is enforced at training time") {
    auto g = toy::two_cluster();
    auto adj = normalize_adjacency(g);
    auto fx = build_factor_inputs(g.features, 4, {DiffKind::marker, 0.05, 0});
    auto cfg = toy_config();
    cfg.output_cap = 7;   // 4 factors x 2 classes = 8 > 7
    REQUIRE_THROWS_AS(train_factors(g, adj, fx, toy::two_cluster_masks(g), cfg), CapacityError);
}

TEST_CASE("recipe survives a json round trip") {
    const auto& g = toy::cora();
    for (auto kind : {DiffKind::marker, DiffKind::random_reverse, DiffKind::random_exchange}) {
        auto fx = build_factor_inputs(g.features, 3, {kind, 0.05, 42});
        auto j = recipe_to_json(fx.recipe);
        auto back = recipe_from_json(j);
        REQUIRE(back == fx.recipe);
        // rebuilt variants from the same method are bit-identical
        auto fx2 = build_factor_inputs(g.features, 3, {kind, 0.05, 42});
        for (std::size_t k = 0; k < 3; ++k)
            REQUIRE(fx2.variants[k].values == fx.variants[k].values);
    }
}

TEST_CASE("at least one factor is required") {
    const auto& g = toy::two_cluster();
    REQUIRE_THROWS_AS(build_factor_inputs(g.features, 0, {DiffKind::marker, 0.05, 0}),
                      ContractError);
}
