#include <catch2/catch_amalgamated.hpp>

#include <difac/rng.hpp>

#include <algorithm>
#include <set>

using difac::Rng;

TEST_CASE("uniform stays in [0,1) and is seed-deterministic") {
    Rng a(42), b(42), c(43);
    bool diverged = false;
    for (int i = 0; i < 1000; ++i) {
        double x = a.uniform();
        REQUIRE(x >= 0.0);
        REQUIRE(x < 1.0);
        REQUIRE(x == b.uniform());
        if (x != c.uniform()) diverged = true;
    }
    REQUIRE(diverged);
}

TEST_CASE("below(n) covers [0,n) without bias artifacts") {
    Rng r(7);
    std::vector<int> hits(5, 0);
    for (int i = 0; i < 50000; ++i) hits[r.below(5)]++;
    for (int k = 0; k < 5; ++k) {
        REQUIRE(hits[k] > 9000);   // expectation 10000, generous band
        REQUIRE(hits[k] < 11000);
    }
}

TEST_CASE("normal has near-standard moments") {
    Rng r(123);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sq += x * x;
    }
    double mean = sum / n;
    double var = sq / n - mean * mean;
    REQUIRE(std::abs(mean) < 0.03);
    REQUIRE(std::abs(var - 1.0) < 0.05);
}

TEST_CASE("shuffle permutes and matches across equal seeds") {
    std::vector<int> v(100), w(100);
    for (int i = 0; i < 100; ++i) v[i] = w[i] = i;
    Rng a(9), b(9);
    a.shuffle(v);
    b.shuffle(w);
    REQUIRE(v == w);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 100; ++i) REQUIRE(sorted[i] == i);
}

TEST_CASE("sample_indices draws k distinct values below n") {
    Rng r(5);
    auto s = r.sample_indices(50, 20);
    REQUIRE(s.size() == 20);
    std::set<std::size_t> uniq(s.begin(), s.end());
    REQUIRE(uniq.size() == 20);
    for (auto x : s) REQUIRE(x < 50);
}

TEST_CASE("permutation of n touches every index") {
    Rng r(11);
    auto p = r.permutation(257);
    std::set<std::size_t> uniq(p.begin(), p.end());
    REQUIRE(p.size() == 257);
    REQUIRE(uniq.size() == 257);
}
