#include <catch2/catch_amalgamated.hpp>

#include <difac/matrix.hpp>
#include <difac/rng.hpp>

using namespace difac;

namespace {

Dense<double> random_dense(std::size_t r, std::size_t c, Rng& rng) {
    Dense<double> m(r, c);
    for (auto& v : m.a) v = rng.uniform(-1.0, 1.0);
    return m;
}

} // namespace

TEST_CASE("identity csr times dense returns the dense operand") {
    Dense<double> I(3, 3);
    for (int i = 0; i < 3; ++i) I(i, i) = 1.0;
    auto Ic = csr_from_dense(I);
    Dense<double> M(3, 2);
    M.a = {1, 2, 3, 4, 5, 6};
    auto P = spmm(Ic, M);
    REQUIRE(P.a == M.a);
}

TEST_CASE("all-half 2x2 adjacency against a column vector") {
    Dense<double> A(2, 2, 0.5);
    auto Ac = csr_from_dense(A);
    Dense<double> x(2, 1);
    x(0, 0) = 1.0;
    x(1, 0) = 3.0;
    auto y = spmm(Ac, x);
    REQUIRE(y(0, 0) == Catch::Approx(2.0));
    REQUIRE(y(1, 0) == Catch::Approx(2.0));
}

TEST_CASE("spmm agrees with the dense product on random 10x10") {
    Rng rng(2024);
    auto A = random_dense(10, 10, rng);
    // sparsify a little so the csr path is non-trivial
    for (std::size_t i = 0; i < A.a.size(); i += 3) A.a[i] = 0.0;
    auto B = random_dense(10, 10, rng);
    auto sparse = spmm(csr_from_dense(A), B);
    auto dense = matmul(A, B);
    for (std::size_t i = 0; i < dense.a.size(); ++i)
        REQUIRE(sparse.a[i] == Catch::Approx(dense.a[i]).margin(1e-12));
}

TEST_CASE("spmm_at_b equals transpose-then-multiply") {
    Rng rng(7);
    auto A = random_dense(8, 5, rng);
    auto B = random_dense(8, 4, rng);
    auto fast = spmm_at_b(csr_from_dense(A), B);
    auto slow = matmul(transpose(A), B);
    REQUIRE(fast.rows == 5);
    REQUIRE(fast.cols == 4);
    for (std::size_t i = 0; i < slow.a.size(); ++i)
        REQUIRE(fast.a[i] == Catch::Approx(slow.a[i]).margin(1e-12));
}

TEST_CASE("matmul_tn and matmul_nt match explicit transposes") {
    Rng rng(31);
    auto A = random_dense(6, 3, rng);
    auto B = random_dense(6, 4, rng);
    auto tn = matmul_tn(A, B);
    auto tn_ref = matmul(transpose(A), B);
    for (std::size_t i = 0; i < tn_ref.a.size(); ++i)
        REQUIRE(tn.a[i] == Catch::Approx(tn_ref.a[i]).margin(1e-12));

    auto C = random_dense(5, 3, rng);
    auto D = random_dense(7, 3, rng);
    auto nt = matmul_nt(C, D);
    auto nt_ref = matmul(C, transpose(D));
    for (std::size_t i = 0; i < nt_ref.a.size(); ++i)
        REQUIRE(nt.a[i] == Catch::Approx(nt_ref.a[i]).margin(1e-12));
}

TEST_CASE("dimension mismatches throw") {
    Dense<double> A(2, 3), B(2, 2);
    REQUIRE_THROWS_AS(matmul(A, B), DimError);
    REQUIRE_THROWS_AS(spmm(csr_from_dense(A), B), DimError);
    REQUIRE_THROWS_AS(matmul_nt(A, B), DimError);
}

TEST_CASE("csr round trip preserves the matrix") {
    Rng rng(99);
    auto A = random_dense(12, 9, rng);
    for (std::size_t i = 0; i < A.a.size(); i += 2) A.a[i] = 0.0;
    auto back = dense_from_csr(csr_from_dense(A));
    REQUIRE(back.a == A.a);
}

TEST_CASE("cast converts element type") {
    Dense<double> A(2, 2);
    A.a = {1.5, -2.5, 0.25, 4.0};
    auto f = A.cast<float>();
    REQUIRE(f(1, 1) == 4.0f);
    auto fc = csr_from_dense(A).cast<float>();
    REQUIRE(fc.values.size() == 4);
}

TEST_CASE("all_finite flags NaN and infinity") {
    Dense<double> A(2, 2, 1.0);
    REQUIRE(all_finite(A));
    A(0, 1) = std::numeric_limits<double>::quiet_NaN();
    REQUIRE(!all_finite(A));
    A(0, 1) = std::numeric_limits<double>::infinity();
    REQUIRE(!all_finite(A));
}
