#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "difac/error.hpp"

namespace difac {

// Row-major dense matrix.
template <class T>
struct Dense {
    std::size_t rows = 0, cols = 0;
    std::vector<T> a;

    Dense() = default;
    Dense(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), a(r * c, fill) {}

    T& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    T* row(std::size_t i) { return a.data() + i * cols; }
    const T* row(std::size_t i) const { return a.data() + i * cols; }

    void fill(T v) { std::fill(a.begin(), a.end(), v); }

    template <class U>
    Dense<U> cast() const {
        Dense<U> out(rows, cols);
        for (std::size_t i = 0; i < a.size(); ++i) out.a[i] = static_cast<U>(a[i]);
        return out;
    }
};

// Compressed sparse row matrix; summation order over a row is the storage
// order, so every product below is deterministic.
template <class T>
struct Csr {
    std::size_t rows = 0, cols = 0;
    std::vector<std::size_t> indptr;   // rows + 1
    std::vector<std::uint32_t> indices;
    std::vector<T> values;

    Csr() = default;
    Csr(std::size_t r, std::size_t c) : rows(r), cols(c), indptr(r + 1, 0) {}

    std::size_t nnz() const { return values.size(); }

    template <class U>
    Csr<U> cast() const {
        Csr<U> out;
        out.rows = rows;
        out.cols = cols;
        out.indptr = indptr;
        out.indices = indices;
        out.values.resize(values.size());
        for (std::size_t i = 0; i < values.size(); ++i) out.values[i] = static_cast<U>(values[i]);
        return out;
    }
};

namespace detail {
inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimError("dimension mismatch in " + what);
}
} // namespace detail

template <class T>
Csr<T> csr_from_dense(const Dense<T>& m, T zero_tol = T(0)) {
    Csr<T> out(m.rows, m.cols);
    out.indptr.assign(m.rows + 1, 0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        for (std::size_t j = 0; j < m.cols; ++j) {
            T v = m(i, j);
            if (v < -zero_tol || v > zero_tol) {
                out.indices.push_back(static_cast<std::uint32_t>(j));
                out.values.push_back(v);
            }
        }
        out.indptr[i + 1] = out.values.size();
    }
    return out;
}

template <class T>
Dense<T> dense_from_csr(const Csr<T>& m) {
    Dense<T> out(m.rows, m.cols);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t p = m.indptr[i]; p < m.indptr[i + 1]; ++p)
            out(i, m.indices[p]) = m.values[p];
    return out;
}

// C = A * B, sparse A.
template <class T>
Dense<T> spmm(const Csr<T>& A, const Dense<T>& B) {
    detail::require_dims(A.cols == B.rows, "spmm");
    Dense<T> C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        T* ci = C.row(i);
        for (std::size_t p = A.indptr[i]; p < A.indptr[i + 1]; ++p) {
            const T v = A.values[p];
            const T* bj = B.row(A.indices[p]);
            for (std::size_t j = 0; j < B.cols; ++j) ci[j] += v * bj[j];
        }
    }
    return C;
}

// C = A^T * B, sparse A — used for input-side weight gradients without
// materialising the transpose.
template <class T>
Dense<T> spmm_at_b(const Csr<T>& A, const Dense<T>& B) {
    detail::require_dims(A.rows == B.rows, "spmm_at_b");
    Dense<T> C(A.cols, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const T* bi = B.row(i);
        for (std::size_t p = A.indptr[i]; p < A.indptr[i + 1]; ++p) {
            const T v = A.values[p];
            T* cj = C.row(A.indices[p]);
            for (std::size_t j = 0; j < B.cols; ++j) cj[j] += v * bi[j];
        }
    }
    return C;
}

// C = A * B.
template <class T>
Dense<T> matmul(const Dense<T>& A, const Dense<T>& B) {
    detail::require_dims(A.cols == B.rows, "matmul");
    Dense<T> C(A.rows, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        T* ci = C.row(i);
        for (std::size_t p = 0; p < A.cols; ++p) {
            const T v = A(i, p);
            if (v == T(0)) continue;
            const T* bp = B.row(p);
            for (std::size_t j = 0; j < B.cols; ++j) ci[j] += v * bp[j];
        }
    }
    return C;
}

// C = A^T * B.
template <class T>
Dense<T> matmul_tn(const Dense<T>& A, const Dense<T>& B) {
    detail::require_dims(A.rows == B.rows, "matmul_tn");
    Dense<T> C(A.cols, B.cols);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const T* bi = B.row(i);
        for (std::size_t p = 0; p < A.cols; ++p) {
            const T v = A(i, p);
            if (v == T(0)) continue;
            T* cp = C.row(p);
            for (std::size_t j = 0; j < B.cols; ++j) cp[j] += v * bi[j];
        }
    }
    return C;
}

// C = A * B^T.
template <class T>
Dense<T> matmul_nt(const Dense<T>& A, const Dense<T>& B) {
    detail::require_dims(A.cols == B.cols, "matmul_nt");
    Dense<T> C(A.rows, B.rows);
    for (std::size_t i = 0; i < A.rows; ++i) {
        const T* ai = A.row(i);
        for (std::size_t j = 0; j < B.rows; ++j) {
            const T* bj = B.row(j);
            T acc = T(0);
            for (std::size_t p = 0; p < A.cols; ++p) acc += ai[p] * bj[p];
            C(i, j) = acc;
        }
    }
    return C;
}

template <class T>
Dense<T> transpose(const Dense<T>& A) {
    Dense<T> C(A.cols, A.rows);
    for (std::size_t i = 0; i < A.rows; ++i)
        for (std::size_t j = 0; j < A.cols; ++j) C(j, i) = A(i, j);
    return C;
}

template <class T>
bool all_finite(const Dense<T>& m) {
    for (const T& v : m.a)
        if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
}

} // namespace difac
