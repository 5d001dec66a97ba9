#include <doctest.h>

#include "gnnood/errors.hpp"
#include "gnnood/matrix.hpp"
#include "gnnood/rng.hpp"
#include "oracles.hpp"

using namespace gnnood;

namespace {

DenseMatrix random_dense(index_t r, index_t c, std::uint64_t seed) {
    RngStream rng(seed);
    DenseMatrix m(r, c);
    for (index_t i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(-2.0, 2.0);
    }
    return m;
}

SparseMatrix random_sparse(index_t n, std::uint64_t seed, double density = 0.4) {
    RngStream rng(seed);
    std::vector<index_t> row_ptr{0};
    std::vector<index_t> col_idx;
    std::vector<double> values;
    for (index_t i = 0; i < n; ++i) {
        for (index_t j = 0; j < n; ++j) {
            if (rng.bernoulli(density)) {
                col_idx.push_back(j);
                values.push_back(rng.uniform(-1.0, 1.0));
            }
        }
        row_ptr.push_back(static_cast<index_t>(col_idx.size()));
    }
    return SparseMatrix::from_csr(n, n, row_ptr, col_idx, values);
}

} // namespace

TEST_CASE("matmul identity") {
    const DenseMatrix i2 = DenseMatrix::identity(2);
    const DenseMatrix m(2, 2, {3, 4, 5, 6});
    const DenseMatrix out = matmul(i2, m);
    CHECK(out(0, 0) == 3);
    CHECK(out(0, 1) == 4);
    CHECK(out(1, 0) == 5);
    CHECK(out(1, 1) == 6);
}

TEST_CASE("matmul 1x2 by 2x1") {
    const DenseMatrix a(1, 2, {1, 2});
    const DenseMatrix b(2, 1, {3, 4});
    CHECK(matmul(a, b)(0, 0) == 11);
}

TEST_CASE("matmul against the naive oracle") {
    const DenseMatrix a = random_dense(5, 4, 1);
    const DenseMatrix b = random_dense(4, 3, 2);
    const DenseMatrix got = matmul(a, b);
    const auto want = oracle::matmul(oracle::from_dense(a), oracle::from_dense(b));
    for (index_t i = 0; i < 5; ++i) {
        for (index_t j = 0; j < 3; ++j) {
            CHECK(got(i, j) == doctest::Approx(want[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]).epsilon(1e-14));
        }
    }
}

TEST_CASE("matmul shape error names both shapes") {
    const DenseMatrix a(2, 3);
    const DenseMatrix b(2, 3);
    CHECK_THROWS_AS(matmul(a, b), ShapeError);
    try {
        matmul(a, b);
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("2x3") != std::string::npos);
    }
}

TEST_CASE("spmm with the sparse identity") {
    std::vector<index_t> row_ptr{0, 1, 2, 3};
    std::vector<index_t> col_idx{0, 1, 2};
    const auto eye = SparseMatrix::from_csr(3, 3, row_ptr, col_idx, {1.0, 1.0, 1.0});
    const DenseMatrix d = random_dense(3, 4, 3);
    const DenseMatrix out = spmm(eye, d);
    for (index_t i = 0; i < d.size(); ++i) {
        CHECK(out.data()[i] == d.data()[i]);
    }
}

TEST_CASE("spmm equals densify-then-matmul bit-exactly") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const SparseMatrix s = random_sparse(10, seed);
        const DenseMatrix d = random_dense(10, 4, seed + 100);
        const DenseMatrix a = spmm(s, d);
        const DenseMatrix b = matmul(s.densify(), d);
        for (index_t i = 0; i < a.size(); ++i) {
            CHECK(a.data()[i] == b.data()[i]);
        }
    }
}

TEST_CASE("spmm dimension mismatch") {
    const SparseMatrix s = random_sparse(4, 9);
    const DenseMatrix d = random_dense(5, 2, 10);
    CHECK_THROWS_AS(spmm(s, d), ShapeError);
}

TEST_CASE("CSR validation rejects malformed structure") {
    CHECK_THROWS_AS(SparseMatrix::from_csr(2, 2, {0, 1}, {0}, {1.0}), DataError);   // short row_ptr
    CHECK_THROWS_AS(SparseMatrix::from_csr(2, 2, {0, 2, 1}, {0, 1}, {1.0, 1.0}), DataError); // decreasing
    CHECK_THROWS_AS(SparseMatrix::from_csr(2, 2, {0, 2, 2}, {1, 0}, {1.0, 1.0}), DataError); // unsorted row
    CHECK_THROWS_AS(SparseMatrix::from_csr(2, 2, {0, 1, 2}, {0, 2}, {1.0, 1.0}), DataError); // col range
}

TEST_CASE("sparse at() and densify agree") {
    const SparseMatrix s = random_sparse(6, 21);
    const DenseMatrix d = s.densify();
    for (index_t i = 0; i < 6; ++i) {
        for (index_t j = 0; j < 6; ++j) {
            CHECK(s.at(i, j) == d(i, j));
        }
    }
}
