#include <doctest.h>

#include <cmath>
#include <functional>

#include "gnnood/errors.hpp"
#include "gnnood/rng.hpp"
#include "gnnood/tape.hpp"
#include "oracles.hpp"

using namespace gnnood;

namespace {

DenseMatrix random_dense(index_t r, index_t c, std::uint64_t seed, double lo = -1.0,
                         double hi = 1.0) {
    RngStream rng(seed);
    DenseMatrix m(r, c);
    for (index_t i = 0; i < m.size(); ++i) {
        m.data()[i] = rng.uniform(lo, hi);
    }
    return m;
}

PatternPtr ring_pattern(index_t n) {
    // Each row stores {i-1, i, i+1} mod n, sorted: a ring with self-loops.
    auto pat = std::make_shared<SparsePattern>();
    pat->rows = pat->cols = n;
    pat->row_ptr.push_back(0);
    for (index_t i = 0; i < n; ++i) {
        std::vector<index_t> cols{(i + n - 1) % n, i, (i + 1) % n};
        std::sort(cols.begin(), cols.end());
        cols.erase(std::unique(cols.begin(), cols.end()), cols.end());
        for (index_t c : cols) {
            pat->col_idx.push_back(c);
        }
        pat->row_ptr.push_back(static_cast<index_t>(pat->col_idx.size()));
    }
    pat->validate();
    return pat;
}

using LossBuilder = std::function<ValueId(Tape&, const std::vector<ValueId>&)>;

// Central finite differences against the tape's analytic gradients for every
// entry of every parameter.
void check_gradients(const LossBuilder& build, const std::vector<DenseMatrix>& init,
                     double step = 1e-5, double rel_tol = 1e-4, double abs_floor = 1e-8) {
    Tape tape;
    std::vector<ValueId> ids;
    for (const auto& m : init) {
        ids.push_back(tape.parameter(m));
    }
    const ValueId loss = build(tape, ids);
    tape.backward(loss);

    auto eval = [&](const std::vector<DenseMatrix>& params) {
        Tape t;
        std::vector<ValueId> vs;
        for (const auto& m : params) {
            vs.push_back(t.parameter(m));
        }
        return t.value(build(t, vs))(0, 0);
    };

    for (std::size_t p = 0; p < init.size(); ++p) {
        const DenseMatrix& analytic = tape.grad(ids[p]);
        for (index_t k = 0; k < init[p].size(); ++k) {
            std::vector<DenseMatrix> plus = init, minus = init;
            plus[p].data()[k] += step;
            minus[p].data()[k] -= step;
            const double fd = (eval(plus) - eval(minus)) / (2.0 * step);
            const double got = analytic.data()[k];
            if (std::fabs(fd) < abs_floor) {
                CHECK(std::fabs(got - fd) <= abs_floor);
            } else {
                CHECK(std::fabs(got - fd) / std::fabs(fd) < rel_tol);
            }
        }
    }
}

} // namespace

TEST_CASE("gradient of sum(W) is all ones") {
    Tape tape;
    const ValueId w = tape.parameter(random_dense(3, 4, 1));
    tape.backward(tape.sum(w));
    const DenseMatrix& g = tape.grad(w);
    for (index_t i = 0; i < g.size(); ++i) {
        CHECK(g.data()[i] == 1.0);
    }
}

TEST_CASE("gradient of sum(W*W)/2 is W") {
    const DenseMatrix w0 = random_dense(3, 3, 2);
    Tape tape;
    const ValueId w = tape.parameter(w0);
    tape.backward(tape.scale(tape.sum(tape.mul(w, w)), 0.5));
    const DenseMatrix& g = tape.grad(w);
    for (index_t i = 0; i < g.size(); ++i) {
        CHECK(g.data()[i] == doctest::Approx(w0.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("unused parameter has exactly zero gradient") {
    Tape tape;
    const ValueId used = tape.parameter(random_dense(2, 2, 3));
    const ValueId unused = tape.parameter(random_dense(2, 2, 4));
    tape.backward(tape.sum(used));
    const DenseMatrix& g = tape.grad(unused);
    for (index_t i = 0; i < g.size(); ++i) {
        CHECK(g.data()[i] == 0.0);
    }
}

TEST_CASE("backward rejects handles from another tape") {
    Tape a, b;
    const ValueId wa = a.parameter(random_dense(1, 1, 5));
    (void)wa;
    const ValueId wb = b.parameter(random_dense(1, 1, 6));
    const ValueId loss = b.sum(wb);
    CHECK_THROWS_AS(a.backward(loss), UsageError);
}

TEST_CASE("backward requires a scalar") {
    Tape tape;
    const ValueId w = tape.parameter(random_dense(2, 2, 7));
    CHECK_THROWS_AS(tape.backward(w), UsageError);
}

TEST_CASE("matmul gradients match finite differences") {
    check_gradients(
        [](Tape& t, const std::vector<ValueId>& p) { return t.sum(t.matmul(p[0], p[1])); },
        {random_dense(3, 4, 10), random_dense(4, 2, 11)});
}

TEST_CASE("chained elementwise gradients match finite differences") {
    check_gradients(
        [](Tape& t, const std::vector<ValueId>& p) {
            const ValueId h = t.leaky_relu(t.add(p[0], p[1]), 0.2);
            return t.sum(t.mul(t.relu(h), t.scale(h, 0.5)));
        },
        {random_dense(4, 3, 12), random_dense(4, 3, 13)});
}

TEST_CASE("add_bias gradients match finite differences") {
    check_gradients(
        [](Tape& t, const std::vector<ValueId>& p) {
            return t.sum(t.relu(t.add_bias(p[0], p[1])));
        },
        {random_dense(5, 3, 14), random_dense(1, 3, 15)});
}

TEST_CASE("spmm (constant sparse) gradients match finite differences") {
    auto pat = ring_pattern(5);
    std::vector<double> vals;
    RngStream rng(16);
    for (index_t i = 0; i < pat->nnz(); ++i) {
        vals.push_back(rng.uniform(0.1, 1.0));
    }
    auto s = std::make_shared<const SparseMatrix>(pat, vals);
    check_gradients(
        [s](Tape& t, const std::vector<ValueId>& p) { return t.sum(t.spmm(s, p[0])); },
        {random_dense(5, 3, 17)});
}

TEST_CASE("edge ops gradients match finite differences") {
    auto pat = ring_pattern(6);
    check_gradients(
        [pat](Tape& t, const std::vector<ValueId>& p) {
            const ValueId scores = t.edge_score_sum(pat, p[0], p[1]);
            const ValueId alpha = t.masked_row_softmax(pat, t.leaky_relu(scores, 0.2));
            return t.sum(t.mul(t.spmm_edges(pat, alpha, p[2]), t.spmm_edges(pat, alpha, p[2])));
        },
        {random_dense(6, 1, 18), random_dense(6, 1, 19), random_dense(6, 2, 20)});
}

TEST_CASE("permute_rows and concat_cols gradients match finite differences") {
    std::vector<index_t> perm{2, 0, 3, 1};
    check_gradients(
        [perm](Tape& t, const std::vector<ValueId>& p) {
            const ValueId cat = t.concat_cols({p[0], t.permute_rows(p[0], perm)});
            return t.sum(t.mul(cat, cat));
        },
        {random_dense(4, 2, 21)});
}

TEST_CASE("dropout gradients match finite differences under a fixed mask") {
    check_gradients(
        [](Tape& t, const std::vector<ValueId>& p) {
            const ValueId d = t.dropout(p[0], 0.4, RngStream(77), true);
            return t.sum(t.mul(d, d));
        },
        {random_dense(5, 4, 30)});
}

TEST_CASE("masked row softmax rows sum to one and are shift invariant") {
    auto pat = ring_pattern(7);
    Tape tape;
    const DenseMatrix scores = random_dense(pat->nnz(), 1, 22, -3.0, 3.0);
    const ValueId alpha = tape.masked_row_softmax(pat, tape.constant(scores));

    DenseMatrix shifted = scores;
    for (index_t r = 0; r < pat->rows; ++r) {
        for (index_t k = pat->row_ptr[static_cast<std::size_t>(r)];
             k < pat->row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            shifted.data()[k] += 17.5; // constant per row
        }
    }
    const ValueId alpha2 = tape.masked_row_softmax(pat, tape.constant(shifted));

    for (index_t r = 0; r < pat->rows; ++r) {
        double sum = 0.0;
        for (index_t k = pat->row_ptr[static_cast<std::size_t>(r)];
             k < pat->row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            sum += tape.value(alpha).data()[k];
            CHECK(std::fabs(tape.value(alpha).data()[k] - tape.value(alpha2).data()[k]) < 1e-12);
        }
        CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
}

TEST_CASE("masked row softmax single-entry row and symmetric pair") {
    auto pat = std::make_shared<SparsePattern>();
    pat->rows = 2;
    pat->cols = 2;
    pat->row_ptr = {0, 1, 3};
    pat->col_idx = {0, 0, 1};
    pat->validate();
    Tape tape;
    const DenseMatrix scores(3, 1, {7.3, 0.0, 0.0});
    const ValueId alpha = tape.masked_row_softmax(PatternPtr(pat), tape.constant(scores));
    CHECK(tape.value(alpha)(0, 0) == 1.0);
    CHECK(tape.value(alpha)(1, 0) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(tape.value(alpha)(2, 0) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("masked row softmax oracle values for a [1,2,3] row") {
    auto pat = std::make_shared<SparsePattern>();
    pat->rows = 1;
    pat->cols = 3;
    pat->row_ptr = {0, 3};
    pat->col_idx = {0, 1, 2};
    Tape tape;
    const ValueId alpha =
        tape.masked_row_softmax(PatternPtr(pat), tape.constant(DenseMatrix(3, 1, {1, 2, 3})));
    // exp in extended precision
    const long double e1 = expl(1.0L), e2 = expl(2.0L), e3 = expl(3.0L);
    const long double z = e1 + e2 + e3;
    CHECK(tape.value(alpha)(0, 0) == doctest::Approx(static_cast<double>(e1 / z)).epsilon(1e-14));
    CHECK(tape.value(alpha)(1, 0) == doctest::Approx(static_cast<double>(e2 / z)).epsilon(1e-14));
    CHECK(tape.value(alpha)(2, 0) == doctest::Approx(static_cast<double>(e3 / z)).epsilon(1e-14));
}

TEST_CASE("masked row softmax rejects empty rows") {
    auto pat = std::make_shared<SparsePattern>();
    pat->rows = 2;
    pat->cols = 2;
    pat->row_ptr = {0, 0, 1};
    pat->col_idx = {1};
    Tape tape;
    CHECK_THROWS_AS(
        tape.masked_row_softmax(PatternPtr(pat), tape.constant(DenseMatrix(1, 1, {1.0}))),
        ProtocolError);
}

TEST_CASE("relu and leaky_relu values") {
    Tape tape;
    const ValueId x = tape.constant(DenseMatrix(1, 2, {-1.0, 2.0}));
    CHECK(tape.value(tape.relu(x))(0, 0) == 0.0);
    CHECK(tape.value(tape.relu(x))(0, 1) == 2.0);
    const ValueId y = tape.constant(DenseMatrix(1, 2, {-10.0, 10.0}));
    CHECK(tape.value(tape.leaky_relu(y, 0.2))(0, 0) == doctest::Approx(-2.0));
    CHECK(tape.value(tape.leaky_relu(y, 0.2))(0, 1) == 10.0);
}

TEST_CASE("dropout contracts") {
    const DenseMatrix x = random_dense(20, 10, 23);
    Tape tape;
    const ValueId xv = tape.constant(x);

    SUBCASE("rate 0 is identity in train mode") {
        const ValueId out = tape.dropout(xv, 0.0, RngStream(1), true);
        for (index_t i = 0; i < x.size(); ++i) {
            CHECK(tape.value(out).data()[i] == x.data()[i]);
        }
    }
    SUBCASE("eval mode is identity at any rate") {
        const ValueId out = tape.dropout(xv, 0.7, RngStream(1), false);
        for (index_t i = 0; i < x.size(); ++i) {
            CHECK(tape.value(out).data()[i] == x.data()[i]);
        }
    }
    SUBCASE("train mode is deterministic per seed and scales by 1/(1-rate)") {
        const ValueId a = tape.dropout(xv, 0.5, RngStream(9), true);
        const ValueId b = tape.dropout(xv, 0.5, RngStream(9), true);
        bool dropped_any = false;
        for (index_t i = 0; i < x.size(); ++i) {
            const double v = tape.value(a).data()[i];
            CHECK(v == tape.value(b).data()[i]);
            if (v == 0.0) {
                dropped_any = true;
            } else {
                CHECK(v == doctest::Approx(2.0 * x.data()[i]));
            }
        }
        CHECK(dropped_any);
    }
    SUBCASE("rate out of range") {
        CHECK_THROWS_AS(tape.dropout(xv, 1.0, RngStream(1), true), ConfigError);
    }
}

TEST_CASE("softmax cross entropy values") {
    Tape tape;
    SUBCASE("saturated correct class") {
        const ValueId z = tape.constant(DenseMatrix(1, 2, {1000.0, 0.0}));
        const ValueId loss = tape.softmax_cross_entropy(z, {0}, {0});
        CHECK(tape.value(loss)(0, 0) < 1e-9);
    }
    SUBCASE("uniform two-class") {
        const ValueId z = tape.constant(DenseMatrix(1, 2, {0.0, 0.0}));
        const ValueId loss = tape.softmax_cross_entropy(z, {0}, {0});
        CHECK(tape.value(loss)(0, 0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    }
    SUBCASE("random instance matches the extended-precision oracle") {
        const DenseMatrix z = random_dense(6, 3, 24, -4.0, 4.0);
        const std::vector<int> labels{0, 2, 1, 1, 0, 2};
        const std::vector<index_t> mask{0, 1, 2, 3, 4, 5};
        const ValueId loss = tape.softmax_cross_entropy(tape.constant(z), labels, mask);
        const double want = oracle::cross_entropy(oracle::from_dense(z), labels, mask);
        CHECK(tape.value(loss)(0, 0) == doctest::Approx(want).epsilon(1e-13));
    }
    SUBCASE("empty mask is a protocol error") {
        const ValueId z = tape.constant(DenseMatrix(1, 2));
        CHECK_THROWS_AS(tape.softmax_cross_entropy(z, {0}, {}), ProtocolError);
    }
    SUBCASE("label out of range is a data error") {
        const ValueId z = tape.constant(DenseMatrix(1, 2));
        CHECK_THROWS_AS(tape.softmax_cross_entropy(z, {5}, {0}), DataError);
    }
}

TEST_CASE("cross entropy gradients match finite differences") {
    const std::vector<int> labels{0, 2, 1, 1};
    const std::vector<index_t> mask{0, 1, 3};
    check_gradients(
        [&](Tape& t, const std::vector<ValueId>& p) {
            return t.softmax_cross_entropy(p[0], labels, mask);
        },
        {random_dense(4, 3, 25)});
}

TEST_CASE("soft cross entropy gradients match finite differences") {
    auto targets = std::make_shared<DenseMatrix>(4, 3);
    RngStream rng(26);
    for (index_t i = 0; i < 4; ++i) {
        double sum = 0.0;
        for (index_t j = 0; j < 3; ++j) {
            (*targets)(i, j) = rng.uniform(0.01, 1.0);
            sum += (*targets)(i, j);
        }
        for (index_t j = 0; j < 3; ++j) {
            (*targets)(i, j) /= sum;
        }
    }
    const std::vector<index_t> mask{0, 1, 2, 3};
    check_gradients(
        [&](Tape& t, const std::vector<ValueId>& p) {
            return t.soft_cross_entropy(p[0], targets, mask);
        },
        {random_dense(4, 3, 27)});
}

TEST_CASE("soft cross entropy handles unnormalized target rows") {
    // Mixed soft labels always sum to 1 in practice, but the gradient rule
    // must stay consistent with the forward for any constant targets.
    auto targets = std::make_shared<DenseMatrix>(3, 2);
    (*targets)(0, 0) = 0.5;
    (*targets)(0, 1) = 0.25;
    (*targets)(1, 0) = 2.0;
    (*targets)(2, 1) = 1.0;
    const std::vector<index_t> mask{0, 1, 2};
    check_gradients(
        [&](Tape& t, const std::vector<ValueId>& p) {
            return t.soft_cross_entropy(p[0], targets, mask);
        },
        {random_dense(3, 2, 31)});
}

TEST_CASE("IRM penalty gradients match finite differences") {
    const std::vector<int> labels{0, 1, 2, 0, 1};
    const std::vector<index_t> env{0, 2, 4};
    check_gradients(
        [&](Tape& t, const std::vector<ValueId>& p) { return t.irm_penalty(p[0], labels, env); },
        {random_dense(5, 3, 28, -2.0, 2.0)});
}

TEST_CASE("IRM penalty forward matches a scalar finite difference in w") {
    // d/dw mean CE(w * logits) at w = 1, squared.
    const DenseMatrix z = random_dense(6, 3, 29, -2.0, 2.0);
    const std::vector<int> labels{0, 2, 1, 0, 1, 2};
    const std::vector<index_t> env{0, 1, 2, 3, 4, 5};
    Tape tape;
    const ValueId pen = tape.irm_penalty(tape.constant(z), labels, env);

    auto risk_at = [&](double w) {
        DenseMatrix scaled = z;
        for (index_t i = 0; i < scaled.size(); ++i) {
            scaled.data()[i] *= w;
        }
        return oracle::cross_entropy(oracle::from_dense(scaled), labels, env);
    };
    const double h = 1e-6;
    const double d = (risk_at(1.0 + h) - risk_at(1.0 - h)) / (2.0 * h);
    CHECK(tape.value(pen)(0, 0) == doctest::Approx(d * d).epsilon(1e-6));
}

TEST_CASE("IRM penalty is ~0 for uniform logits with balanced labels") {
    DenseMatrix z(4, 2); // all zeros: uniform predictions
    const std::vector<int> labels{0, 1, 0, 1};
    Tape tape;
    const ValueId pen = tape.irm_penalty(tape.constant(z), labels, {0, 1, 2, 3});
    CHECK(tape.value(pen)(0, 0) == doctest::Approx(0.0).epsilon(1e-15));
}
