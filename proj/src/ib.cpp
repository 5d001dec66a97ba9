#include "gnnood/ib.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gnnood/errors.hpp"
#include "gnnood/rng.hpp"

namespace gnnood {

namespace {

// Dense Cholesky factorization of a small SPD matrix.
class Cholesky {
public:
    explicit Cholesky(const DenseMatrix& a) : d_(a.rows()), l_(a.rows(), a.cols()) {
        for (index_t i = 0; i < d_; ++i) {
            for (index_t j = 0; j <= i; ++j) {
                double acc = a(i, j);
                for (index_t k = 0; k < j; ++k) {
                    acc -= l_(i, k) * l_(j, k);
                }
                if (i == j) {
                    if (!(acc > 0.0)) {
                        throw NumericalError(
                            "covariance not positive-definite: pivot " + std::to_string(acc) +
                            " at row " + std::to_string(i) + " (diagonal range [" +
                            std::to_string(min_diag(a)) + ", " + std::to_string(max_diag(a)) + "])");
                    }
                    l_(i, i) = std::sqrt(acc);
                } else {
                    l_(i, j) = acc / l_(j, j);
                }
            }
        }
    }

    // Solves Sigma y = b.
    void solve(const double* b, double* y) const {
        for (index_t i = 0; i < d_; ++i) {
            double acc = b[i];
            for (index_t k = 0; k < i; ++k) {
                acc -= l_(i, k) * y[k];
            }
            y[i] = acc / l_(i, i);
        }
        for (index_t i = d_; i-- > 0;) {
            double acc = y[i];
            for (index_t k = i + 1; k < d_; ++k) {
                acc -= l_(k, i) * y[k];
            }
            y[i] = acc / l_(i, i);
        }
    }

    double quad_form(const double* b) const {
        // b^T Sigma^{-1} b via the forward substitution only.
        std::vector<double> w(static_cast<std::size_t>(d_));
        for (index_t i = 0; i < d_; ++i) {
            double acc = b[i];
            for (index_t k = 0; k < i; ++k) {
                acc -= l_(i, k) * w[static_cast<std::size_t>(k)];
            }
            w[static_cast<std::size_t>(i)] = acc / l_(i, i);
        }
        double q = 0.0;
        for (index_t i = 0; i < d_; ++i) {
            q += w[static_cast<std::size_t>(i)] * w[static_cast<std::size_t>(i)];
        }
        return q;
    }

    double log_det() const {
        double acc = 0.0;
        for (index_t i = 0; i < d_; ++i) {
            acc += std::log(l_(i, i));
        }
        return 2.0 * acc;
    }

private:
    static double min_diag(const DenseMatrix& a) {
        double v = a(0, 0);
        for (index_t i = 1; i < a.rows(); ++i) {
            v = std::min(v, a(i, i));
        }
        return v;
    }
    static double max_diag(const DenseMatrix& a) {
        double v = a(0, 0);
        for (index_t i = 1; i < a.rows(); ++i) {
            v = std::max(v, a(i, i));
        }
        return v;
    }

    index_t d_;
    DenseMatrix l_;
};

// (x_i - mu_c)^T Sigma^{-1} (x_i - mu_c) for every point/cluster pair.
DenseMatrix pairwise_quad(const Cholesky& chol, const DenseMatrix& points,
                          const DenseMatrix& means) {
    const index_t n = points.rows();
    const index_t cc = means.rows();
    const index_t d = points.cols();
    DenseMatrix quad(n, cc);
    std::vector<double> diff(static_cast<std::size_t>(d));
    for (index_t i = 0; i < n; ++i) {
        for (index_t c = 0; c < cc; ++c) {
            for (index_t k = 0; k < d; ++k) {
                diff[static_cast<std::size_t>(k)] = points(i, k) - means(c, k);
            }
            quad(i, c) = chol.quad_form(diff.data());
        }
    }
    return quad;
}

// Softmax over each row of `logits`, tolerant of -inf entries.
void row_softmax_inplace(DenseMatrix& logits) {
    for (index_t i = 0; i < logits.rows(); ++i) {
        double mx = -std::numeric_limits<double>::infinity();
        for (index_t c = 0; c < logits.cols(); ++c) {
            mx = std::max(mx, logits(i, c));
        }
        double denom = 0.0;
        for (index_t c = 0; c < logits.cols(); ++c) {
            const double e = std::exp(logits(i, c) - mx);
            logits(i, c) = e;
            denom += e;
        }
        for (index_t c = 0; c < logits.cols(); ++c) {
            logits(i, c) /= denom;
        }
    }
}

} // namespace

void IBState::validate() const {
    const index_t n = points();
    const index_t cc = clusters();
    if (n < 1 || cc < 1 || means.rows() != cc || static_cast<index_t>(priors.size()) != cc) {
        throw ProtocolError("IBState: inconsistent shapes");
    }
    if (sigma.rows() != dim() || sigma.cols() != dim()) {
        throw ProtocolError("IBState: covariance shape mismatch");
    }
    if (!(epsilon > 0.0)) {
        throw ProtocolError("IBState: epsilon must be positive");
    }
    for (index_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (index_t c = 0; c < cc; ++c) {
            s += assignments(i, c);
        }
        if (std::fabs(s - 1.0) > 1e-12) {
            throw ProtocolError("IBState: assignment row " + std::to_string(i) +
                                " sums to " + std::to_string(s));
        }
    }
    double ps = 0.0;
    for (double p : priors) {
        ps += p;
    }
    if (std::fabs(ps - 1.0) > 1e-12) {
        throw ProtocolError("IBState: priors sum to " + std::to_string(ps));
    }
    for (index_t i = 0; i < sigma.rows(); ++i) {
        for (index_t j = 0; j < i; ++j) {
            if (std::fabs(sigma(i, j) - sigma(j, i)) > 1e-12) {
                throw ProtocolError("IBState: covariance not symmetric at (" + std::to_string(i) +
                                    ", " + std::to_string(j) + ")");
            }
        }
    }
    Cholesky check(sigma); // throws when not positive-definite
    (void)check;
}

IBState ib_iterate(const IBState& state, const DenseMatrix& points) {
    if (points.rows() != state.points() || points.cols() != state.dim()) {
        throw ProtocolError("ib_iterate: points shape mismatch");
    }
    if (state.points() < state.clusters()) {
        throw ProtocolError("ib_iterate: need n >= C");
    }
    const index_t n = state.points();
    const index_t cc = state.clusters();
    const Cholesky chol(state.sigma);

    IBState next = state;
    DenseMatrix logits = pairwise_quad(chol, points, state.means);
    for (index_t i = 0; i < n; ++i) {
        for (index_t c = 0; c < cc; ++c) {
            const double lp = state.priors[static_cast<std::size_t>(c)] > 0.0
                                  ? std::log(state.priors[static_cast<std::size_t>(c)])
                                  : -std::numeric_limits<double>::infinity();
            logits(i, c) = lp - logits(i, c);
        }
    }
    row_softmax_inplace(logits);
    next.assignments = std::move(logits);

    for (index_t c = 0; c < cc; ++c) {
        double count = 0.0;
        for (index_t i = 0; i < n; ++i) {
            count += next.assignments(i, c);
        }
        next.priors[static_cast<std::size_t>(c)] = count / static_cast<double>(n);
        if (count > 0.0) {
            for (index_t k = 0; k < state.dim(); ++k) {
                double acc = 0.0;
                for (index_t i = 0; i < n; ++i) {
                    acc += next.assignments(i, c) * points(i, k);
                }
                next.means(c, k) = acc / count;
            }
        }
        // A fully dead cluster keeps its previous mean.
    }
    return next;
}

double ib_objective(const IBState& state, const DenseMatrix& points) {
    const index_t n = state.points();
    const index_t cc = state.clusters();
    const Cholesky chol(state.sigma);
    const DenseMatrix quad = pairwise_quad(chol, points, state.means);
    const double logdet = chol.log_det();
    const double inv_n = 1.0 / static_cast<double>(n);
    double rate = 0.0;
    double distortion = 0.0;
    for (index_t i = 0; i < n; ++i) {
        for (index_t c = 0; c < cc; ++c) {
            const double p = state.assignments(i, c);
            if (p > 0.0) {
                rate += inv_n * p * std::log(p / state.priors[static_cast<std::size_t>(c)]);
                distortion += inv_n * p * (quad(i, c) + logdet);
            }
        }
    }
    return rate + distortion;
}

double attention_equivalence_check(const IBState& state, const DenseMatrix& points) {
    const index_t n = points.rows();
    const index_t cc = state.clusters();
    const index_t d = state.dim();
    const Cholesky chol(state.sigma);

    for (index_t c = 1; c < cc; ++c) {
        if (std::fabs(state.priors[static_cast<std::size_t>(c)] - state.priors[0]) > 1e-12) {
            throw ProtocolError("attention_equivalence_check: priors not uniform (cluster " +
                                std::to_string(c) + ")");
        }
    }
    // Means must share the Sigma^{-1} norm; the cancellation below hinges on it.
    std::vector<double> norms(static_cast<std::size_t>(cc));
    double mean_norm = 0.0;
    for (index_t c = 0; c < cc; ++c) {
        norms[static_cast<std::size_t>(c)] = chol.quad_form(state.means.data() + c * d);
        mean_norm += norms[static_cast<std::size_t>(c)];
    }
    mean_norm /= static_cast<double>(cc);
    for (index_t c = 0; c < cc; ++c) {
        if (std::fabs(norms[static_cast<std::size_t>(c)] - mean_norm) >
            1e-10 * std::max(1.0, std::fabs(mean_norm))) {
            throw ProtocolError("attention_equivalence_check: cluster " + std::to_string(c) +
                                " breaks the Sigma^{-1} normalization (norm " +
                                std::to_string(norms[static_cast<std::size_t>(c)]) + " vs mean " +
                                std::to_string(mean_norm) + ")");
        }
    }

    // Route A: full KL quadratic scores.
    DenseMatrix w_kl = pairwise_quad(chol, points, state.means);
    for (index_t i = 0; i < n; ++i) {
        for (index_t c = 0; c < cc; ++c) {
            w_kl(i, c) = -w_kl(i, c);
        }
    }
    row_softmax_inplace(w_kl);

    // Route B: linearized attention scores s_ci = (2 mu_c)^T Sigma^{-1} x_i.
    DenseMatrix w_att(n, cc);
    std::vector<double> solved(static_cast<std::size_t>(d));
    for (index_t i = 0; i < n; ++i) {
        chol.solve(points.data() + i * d, solved.data());
        for (index_t c = 0; c < cc; ++c) {
            double s = 0.0;
            for (index_t k = 0; k < d; ++k) {
                s += 2.0 * state.means(c, k) * solved[static_cast<std::size_t>(k)];
            }
            w_att(i, c) = s;
        }
    }
    row_softmax_inplace(w_att);

    // Both routes aggregate the points with their weights (eta = 1/n under
    // uniform priors).
    const double inv_n = 1.0 / static_cast<double>(n);
    double max_dev = 0.0;
    for (index_t c = 0; c < cc; ++c) {
        for (index_t k = 0; k < d; ++k) {
            double a = 0.0;
            double b = 0.0;
            for (index_t i = 0; i < n; ++i) {
                a += inv_n * w_kl(i, c) * points(i, k);
                b += inv_n * w_att(i, c) * points(i, k);
            }
            max_dev = std::max(max_dev, std::fabs(a - b));
        }
    }
    return max_dev;
}

IBRun ib_cluster(IBState state, const DenseMatrix& points, int max_iters, double tol) {
    IBRun run;
    run.objective_trace.push_back(ib_objective(state, points));
    for (int it = 0; it < max_iters; ++it) {
        IBState next = ib_iterate(state, points);
        double delta = 0.0;
        for (index_t i = 0; i < next.assignments.size(); ++i) {
            delta = std::max(delta,
                             std::fabs(next.assignments.data()[i] - state.assignments.data()[i]));
        }
        state = std::move(next);
        run.objective_trace.push_back(ib_objective(state, points));
        ++run.iterations;
        if (delta < tol) {
            run.converged = true;
            break;
        }
    }
    run.state = std::move(state);
    return run;
}

BlobFixture two_blob_fixture(std::uint64_t seed, double sigma_scale) {
    constexpr index_t n = 40;
    constexpr index_t d = 2;
    BlobFixture fx;
    fx.points = DenseMatrix(n, d);
    fx.membership.resize(n);
    auto rng = RngStream(seed).derive("two_blob");
    for (index_t i = 0; i < n; ++i) {
        const int side = i < n / 2 ? 0 : 1;
        fx.membership[static_cast<std::size_t>(i)] = side;
        fx.points(i, 0) = (side == 0 ? -5.0 : 5.0) + 0.1 * rng.normal();
        fx.points(i, 1) = 0.1 * rng.normal();
    }
    fx.init.assignments = DenseMatrix(n, 2);
    for (index_t i = 0; i < n; ++i) {
        fx.init.assignments(i, 0) = 0.5;
        fx.init.assignments(i, 1) = 0.5;
    }
    fx.init.priors = {0.5, 0.5};
    fx.init.means = DenseMatrix(2, d);
    // Slightly asymmetric initial means so the iteration has work to do.
    fx.init.means(0, 0) = -1.0;
    fx.init.means(0, 1) = 0.3;
    fx.init.means(1, 0) = 1.2;
    fx.init.means(1, 1) = -0.2;
    fx.init.sigma = DenseMatrix::identity(d);
    for (index_t i = 0; i < d; ++i) {
        fx.init.sigma(i, i) = sigma_scale;
    }
    fx.init.epsilon = std::sqrt(sigma_scale);
    return fx;
}

EquivalenceFixture random_equivalence_fixture(std::uint64_t seed) {
    auto rng = RngStream(seed).derive("equivalence");
    const index_t n = 8 + static_cast<index_t>(rng.below(25));
    const index_t d = 2 + static_cast<index_t>(rng.below(4));
    const index_t cc = 1 + static_cast<index_t>(rng.below(4));

    EquivalenceFixture fx;
    fx.points = DenseMatrix(n, d);
    for (index_t i = 0; i < fx.points.size(); ++i) {
        fx.points.data()[i] = rng.uniform(-2.0, 2.0);
    }

    // Random SPD covariance: A A^T + I.
    DenseMatrix a(d, d);
    for (index_t i = 0; i < a.size(); ++i) {
        a.data()[i] = 0.5 * rng.normal();
    }
    fx.state.sigma = DenseMatrix(d, d);
    for (index_t i = 0; i < d; ++i) {
        for (index_t j = 0; j < d; ++j) {
            double acc = i == j ? 1.0 : 0.0;
            for (index_t k = 0; k < d; ++k) {
                acc += a(i, k) * a(j, k);
            }
            fx.state.sigma(i, j) = acc;
        }
    }
    // Exact symmetry regardless of accumulation order.
    for (index_t i = 0; i < d; ++i) {
        for (index_t j = 0; j < i; ++j) {
            fx.state.sigma(j, i) = fx.state.sigma(i, j);
        }
    }

    // Means on a common Sigma^{-1} sphere of radius ~1.
    const Cholesky chol(fx.state.sigma);
    fx.state.means = DenseMatrix(cc, d);
    for (index_t c = 0; c < cc; ++c) {
        std::vector<double> dir(static_cast<std::size_t>(d));
        for (index_t k = 0; k < d; ++k) {
            dir[static_cast<std::size_t>(k)] = rng.normal();
        }
        const double norm = chol.quad_form(dir.data());
        const double scalefac = 1.0 / std::sqrt(norm);
        for (index_t k = 0; k < d; ++k) {
            fx.state.means(c, k) = dir[static_cast<std::size_t>(k)] * scalefac;
        }
    }

    fx.state.priors.assign(static_cast<std::size_t>(cc), 1.0 / static_cast<double>(cc));
    fx.state.assignments = DenseMatrix(n, cc);
    for (index_t i = 0; i < n; ++i) {
        for (index_t c = 0; c < cc; ++c) {
            fx.state.assignments(i, c) = 1.0 / static_cast<double>(cc);
        }
    }
    fx.state.epsilon = 1.0;
    return fx;
}

} // namespace gnnood
