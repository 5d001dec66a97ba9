#pragma once

#include <cstdint>
#include <vector>

#include "gnnood/matrix.hpp"

namespace gnnood {

// State of the iterative information-bottleneck clustering with a shared
// Gaussian cluster model: soft assignments p(c|i), cluster priors p(c),
// cluster means and one covariance shared by all clusters.
struct IBState {
    DenseMatrix assignments; // n x C, rows sum to 1
    std::vector<double> priors; // length C, simplex
    DenseMatrix means;       // C x d
    DenseMatrix sigma;       // d x d symmetric positive-definite
    double epsilon = 1e-2;   // smoothing scale of the per-point density

    index_t points() const { return assignments.rows(); }
    index_t clusters() const { return assignments.cols(); }
    index_t dim() const { return means.cols(); }

    void validate() const; // throws on an invariant violation
};

// One full update: assignments from the softmax rule
// p(c|i) ∝ p(c) exp(-(x_i-μ_c)^T Σ^{-1} (x_i-μ_c)), priors as soft counts
// p(c) = (1/n) Σ_i p(c|i), means as soft-count-weighted averages. Σ is held
// fixed. Throws NumericalError when Σ is singular.
IBState ib_iterate(const IBState& state, const DenseMatrix& points);

// Clustering free energy: the rate term (1/n) Σ_ic p(c|i) log(p(c|i)/p(c))
// plus the expected distortion (1/n) Σ_ic p(c|i) [quad + log det Σ].
// Non-increasing across ib_iterate steps on fixed data.
double ib_objective(const IBState& state, const DenseMatrix& points);

// Numerical check of the attention correspondence: computes the mean update
// once through the full KL softmax form and once through the linearized
// attention form (keys 2μ_c, query transform Σ^{-1}); returns the max
// elementwise deviation. Preconditions (uniform priors; means with equal
// Σ^{-1}-norm within 1e-10) are enforced and violations name the offending
// cluster.
double attention_equivalence_check(const IBState& state, const DenseMatrix& points);

struct IBRun {
    IBState state;
    std::vector<double> objective_trace; // objective before each iterate, then final
    bool converged = false;
    int iterations = 0;
};

// Iterates until the max assignment change drops below tol or max_iters.
IBRun ib_cluster(IBState state, const DenseMatrix& points, int max_iters = 200,
                 double tol = 1e-10);

// Two well-separated Gaussian blobs (centers +-5 on the first coordinate,
// sigma 0.1, n = 40) with ground-truth membership and a perturbed-mean
// initial state.
struct BlobFixture {
    DenseMatrix points;
    std::vector<int> membership;
    IBState init;
};
BlobFixture two_blob_fixture(std::uint64_t seed, double sigma_scale = 1.0);

// Random fixture satisfying the equivalence-check preconditions: random SPD
// covariance, means scaled to a common Sigma^{-1}-norm, uniform priors.
struct EquivalenceFixture {
    DenseMatrix points;
    IBState state;
};
EquivalenceFixture random_equivalence_fixture(std::uint64_t seed);

} // namespace gnnood
