#pragma once

#include <string>
#include <vector>

#include "gnnood/matrix.hpp"

namespace gnnood {

// Disjoint node subsets for the dual-test-set protocol: models are selected
// on iid_val and evaluated on both iid_test and ood_test.
struct SplitMasks {
    std::vector<index_t> train;
    std::vector<index_t> iid_val;
    std::vector<index_t> iid_test;
    std::vector<index_t> ood_val;
    std::vector<index_t> ood_test;
};

// Transductive node-classification instance: features X, symmetric adjacency A
// (no stored self-loops), labels, per-node environment ids and split masks.
// Immutable after construction; safe to share across threads.
struct Graph {
    index_t n = 0;
    DenseMatrix features;          // n x d
    SparseMatrix adjacency;        // n x n, symmetric
    std::vector<int> labels;       // in [0, classes)
    int classes = 0;
    std::vector<int> env_id;       // in [0, environments)
    int environments = 0;
    SplitMasks splits;

    index_t feature_dim() const { return features.cols(); }

    // Checks every structural invariant; throws DataError on violation.
    void validate() const;

    // Node degree counting stored adjacency entries (no self-loop).
    std::vector<index_t> degrees() const;
};

// A_hat = D~^{-1/2} (A + I) D~^{-1/2}. Every node keeps at least its
// self-loop, so no row is empty; each value 1/sqrt(d_i d_j) is computed once
// per unordered pair, making the output exactly symmetric.
SparseMatrix normalize_adjacency(const Graph& g);

// Builds a symmetric CSR adjacency from undirected edges given once as (i, j)
// with i < j. Rejects self-loops, duplicates and out-of-range endpoints.
SparseMatrix adjacency_from_edges(index_t n, const std::vector<std::pair<index_t, index_t>>& edges);

// Plain-text graph format, round-trip exact. See README for the layout.
void save_graph(const Graph& g, const std::string& path);
Graph load_graph(const std::string& path);

} // namespace gnnood
