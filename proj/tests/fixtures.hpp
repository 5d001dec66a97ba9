// Small random fixtures shared by the test suites.
#pragma once

#include <cstdint>
#include <vector>

#include "gnnood/graph.hpp"
#include "gnnood/rng.hpp"

namespace fixtures {

// Connected-ish random graph with balanced labels, 4 environments and all
// five split masks populated. Degenerate sizes are fine down to n = 4.
inline gnnood::Graph random_graph(gnnood::index_t n, gnnood::index_t d, int classes,
                                  std::uint64_t seed, double edge_p = 0.4) {
    using gnnood::index_t;
    gnnood::RngStream rng(seed);
    gnnood::Graph g;
    g.n = n;
    g.classes = classes;
    g.environments = 4;
    g.features = gnnood::DenseMatrix(n, d);
    auto frng = rng.derive("features");
    for (index_t i = 0; i < g.features.size(); ++i) {
        g.features.data()[i] = frng.normal();
    }
    g.labels.resize(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) {
        g.labels[static_cast<std::size_t>(i)] = static_cast<int>(i) % classes;
    }
    g.env_id.resize(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) {
        g.env_id[static_cast<std::size_t>(i)] = static_cast<int>((i * 4) / n);
    }
    std::vector<std::pair<index_t, index_t>> edges;
    auto erng = rng.derive("edges");
    for (index_t i = 0; i < n; ++i) {
        for (index_t j = i + 1; j < n; ++j) {
            if (erng.bernoulli(edge_p)) {
                edges.emplace_back(i, j);
            }
        }
    }
    g.adjacency = gnnood::adjacency_from_edges(n, edges);
    // Environment chunks map straight onto the masks.
    for (index_t i = 0; i < n; ++i) {
        switch (g.env_id[static_cast<std::size_t>(i)]) {
        case 0:
            g.splits.train.push_back(i);
            break;
        case 1:
            (i % 2 == 0 ? g.splits.iid_val : g.splits.iid_test).push_back(i);
            break;
        case 2:
            g.splits.ood_val.push_back(i);
            break;
        default:
            g.splits.ood_test.push_back(i);
            break;
        }
    }
    if (g.splits.iid_test.empty()) {
        g.splits.iid_test.push_back(g.splits.iid_val.back());
        g.splits.iid_val.pop_back();
    }
    g.validate();
    return g;
}

} // namespace fixtures
