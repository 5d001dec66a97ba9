#include "gnnood/generators.hpp"

#include <algorithm>
#include <numeric>

#include "gnnood/errors.hpp"
#include "gnnood/rng.hpp"

namespace gnnood {

void GeneratorConfig::validate() const {
    if (nodes < 1 || classes < 2 || feature_dim < 1) {
        throw ConfigError("generator: nodes >= 1, classes >= 2, feature_dim >= 1 required");
    }
    if (environments < 4) {
        throw ConfigError("generator: at least 4 environments required (2 train / 2 OOD)");
    }
    if (nodes < environments) {
        throw ConfigError("generator: fewer nodes than environments");
    }
    if (!(intra_p >= 0.0 && intra_p <= 1.0 && inter_p >= 0.0 && inter_p <= 1.0)) {
        throw ConfigError("generator: edge probabilities must lie in [0, 1]");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("generator: train_fraction must lie in (0, 1)");
    }
    if (spurious_dim > 0 && spurious_dim < classes) {
        throw ConfigError("generator: spurious_dim " + std::to_string(spurious_dim) +
                          " < classes " + std::to_string(classes) +
                          " with one-hot spurious encoding");
    }
}

namespace {

// Labels, invariant features and SBM edges; shared by both generators so the
// invariant part of a graph is a pure function of (cfg, seed).
struct BaseGraph {
    std::vector<int> labels;
    DenseMatrix features;
    SparseMatrix adjacency;
};

BaseGraph gen_base(const GeneratorConfig& cfg, RngStream root) {
    BaseGraph base;
    const index_t n = cfg.nodes;

    // Balanced labels in round-robin order, then shuffled.
    base.labels.resize(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) {
        base.labels[static_cast<std::size_t>(i)] = static_cast<int>(i % cfg.classes);
    }
    {
        auto rng = root.derive("labels");
        const auto perm = rng.permutation(n);
        std::vector<int> shuffled(static_cast<std::size_t>(n));
        for (index_t i = 0; i < n; ++i) {
            shuffled[static_cast<std::size_t>(i)] = base.labels[static_cast<std::size_t>(perm[static_cast<std::size_t>(i)])];
        }
        base.labels = std::move(shuffled);
    }

    // Class centers on random directions, then per-node Gaussian noise.
    DenseMatrix centers(cfg.classes, cfg.feature_dim);
    {
        auto rng = root.derive("centers");
        for (index_t i = 0; i < centers.size(); ++i) {
            centers.data()[i] = cfg.center_scale * rng.normal();
        }
    }
    base.features = DenseMatrix(n, cfg.feature_dim);
    {
        auto rng = root.derive("features");
        for (index_t i = 0; i < n; ++i) {
            const int y = base.labels[static_cast<std::size_t>(i)];
            for (index_t j = 0; j < cfg.feature_dim; ++j) {
                base.features(i, j) = centers(y, j) + cfg.noise_sigma * rng.normal();
            }
        }
    }

    // SBM edges over the upper triangle.
    std::vector<std::pair<index_t, index_t>> edges;
    {
        auto rng = root.derive("edges");
        for (index_t i = 0; i < n; ++i) {
            for (index_t j = i + 1; j < n; ++j) {
                const double p = base.labels[static_cast<std::size_t>(i)] == base.labels[static_cast<std::size_t>(j)]
                                     ? cfg.intra_p
                                     : cfg.inter_p;
                if (rng.bernoulli(p)) {
                    edges.emplace_back(i, j);
                }
            }
        }
    }
    base.adjacency = adjacency_from_edges(n, edges);
    return base;
}

// Partition ids [0, n) into `parts` contiguous chunks of the given order.
std::vector<int> chunk_assignment(const std::vector<index_t>& order, int parts) {
    const index_t n = static_cast<index_t>(order.size());
    std::vector<int> assign(static_cast<std::size_t>(n), 0);
    for (index_t pos = 0; pos < n; ++pos) {
        const int part = static_cast<int>((pos * parts) / n);
        assign[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = part;
    }
    return assign;
}

// Random train/val/test split of the in-distribution nodes plus the OOD
// environment masks. OOD envs are split: lower half to ood_val, upper half
// to ood_test.
SplitMasks make_splits(const std::vector<int>& env_id, int environments, double train_fraction,
                       RngStream rng) {
    const int ood_start = environments / 2;
    const int ood_mid = ood_start + (environments - ood_start) / 2;
    SplitMasks s;
    std::vector<index_t> id_nodes;
    for (index_t v = 0; v < static_cast<index_t>(env_id.size()); ++v) {
        const int e = env_id[static_cast<std::size_t>(v)];
        if (e < ood_start) {
            id_nodes.push_back(v);
        } else if (e < ood_mid) {
            s.ood_val.push_back(v);
        } else {
            s.ood_test.push_back(v);
        }
    }
    const auto perm = rng.permutation(static_cast<index_t>(id_nodes.size()));
    const index_t n_id = static_cast<index_t>(id_nodes.size());
    const index_t n_train = static_cast<index_t>(static_cast<double>(n_id) * train_fraction);
    const index_t n_val = (n_id - n_train) / 2;
    for (index_t pos = 0; pos < n_id; ++pos) {
        const index_t v = id_nodes[static_cast<std::size_t>(perm[static_cast<std::size_t>(pos)])];
        if (pos < n_train) {
            s.train.push_back(v);
        } else if (pos < n_train + n_val) {
            s.iid_val.push_back(v);
        } else {
            s.iid_test.push_back(v);
        }
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.iid_val.begin(), s.iid_val.end());
    std::sort(s.iid_test.begin(), s.iid_test.end());
    return s;
}

} // namespace

Graph gen_covariate_shift(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    RngStream root = RngStream(seed).derive("covariate");
    BaseGraph base = gen_base(cfg, root);

    Graph g;
    g.n = cfg.nodes;
    g.classes = cfg.classes;
    g.environments = cfg.environments;
    g.features = std::move(base.features);
    g.labels = std::move(base.labels);
    g.adjacency = std::move(base.adjacency);

    // Environments are degree quantiles: stable sort by (degree, id), chunked.
    std::vector<index_t> deg(static_cast<std::size_t>(g.n));
    {
        const auto& p = g.adjacency.pattern();
        for (index_t r = 0; r < g.n; ++r) {
            deg[static_cast<std::size_t>(r)] =
                p.row_ptr[static_cast<std::size_t>(r) + 1] - p.row_ptr[static_cast<std::size_t>(r)];
        }
    }
    std::vector<index_t> order(static_cast<std::size_t>(g.n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](index_t a, index_t b) {
        const index_t da = deg[static_cast<std::size_t>(a)];
        const index_t db = deg[static_cast<std::size_t>(b)];
        return da != db ? da < db : a < b;
    });
    g.env_id = chunk_assignment(order, cfg.environments);

    g.splits = make_splits(g.env_id, cfg.environments, cfg.train_fraction, root.derive("splits"));
    g.validate();
    return g;
}

Graph gen_concept_shift(const GeneratorConfig& cfg, double corr_train, double corr_ood,
                        std::uint64_t seed) {
    cfg.validate();
    if (!(corr_train >= 0.0 && corr_train <= 1.0 && corr_ood >= 0.0 && corr_ood <= 1.0)) {
        throw ConfigError("gen_concept_shift: correlations must lie in [0, 1]");
    }
    if (cfg.spurious_dim <= 0) {
        throw ConfigError("gen_concept_shift: spurious_dim must be positive");
    }
    RngStream root = RngStream(seed).derive("concept");
    BaseGraph base = gen_base(cfg, root);

    Graph g;
    g.n = cfg.nodes;
    g.classes = cfg.classes;
    g.environments = cfg.environments;
    g.labels = std::move(base.labels);
    g.adjacency = std::move(base.adjacency);

    // Uniform-random environments keep invariant-feature statistics identical
    // across environments; the shift lives only in the spurious block.
    {
        auto rng = root.derive("environments");
        g.env_id.resize(static_cast<std::size_t>(g.n));
        const auto perm = rng.permutation(g.n);
        const auto env_of = chunk_assignment(perm, cfg.environments);
        g.env_id = env_of;
    }

    const int ood_start = cfg.environments / 2;
    g.features = DenseMatrix(g.n, cfg.feature_dim + cfg.spurious_dim);
    for (index_t i = 0; i < g.n; ++i) {
        for (index_t j = 0; j < cfg.feature_dim; ++j) {
            g.features(i, j) = base.features(i, j);
        }
    }
    {
        auto rng = root.derive("spurious");
        for (index_t i = 0; i < g.n; ++i) {
            const bool ood = g.env_id[static_cast<std::size_t>(i)] >= ood_start;
            const double corr = ood ? corr_ood : corr_train;
            const int y = g.labels[static_cast<std::size_t>(i)];
            int encoded;
            if (rng.bernoulli(corr)) {
                encoded = y;
            } else {
                // A uniformly random wrong label.
                encoded = static_cast<int>(rng.below(static_cast<std::uint64_t>(cfg.classes - 1)));
                if (encoded >= y) {
                    ++encoded;
                }
            }
            g.features(i, cfg.feature_dim + encoded) = cfg.spurious_scale;
        }
    }

    g.splits = make_splits(g.env_id, cfg.environments, cfg.train_fraction, root.derive("splits"));
    g.validate();
    return g;
}

} // namespace gnnood
