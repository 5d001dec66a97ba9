#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gnnood/errors.hpp"
#include "gnnood/generators.hpp"

using namespace gnnood;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig cfg;
    cfg.nodes = 400;
    cfg.classes = 3;
    cfg.feature_dim = 5;
    cfg.environments = 4;
    cfg.intra_p = 0.05;
    cfg.inter_p = 0.005;
    return cfg;
}

bool same_graph(const Graph& a, const Graph& b) {
    if (a.n != b.n || a.labels != b.labels || a.env_id != b.env_id) {
        return false;
    }
    if (a.adjacency.pattern().col_idx != b.adjacency.pattern().col_idx) {
        return false;
    }
    for (index_t i = 0; i < a.features.size(); ++i) {
        if (a.features.data()[i] != b.features.data()[i]) {
            return false;
        }
    }
    return a.splits.train == b.splits.train && a.splits.ood_test == b.splits.ood_test;
}

} // namespace

TEST_CASE("covariate generator is deterministic per seed") {
    const auto cfg = small_config();
    CHECK(same_graph(gen_covariate_shift(cfg, 7), gen_covariate_shift(cfg, 7)));
    CHECK(!same_graph(gen_covariate_shift(cfg, 7), gen_covariate_shift(cfg, 8)));
}

TEST_CASE("covariate environments follow degree quantiles") {
    const auto cfg = small_config();
    const Graph g = gen_covariate_shift(cfg, 3);
    const auto deg = g.degrees();

    // Oracle: sort nodes by (degree, id) and chunk into 4 groups.
    std::vector<index_t> order(static_cast<std::size_t>(g.n));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](index_t a, index_t b) {
        return deg[static_cast<std::size_t>(a)] != deg[static_cast<std::size_t>(b)]
                   ? deg[static_cast<std::size_t>(a)] < deg[static_cast<std::size_t>(b)]
                   : a < b;
    });
    for (index_t pos = 0; pos < g.n; ++pos) {
        const int want = static_cast<int>((pos * 4) / g.n);
        CHECK(g.env_id[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] == want);
    }

    // Train environments are {0,1}; OOD environments are {2,3}.
    for (index_t v : g.splits.train) {
        CHECK(g.env_id[static_cast<std::size_t>(v)] < 2);
    }
    for (index_t v : g.splits.ood_val) {
        CHECK(g.env_id[static_cast<std::size_t>(v)] == 2);
    }
    for (index_t v : g.splits.ood_test) {
        CHECK(g.env_id[static_cast<std::size_t>(v)] == 3);
    }

    // Every ood_test node's degree clears every train node's degree band.
    index_t max_train_deg = 0;
    for (index_t v : g.splits.train) {
        max_train_deg = std::max(max_train_deg, deg[static_cast<std::size_t>(v)]);
    }
    index_t min_ood_deg = g.n;
    for (index_t v : g.splits.ood_test) {
        min_ood_deg = std::min(min_ood_deg, deg[static_cast<std::size_t>(v)]);
    }
    CHECK(min_ood_deg >= max_train_deg - 1); // quantile boundary may share a degree value
}

TEST_CASE("generated graphs satisfy all split invariants") {
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        CHECK_NOTHROW(gen_covariate_shift(small_config(), seed).validate());
        auto cfg = small_config();
        cfg.spurious_dim = cfg.classes;
        CHECK_NOTHROW(gen_concept_shift(cfg, 0.9, 0.1, seed).validate());
    }
}

TEST_CASE("concept generator encodes the configured spurious correlations") {
    auto cfg = small_config();
    cfg.nodes = 1000;
    cfg.spurious_dim = cfg.classes;
    const Graph g = gen_concept_shift(cfg, 0.9, 0.1, 11);

    auto agreement = [&](const std::vector<index_t>& mask) {
        index_t hits = 0;
        for (index_t v : mask) {
            // The spurious one-hot block sits after the invariant features.
            int enc = -1;
            for (int c = 0; c < cfg.classes; ++c) {
                if (g.features(v, cfg.feature_dim + c) != 0.0) {
                    enc = c;
                }
            }
            REQUIRE(enc >= 0);
            if (enc == g.labels[static_cast<std::size_t>(v)]) {
                ++hits;
            }
        }
        return static_cast<double>(hits) / static_cast<double>(mask.size());
    };

    CHECK(agreement(g.splits.train) == doctest::Approx(0.9).epsilon(0.04));
    CHECK(agreement(g.splits.ood_test) == doctest::Approx(0.1).epsilon(0.35));

    SUBCASE("no-shift degenerate case has equal agreement across splits") {
        const Graph g2 = gen_concept_shift(cfg, 0.5, 0.5, 12);
        auto agree2 = [&](const std::vector<index_t>& mask) {
            index_t hits = 0;
            for (index_t v : mask) {
                int enc = -1;
                for (int c = 0; c < cfg.classes; ++c) {
                    if (g2.features(v, cfg.feature_dim + c) != 0.0) {
                        enc = c;
                    }
                }
                if (enc == g2.labels[static_cast<std::size_t>(v)]) {
                    ++hits;
                }
            }
            return static_cast<double>(hits) / static_cast<double>(mask.size());
        };
        CHECK(std::fabs(agree2(g2.splits.train) - agree2(g2.splits.ood_test)) < 0.12);
    }
}

TEST_CASE("invariant features are unchanged by the spurious settings") {
    auto cfg = small_config();
    cfg.spurious_dim = cfg.classes;
    const Graph a = gen_concept_shift(cfg, 0.9, 0.1, 21);
    const Graph b = gen_concept_shift(cfg, 0.4, 0.4, 21);
    CHECK(a.labels == b.labels);
    CHECK(a.adjacency.pattern().col_idx == b.adjacency.pattern().col_idx);
    for (index_t i = 0; i < a.n; ++i) {
        for (index_t j = 0; j < cfg.feature_dim; ++j) {
            CHECK(a.features(i, j) == b.features(i, j));
        }
    }
}

TEST_CASE("invariant feature statistics match across environments") {
    auto cfg = small_config();
    cfg.nodes = 2000;
    cfg.spurious_dim = cfg.classes;
    const Graph g = gen_concept_shift(cfg, 0.9, 0.1, 31);
    // Random environment assignment: per-env invariant feature means agree
    // within sampling noise.
    std::vector<double> env_mean(4, 0.0);
    std::vector<index_t> env_count(4, 0);
    for (index_t v = 0; v < g.n; ++v) {
        double s = 0.0;
        for (index_t j = 0; j < cfg.feature_dim; ++j) {
            s += g.features(v, j);
        }
        env_mean[static_cast<std::size_t>(g.env_id[static_cast<std::size_t>(v)])] += s;
        ++env_count[static_cast<std::size_t>(g.env_id[static_cast<std::size_t>(v)])];
    }
    for (int e = 0; e < 4; ++e) {
        env_mean[static_cast<std::size_t>(e)] /= static_cast<double>(env_count[static_cast<std::size_t>(e)]);
    }
    for (int e = 1; e < 4; ++e) {
        CHECK(std::fabs(env_mean[static_cast<std::size_t>(e)] - env_mean[0]) < 0.5);
    }
}

TEST_CASE("generator config errors") {
    auto cfg = small_config();
    SUBCASE("too few environments") {
        cfg.environments = 3;
        CHECK_THROWS_AS(gen_covariate_shift(cfg, 0), ConfigError);
    }
    SUBCASE("fewer nodes than environments") {
        cfg.nodes = 3;
        CHECK_THROWS_AS(gen_covariate_shift(cfg, 0), ConfigError);
    }
    SUBCASE("spurious narrower than classes") {
        cfg.spurious_dim = cfg.classes - 1;
        CHECK_THROWS_AS(gen_concept_shift(cfg, 0.9, 0.1, 0), ConfigError);
    }
    SUBCASE("correlation out of range") {
        cfg.spurious_dim = cfg.classes;
        CHECK_THROWS_AS(gen_concept_shift(cfg, 1.5, 0.1, 0), ConfigError);
    }
}
