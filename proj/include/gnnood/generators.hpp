#pragma once

#include <cstdint>

#include "gnnood/graph.hpp"

namespace gnnood {

// Settings for the synthetic stochastic-block-model generators. Features are
// label-informative Gaussians; edges follow intra/inter-class probabilities.
struct GeneratorConfig {
    index_t nodes = 1000;
    int classes = 4;
    index_t feature_dim = 8;
    int environments = 4;     // first half in-distribution, second half OOD
    double intra_p = 0.02;    // edge probability within a class block
    double inter_p = 0.002;   // edge probability across class blocks
    double center_scale = 1.0; // distance scale of class feature centers
    double noise_sigma = 1.0;  // per-coordinate feature noise

    // Concept-shift extras: one-hot spurious block appended to the features.
    index_t spurious_dim = 0;      // 0 disables the block
    double spurious_scale = 1.0;

    double train_fraction = 0.6;   // of in-distribution nodes; rest split val/test
    void validate() const;
};

// Covariate shift: environments are node-degree quantiles. The top-degree
// half of the environments is held out as OOD (second-highest quantiles to
// ood_val, highest to ood_test); train/iid_* are drawn from the rest.
Graph gen_covariate_shift(const GeneratorConfig& cfg, std::uint64_t seed);

// Concept shift: environments are assigned uniformly at random, so the
// invariant feature block has identical statistics across environments. A
// spurious one-hot block encodes the node's label with probability
// corr_train in training environments and corr_ood in OOD environments;
// otherwise it encodes a uniformly random wrong label.
Graph gen_concept_shift(const GeneratorConfig& cfg, double corr_train, double corr_ood,
                        std::uint64_t seed);

} // namespace gnnood
