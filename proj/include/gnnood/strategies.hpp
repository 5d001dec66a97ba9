#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gnnood/graph.hpp"
#include "gnnood/models.hpp"

namespace gnnood {

enum class Strategy { Erm, Irm, Vrex, GroupDro, GraphMixup };

const char* to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

struct TrainPlan {
    Strategy strategy = Strategy::Erm;
    int epochs = 200;
    double lr = 1e-2;
    double weight_decay = 0.0;
    double penalty_weight = 1.0; // lambda for IRM / VREx
    double group_step = 1.0;     // eta_g for GroupDRO
    double mixup_alpha = 1.0;    // Beta(alpha, alpha) parameter
    std::uint64_t seed = 0;

    void validate() const;
};

// Per-environment train-node lists (ascending node order); empty
// environments are dropped.
struct EnvBatch {
    std::vector<int> env_ids;
    std::vector<std::vector<index_t>> nodes;
};
EnvBatch make_env_batch(const Graph& g);

// Population variance of per-environment risks; zero iff all risks equal.
double vrex_penalty(const std::vector<double>& risks);

// Exponentiated-gradient ascent on the group simplex:
// q_e <- q_e * exp(eta * R_e), renormalized; weighted loss uses the updated
// weights.
struct GroupDroUpdate {
    std::vector<double> weights;
    double weighted_loss;
};
GroupDroUpdate groupdro_step(const std::vector<double>& risks, const std::vector<double>& weights,
                             double eta);

// Row mixing for Graph-Mixup: h~[i] = lambda h[i] + (1-lambda) h[pi(i)] for
// train nodes (identity elsewhere), soft labels mixed the same way.
std::vector<index_t> mixup_permutation(index_t n, const std::vector<index_t>& train_mask,
                                       std::uint64_t pairing_seed);
struct MixupResult {
    DenseMatrix hidden;
    DenseMatrix soft_labels;
};
MixupResult graph_mixup(const DenseMatrix& hidden, const DenseMatrix& labels_onehot,
                        const std::vector<index_t>& train_mask, double lambda,
                        std::uint64_t pairing_seed);

DenseMatrix labels_to_onehot(const std::vector<int>& labels, int classes);

struct EpochStats {
    double loss = 0.0;
    double iid_val_acc = 0.0;
};

struct TrainResult {
    ModelParams params; // epoch with the best IID-validation accuracy
    int best_epoch = -1; // 1-based
    double best_iid_val_acc = 0.0;
    std::vector<EpochStats> trace;
};

// Full-batch training with Adam under the plan's strategy. Deterministic per
// seed; throws NumericalError if the loss goes non-finite.
TrainResult train_model(const ModelSpec& spec, const TrainPlan& plan, const Graph& g);

struct EvalResult {
    double train_acc = 0.0;
    double iid_val_acc = 0.0;
    double iid_test_acc = 0.0;
    double ood_val_acc = 0.0;
    double ood_test_acc = 0.0;
};
EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const Graph& g);

} // namespace gnnood
