#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "gnnood/graph.hpp"
#include "gnnood/matrix.hpp"
#include "gnnood/rng.hpp"
#include "gnnood/tape.hpp"

namespace gnnood {

enum class ModelKind { Gcn, GcnMinus, Gat, Sgc, Appnp, Dgat };

const char* to_string(ModelKind k);
ModelKind model_kind_from_string(const std::string& s);

// Architecture tag plus hyperparameters; shapes of every parameter follow
// from (spec, input dim, classes).
struct ModelSpec {
    ModelKind kind = ModelKind::Gcn;
    int layers = 2;      // conv depth; doubles as MLP depth and propagation
                         // count K for the decoupled models
    int hidden = 100;
    int heads = 1;       // GAT / DGat
    double beta = 0.1;   // teleport probability (APPNP / DGat)
    double gamma = 0.5;  // propagation blend (DGat)
    double dropout = 0.0;
    double leaky_slope = 0.2;
    // Appends a linear classifier after the architecture's own output; only
    // meaningful for the headless kinds (GAT/SGC/APPNP/DGat). GCN has its
    // native head, GCN-- is the no-head variant by definition.
    bool linear_head = false;

    void validate() const;
};

struct ModelParams {
    std::vector<std::string> names;
    std::vector<DenseMatrix> values;

    index_t total_count() const;
    index_t find(const std::string& name) const; // -1 if absent
};

// Glorot-uniform weights (bound sqrt(6/(fan_in+fan_out))), zero biases,
// deterministic per seed.
ModelParams init_params(const ModelSpec& spec, index_t d_in, int classes, std::uint64_t seed);

enum class Mode { Train, Eval };

// Handles into the tape after building a forward pass.
struct ForwardHandles {
    ValueId logits{};
    std::vector<ValueId> params; // aligned with ModelParams order

    // Linear-head models only: the representation fed to the classifier and
    // the classifier parameters, so training strategies can re-run the head
    // on a modified representation.
    bool has_head = false;
    ValueId head_input{};
    ValueId head_weight{};
    ValueId head_bias{};

    // Row-stochastic attention outputs (per-head softmax results and DGat's
    // averaged P), for invariant checks.
    std::vector<ValueId> row_stochastic_edges;
    // DGat's blended propagation values (1-gamma) P + gamma A_hat.
    ValueId blend_edges{};
    bool has_blend = false;
    PatternPtr attention_pattern;
};

// Builds the forward pass for any of the six architectures on the given
// tape. mode controls dropout only; a_hat must be normalize_adjacency(g).
ForwardHandles forward_on_tape(Tape& tape, const ModelSpec& spec, const ModelParams& params,
                               const Graph& g, std::shared_ptr<const SparseMatrix> a_hat,
                               Mode mode, RngStream dropout_rng);

// Convenience dispatch: runs the forward on a private tape and returns logits.
DenseMatrix forward(const ModelSpec& spec, const ModelParams& params, const Graph& g,
                    std::shared_ptr<const SparseMatrix> a_hat, Mode mode, RngStream dropout_rng);

// K applications of a_hat to x with plain kernels (never materializes the
// matrix power).
DenseMatrix propagate(const SparseMatrix& a_hat, const DenseMatrix& x, int steps);

} // namespace gnnood
