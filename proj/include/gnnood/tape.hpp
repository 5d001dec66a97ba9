#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "gnnood/matrix.hpp"
#include "gnnood/rng.hpp"

namespace gnnood {

// Handle to a value recorded on a Tape. Only valid for the tape that issued it.
struct ValueId {
    std::uint32_t tape = 0;
    std::uint32_t node = 0;
};

// Reverse-mode tape over a fixed operation set. Values are dense matrices
// (edge-value vectors are stored as nnz x 1); sparse structure enters through
// patterns attached to the ops. A tape is single-owner: build the forward
// pass, call backward(loss) once, read gradients, discard.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    ValueId constant(DenseMatrix value);
    ValueId parameter(DenseMatrix value);

    const DenseMatrix& value(ValueId id) const;

    ValueId matmul(ValueId a, ValueId b);
    // out = s * d with s a fixed (non-learnable) sparse matrix.
    ValueId spmm(std::shared_ptr<const SparseMatrix> s, ValueId d);
    // out[i,:] = sum over stored (i,j) of edge_vals[e] * d[j,:].
    ValueId spmm_edges(PatternPtr pattern, ValueId edge_vals, ValueId d);
    // Per stored entry e=(i,j): out[e] = row_feats[i] + col_feats[j];
    // row_feats/col_feats are N x 1. Used for pairwise attention scores.
    ValueId edge_score_sum(PatternPtr pattern, ValueId row_feats, ValueId col_feats);
    // Softmax of edge values within each row of the pattern, stabilized by
    // per-row max subtraction. Every row must have at least one stored entry.
    ValueId masked_row_softmax(PatternPtr pattern, ValueId edge_vals);

    ValueId relu(ValueId x);
    ValueId leaky_relu(ValueId x, double slope);
    ValueId add(ValueId a, ValueId b);
    ValueId mul(ValueId a, ValueId b); // elementwise
    ValueId scale(ValueId x, double k);
    // x is N x d, bias is 1 x d broadcast over rows.
    ValueId add_bias(ValueId x, ValueId bias);
    // Inverted dropout: in training mode surviving entries are scaled by
    // 1/(1-rate); in eval mode the op is the identity. rate in [0, 1).
    ValueId dropout(ValueId x, double rate, RngStream stream, bool training);
    // out[i,:] = x[perm[i],:]; perm must be a permutation of row indices.
    ValueId permute_rows(ValueId x, std::vector<index_t> perm);
    ValueId concat_cols(const std::vector<ValueId>& xs);
    ValueId sum(ValueId x); // 1 x 1

    // Mean negative log-likelihood over the masked rows, log-sum-exp
    // stabilized. labels[i] must be in [0, cols) for every masked row.
    ValueId softmax_cross_entropy(ValueId logits, const std::vector<int>& labels,
                                  const std::vector<index_t>& mask);
    // Soft-target variant; each masked target row should sum to 1.
    ValueId soft_cross_entropy(ValueId logits, std::shared_ptr<const DenseMatrix> targets,
                               const std::vector<index_t>& mask);
    // IRMv1 penalty for one environment: squared derivative at w=1 of the
    // mean cross-entropy of w-scaled logits over the given rows. The backward
    // rule encodes the second-order term analytically.
    ValueId irm_penalty(ValueId logits, const std::vector<int>& labels,
                        const std::vector<index_t>& env_rows);

    // Reverse sweep from a scalar loss. May be called once per tape.
    // Gradients of parameters not reached by the loss are exactly zero.
    void backward(ValueId loss);

    // Gradient of the last backward() loss w.r.t. the given parameter.
    const DenseMatrix& grad(ValueId param) const;

    std::size_t node_count() const;

private:
    struct Node;
    ValueId push(Node node);
    const Node& node(ValueId id) const;
    void check_owned(ValueId id) const;

    std::uint32_t id_;
    std::vector<Node> nodes_;
    std::vector<DenseMatrix> grads_;
    bool ran_backward_ = false;
};

} // namespace gnnood
