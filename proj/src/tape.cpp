#include "gnnood/tape.hpp"

#include <atomic>
#include <cmath>
#include <limits>
#include <string>

#include "gnnood/errors.hpp"

namespace gnnood {

namespace {

enum class Op {
    Leaf,
    MatMul,
    SpmmConst,
    SpmmEdges,
    EdgeScoreSum,
    MaskedRowSoftmax,
    Relu,
    LeakyRelu,
    Add,
    Mul,
    Scale,
    AddBias,
    Dropout,
    PermuteRows,
    ConcatCols,
    Sum,
    SoftmaxXent,
    SoftXent,
    IrmPenalty,
};

std::atomic<std::uint32_t> g_tape_counter{1};

std::string shape_str(const DenseMatrix& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

} // namespace

struct Tape::Node {
    Op op = Op::Leaf;
    DenseMatrix value;
    bool is_param = false;
    bool needs_grad = false;
    std::vector<std::uint32_t> inputs;

    double k = 0.0; // scale factor / leaky slope
    PatternPtr pattern;
    std::shared_ptr<const SparseMatrix> sparse;
    std::shared_ptr<const DenseMatrix> targets;
    std::vector<double> saved;    // dropout multipliers, CE probs, IRM stats
    std::vector<index_t> indices; // masks / permutations
    std::vector<int> labels;
};

Tape::Tape() : id_(g_tape_counter.fetch_add(1)) {}

Tape::~Tape() = default;

std::size_t Tape::node_count() const {
    return nodes_.size();
}

ValueId Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return ValueId{id_, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

void Tape::check_owned(ValueId id) const {
    if (id.tape != id_ || id.node >= nodes_.size()) {
        throw UsageError("Tape: value handle does not belong to this tape");
    }
}

const Tape::Node& Tape::node(ValueId id) const {
    check_owned(id);
    return nodes_[id.node];
}

const DenseMatrix& Tape::value(ValueId id) const {
    return node(id).value;
}

ValueId Tape::constant(DenseMatrix value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

ValueId Tape::parameter(DenseMatrix value) {
    Node n;
    n.value = std::move(value);
    n.is_param = true;
    n.needs_grad = true;
    return push(std::move(n));
}

ValueId Tape::matmul(ValueId a, ValueId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    Node n;
    n.op = Op::MatMul;
    n.value = gnnood::matmul(na.value, nb.value);
    n.inputs = {a.node, b.node};
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n));
}

ValueId Tape::spmm(std::shared_ptr<const SparseMatrix> s, ValueId d) {
    const Node& nd = node(d);
    Node n;
    n.op = Op::SpmmConst;
    n.value = gnnood::spmm(*s, nd.value);
    n.sparse = std::move(s);
    n.inputs = {d.node};
    n.needs_grad = nd.needs_grad;
    return push(std::move(n));
}

ValueId Tape::spmm_edges(PatternPtr pattern, ValueId edge_vals, ValueId d) {
    const Node& nv = node(edge_vals);
    const Node& nd = node(d);
    if (nv.value.rows() != pattern->nnz() || nv.value.cols() != 1) {
        throw ShapeError("spmm_edges: edge values " + shape_str(nv.value) + " for nnz " +
                         std::to_string(pattern->nnz()));
    }
    if (pattern->cols != nd.value.rows()) {
        throw ShapeError("spmm_edges: pattern " + std::to_string(pattern->rows) + "x" +
                         std::to_string(pattern->cols) + " x dense " + shape_str(nd.value));
    }
    Node n;
    n.op = Op::SpmmEdges;
    DenseMatrix out(pattern->rows, nd.value.cols());
    const index_t m = nd.value.cols();
    for (index_t r = 0; r < pattern->rows; ++r) {
        double* orow = out.data() + r * m;
        for (index_t k = pattern->row_ptr[static_cast<std::size_t>(r)];
             k < pattern->row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            const double v = nv.value.data()[k];
            const double* drow = nd.value.data() + pattern->col_idx[static_cast<std::size_t>(k)] * m;
            for (index_t c = 0; c < m; ++c) {
                orow[c] += v * drow[c];
            }
        }
    }
    n.value = std::move(out);
    n.pattern = std::move(pattern);
    n.inputs = {edge_vals.node, d.node};
    n.needs_grad = nv.needs_grad || nd.needs_grad;
    return push(std::move(n));
}

ValueId Tape::edge_score_sum(PatternPtr pattern, ValueId row_feats, ValueId col_feats) {
    const Node& nr = node(row_feats);
    const Node& nc = node(col_feats);
    if (nr.value.cols() != 1 || nc.value.cols() != 1 || nr.value.rows() != pattern->rows ||
        nc.value.rows() != pattern->cols) {
        throw ShapeError("edge_score_sum: features " + shape_str(nr.value) + ", " +
                         shape_str(nc.value) + " for pattern " + std::to_string(pattern->rows) +
                         "x" + std::to_string(pattern->cols));
    }
    Node n;
    n.op = Op::EdgeScoreSum;
    DenseMatrix out(pattern->nnz(), 1);
    for (index_t r = 0; r < pattern->rows; ++r) {
        for (index_t k = pattern->row_ptr[static_cast<std::size_t>(r)];
             k < pattern->row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
            out.data()[k] = nr.value.data()[r] + nc.value.data()[pattern->col_idx[static_cast<std::size_t>(k)]];
        }
    }
    n.value = std::move(out);
    n.pattern = std::move(pattern);
    n.inputs = {row_feats.node, col_feats.node};
    n.needs_grad = nr.needs_grad || nc.needs_grad;
    return push(std::move(n));
}

ValueId Tape::masked_row_softmax(PatternPtr pattern, ValueId edge_vals) {
    const Node& nv = node(edge_vals);
    if (nv.value.rows() != pattern->nnz() || nv.value.cols() != 1) {
        throw ShapeError("masked_row_softmax: edge values " + shape_str(nv.value) + " for nnz " +
                         std::to_string(pattern->nnz()));
    }
    Node n;
    n.op = Op::MaskedRowSoftmax;
    DenseMatrix out(pattern->nnz(), 1);
    for (index_t r = 0; r < pattern->rows; ++r) {
        const index_t lo = pattern->row_ptr[static_cast<std::size_t>(r)];
        const index_t hi = pattern->row_ptr[static_cast<std::size_t>(r) + 1];
        if (lo == hi) {
            throw ProtocolError("masked_row_softmax: row " + std::to_string(r) +
                                " has no stored entries (self-loops expected)");
        }
        double mx = -std::numeric_limits<double>::infinity();
        for (index_t k = lo; k < hi; ++k) {
            mx = std::max(mx, nv.value.data()[k]);
        }
        double denom = 0.0;
        for (index_t k = lo; k < hi; ++k) {
            const double e = std::exp(nv.value.data()[k] - mx);
            out.data()[k] = e;
            denom += e;
        }
        for (index_t k = lo; k < hi; ++k) {
            out.data()[k] /= denom;
        }
    }
    n.value = std::move(out);
    n.pattern = std::move(pattern);
    n.inputs = {edge_vals.node};
    n.needs_grad = nv.needs_grad;
    return push(std::move(n));
}

ValueId Tape::relu(ValueId x) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::Relu;
    n.value = nx.value;
    for (double& v : n.value.raw()) {
        if (v < 0.0) {
            v = 0.0;
        }
    }
    n.inputs = {x.node};
    n.needs_grad = nx.needs_grad;
    return push(std::move(n));
}

ValueId Tape::leaky_relu(ValueId x, double slope) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::LeakyRelu;
    n.k = slope;
    n.value = nx.value;
    for (double& v : n.value.raw()) {
        if (v < 0.0) {
            v *= slope;
        }
    }
    n.inputs = {x.node};
    n.needs_grad = nx.needs_grad;
    return push(std::move(n));
}

ValueId Tape::add(ValueId a, ValueId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value)) {
        throw ShapeError("add: " + shape_str(na.value) + " vs " + shape_str(nb.value));
    }
    Node n;
    n.op = Op::Add;
    n.value = na.value;
    const double* bp = nb.value.data();
    double* vp = n.value.data();
    for (index_t i = 0; i < n.value.size(); ++i) {
        vp[i] += bp[i];
    }
    n.inputs = {a.node, b.node};
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n));
}

ValueId Tape::mul(ValueId a, ValueId b) {
    const Node& na = node(a);
    const Node& nb = node(b);
    if (!na.value.same_shape(nb.value)) {
        throw ShapeError("mul: " + shape_str(na.value) + " vs " + shape_str(nb.value));
    }
    Node n;
    n.op = Op::Mul;
    n.value = na.value;
    const double* bp = nb.value.data();
    double* vp = n.value.data();
    for (index_t i = 0; i < n.value.size(); ++i) {
        vp[i] *= bp[i];
    }
    n.inputs = {a.node, b.node};
    n.needs_grad = na.needs_grad || nb.needs_grad;
    return push(std::move(n));
}

ValueId Tape::scale(ValueId x, double k) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::Scale;
    n.k = k;
    n.value = nx.value;
    for (double& v : n.value.raw()) {
        v *= k;
    }
    n.inputs = {x.node};
    n.needs_grad = nx.needs_grad;
    return push(std::move(n));
}

ValueId Tape::add_bias(ValueId x, ValueId bias) {
    const Node& nx = node(x);
    const Node& nb = node(bias);
    if (nb.value.rows() != 1 || nb.value.cols() != nx.value.cols()) {
        throw ShapeError("add_bias: bias " + shape_str(nb.value) + " for " + shape_str(nx.value));
    }
    Node n;
    n.op = Op::AddBias;
    n.value = nx.value;
    for (index_t r = 0; r < n.value.rows(); ++r) {
        double* row = n.value.data() + r * n.value.cols();
        for (index_t c = 0; c < n.value.cols(); ++c) {
            row[c] += nb.value.data()[c];
        }
    }
    n.inputs = {x.node, bias.node};
    n.needs_grad = nx.needs_grad || nb.needs_grad;
    return push(std::move(n));
}

ValueId Tape::dropout(ValueId x, double rate, RngStream stream, bool training) {
    if (!(rate >= 0.0 && rate < 1.0)) {
        throw ConfigError("dropout: rate " + std::to_string(rate) + " outside [0, 1)");
    }
    const Node& nx = node(x);
    Node n;
    n.op = Op::Dropout;
    n.value = nx.value;
    if (training && rate > 0.0) {
        const double keep_scale = 1.0 / (1.0 - rate);
        n.saved.resize(static_cast<std::size_t>(nx.value.size()));
        double* vp = n.value.data();
        for (index_t i = 0; i < nx.value.size(); ++i) {
            const double m = stream.bernoulli(rate) ? 0.0 : keep_scale;
            n.saved[static_cast<std::size_t>(i)] = m;
            vp[i] *= m;
        }
    }
    n.inputs = {x.node};
    n.needs_grad = nx.needs_grad;
    return push(std::move(n));
}

ValueId Tape::permute_rows(ValueId x, std::vector<index_t> perm) {
    const Node& nx = node(x);
    if (perm.size() != static_cast<std::size_t>(nx.value.rows())) {
        throw ShapeError("permute_rows: permutation length " + std::to_string(perm.size()) +
                         " for " + std::to_string(nx.value.rows()) + " rows");
    }
    Node n;
    n.op = Op::PermuteRows;
    DenseMatrix out(nx.value.rows(), nx.value.cols());
    const index_t m = nx.value.cols();
    for (index_t r = 0; r < out.rows(); ++r) {
        const index_t src = perm[static_cast<std::size_t>(r)];
        if (src < 0 || src >= nx.value.rows()) {
            throw UsageError("permute_rows: index " + std::to_string(src) + " out of range");
        }
        const double* in = nx.value.data() + src * m;
        double* o = out.data() + r * m;
        for (index_t c = 0; c < m; ++c) {
            o[c] = in[c];
        }
    }
    n.value = std::move(out);
    n.indices = std::move(perm);
    n.inputs = {x.node};
    n.needs_grad = nx.needs_grad;
    return push(std::move(n));
}

ValueId Tape::concat_cols(const std::vector<ValueId>& xs) {
    if (xs.empty()) {
        throw UsageError("concat_cols: no inputs");
    }
    index_t total = 0;
    const index_t rows = node(xs[0]).value.rows();
    for (ValueId x : xs) {
        const Node& nx = node(x);
        if (nx.value.rows() != rows) {
            throw ShapeError("concat_cols: row mismatch " + shape_str(nx.value));
        }
        total += nx.value.cols();
    }
    Node n;
    n.op = Op::ConcatCols;
    DenseMatrix out(rows, total);
    index_t off = 0;
    for (ValueId x : xs) {
        const Node& nx = node(x);
        for (index_t r = 0; r < rows; ++r) {
            const double* in = nx.value.data() + r * nx.value.cols();
            double* o = out.data() + r * total + off;
            for (index_t c = 0; c < nx.value.cols(); ++c) {
                o[c] = in[c];
            }
        }
        off += nx.value.cols();
        n.inputs.push_back(x.node);
        n.needs_grad = n.needs_grad || nx.needs_grad;
    }
    n.value = std::move(out);
    return push(std::move(n));
}

ValueId Tape::sum(ValueId x) {
    const Node& nx = node(x);
    Node n;
    n.op = Op::Sum;
    double acc = 0.0;
    for (double v : nx.value.raw()) {
        acc += v;
    }
    n.value = DenseMatrix(1, 1, {acc});
    n.inputs = {x.node};
    n.needs_grad = nx.needs_grad;
    return push(std::move(n));
}

ValueId Tape::softmax_cross_entropy(ValueId logits, const std::vector<int>& labels,
                                    const std::vector<index_t>& mask) {
    const Node& nl = node(logits);
    if (mask.empty()) {
        throw ProtocolError("softmax_cross_entropy: empty mask");
    }
    const index_t c = nl.value.cols();
    Node n;
    n.op = Op::SoftmaxXent;
    n.indices = mask;
    n.labels = labels;
    n.saved.resize(mask.size() * static_cast<std::size_t>(c));
    double total = 0.0;
    for (std::size_t mi = 0; mi < mask.size(); ++mi) {
        const index_t r = mask[mi];
        if (r < 0 || r >= nl.value.rows()) {
            throw ProtocolError("softmax_cross_entropy: masked row " + std::to_string(r) +
                                " out of range");
        }
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= c) {
            throw DataError("softmax_cross_entropy: label " + std::to_string(y) + " for row " +
                            std::to_string(r) + " outside [0, " + std::to_string(c) + ")");
        }
        const double* z = nl.value.data() + r * c;
        double mx = z[0];
        for (index_t j = 1; j < c; ++j) {
            mx = std::max(mx, z[j]);
        }
        double denom = 0.0;
        for (index_t j = 0; j < c; ++j) {
            denom += std::exp(z[j] - mx);
        }
        const double lse = mx + std::log(denom);
        total += lse - z[y];
        double* probs = n.saved.data() + mi * static_cast<std::size_t>(c);
        for (index_t j = 0; j < c; ++j) {
            probs[j] = std::exp(z[j] - lse);
        }
    }
    n.value = DenseMatrix(1, 1, {total / static_cast<double>(mask.size())});
    n.inputs = {logits.node};
    n.needs_grad = nl.needs_grad;
    return push(std::move(n));
}

ValueId Tape::soft_cross_entropy(ValueId logits, std::shared_ptr<const DenseMatrix> targets,
                                 const std::vector<index_t>& mask) {
    const Node& nl = node(logits);
    if (mask.empty()) {
        throw ProtocolError("soft_cross_entropy: empty mask");
    }
    if (!targets->same_shape(nl.value)) {
        throw ShapeError("soft_cross_entropy: targets " + shape_str(*targets) + " vs logits " +
                         shape_str(nl.value));
    }
    const index_t c = nl.value.cols();
    Node n;
    n.op = Op::SoftXent;
    n.indices = mask;
    n.targets = targets;
    n.saved.resize(mask.size() * static_cast<std::size_t>(c));
    double total = 0.0;
    for (std::size_t mi = 0; mi < mask.size(); ++mi) {
        const index_t r = mask[mi];
        const double* z = nl.value.data() + r * c;
        const double* t = targets->data() + r * c;
        double mx = z[0];
        for (index_t j = 1; j < c; ++j) {
            mx = std::max(mx, z[j]);
        }
        double denom = 0.0;
        for (index_t j = 0; j < c; ++j) {
            denom += std::exp(z[j] - mx);
        }
        const double lse = mx + std::log(denom);
        double* probs = n.saved.data() + mi * static_cast<std::size_t>(c);
        for (index_t j = 0; j < c; ++j) {
            probs[j] = std::exp(z[j] - lse);
            total += t[j] * (lse - z[j]);
        }
    }
    n.value = DenseMatrix(1, 1, {total / static_cast<double>(mask.size())});
    n.inputs = {logits.node};
    n.needs_grad = nl.needs_grad;
    return push(std::move(n));
}

ValueId Tape::irm_penalty(ValueId logits, const std::vector<int>& labels,
                          const std::vector<index_t>& env_rows) {
    const Node& nl = node(logits);
    if (env_rows.empty()) {
        throw ProtocolError("irm_penalty: empty environment");
    }
    const index_t c = nl.value.cols();
    const double inv_m = 1.0 / static_cast<double>(env_rows.size());
    Node n;
    n.op = Op::IrmPenalty;
    n.indices = env_rows;
    n.labels = labels;
    // saved layout: per masked row, c probabilities followed by p.z; final
    // slot holds the risk derivative D = dR/dw at w=1.
    n.saved.resize(env_rows.size() * static_cast<std::size_t>(c + 1) + 1);
    double d_risk = 0.0;
    for (std::size_t mi = 0; mi < env_rows.size(); ++mi) {
        const index_t r = env_rows[mi];
        const int y = labels[static_cast<std::size_t>(r)];
        if (y < 0 || y >= c) {
            throw DataError("irm_penalty: label out of range for row " + std::to_string(r));
        }
        const double* z = nl.value.data() + r * c;
        double mx = z[0];
        for (index_t j = 1; j < c; ++j) {
            mx = std::max(mx, z[j]);
        }
        double denom = 0.0;
        for (index_t j = 0; j < c; ++j) {
            denom += std::exp(z[j] - mx);
        }
        const double lse = mx + std::log(denom);
        double* row_saved = n.saved.data() + mi * static_cast<std::size_t>(c + 1);
        double pz = 0.0;
        for (index_t j = 0; j < c; ++j) {
            const double p = std::exp(z[j] - lse);
            row_saved[j] = p;
            pz += p * z[j];
        }
        row_saved[c] = pz;
        d_risk += (pz - z[y]) * inv_m;
    }
    n.saved.back() = d_risk;
    n.value = DenseMatrix(1, 1, {d_risk * d_risk});
    n.inputs = {logits.node};
    n.needs_grad = nl.needs_grad;
    return push(std::move(n));
}

void Tape::backward(ValueId loss) {
    check_owned(loss);
    if (ran_backward_) {
        throw UsageError("backward: already run on this tape");
    }
    const Node& ln = nodes_[loss.node];
    if (ln.value.rows() != 1 || ln.value.cols() != 1) {
        throw UsageError("backward: loss must be a 1x1 scalar, got " + shape_str(ln.value));
    }
    ran_backward_ = true;

    grads_.resize(nodes_.size());
    // Parameters always get a zero gradient so unused ones read as exact zero.
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
        if (nodes_[i].is_param) {
            grads_[i] = DenseMatrix(nodes_[i].value.rows(), nodes_[i].value.cols());
        }
    }

    std::vector<char> live(nodes_.size(), 0);
    live[loss.node] = 1;
    if (grads_[loss.node].size() == 0) {
        grads_[loss.node] = DenseMatrix(1, 1);
    }
    grads_[loss.node](0, 0) = 1.0;

    auto ensure = [&](std::uint32_t idx) -> DenseMatrix& {
        if (!live[idx]) {
            live[idx] = 1;
            if (grads_[idx].size() == 0) {
                grads_[idx] = DenseMatrix(nodes_[idx].value.rows(), nodes_[idx].value.cols());
            }
        }
        return grads_[idx];
    };

    for (std::uint32_t idx = loss.node + 1; idx-- > 0;) {
        Node& nd = nodes_[idx];
        if (!live[idx] || !nd.needs_grad || nd.op == Op::Leaf) {
            continue;
        }
        const DenseMatrix& g = grads_[idx];
        switch (nd.op) {
        case Op::Leaf:
            break;
        case Op::MatMul: {
            const DenseMatrix& a = nodes_[nd.inputs[0]].value;
            const DenseMatrix& b = nodes_[nd.inputs[1]].value;
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& ga = ensure(nd.inputs[0]);
                // ga += g * b^T
                for (index_t i = 0; i < a.rows(); ++i) {
                    for (index_t j = 0; j < a.cols(); ++j) {
                        double acc = 0.0;
                        for (index_t c = 0; c < b.cols(); ++c) {
                            acc += g(i, c) * b(j, c);
                        }
                        ga(i, j) += acc;
                    }
                }
            }
            if (nodes_[nd.inputs[1]].needs_grad) {
                DenseMatrix& gb = ensure(nd.inputs[1]);
                // gb += a^T * g
                for (index_t j = 0; j < b.rows(); ++j) {
                    for (index_t c = 0; c < b.cols(); ++c) {
                        double acc = 0.0;
                        for (index_t i = 0; i < a.rows(); ++i) {
                            acc += a(i, j) * g(i, c);
                        }
                        gb(j, c) += acc;
                    }
                }
            }
            break;
        }
        case Op::SpmmConst: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gd = ensure(nd.inputs[0]);
                const auto& p = nd.sparse->pattern();
                const auto& vals = nd.sparse->values();
                const index_t m = g.cols();
                // gd += s^T * g, iterating stored entries in row order so the
                // accumulation order is fixed.
                for (index_t r = 0; r < p.rows; ++r) {
                    const double* grow = g.data() + r * m;
                    for (index_t k = p.row_ptr[static_cast<std::size_t>(r)];
                         k < p.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
                        const double v = vals[static_cast<std::size_t>(k)];
                        double* drow = gd.data() + p.col_idx[static_cast<std::size_t>(k)] * m;
                        for (index_t c = 0; c < m; ++c) {
                            drow[c] += v * grow[c];
                        }
                    }
                }
            }
            break;
        }
        case Op::SpmmEdges: {
            const auto& p = *nd.pattern;
            const DenseMatrix& vals = nodes_[nd.inputs[0]].value;
            const DenseMatrix& d = nodes_[nd.inputs[1]].value;
            const index_t m = d.cols();
            const bool want_vals = nodes_[nd.inputs[0]].needs_grad;
            const bool want_d = nodes_[nd.inputs[1]].needs_grad;
            DenseMatrix* gv = want_vals ? &ensure(nd.inputs[0]) : nullptr;
            DenseMatrix* gd = want_d ? &ensure(nd.inputs[1]) : nullptr;
            for (index_t r = 0; r < p.rows; ++r) {
                const double* grow = g.data() + r * m;
                for (index_t k = p.row_ptr[static_cast<std::size_t>(r)];
                     k < p.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
                    const index_t j = p.col_idx[static_cast<std::size_t>(k)];
                    if (want_vals) {
                        double acc = 0.0;
                        const double* drow = d.data() + j * m;
                        for (index_t c = 0; c < m; ++c) {
                            acc += grow[c] * drow[c];
                        }
                        gv->data()[k] += acc;
                    }
                    if (want_d) {
                        const double v = vals.data()[k];
                        double* drow = gd->data() + j * m;
                        for (index_t c = 0; c < m; ++c) {
                            drow[c] += v * grow[c];
                        }
                    }
                }
            }
            break;
        }
        case Op::EdgeScoreSum: {
            const auto& p = *nd.pattern;
            const bool want_r = nodes_[nd.inputs[0]].needs_grad;
            const bool want_c = nodes_[nd.inputs[1]].needs_grad;
            DenseMatrix* gr = want_r ? &ensure(nd.inputs[0]) : nullptr;
            DenseMatrix* gc = want_c ? &ensure(nd.inputs[1]) : nullptr;
            for (index_t r = 0; r < p.rows; ++r) {
                for (index_t k = p.row_ptr[static_cast<std::size_t>(r)];
                     k < p.row_ptr[static_cast<std::size_t>(r) + 1]; ++k) {
                    const double ge = g.data()[k];
                    if (want_r) {
                        gr->data()[r] += ge;
                    }
                    if (want_c) {
                        gc->data()[p.col_idx[static_cast<std::size_t>(k)]] += ge;
                    }
                }
            }
            break;
        }
        case Op::MaskedRowSoftmax: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gs = ensure(nd.inputs[0]);
                const auto& p = *nd.pattern;
                const DenseMatrix& alpha = nd.value;
                for (index_t r = 0; r < p.rows; ++r) {
                    const index_t lo = p.row_ptr[static_cast<std::size_t>(r)];
                    const index_t hi = p.row_ptr[static_cast<std::size_t>(r) + 1];
                    double dot = 0.0;
                    for (index_t k = lo; k < hi; ++k) {
                        dot += alpha.data()[k] * g.data()[k];
                    }
                    for (index_t k = lo; k < hi; ++k) {
                        gs.data()[k] += alpha.data()[k] * (g.data()[k] - dot);
                    }
                }
            }
            break;
        }
        case Op::Relu: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gx = ensure(nd.inputs[0]);
                const DenseMatrix& x = nodes_[nd.inputs[0]].value;
                for (index_t i = 0; i < x.size(); ++i) {
                    if (x.data()[i] > 0.0) {
                        gx.data()[i] += g.data()[i];
                    }
                }
            }
            break;
        }
        case Op::LeakyRelu: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gx = ensure(nd.inputs[0]);
                const DenseMatrix& x = nodes_[nd.inputs[0]].value;
                for (index_t i = 0; i < x.size(); ++i) {
                    gx.data()[i] += g.data()[i] * (x.data()[i] > 0.0 ? 1.0 : nd.k);
                }
            }
            break;
        }
        case Op::Add: {
            for (int s = 0; s < 2; ++s) {
                if (nodes_[nd.inputs[static_cast<std::size_t>(s)]].needs_grad) {
                    DenseMatrix& gi = ensure(nd.inputs[static_cast<std::size_t>(s)]);
                    for (index_t i = 0; i < gi.size(); ++i) {
                        gi.data()[i] += g.data()[i];
                    }
                }
            }
            break;
        }
        case Op::Mul: {
            for (int s = 0; s < 2; ++s) {
                if (nodes_[nd.inputs[static_cast<std::size_t>(s)]].needs_grad) {
                    DenseMatrix& gi = ensure(nd.inputs[static_cast<std::size_t>(s)]);
                    const DenseMatrix& other = nodes_[nd.inputs[static_cast<std::size_t>(1 - s)]].value;
                    for (index_t i = 0; i < gi.size(); ++i) {
                        gi.data()[i] += g.data()[i] * other.data()[i];
                    }
                }
            }
            break;
        }
        case Op::Scale: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gx = ensure(nd.inputs[0]);
                for (index_t i = 0; i < gx.size(); ++i) {
                    gx.data()[i] += g.data()[i] * nd.k;
                }
            }
            break;
        }
        case Op::AddBias: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gx = ensure(nd.inputs[0]);
                for (index_t i = 0; i < gx.size(); ++i) {
                    gx.data()[i] += g.data()[i];
                }
            }
            if (nodes_[nd.inputs[1]].needs_grad) {
                DenseMatrix& gb = ensure(nd.inputs[1]);
                const index_t m = nd.value.cols();
                for (index_t r = 0; r < nd.value.rows(); ++r) {
                    const double* grow = g.data() + r * m;
                    for (index_t c = 0; c < m; ++c) {
                        gb.data()[c] += grow[c];
                    }
                }
            }
            break;
        }
        case Op::Dropout: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gx = ensure(nd.inputs[0]);
                if (nd.saved.empty()) {
                    for (index_t i = 0; i < gx.size(); ++i) {
                        gx.data()[i] += g.data()[i];
                    }
                } else {
                    for (index_t i = 0; i < gx.size(); ++i) {
                        gx.data()[i] += g.data()[i] * nd.saved[static_cast<std::size_t>(i)];
                    }
                }
            }
            break;
        }
        case Op::PermuteRows: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gx = ensure(nd.inputs[0]);
                const index_t m = nd.value.cols();
                for (index_t r = 0; r < nd.value.rows(); ++r) {
                    const index_t src = nd.indices[static_cast<std::size_t>(r)];
                    const double* grow = g.data() + r * m;
                    double* grad_row = gx.data() + src * m;
                    for (index_t c = 0; c < m; ++c) {
                        grad_row[c] += grow[c];
                    }
                }
            }
            break;
        }
        case Op::ConcatCols: {
            index_t off = 0;
            for (std::uint32_t in : nd.inputs) {
                const DenseMatrix& x = nodes_[in].value;
                if (nodes_[in].needs_grad) {
                    DenseMatrix& gx = ensure(in);
                    for (index_t r = 0; r < x.rows(); ++r) {
                        const double* grow = g.data() + r * nd.value.cols() + off;
                        double* xrow = gx.data() + r * x.cols();
                        for (index_t c = 0; c < x.cols(); ++c) {
                            xrow[c] += grow[c];
                        }
                    }
                }
                off += x.cols();
            }
            break;
        }
        case Op::Sum: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gx = ensure(nd.inputs[0]);
                const double gv = g(0, 0);
                for (index_t i = 0; i < gx.size(); ++i) {
                    gx.data()[i] += gv;
                }
            }
            break;
        }
        case Op::SoftmaxXent: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gz = ensure(nd.inputs[0]);
                const index_t c = gz.cols();
                const double gv = g(0, 0) / static_cast<double>(nd.indices.size());
                for (std::size_t mi = 0; mi < nd.indices.size(); ++mi) {
                    const index_t r = nd.indices[mi];
                    const int y = nd.labels[static_cast<std::size_t>(r)];
                    const double* probs = nd.saved.data() + mi * static_cast<std::size_t>(c);
                    double* grow = gz.data() + r * c;
                    for (index_t j = 0; j < c; ++j) {
                        grow[j] += gv * (probs[j] - (j == y ? 1.0 : 0.0));
                    }
                }
            }
            break;
        }
        case Op::SoftXent: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gz = ensure(nd.inputs[0]);
                const index_t c = gz.cols();
                const double gv = g(0, 0) / static_cast<double>(nd.indices.size());
                for (std::size_t mi = 0; mi < nd.indices.size(); ++mi) {
                    const index_t r = nd.indices[mi];
                    const double* probs = nd.saved.data() + mi * static_cast<std::size_t>(c);
                    const double* t = nd.targets->data() + r * c;
                    double* grow = gz.data() + r * c;
                    // For targets summing to s: d/dz = s*p - t.
                    double tsum = 0.0;
                    for (index_t j = 0; j < c; ++j) {
                        tsum += t[j];
                    }
                    for (index_t j = 0; j < c; ++j) {
                        grow[j] += gv * (tsum * probs[j] - t[j]);
                    }
                }
            }
            break;
        }
        case Op::IrmPenalty: {
            if (nodes_[nd.inputs[0]].needs_grad) {
                DenseMatrix& gz = ensure(nd.inputs[0]);
                const index_t c = gz.cols();
                const double d_risk = nd.saved.back();
                const double inv_m = 1.0 / static_cast<double>(nd.indices.size());
                const double gv = g(0, 0) * 2.0 * d_risk * inv_m;
                for (std::size_t mi = 0; mi < nd.indices.size(); ++mi) {
                    const index_t r = nd.indices[mi];
                    const int y = nd.labels[static_cast<std::size_t>(r)];
                    const double* row_saved = nd.saved.data() + mi * static_cast<std::size_t>(c + 1);
                    const double pz = row_saved[c];
                    const double* z = nodes_[nd.inputs[0]].value.data() + r * c;
                    double* grow = gz.data() + r * c;
                    // dD/dz_a = (1/m) [p_a + p_a (z_a - p.z) - 1{a=y}]
                    for (index_t j = 0; j < c; ++j) {
                        const double p = row_saved[j];
                        grow[j] += gv * (p + p * (z[j] - pz) - (j == y ? 1.0 : 0.0));
                    }
                }
            }
            break;
        }
        }
    }
}

const DenseMatrix& Tape::grad(ValueId param) const {
    check_owned(param);
    if (!ran_backward_) {
        throw UsageError("grad: backward has not been run");
    }
    if (!nodes_[param.node].is_param) {
        throw UsageError("grad: handle is not a parameter");
    }
    return grads_[param.node];
}

} // namespace gnnood
