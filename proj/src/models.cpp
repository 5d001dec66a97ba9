#include "gnnood/models.hpp"

#include <cmath>

#include "gnnood/errors.hpp"

namespace gnnood {

const char* to_string(ModelKind k) {
    switch (k) {
    case ModelKind::Gcn:
        return "GCN";
    case ModelKind::GcnMinus:
        return "GCN--";
    case ModelKind::Gat:
        return "GAT";
    case ModelKind::Sgc:
        return "SGC";
    case ModelKind::Appnp:
        return "APPNP";
    case ModelKind::Dgat:
        return "DGat";
    }
    return "?";
}

ModelKind model_kind_from_string(const std::string& s) {
    if (s == "GCN" || s == "gcn") return ModelKind::Gcn;
    if (s == "GCN--" || s == "GCN_MINUS" || s == "gcn--") return ModelKind::GcnMinus;
    if (s == "GAT" || s == "gat") return ModelKind::Gat;
    if (s == "SGC" || s == "sgc") return ModelKind::Sgc;
    if (s == "APPNP" || s == "appnp") return ModelKind::Appnp;
    if (s == "DGat" || s == "DGAT" || s == "dgat") return ModelKind::Dgat;
    throw ConfigError("unknown model kind '" + s + "'");
}

void ModelSpec::validate() const {
    const bool sgc = kind == ModelKind::Sgc;
    if (layers < (sgc ? 0 : 1) || layers > 16) {
        // SGC admits layers = 0 (no propagation, single linear transform).
        throw ConfigError("ModelSpec: invalid layer count " + std::to_string(layers));
    }
    if (hidden < 1) {
        throw ConfigError("ModelSpec: hidden must be >= 1");
    }
    if (heads < 1) {
        throw ConfigError("ModelSpec: heads must be >= 1");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw ConfigError("ModelSpec: beta outside [0, 1]");
    }
    if (!(gamma >= 0.0 && gamma <= 1.0)) {
        throw ConfigError("ModelSpec: gamma outside [0, 1]");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) {
        throw ConfigError("ModelSpec: dropout outside [0, 1)");
    }
    if (linear_head && (kind == ModelKind::Gcn || kind == ModelKind::GcnMinus)) {
        throw ConfigError("ModelSpec: linear_head applies only to GAT/SGC/APPNP/DGat");
    }
}

index_t ModelParams::total_count() const {
    index_t total = 0;
    for (const auto& m : values) {
        total += m.size();
    }
    return total;
}

index_t ModelParams::find(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i) {
        if (names[i] == name) {
            return static_cast<index_t>(i);
        }
    }
    return -1;
}

namespace {

struct ShapeList {
    std::vector<std::string> names;
    std::vector<std::pair<index_t, index_t>> shapes;

    void weight(const std::string& name, index_t rows, index_t cols) {
        names.push_back(name);
        shapes.emplace_back(rows, cols);
    }
    void bias(const std::string& name, index_t cols) { weight(name, 1, cols); }
};

// The MLP body of SGC/APPNP/DGat and the conv stack widths share this rule:
// `depth` linear layers d_in -> hidden -> ... -> out_dim.
index_t layer_in(index_t d_in, int hidden, int l) {
    return l == 0 ? d_in : hidden;
}

ShapeList param_shapes(const ModelSpec& spec, index_t d_in, int classes) {
    ShapeList s;
    const index_t c = classes;
    const index_t h = spec.hidden;
    const index_t body_out = spec.linear_head ? h : c;
    switch (spec.kind) {
    case ModelKind::Gcn: {
        for (int l = 0; l < spec.layers; ++l) {
            s.weight("conv" + std::to_string(l) + ".W", layer_in(d_in, spec.hidden, l), h);
            s.bias("conv" + std::to_string(l) + ".b", h);
        }
        s.weight("head.W", h, c);
        s.bias("head.b", c);
        break;
    }
    case ModelKind::GcnMinus: {
        for (int l = 0; l < spec.layers; ++l) {
            const index_t out = l == spec.layers - 1 ? c : h;
            s.weight("conv" + std::to_string(l) + ".W", layer_in(d_in, spec.hidden, l), out);
            s.bias("conv" + std::to_string(l) + ".b", out);
        }
        break;
    }
    case ModelKind::Gat: {
        index_t in = d_in;
        for (int l = 0; l < spec.layers; ++l) {
            const bool last = l == spec.layers - 1;
            const index_t out = last ? body_out : h;
            for (int hd = 0; hd < spec.heads; ++hd) {
                const std::string p = "layer" + std::to_string(l) + ".head" + std::to_string(hd);
                s.weight(p + ".W", in, out);
                s.weight(p + ".a_src", out, 1);
                s.weight(p + ".a_dst", out, 1);
            }
            const index_t width = last ? out : out * spec.heads; // concat hidden, average last
            s.bias("layer" + std::to_string(l) + ".b", width);
            in = width;
        }
        if (spec.linear_head) {
            s.weight("head.W", body_out, c);
            s.bias("head.b", c);
        }
        break;
    }
    case ModelKind::Sgc:
    case ModelKind::Appnp:
    case ModelKind::Dgat: {
        const int depth = std::max(1, spec.layers);
        for (int l = 0; l < depth; ++l) {
            const index_t out = l == depth - 1 ? body_out : h;
            s.weight("mlp" + std::to_string(l) + ".W", layer_in(d_in, spec.hidden, l), out);
            s.bias("mlp" + std::to_string(l) + ".b", out);
        }
        if (spec.kind == ModelKind::Dgat) {
            // Attention transforms act on Z_init (the representation before
            // the final MLP layer): raw features when depth == 1.
            const index_t att_in = depth == 1 ? d_in : h;
            for (int hd = 0; hd < spec.heads; ++hd) {
                const std::string p = "att.head" + std::to_string(hd);
                s.weight(p + ".W", att_in, h);
                s.weight(p + ".a_src", h, 1);
                s.weight(p + ".a_dst", h, 1);
            }
        }
        if (spec.linear_head) {
            s.weight("head.W", body_out, c);
            s.bias("head.b", c);
        }
        break;
    }
    }
    return s;
}

} // namespace

ModelParams init_params(const ModelSpec& spec, index_t d_in, int classes, std::uint64_t seed) {
    spec.validate();
    if (d_in < 1 || classes < 1) {
        throw ConfigError("init_params: d_in and classes must be >= 1");
    }
    const ShapeList shapes = param_shapes(spec, d_in, classes);
    ModelParams params;
    params.names = shapes.names;
    RngStream root = RngStream(seed).derive("init");
    for (std::size_t i = 0; i < shapes.names.size(); ++i) {
        const auto [rows, cols] = shapes.shapes[i];
        DenseMatrix m(rows, cols);
        if (rows != 1) { // biases (1 x d) stay zero
            auto rng = root.derive(shapes.names[i]);
            const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
            for (index_t k = 0; k < m.size(); ++k) {
                m.data()[k] = rng.uniform(-bound, bound);
            }
        }
        params.values.push_back(std::move(m));
    }
    return params;
}

namespace {

struct Builder {
    Tape& tape;
    const ModelSpec& spec;
    const Graph& g;
    std::shared_ptr<const SparseMatrix> a_hat;
    Mode mode;
    RngStream rng;
    ForwardHandles& out;
    std::size_t next_param = 0;
    const ModelParams& params;

    ValueId take_param(const std::string& expect) {
        if (next_param >= params.names.size() || params.names[next_param] != expect) {
            throw ShapeError("forward: parameter list does not match spec (expected '" + expect +
                             "')");
        }
        return out.params[next_param++];
    }

    ValueId drop(ValueId x, const char* purpose, int l) {
        return tape.dropout(x, spec.dropout, rng.derive(purpose).derive(static_cast<std::uint64_t>(l)),
                            mode == Mode::Train);
    }

    // One attention block on the self-looped pattern: returns the
    // row-stochastic alpha (edge values) and the transformed features U.
    std::pair<ValueId, ValueId> attention_head(ValueId z, const std::string& prefix) {
        const ValueId w = take_param(prefix + ".W");
        const ValueId a_src = take_param(prefix + ".a_src");
        const ValueId a_dst = take_param(prefix + ".a_dst");
        const ValueId u = tape.matmul(z, w);
        const ValueId f_src = tape.matmul(u, a_src);
        const ValueId f_dst = tape.matmul(u, a_dst);
        const ValueId raw = tape.edge_score_sum(out.attention_pattern, f_src, f_dst);
        const ValueId act = tape.leaky_relu(raw, spec.leaky_slope);
        const ValueId alpha = tape.masked_row_softmax(out.attention_pattern, act);
        out.row_stochastic_edges.push_back(alpha);
        return {alpha, u};
    }

    ValueId mlp_body(ValueId x) {
        const int depth = std::max(1, spec.layers);
        ValueId z = x;
        for (int l = 0; l < depth; ++l) {
            const ValueId w = take_param("mlp" + std::to_string(l) + ".W");
            const ValueId b = take_param("mlp" + std::to_string(l) + ".b");
            z = tape.add_bias(tape.matmul(z, w), b);
            if (l != depth - 1) {
                z = drop(tape.relu(z), "mlp", l);
            }
        }
        return z;
    }

    ValueId apply_head(ValueId body) {
        const ValueId w = take_param("head.W");
        const ValueId b = take_param("head.b");
        out.has_head = true;
        out.head_input = body;
        out.head_weight = w;
        out.head_bias = b;
        return tape.add_bias(tape.matmul(body, w), b);
    }

    ValueId build() {
        switch (spec.kind) {
        case ModelKind::Gcn: {
            ValueId z = tape.constant(g.features);
            for (int l = 0; l < spec.layers; ++l) {
                const ValueId w = take_param("conv" + std::to_string(l) + ".W");
                const ValueId b = take_param("conv" + std::to_string(l) + ".b");
                z = tape.add_bias(tape.spmm(a_hat, tape.matmul(z, w)), b);
                z = drop(tape.relu(z), "conv", l);
            }
            return apply_head(z);
        }
        case ModelKind::GcnMinus: {
            ValueId z = tape.constant(g.features);
            for (int l = 0; l < spec.layers; ++l) {
                const ValueId w = take_param("conv" + std::to_string(l) + ".W");
                const ValueId b = take_param("conv" + std::to_string(l) + ".b");
                z = tape.add_bias(tape.spmm(a_hat, tape.matmul(z, w)), b);
                if (l != spec.layers - 1) {
                    z = drop(tape.relu(z), "conv", l);
                }
            }
            return z;
        }
        case ModelKind::Gat: {
            ValueId z = tape.constant(g.features);
            for (int l = 0; l < spec.layers; ++l) {
                const bool last = l == spec.layers - 1;
                std::vector<ValueId> head_outs;
                for (int hd = 0; hd < spec.heads; ++hd) {
                    const auto [alpha, u] = attention_head(
                        z, "layer" + std::to_string(l) + ".head" + std::to_string(hd));
                    head_outs.push_back(tape.spmm_edges(out.attention_pattern, alpha, u));
                }
                ValueId agg;
                if (!last) {
                    agg = spec.heads == 1 ? head_outs[0] : tape.concat_cols(head_outs);
                } else {
                    agg = head_outs[0];
                    for (int hd = 1; hd < spec.heads; ++hd) {
                        agg = tape.add(agg, head_outs[static_cast<std::size_t>(hd)]);
                    }
                    if (spec.heads > 1) {
                        agg = tape.scale(agg, 1.0 / static_cast<double>(spec.heads));
                    }
                }
                z = tape.add_bias(agg, take_param("layer" + std::to_string(l) + ".b"));
                if (!last) {
                    z = drop(tape.relu(z), "gat", l);
                }
            }
            return spec.linear_head ? apply_head(z) : z;
        }
        case ModelKind::Sgc: {
            // Propagation precedes any parameter, so it runs off-tape.
            const ValueId prop = tape.constant(propagate(*a_hat, g.features, spec.layers));
            const ValueId body = mlp_body(prop);
            return spec.linear_head ? apply_head(body) : body;
        }
        case ModelKind::Appnp: {
            const ValueId h = mlp_body(tape.constant(g.features));
            ValueId z = h;
            for (int k = 0; k < spec.layers; ++k) {
                z = tape.add(tape.scale(tape.spmm(a_hat, z), 1.0 - spec.beta),
                             tape.scale(h, spec.beta));
            }
            return spec.linear_head ? apply_head(z) : z;
        }
        case ModelKind::Dgat: {
            const int depth = std::max(1, spec.layers);
            // Z_init: representation entering the final MLP layer.
            ValueId z_init = tape.constant(g.features);
            for (int l = 0; l < depth - 1; ++l) {
                const ValueId w = take_param("mlp" + std::to_string(l) + ".W");
                const ValueId b = take_param("mlp" + std::to_string(l) + ".b");
                z_init = drop(tape.relu(tape.add_bias(tape.matmul(z_init, w), b)), "mlp", l);
            }
            const ValueId wl = take_param("mlp" + std::to_string(depth - 1) + ".W");
            const ValueId bl = take_param("mlp" + std::to_string(depth - 1) + ".b");
            const ValueId h = tape.add_bias(tape.matmul(z_init, wl), bl);

            // Attention matrix P from Z_init; heads averaged into one
            // row-stochastic matrix.
            ValueId p{};
            for (int hd = 0; hd < spec.heads; ++hd) {
                const auto [alpha, u] = attention_head(z_init, "att.head" + std::to_string(hd));
                (void)u; // DGat uses attention only as propagation weights
                p = hd == 0 ? alpha : tape.add(p, alpha);
            }
            if (spec.heads > 1) {
                p = tape.scale(p, 1.0 / static_cast<double>(spec.heads));
                out.row_stochastic_edges.push_back(p);
            }

            // Adaptive propagation values (1-gamma) P + gamma A_hat on the
            // shared self-looped pattern.
            const ValueId a_hat_vals = tape.constant(
                DenseMatrix(a_hat->nnz(), 1, a_hat->values()));
            const ValueId blend = tape.add(tape.scale(p, 1.0 - spec.gamma),
                                           tape.scale(a_hat_vals, spec.gamma));
            out.blend_edges = blend;
            out.has_blend = true;

            ValueId z = h;
            for (int k = 0; k < spec.layers; ++k) {
                z = tape.add(tape.scale(tape.spmm_edges(out.attention_pattern, blend, z),
                                        1.0 - spec.beta),
                             tape.scale(h, spec.beta));
            }
            return spec.linear_head ? apply_head(z) : z;
        }
        }
        throw ConfigError("forward: unknown model kind");
    }
};

} // namespace

ForwardHandles forward_on_tape(Tape& tape, const ModelSpec& spec, const ModelParams& params,
                               const Graph& g, std::shared_ptr<const SparseMatrix> a_hat,
                               Mode mode, RngStream dropout_rng) {
    spec.validate();
    const ShapeList shapes = param_shapes(spec, g.feature_dim(), g.classes);
    if (shapes.names != params.names) {
        throw ShapeError("forward: parameters do not match spec " + std::string(to_string(spec.kind)));
    }
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        if (params.values[i].rows() != shapes.shapes[i].first ||
            params.values[i].cols() != shapes.shapes[i].second) {
            throw ShapeError("forward: parameter '" + params.names[i] + "' has shape " +
                             std::to_string(params.values[i].rows()) + "x" +
                             std::to_string(params.values[i].cols()));
        }
    }

    ForwardHandles handles;
    handles.attention_pattern = a_hat->pattern_ptr();
    for (const auto& v : params.values) {
        handles.params.push_back(tape.parameter(v));
    }
    Builder b{tape, spec, g, std::move(a_hat), mode, dropout_rng, handles, 0, params};
    handles.logits = b.build();
    return handles;
}

DenseMatrix forward(const ModelSpec& spec, const ModelParams& params, const Graph& g,
                    std::shared_ptr<const SparseMatrix> a_hat, Mode mode, RngStream dropout_rng) {
    Tape tape;
    const auto handles = forward_on_tape(tape, spec, params, g, std::move(a_hat), mode, dropout_rng);
    return tape.value(handles.logits);
}

DenseMatrix propagate(const SparseMatrix& a_hat, const DenseMatrix& x, int steps) {
    DenseMatrix z = x;
    for (int k = 0; k < steps; ++k) {
        z = spmm(a_hat, z);
    }
    return z;
}

} // namespace gnnood
