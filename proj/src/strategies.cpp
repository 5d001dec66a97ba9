#include "gnnood/strategies.hpp"

#include <cmath>

#include "gnnood/errors.hpp"
#include "gnnood/stats.hpp"
#include "gnnood/tape.hpp"

namespace gnnood {

const char* to_string(Strategy s) {
    switch (s) {
    case Strategy::Erm:
        return "ERM";
    case Strategy::Irm:
        return "IRM";
    case Strategy::Vrex:
        return "VREx";
    case Strategy::GroupDro:
        return "GroupDRO";
    case Strategy::GraphMixup:
        return "Graph-Mixup";
    }
    return "?";
}

Strategy strategy_from_string(const std::string& s) {
    if (s == "ERM" || s == "erm") return Strategy::Erm;
    if (s == "IRM" || s == "irm") return Strategy::Irm;
    if (s == "VREX" || s == "VREx" || s == "vrex") return Strategy::Vrex;
    if (s == "GROUPDRO" || s == "GroupDRO" || s == "groupdro") return Strategy::GroupDro;
    if (s == "GRAPH_MIXUP" || s == "Graph-Mixup" || s == "mixup" || s == "graph_mixup") {
        return Strategy::GraphMixup;
    }
    throw ConfigError("unknown strategy '" + s + "'");
}

void TrainPlan::validate() const {
    if (epochs < 1) {
        throw ConfigError("TrainPlan: epochs must be >= 1");
    }
    if (!(lr > 0.0)) {
        throw ConfigError("TrainPlan: lr must be positive");
    }
    if (weight_decay < 0.0) {
        throw ConfigError("TrainPlan: weight_decay must be >= 0");
    }
    if (penalty_weight < 0.0) {
        throw ConfigError("TrainPlan: penalty weight must be >= 0");
    }
    if (!(group_step > 0.0)) {
        throw ConfigError("TrainPlan: group step must be positive");
    }
    if (!(mixup_alpha > 0.0)) {
        throw ConfigError("TrainPlan: mixup alpha must be positive");
    }
}

EnvBatch make_env_batch(const Graph& g) {
    EnvBatch batch;
    std::vector<std::vector<index_t>> by_env(static_cast<std::size_t>(g.environments));
    for (index_t v : g.splits.train) {
        by_env[static_cast<std::size_t>(g.env_id[static_cast<std::size_t>(v)])].push_back(v);
    }
    for (int e = 0; e < g.environments; ++e) {
        if (!by_env[static_cast<std::size_t>(e)].empty()) {
            batch.env_ids.push_back(e);
            batch.nodes.push_back(std::move(by_env[static_cast<std::size_t>(e)]));
        }
    }
    return batch;
}

double vrex_penalty(const std::vector<double>& risks) {
    if (risks.empty()) {
        throw ProtocolError("vrex_penalty: no environments");
    }
    const double m = mean(risks);
    double acc = 0.0;
    for (double r : risks) {
        acc += (r - m) * (r - m);
    }
    return acc / static_cast<double>(risks.size());
}

GroupDroUpdate groupdro_step(const std::vector<double>& risks, const std::vector<double>& weights,
                             double eta) {
    if (risks.size() != weights.size() || risks.empty()) {
        throw ProtocolError("groupdro_step: weights and risks must align");
    }
    GroupDroUpdate upd;
    upd.weights.resize(risks.size());
    double z = 0.0;
    for (std::size_t e = 0; e < risks.size(); ++e) {
        upd.weights[e] = weights[e] * std::exp(eta * risks[e]);
        z += upd.weights[e];
    }
    upd.weighted_loss = 0.0;
    for (std::size_t e = 0; e < risks.size(); ++e) {
        upd.weights[e] /= z;
        upd.weighted_loss += upd.weights[e] * risks[e];
    }
    return upd;
}

std::vector<index_t> mixup_permutation(index_t n, const std::vector<index_t>& train_mask,
                                       std::uint64_t pairing_seed) {
    std::vector<index_t> perm(static_cast<std::size_t>(n));
    for (index_t i = 0; i < n; ++i) {
        perm[static_cast<std::size_t>(i)] = i;
    }
    auto rng = RngStream(pairing_seed).derive("mixup_pairing");
    const auto shuffled = rng.permutation(static_cast<index_t>(train_mask.size()));
    for (std::size_t k = 0; k < train_mask.size(); ++k) {
        perm[static_cast<std::size_t>(train_mask[k])] =
            train_mask[static_cast<std::size_t>(shuffled[k])];
    }
    return perm;
}

DenseMatrix labels_to_onehot(const std::vector<int>& labels, int classes) {
    DenseMatrix m(static_cast<index_t>(labels.size()), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        m(static_cast<index_t>(i), labels[i]) = 1.0;
    }
    return m;
}

MixupResult graph_mixup(const DenseMatrix& hidden, const DenseMatrix& labels_onehot,
                        const std::vector<index_t>& train_mask, double lambda,
                        std::uint64_t pairing_seed) {
    if (hidden.rows() != labels_onehot.rows()) {
        throw ShapeError("graph_mixup: hidden and labels row counts differ");
    }
    const auto perm = mixup_permutation(hidden.rows(), train_mask, pairing_seed);
    MixupResult res{hidden, labels_onehot};
    for (index_t i = 0; i < hidden.rows(); ++i) {
        const index_t j = perm[static_cast<std::size_t>(i)];
        for (index_t c = 0; c < hidden.cols(); ++c) {
            res.hidden(i, c) = lambda * hidden(i, c) + (1.0 - lambda) * hidden(j, c);
        }
        for (index_t c = 0; c < labels_onehot.cols(); ++c) {
            res.soft_labels(i, c) = lambda * labels_onehot(i, c) + (1.0 - lambda) * labels_onehot(j, c);
        }
    }
    return res;
}

namespace {

// Momentum-free adaptive moment estimation, decay 0.9 / 0.999, eps 1e-8.
struct Adam {
    double lr;
    double weight_decay;
    std::vector<DenseMatrix> m;
    std::vector<DenseMatrix> v;
    long long t = 0;

    Adam(const ModelParams& params, double lr_, double wd) : lr(lr_), weight_decay(wd) {
        for (const auto& p : params.values) {
            m.emplace_back(p.rows(), p.cols());
            v.emplace_back(p.rows(), p.cols());
        }
    }

    void step(ModelParams& params, const std::vector<const DenseMatrix*>& grads) {
        ++t;
        const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.values.size(); ++i) {
            auto& theta = params.values[i];
            const auto& g = *grads[i];
            for (index_t k = 0; k < theta.size(); ++k) {
                const double grad = g.data()[k] + weight_decay * theta.data()[k];
                m[i].data()[k] = b1 * m[i].data()[k] + (1.0 - b1) * grad;
                v[i].data()[k] = b2 * v[i].data()[k] + (1.0 - b2) * grad * grad;
                const double mhat = m[i].data()[k] / bc1;
                const double vhat = v[i].data()[k] / bc2;
                theta.data()[k] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

ValueId sum_scalars(Tape& tape, const std::vector<ValueId>& xs) {
    ValueId acc = xs.front();
    for (std::size_t i = 1; i < xs.size(); ++i) {
        acc = tape.add(acc, xs[i]);
    }
    return acc;
}

} // namespace

TrainResult train_model(const ModelSpec& spec, const TrainPlan& plan, const Graph& g) {
    spec.validate();
    plan.validate();
    if (g.splits.iid_val.empty()) {
        throw ProtocolError("train_model: empty IID validation split");
    }
    const bool has_head = spec.kind == ModelKind::Gcn || spec.linear_head;
    if (plan.strategy == Strategy::GraphMixup && !has_head) {
        throw ConfigError("Graph-Mixup requires a model with a linear classifier (GCN or "
                          "linear_head=true)");
    }

    auto a_hat = std::make_shared<const SparseMatrix>(normalize_adjacency(g));
    ModelParams params = init_params(spec, g.feature_dim(), g.classes, plan.seed);
    Adam opt(params, plan.lr, plan.weight_decay);
    const RngStream root(plan.seed);
    const EnvBatch envs = make_env_batch(g);

    std::vector<double> dro_weights(envs.nodes.size(),
                                    1.0 / static_cast<double>(envs.nodes.size()));
    auto onehot = std::make_shared<const DenseMatrix>(labels_to_onehot(g.labels, g.classes));

    TrainResult result;
    result.trace.reserve(static_cast<std::size_t>(plan.epochs));
    for (int epoch = 1; epoch <= plan.epochs; ++epoch) {
        Tape tape;
        const RngStream epoch_rng = root.derive("epoch").derive(static_cast<std::uint64_t>(epoch));
        const auto fwd = forward_on_tape(tape, spec, params, g, a_hat, Mode::Train,
                                         epoch_rng.derive("dropout"));

        ValueId loss{};
        switch (plan.strategy) {
        case Strategy::Erm:
            loss = tape.softmax_cross_entropy(fwd.logits, g.labels, g.splits.train);
            break;
        case Strategy::Irm: {
            loss = tape.softmax_cross_entropy(fwd.logits, g.labels, g.splits.train);
            if (plan.penalty_weight > 0.0) {
                std::vector<ValueId> pens;
                for (const auto& nodes : envs.nodes) {
                    pens.push_back(tape.irm_penalty(fwd.logits, g.labels, nodes));
                }
                loss = tape.add(loss, tape.scale(sum_scalars(tape, pens), plan.penalty_weight));
            }
            break;
        }
        case Strategy::Vrex: {
            loss = tape.softmax_cross_entropy(fwd.logits, g.labels, g.splits.train);
            if (plan.penalty_weight > 0.0) {
                std::vector<ValueId> risks;
                for (const auto& nodes : envs.nodes) {
                    risks.push_back(tape.softmax_cross_entropy(fwd.logits, g.labels, nodes));
                }
                const double inv_e = 1.0 / static_cast<double>(risks.size());
                const ValueId mean_risk = tape.scale(sum_scalars(tape, risks), inv_e);
                std::vector<ValueId> sq;
                for (ValueId r : risks) {
                    const ValueId diff = tape.add(r, tape.scale(mean_risk, -1.0));
                    sq.push_back(tape.mul(diff, diff));
                }
                const ValueId var = tape.scale(sum_scalars(tape, sq), inv_e);
                loss = tape.add(loss, tape.scale(var, plan.penalty_weight));
            }
            break;
        }
        case Strategy::GroupDro: {
            std::vector<ValueId> risks;
            std::vector<double> risk_values;
            for (const auto& nodes : envs.nodes) {
                risks.push_back(tape.softmax_cross_entropy(fwd.logits, g.labels, nodes));
                risk_values.push_back(tape.value(risks.back())(0, 0));
            }
            const auto upd = groupdro_step(risk_values, dro_weights, plan.group_step);
            dro_weights = upd.weights;
            std::vector<ValueId> weighted;
            for (std::size_t e = 0; e < risks.size(); ++e) {
                weighted.push_back(tape.scale(risks[e], dro_weights[e]));
            }
            loss = sum_scalars(tape, weighted);
            break;
        }
        case Strategy::GraphMixup: {
            auto mix_rng = epoch_rng.derive("mixup");
            const double lambda = mix_rng.beta(plan.mixup_alpha, plan.mixup_alpha);
            const auto perm = mixup_permutation(
                g.n, g.splits.train, root.derive("pairing").derive(static_cast<std::uint64_t>(epoch)).next_u64());
            const ValueId mixed =
                tape.add(tape.scale(fwd.head_input, lambda),
                         tape.scale(tape.permute_rows(fwd.head_input, perm), 1.0 - lambda));
            const ValueId mixed_logits =
                tape.add_bias(tape.matmul(mixed, fwd.head_weight), fwd.head_bias);
            auto targets = std::make_shared<DenseMatrix>(*onehot);
            for (index_t i = 0; i < g.n; ++i) {
                const index_t j = perm[static_cast<std::size_t>(i)];
                for (index_t c = 0; c < targets->cols(); ++c) {
                    (*targets)(i, c) =
                        lambda * (*onehot)(i, c) + (1.0 - lambda) * (*onehot)(j, c);
                }
            }
            loss = tape.soft_cross_entropy(mixed_logits, targets, g.splits.train);
            break;
        }
        }

        const double loss_value = tape.value(loss)(0, 0);
        if (!std::isfinite(loss_value)) {
            throw NumericalError("training aborted: non-finite loss at epoch " +
                                 std::to_string(epoch) + " (" + to_string(plan.strategy) + ", lr " +
                                 std::to_string(plan.lr) + ")");
        }

        tape.backward(loss);
        std::vector<const DenseMatrix*> grads;
        grads.reserve(fwd.params.size());
        for (ValueId p : fwd.params) {
            grads.push_back(&tape.grad(p));
        }
        opt.step(params, grads);

        // Selection consults the IID validation split only.
        const DenseMatrix val_logits =
            forward(spec, params, g, a_hat, Mode::Eval, epoch_rng.derive("eval"));
        const double val_acc = accuracy(val_logits, g.labels, g.splits.iid_val);
        result.trace.push_back({loss_value, val_acc});
        if (result.best_epoch < 0 || val_acc > result.best_iid_val_acc) {
            result.best_epoch = epoch;
            result.best_iid_val_acc = val_acc;
            result.params = params;
        }
    }
    return result;
}

EvalResult evaluate(const ModelSpec& spec, const ModelParams& params, const Graph& g) {
    auto a_hat = std::make_shared<const SparseMatrix>(normalize_adjacency(g));
    const DenseMatrix logits = forward(spec, params, g, a_hat, Mode::Eval, RngStream(0));
    EvalResult r;
    r.train_acc = accuracy(logits, g.labels, g.splits.train);
    r.iid_val_acc = accuracy(logits, g.labels, g.splits.iid_val);
    r.iid_test_acc = accuracy(logits, g.labels, g.splits.iid_test);
    r.ood_val_acc = g.splits.ood_val.empty() ? 0.0 : accuracy(logits, g.labels, g.splits.ood_val);
    r.ood_test_acc = accuracy(logits, g.labels, g.splits.ood_test);
    return r;
}

} // namespace gnnood
