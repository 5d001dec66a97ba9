#include "gnnood/runner.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "gnnood/errors.hpp"

namespace gnnood {

MetricsReport MetricsReport::from_runs(std::vector<RunResult> runs_in) {
    MetricsReport m;
    m.runs = std::move(runs_in);
    std::vector<double> iid_val, iid_test, ood, gaps;
    for (const auto& r : m.runs) {
        if (r.aborted) {
            ++m.aborted;
            continue;
        }
        iid_val.push_back(r.iid_val_acc);
        iid_test.push_back(r.iid_test_acc);
        ood.push_back(r.ood_test_acc);
        gaps.push_back(r.gap_value());
    }
    if (!ood.empty()) {
        m.mean_iid_val = mean(iid_val);
        m.mean_iid_test = mean(iid_test);
        m.mean_ood = mean(ood);
        m.std_ood = sample_std(ood);
        m.mean_gap = mean(gaps);
        m.std_gap = sample_std(gaps);
    }
    return m;
}

std::vector<double> MetricsReport::ood_per_seed() const {
    std::vector<double> out;
    for (const auto& r : runs) {
        if (!r.aborted) {
            out.push_back(r.ood_test_acc);
        }
    }
    return out;
}

Graph DatasetSource::realize() const {
    if (!path.empty()) {
        return load_graph(path);
    }
    if (!use_generator) {
        throw ConfigError("dataset: neither path nor generator given");
    }
    if (generator_kind == "covariate") {
        return gen_covariate_shift(generator, seed);
    }
    if (generator_kind == "concept") {
        return gen_concept_shift(generator, corr_train, corr_ood, seed);
    }
    throw ConfigError("dataset: unknown generator kind '" + generator_kind + "'");
}

void ExperimentConfig::validate() const {
    if (grid.empty()) {
        throw ConfigError("config: empty grid");
    }
    if (seeds.empty()) {
        throw ConfigError("config: no seeds");
    }
    std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
    if (uniq.size() != seeds.size()) {
        throw ConfigError("config: seeds must be distinct");
    }
    for (const auto& gp : grid) {
        gp.model.validate();
        gp.train.validate();
    }
}

namespace {

template <typename T>
std::vector<T> axis(const Json& obj, const char* key, std::vector<T> fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const Json& v = obj.at(key);
    if (!v.is_array() || v.empty()) {
        throw ConfigError(std::string("config: grid axis '") + key + "' must be a nonempty array");
    }
    std::vector<T> out;
    for (const auto& e : v) {
        out.push_back(e.get<T>());
    }
    return out;
}

bool in_set(double v, std::initializer_list<double> set) {
    for (double s : set) {
        if (v == s) {
            return true;
        }
    }
    return false;
}

void check_paper_grid(const GridPoint& gp) {
    // Published search space: lr {1e-3, 5e-3, 5e-2}, dropout {0, .1, .2, .5},
    // hidden {100, 200, 300}, layers {1, 2, 3}, gamma {0, .2, .5},
    // beta {0, .1, .2, .5}, heads {2, 4}.
    const ModelSpec& m = gp.model;
    if (m.layers < 1 || m.layers > 3) {
        throw ConfigError("paper-grid: layers must be in {1, 2, 3}");
    }
    if (!in_set(m.hidden, {100.0, 200.0, 300.0})) {
        throw ConfigError("paper-grid: hidden must be in {100, 200, 300}");
    }
    if (!in_set(m.dropout, {0.0, 0.1, 0.2, 0.5})) {
        throw ConfigError("paper-grid: dropout must be in {0, 0.1, 0.2, 0.5}");
    }
    if (!in_set(m.gamma, {0.0, 0.2, 0.5})) {
        throw ConfigError("paper-grid: gamma must be in {0, 0.2, 0.5}");
    }
    if (!in_set(m.beta, {0.0, 0.1, 0.2, 0.5})) {
        throw ConfigError("paper-grid: beta must be in {0, 0.1, 0.2, 0.5}");
    }
    if ((m.kind == ModelKind::Gat || m.kind == ModelKind::Dgat) && m.heads != 2 && m.heads != 4) {
        throw ConfigError("paper-grid: heads must be in {2, 4}");
    }
    if (!in_set(gp.train.lr, {1e-3, 5e-3, 5e-2})) {
        throw ConfigError("paper-grid: lr must be in {1e-3, 5e-3, 5e-2}");
    }
}

DatasetSource parse_dataset(const Json& doc) {
    DatasetSource ds;
    if (!doc.contains("dataset")) {
        throw ConfigError("config: missing 'dataset'");
    }
    const Json& d = doc.at("dataset");
    if (d.contains("path")) {
        ds.path = d.at("path").get<std::string>();
        return ds;
    }
    if (!d.contains("generator")) {
        throw ConfigError("config: dataset needs 'path' or 'generator'");
    }
    const Json& g = d.at("generator");
    ds.use_generator = true;
    ds.generator_kind = g.value("kind", std::string());
    ds.seed = g.value("seed", std::uint64_t{0});
    ds.generator.nodes = g.value("nodes", ds.generator.nodes);
    ds.generator.classes = g.value("classes", ds.generator.classes);
    ds.generator.feature_dim = g.value("feature_dim", ds.generator.feature_dim);
    ds.generator.environments = g.value("environments", ds.generator.environments);
    ds.generator.intra_p = g.value("intra_p", ds.generator.intra_p);
    ds.generator.inter_p = g.value("inter_p", ds.generator.inter_p);
    ds.generator.center_scale = g.value("center_scale", ds.generator.center_scale);
    ds.generator.noise_sigma = g.value("noise_sigma", ds.generator.noise_sigma);
    ds.generator.spurious_dim = g.value("spurious_dim", ds.generator.spurious_dim);
    ds.generator.spurious_scale = g.value("spurious_scale", ds.generator.spurious_scale);
    ds.generator.train_fraction = g.value("train_fraction", ds.generator.train_fraction);
    ds.corr_train = g.value("corr_train", ds.corr_train);
    ds.corr_ood = g.value("corr_ood", ds.corr_ood);
    return ds;
}

Json model_spec_json(const ModelSpec& m) {
    Json j;
    j["kind"] = to_string(m.kind);
    j["layers"] = m.layers;
    j["hidden"] = m.hidden;
    j["heads"] = m.heads;
    j["beta"] = m.beta;
    j["gamma"] = m.gamma;
    j["dropout"] = m.dropout;
    j["leaky_slope"] = m.leaky_slope;
    j["linear_head"] = m.linear_head;
    return j;
}

Json train_plan_json(const TrainPlan& t) {
    Json j;
    j["strategy"] = to_string(t.strategy);
    j["lr"] = t.lr;
    j["epochs"] = t.epochs;
    j["weight_decay"] = t.weight_decay;
    j["penalty_weight"] = t.penalty_weight;
    j["group_step"] = t.group_step;
    j["mixup_alpha"] = t.mixup_alpha;
    return j;
}

} // namespace

ExperimentConfig parse_experiment_config(const Json& doc, bool paper_grid) {
    ExperimentConfig cfg;
    cfg.echo = doc;
    cfg.dataset = parse_dataset(doc);

    const Json model_grid = doc.value("model_grid", Json::object());
    const Json train_grid = doc.value("train_grid", Json::object());

    const auto kinds = axis<std::string>(model_grid, "kind", {"GCN"});
    const auto layers = axis<int>(model_grid, "layers", {2});
    const auto hidden = axis<int>(model_grid, "hidden", {100});
    const auto heads = axis<int>(model_grid, "heads", {2});
    const auto betas = axis<double>(model_grid, "beta", {0.1});
    const auto gammas = axis<double>(model_grid, "gamma", {0.5});
    const auto dropouts = axis<double>(model_grid, "dropout", {0.1});
    const auto slopes = axis<double>(model_grid, "leaky_slope", {0.2});
    const auto with_head = axis<bool>(model_grid, "linear_head", {false});

    const auto strategies = axis<std::string>(train_grid, "strategy", {"ERM"});
    const auto lrs = axis<double>(train_grid, "lr", {5e-3});
    const auto epochs = axis<int>(train_grid, "epochs", {100});
    const auto wds = axis<double>(train_grid, "weight_decay", {0.0});
    const auto lambdas = axis<double>(train_grid, "penalty_weight", {1.0});
    const auto etas = axis<double>(train_grid, "group_step", {1.0});
    const auto alphas = axis<double>(train_grid, "mixup_alpha", {1.0});

    for (const auto& kind : kinds)
        for (int l : layers)
            for (int h : hidden)
                for (int hd : heads)
                    for (double b : betas)
                        for (double gm : gammas)
                            for (double dr : dropouts)
                                for (double sl : slopes)
                                    for (bool lh : with_head)
                                        for (const auto& strat : strategies)
                                            for (double lr : lrs)
                                                for (int ep : epochs)
                                                    for (double wd : wds)
                                                        for (double lam : lambdas)
                                                            for (double eta : etas)
                                                                for (double al : alphas) {
        GridPoint gp;
        gp.model.kind = model_kind_from_string(kind);
        gp.model.layers = l;
        gp.model.hidden = h;
        gp.model.heads = hd;
        gp.model.beta = b;
        gp.model.gamma = gm;
        gp.model.dropout = dr;
        gp.model.leaky_slope = sl;
        gp.model.linear_head = lh && gp.model.kind != ModelKind::Gcn &&
                               gp.model.kind != ModelKind::GcnMinus;
        gp.train.strategy = strategy_from_string(strat);
        gp.train.lr = lr;
        gp.train.epochs = ep;
        gp.train.weight_decay = wd;
        gp.train.penalty_weight = lam;
        gp.train.group_step = eta;
        gp.train.mixup_alpha = al;
        if (paper_grid) {
            check_paper_grid(gp);
        }
        cfg.grid.push_back(gp);
    }

    if (!doc.contains("seeds")) {
        throw ConfigError("config: missing 'seeds'");
    }
    for (const auto& s : doc.at("seeds")) {
        cfg.seeds.push_back(s.get<std::uint64_t>());
    }
    cfg.output_path = doc.value("output", std::string());
    if (doc.contains("baseline_report")) {
        cfg.baseline_report = doc.at("baseline_report").get<std::string>();
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path, bool paper_grid) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config '" + path + "'");
    }
    Json doc;
    try {
        in >> doc;
    } catch (const std::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
    return parse_experiment_config(doc, paper_grid);
}

int resolve_threads(int cli_threads) {
    if (const char* env = std::getenv("GNNOOD_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) {
            return v;
        }
    }
    if (cli_threads > 0) {
        return cli_threads;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace {

std::vector<MetricsReport> run_grid(const std::vector<GridPoint>& grid,
                                    const std::vector<std::uint64_t>& seeds, const Graph& g,
                                    int threads) {
    const std::size_t total = grid.size() * seeds.size();
    std::vector<RunResult> slots(total);
    std::atomic<std::size_t> cursor{0};

    auto worker = [&]() {
        for (;;) {
            const std::size_t task = cursor.fetch_add(1);
            if (task >= total) {
                return;
            }
            const std::size_t gi = task / seeds.size();
            const std::size_t si = task % seeds.size();
            TrainPlan plan = grid[gi].train;
            plan.seed = seeds[si];
            RunResult& out = slots[task];
            out.seed = seeds[si];
            try {
                const TrainResult tr = train_model(grid[gi].model, plan, g);
                const EvalResult ev = evaluate(grid[gi].model, tr.params, g);
                out.iid_val_acc = ev.iid_val_acc;
                out.ood_val_acc = ev.ood_val_acc;
                out.iid_test_acc = ev.iid_test_acc;
                out.ood_test_acc = ev.ood_test_acc;
                out.best_epoch = tr.best_epoch;
            } catch (const NumericalError& e) {
                out.aborted = true;
                out.abort_reason = e.what();
            }
        }
    };

    const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(total)));
    if (nthreads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(nthreads));
        for (int t = 0; t < nthreads; ++t) {
            pool.emplace_back(worker);
        }
        for (auto& th : pool) {
            th.join();
        }
    }

    std::vector<MetricsReport> metrics;
    metrics.reserve(grid.size());
    for (std::size_t gi = 0; gi < grid.size(); ++gi) {
        std::vector<RunResult> runs(slots.begin() + static_cast<std::ptrdiff_t>(gi * seeds.size()),
                                    slots.begin() + static_cast<std::ptrdiff_t>((gi + 1) * seeds.size()));
        metrics.push_back(MetricsReport::from_runs(std::move(runs)));
    }
    return metrics;
}

Json dataset_summary_json(const Graph& g) {
    Json j;
    j["nodes"] = g.n;
    j["feature_dim"] = g.feature_dim();
    j["classes"] = g.classes;
    j["environments"] = g.environments;
    j["edges"] = g.adjacency.nnz() / 2;
    j["train"] = g.splits.train.size();
    j["iid_val"] = g.splits.iid_val.size();
    j["iid_test"] = g.splits.iid_test.size();
    j["ood_val"] = g.splits.ood_val.size();
    j["ood_test"] = g.splits.ood_test.size();
    return j;
}

Json metrics_json(const MetricsReport& m) {
    Json j;
    Json runs = Json::array();
    for (const auto& r : m.runs) {
        Json rj;
        rj["seed"] = r.seed;
        rj["aborted"] = r.aborted;
        if (r.aborted) {
            rj["abort_reason"] = r.abort_reason;
        } else {
            rj["iid_val_acc"] = r.iid_val_acc;
            rj["ood_val_acc"] = r.ood_val_acc;
            rj["iid_test_acc"] = r.iid_test_acc;
            rj["ood_test_acc"] = r.ood_test_acc;
            rj["gap"] = r.gap_value();
            rj["best_epoch"] = r.best_epoch;
        }
        runs.push_back(std::move(rj));
    }
    j["runs"] = std::move(runs);
    j["aborted_runs"] = m.aborted;
    j["mean_iid_val_acc"] = m.mean_iid_val;
    j["mean_iid_test_acc"] = m.mean_iid_test;
    j["mean_ood_acc"] = m.mean_ood;
    j["std_ood_acc"] = m.std_ood;
    j["mean_gap"] = m.mean_gap;
    j["std_gap"] = m.std_gap;
    return j;
}

Json significance_json(const TTestResult& t) {
    Json j;
    j["t_value"] = t.t;
    j["p_value"] = t.p;
    j["df"] = t.df;
    j["verdict"] = to_string(significance_color(t.t, t.p));
    return j;
}

} // namespace

Report run_experiment(const ExperimentConfig& config, int threads) {
    config.validate();
    const Graph g = config.dataset.realize();

    Report report;
    report.config = config;
    report.dataset_summary = dataset_summary_json(g);
    report.grid_metrics = run_grid(config.grid, config.seeds, g, threads);

    // Selection consults mean IID-validation accuracy only; points whose runs
    // all aborted are ineligible. Ties resolve to the earliest declared point.
    for (std::size_t gi = 0; gi < report.grid_metrics.size(); ++gi) {
        const auto& m = report.grid_metrics[gi];
        if (m.aborted == static_cast<int>(m.runs.size())) {
            continue;
        }
        if (report.selected < 0 ||
            m.mean_iid_val > report.grid_metrics[static_cast<std::size_t>(report.selected)].mean_iid_val) {
            report.selected = static_cast<int>(gi);
        }
    }

    if (config.baseline_report) {
        std::ifstream in(*config.baseline_report);
        if (!in) {
            throw DataError("cannot open baseline report '" + *config.baseline_report + "'");
        }
        Json baseline;
        in >> baseline;
        report.significance_vs_baseline = compare_models(report_json(report), baseline);
    }
    return report;
}

Json report_json(const Report& report) {
    Json j;
    j["schema"] = "gnnood-report";
    j["version"] = 1;
    j["config"] = report.config.echo;
    j["dataset"] = report.dataset_summary;
    Json grid = Json::array();
    for (std::size_t gi = 0; gi < report.grid_metrics.size(); ++gi) {
        Json gj;
        gj["model"] = model_spec_json(report.config.grid[gi].model);
        gj["train"] = train_plan_json(report.config.grid[gi].train);
        gj["metrics"] = metrics_json(report.grid_metrics[gi]);
        grid.push_back(std::move(gj));
    }
    j["grid"] = std::move(grid);
    j["selected"] = report.selected;
    if (report.selected >= 0) {
        j["selected_model"] = model_spec_json(report.config.grid[static_cast<std::size_t>(report.selected)].model);
        j["selected_train"] = train_plan_json(report.config.grid[static_cast<std::size_t>(report.selected)].train);
    }
    if (report.significance_vs_baseline) {
        j["significance_vs_baseline"] = *report.significance_vs_baseline;
    }
    return j;
}

namespace {

// Per-seed OOD accuracies of a report's selected grid point, keyed by seed.
std::vector<std::pair<std::uint64_t, double>> selected_ood(const Json& report) {
    if (!report.contains("selected") || report.at("selected").get<int>() < 0) {
        throw ProtocolError("compare: report has no selected grid point");
    }
    const int sel = report.at("selected").get<int>();
    const Json& metrics = report.at("grid").at(sel).at("metrics");
    std::vector<std::pair<std::uint64_t, double>> out;
    for (const auto& r : metrics.at("runs")) {
        if (r.at("aborted").get<bool>()) {
            throw ProtocolError("compare: selected grid point has aborted runs");
        }
        out.emplace_back(r.at("seed").get<std::uint64_t>(), r.at("ood_test_acc").get<double>());
    }
    return out;
}

} // namespace

Json compare_models(const Json& report_a, const Json& report_b) {
    const auto a = selected_ood(report_a);
    const auto b = selected_ood(report_b);
    if (a.size() != b.size()) {
        throw ProtocolError("compare: reports have different run counts");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].first != b[i].first) {
            throw ProtocolError("compare: seed mismatch at position " + std::to_string(i));
        }
    }
    if (report_a.contains("dataset") && report_b.contains("dataset") &&
        report_a.at("dataset") != report_b.at("dataset")) {
        throw ProtocolError("compare: reports come from different datasets");
    }
    std::vector<double> av, bv;
    for (const auto& [s, v] : a) {
        av.push_back(v);
    }
    for (const auto& [s, v] : b) {
        bv.push_back(v);
    }
    const TTestResult t = paired_t_test(av, bv);
    Json j = significance_json(t);
    j["mean_ood_a"] = mean(av);
    j["mean_ood_b"] = mean(bv);
    return j;
}

std::vector<AblationRow> ablation_suite(const ExperimentConfig& config, int threads) {
    config.validate();
    if (config.grid.size() != 1 || config.grid[0].model.kind != ModelKind::Dgat) {
        throw ConfigError("ablate: config must describe exactly one DGat grid point");
    }
    const GridPoint base = config.grid[0];
    const Graph g = config.dataset.realize();

    std::vector<GridPoint> variants(4, base);
    variants[1].model.gamma = 1.0; // propagation ignores the attention matrix
    variants[2].model.kind = ModelKind::Gat; // coupled attention model
    variants[2].model.beta = base.model.beta;
    variants[3].model.linear_head = true;
    const std::vector<std::string> names = {
        "DGat",
        "DGat w/o self-attention",
        "DGat w/o decouple",
        "DGat w/o remove linear classifier",
    };

    const auto metrics = run_grid(variants, config.seeds, g, threads);
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        rows.push_back({names[i], metrics[i]});
    }
    return rows;
}

Json ablation_json(const std::vector<AblationRow>& rows) {
    Json j = Json::array();
    for (const auto& row : rows) {
        Json rj;
        rj["variant"] = row.variant;
        rj["metrics"] = metrics_json(row.metrics);
        j.push_back(std::move(rj));
    }
    return j;
}

std::string format_report_table(const Report& report) {
    std::ostringstream out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-42s %8s %8s %8s %8s\n", "grid point", "OOD%", "+-", "GAP%",
                  "IIDval%");
    out << buf;
    for (std::size_t gi = 0; gi < report.grid_metrics.size(); ++gi) {
        const auto& gp = report.config.grid[gi];
        const auto& m = report.grid_metrics[gi];
        std::string name = std::string(to_string(gp.model.kind)) + "/" +
                           to_string(gp.train.strategy) + " L" + std::to_string(gp.model.layers) +
                           " h" + std::to_string(gp.model.hidden) + " lr" +
                           std::to_string(gp.train.lr);
        std::snprintf(buf, sizeof(buf), "%-42s %8.2f %8.2f %8.2f %8.2f%s\n", name.c_str(),
                      100.0 * m.mean_ood, 100.0 * m.std_ood, 100.0 * m.mean_gap,
                      100.0 * m.mean_iid_val,
                      static_cast<int>(gi) == report.selected ? "  <- selected" : "");
        out << buf;
    }
    return out.str();
}

} // namespace gnnood
