#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnnood/generators.hpp"
#include "gnnood/graph.hpp"
#include "gnnood/models.hpp"
#include "gnnood/stats.hpp"
#include "gnnood/strategies.hpp"

namespace gnnood {

using Json = nlohmann::ordered_json;

// One seed's outcome for a grid point.
struct RunResult {
    std::uint64_t seed = 0;
    double iid_val_acc = 0.0;
    double ood_val_acc = 0.0;
    double iid_test_acc = 0.0;
    double ood_test_acc = 0.0;
    int best_epoch = -1;
    bool aborted = false;
    std::string abort_reason;

    double gap_value() const { return gap(iid_test_acc, ood_test_acc); }
};

// Per-grid-point aggregate: the content of one table row. Aborted runs are
// excluded from the means and flagged.
struct MetricsReport {
    std::vector<RunResult> runs;
    int aborted = 0;
    double mean_iid_val = 0.0;
    double mean_iid_test = 0.0;
    double mean_ood = 0.0;
    double std_ood = 0.0;
    double mean_gap = 0.0;
    double std_gap = 0.0;

    static MetricsReport from_runs(std::vector<RunResult> runs);
    std::vector<double> ood_per_seed() const; // completed runs only
};

struct GridPoint {
    ModelSpec model;
    TrainPlan train; // seed field unused; per-run seeds come from the config
};

// Dataset source: a graph file or one of the synthetic generators.
struct DatasetSource {
    std::string path; // non-empty -> load from file
    bool use_generator = false;
    std::string generator_kind; // "covariate" | "concept"
    GeneratorConfig generator;
    double corr_train = 0.9;
    double corr_ood = 0.1;
    std::uint64_t seed = 0;

    Graph realize() const;
};

struct ExperimentConfig {
    DatasetSource dataset;
    std::vector<GridPoint> grid; // cartesian product, declaration order
    std::vector<std::uint64_t> seeds;
    std::string output_path;
    std::optional<std::string> baseline_report;
    Json echo; // the parsed config document, echoed into the report

    void validate() const;
};

// Parses the JSON config document; grid axes are arrays and expand to their
// cartesian product. paper_grid restricts hyperparameters to the published
// search space.
ExperimentConfig parse_experiment_config(const Json& doc, bool paper_grid);
ExperimentConfig load_experiment_config(const std::string& path, bool paper_grid);

struct Report {
    ExperimentConfig config;
    Json dataset_summary;
    std::vector<MetricsReport> grid_metrics;
    int selected = -1; // grid index with maximal mean IID-validation accuracy
    std::optional<Json> significance_vs_baseline;
};

// Trains every grid point x seed (thread pool of `threads` workers; 0 means
// hardware concurrency) and selects by mean IID-validation accuracy. Fully
// deterministic for a fixed config, independent of thread count.
Report run_experiment(const ExperimentConfig& config, int threads = 1);

// Serializes the report; has no timestamp so reruns are byte-comparable.
Json report_json(const Report& report);

// Paired t-test between the selected grid points of two report documents
// (per-seed OOD test accuracies). Reports must share seeds and dataset.
Json compare_models(const Json& report_a, const Json& report_b);

// Table-6-shaped ablation: full DGat, gamma=1 (no self-attention in the
// propagation), GAT (no decoupling), DGat with an appended linear classifier.
struct AblationRow {
    std::string variant;
    MetricsReport metrics;
};
std::vector<AblationRow> ablation_suite(const ExperimentConfig& config, int threads = 1);
Json ablation_json(const std::vector<AblationRow>& rows);

// Human-readable table (percentages, two decimals) for terminal output.
std::string format_report_table(const Report& report);

int resolve_threads(int cli_threads); // GNNOOD_THREADS overrides

} // namespace gnnood
