#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mfx/config.hpp"
#include "mfx/manifold.hpp"
#include "mfx/train.hpp"

namespace mfx {

// Stream tags for derive_seed; every random choice in a run comes from
// derive_seed(experiment_seed, {seed, plan, tag}).
enum SeedTag : std::uint64_t {
    kTagSplit = 1,
    kTagMetricBatch,
    kTagInit,
    kTagBaseTrain,
    kTagDuplicate,
    kTagExpandedTrain,
    kTagChain,
};

struct PlanInfo {
    std::size_t index = 0;
    std::string name;  // e.g. "C1(10)"
    double factor = 1.0;
    std::size_t width = 0;
};

std::vector<PlanInfo> expansion_plans(const ExperimentConfig& config, const Model& base);

struct ExperimentRecord {
    std::uint64_t seed = 0;
    std::string plan;
    std::size_t epoch = 0;
    double acc = 0.0;
    double gain = 0.0;       // G_t
    double best_gain = 0.0;  // max of G_0 .. G_t
    std::optional<double> manifold_metric;
    std::map<ProxyKind, double> proxies;  // zero-cost proxies, epoch 0 only
    std::optional<double> sotl_e;         // epochs >= 1

    friend bool operator==(const ExperimentRecord&, const ExperimentRecord&) = default;
};

struct EdgeRow {
    std::string plan;
    std::size_t i = 0;
    double barrier = 0.0;
    bool is_edge = false;
};

struct SeedOutcome {
    std::uint64_t seed = 0;
    double base_accuracy = 0.0;
    std::size_t base_epochs = 0;
    std::size_t base_best_epoch = 0;
    double lambda = 0.0;
    double base_ratio = 0.0;
    std::vector<EdgeRow> edges;     // t = 0 chains: base and every plan
    std::vector<SweepCell> sweep;   // t = 0, every (q, n)
};

struct PlanFailure {
    std::uint64_t seed = 0;
    std::string plan;
    std::string diagnostics;
};

struct ExperimentResult {
    std::vector<PlanInfo> plans;
    std::vector<ExperimentRecord> records;  // ordered by (seed, plan, epoch)
    std::vector<SeedOutcome> seeds;
    std::vector<PlanFailure> failures;
};

struct RunOptions {
    unsigned threads = 1;  // worker pool over seeds and (seed, plan) cells
    std::function<void(const std::string&)> log;
};

// Data, metric batch and base model of one seed; shared by all its plans.
struct SeedContext {
    std::uint64_t seed = 0;
    BaseModel base;
    BarrierSampleSet base_chain;
};

struct ExperimentData {
    DataSplit split;
    Batch metric_batch;
};

ExperimentData prepare_data(const ExperimentConfig& config);
// Training examples that make up the metric batch, in batch order.
std::vector<std::size_t> metric_batch_indices(const ExperimentConfig& config);

SeedContext train_base(const ExperimentConfig& config, const ExperimentData& data, std::uint64_t seed);

ExperimentResult run_expansion_experiment(const ExperimentConfig& config, const RunOptions& options = {});

// CSV columns of experiments.csv, in order.
std::vector<std::string> experiment_columns();
void write_experiments_csv(std::ostream& out, const std::vector<ExperimentRecord>& records);
std::vector<ExperimentRecord> read_experiments_csv(std::istream& in);
void write_edges_csv(std::ostream& out, const std::vector<EdgeRow>& rows);
void write_sweep_csv(std::ostream& out, const std::vector<SweepCell>& cells);

// Checks G*_t == max(G_0..G_t) per (seed, plan), contiguous epochs from 0 and
// G_0 == 0. Returns a description of the first violation, or nullopt.
std::optional<std::string> check_records(const std::vector<ExperimentRecord>& records);

// Value of a named column ("manifold_metric", a proxy name or "sotl_e") with a
// uniform higher-is-better orientation.
std::optional<double> metric_value(const ExperimentRecord& record, const std::string& metric);

struct CoefficientStats {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation across seeds; 0 for one value
    std::size_t used = 0;
    std::size_t degenerate = 0;
    std::vector<std::optional<double>> per_seed;
};

struct CorrelationReport {
    std::string metric;
    std::size_t epoch = 0;  // epoch at which the metric is read
    std::vector<std::uint64_t> seeds;
    CoefficientStats kendall, spearman, pearson;  // per seed, then averaged
    std::optional<double> pooled_kendall, pooled_spearman, pooled_pearson;  // all seeds in one series
};

// Correlates `metric` read at `epoch` with G*_T (best_gain at each plan's last
// epoch) across plans, per seed.
CorrelationReport correlate(const std::vector<ExperimentRecord>& records, const std::string& metric,
                            std::size_t epoch = 0);

// Writes experiments.csv, per-seed edges.csv and sweep.csv, and the figure
// data files into `dir`.
void write_experiment_outputs(const ExperimentResult& result, const ExperimentConfig& config,
                              const std::filesystem::path& dir);

std::string format_number(double v);

}  // namespace mfx
