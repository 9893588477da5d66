#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "mib/estimators.hpp"
#include "mib/trace.hpp"
#include "mib/trainer.hpp"

namespace mib::bench {

// Ordered key=value pairs echoed at the top of every output file so a result
// can be traced back to the exact run configuration.
using ConfigEcho = std::vector<std::pair<std::string, std::string>>;

ConfigEcho train_config_echo(const TrainConfig& cfg);

// 17-significant-digit formatting: parsing the string recovers the exact bits.
std::string format_double(double v);

struct QualityRow {
    est::EstimatorId id = est::EstimatorId::VClub;
    Task task = Task::Gaussian;
    double level = 0.0;
    double bias = 0.0;
    double variance = 0.0;
    double mse = 0.0;
    std::string status = "ok";
};

struct QualityReport {
    ConfigEcho config;
    std::vector<QualityRow> rows;
};

// Bias / variance / mse of the estimates in the trailing window (by default
// the last 20%) of each level's iterations. mse is computed as
// bias^2 + variance, so that identity holds on every row by construction.
std::vector<QualityRow> quality_stats(const EstimateTrace& trace, double window_fraction = 0.2);

// Centered moving average with truncation at the edges; bandwidth 1 is the
// identity.
std::vector<double> smooth(const std::vector<double>& series, std::size_t bandwidth);

struct TimingRow {
    est::EstimatorId id = est::EstimatorId::VClub;
    std::size_t batch_size = 0;
    double mean_seconds = 0.0;
    std::size_t reps = 0;
};

struct TimingReport {
    ConfigEcho config;
    std::vector<TimingRow> rows;
};

// Wall-clock cost of one training update plus one estimate, averaged over
// `reps` repetitions after 5 untimed warm-up steps. Data generation happens
// up front and is excluded. Runs strictly serially.
TimingReport time_estimators(const std::vector<est::EstimatorId>& ids,
                             const std::vector<std::size_t>& batch_sizes,
                             std::size_t reps, const TrainConfig& cfg,
                             std::size_t dim = 20, double level_mi = 2.0);

// Least-squares slope of log(mean_seconds) against log(batch_size).
double loglog_slope(const TimingReport& report, est::EstimatorId id);

struct BenchmarkRequest {
    std::vector<est::EstimatorId> ids;
    std::vector<Task> tasks;
    std::vector<double> levels;
    std::size_t dim = 20;
    std::size_t seeds = 1;   // aggregate over train.seed, train.seed+1, ...
    std::size_t jobs = 1;    // worker threads over (estimator, task) cells
    TrainConfig train;
};

// Table 4 for the sampled estimators: each ids x tasks cell
// is run over the full level schedule (optionally for several seeds, pooling
// the windows) and reduced to per-level quality rows. A numeric failure marks
// the cell "diverged" instead of aborting. Row order is independent of jobs.
QualityReport run_benchmark(const BenchmarkRequest& request);

// The seven estimators benchmarked by default.
const std::vector<est::EstimatorId>& default_benchmark_ids();

// --- file formats ----------------------------------------------------------

void write_quality_csv(const QualityReport& report, const std::string& path,
                       bool with_status = true);
QualityReport read_quality_csv(const std::string& path);
void write_quality_json(const QualityReport& report, const std::string& path,
                        bool with_status = true);
QualityReport read_quality_json(const std::string& path);

void write_timing_csv(const TimingReport& report, const std::string& path);
TimingReport read_timing_csv(const std::string& path);
void write_timing_json(const TimingReport& report, const std::string& path);
TimingReport read_timing_json(const std::string& path);

void write_trace_csv(const EstimateTrace& trace, const ConfigEcho& config,
                     const std::string& path, std::size_t smooth_bandwidth);
void write_trace_json(const EstimateTrace& trace, const ConfigEcho& config,
                      const std::string& path, std::size_t smooth_bandwidth);

void write_minimize_csv(const MinimizeTrace& trace, const ConfigEcho& config,
                        const std::string& path);
void write_minimize_json(const MinimizeTrace& trace, const ConfigEcho& config,
                         const std::string& path);

}  // namespace mib::bench
