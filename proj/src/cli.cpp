#include "mib/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mib/bench.hpp"
#include "mib/errors.hpp"
#include "mib/trainer.hpp"

namespace mib::cli {

namespace {

std::string default_out_dir() {
    const char* env = std::getenv("MIB_OUT_DIR");
    return env && *env ? env : ".";
}

struct CommonOpts {
    std::string out = default_out_dir();
    std::string format = "csv";
    std::string pairing = "allpairs";
    TrainConfig train;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--out", o.out, "output directory (default: $MIB_OUT_DIR or .)");
    cmd->add_option("--format", o.format, "output format")
        ->check(CLI::IsMember({"csv", "json"}));
    cmd->add_option("--seed", o.train.seed, "base random seed");
    cmd->add_option("--batch-size", o.train.batch_size, "samples per training batch");
    cmd->add_option("--iters", o.train.iters_per_level, "training iterations per level");
    cmd->add_option("--lr", o.train.learning_rate, "Adam learning rate");
    cmd->add_option("--hidden", o.train.hidden_units, "hidden units in the approximation nets");
    cmd->add_option("--approx-steps", o.train.approx_steps_per_iter,
                    "approximation updates per outer iteration");
    cmd->add_option("--pairing", o.pairing, "negative pairing for critic bounds")
        ->check(CLI::IsMember({"allpairs", "shuffle"}));
    cmd->add_flag("--mine-ema", o.train.mine_ema,
                  "use the moving-average gradient correction for mine");
    // Options in a --config file sit under a section named after the
    // subcommand; the flag itself lives on the top-level app (config files are
    // only processed there), so let unmatched options bubble up to it.
    cmd->fallthrough();
}

void finish_common(CommonOpts& o) {
    o.train.pairing = *est::parse_pairing(o.pairing);
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

est::EstimatorId parse_id_arg(const std::string& name) {
    const auto id = est::parse_estimator(name);
    if (id) return *id;
    std::string valid;
    for (est::EstimatorId e : est::all_estimators())
        valid += std::string(valid.empty() ? "" : ", ") + est::estimator_name(e);
    throw ContractError("unknown estimator '" + name + "' (valid: " + valid + ")");
}

Task parse_task_arg(const std::string& name) {
    if (name == "gaussian") return Task::Gaussian;
    if (name == "cubic") return Task::Cubic;
    throw ContractError("unknown task '" + name + "' (valid: gaussian, cubic)");
}

std::string levels_string(const std::vector<double>& levels) {
    std::string s;
    for (double level : levels)
        s += (s.empty() ? "" : ",") + bench::format_double(level);
    return s;
}

// --- estimate --------------------------------------------------------------

struct EstimateOpts {
    CommonOpts common;
    std::string estimator;
    std::string task = "gaussian";
    std::vector<double> levels = {2.0, 4.0, 6.0, 8.0, 10.0};
    std::size_t dim = 20;
    std::size_t bandwidth = 200;
};

int cmd_estimate(EstimateOpts& o) {
    finish_common(o.common);
    const est::EstimatorId id = parse_id_arg(o.estimator);
    const Task task = parse_task_arg(o.task);
    if (o.bandwidth == 0) throw ContractError("--bandwidth must be positive");

    const EstimateTrace trace =
        estimate_over_schedule(id, task, o.levels, o.dim, o.common.train);

    bench::ConfigEcho echo{{"command", "estimate"},
                           {"estimator", est::estimator_name(id)},
                           {"task", task_name(task)},
                           {"levels", levels_string(o.levels)},
                           {"dim", std::to_string(o.dim)},
                           {"bandwidth", std::to_string(o.bandwidth)}};
    for (const auto& [k, v] : bench::train_config_echo(o.common.train)) echo.emplace_back(k, v);

    bench::QualityReport quality;
    quality.config = echo;
    quality.rows = bench::quality_stats(trace);

    const bool json = o.common.format == "json";
    const std::string trace_path = join_path(o.common.out, json ? "trace.json" : "trace.csv");
    const std::string quality_path =
        join_path(o.common.out, json ? "quality.json" : "quality.csv");
    if (json) {
        bench::write_trace_json(trace, echo, trace_path, o.bandwidth);
        bench::write_quality_json(quality, quality_path, /*with_status=*/false);
    } else {
        bench::write_trace_csv(trace, echo, trace_path, o.bandwidth);
        bench::write_quality_csv(quality, quality_path, /*with_status=*/false);
    }

    for (const bench::QualityRow& row : quality.rows)
        std::printf("%s %s level %.3g: bias %+.4f variance %.4f mse %.4f\n",
                    est::estimator_name(row.id), task_name(row.task), row.level, row.bias,
                    row.variance, row.mse);
    std::printf("wrote %s\nwrote %s\n", trace_path.c_str(), quality_path.c_str());
    return 0;
}

// --- benchmark -------------------------------------------------------------

struct BenchmarkOpts {
    CommonOpts common;
    std::vector<std::string> estimators;
    std::vector<std::string> tasks = {"gaussian", "cubic"};
    std::vector<double> levels = {2.0, 4.0, 6.0, 8.0, 10.0};
    std::size_t dim = 20;
    std::size_t seeds = 1;
    std::size_t jobs = 1;
};

int cmd_benchmark(BenchmarkOpts& o) {
    finish_common(o.common);
    bench::BenchmarkRequest req;
    if (o.estimators.empty()) {
        req.ids = bench::default_benchmark_ids();
    } else {
        for (const std::string& name : o.estimators) req.ids.push_back(parse_id_arg(name));
    }
    for (const std::string& name : o.tasks) req.tasks.push_back(parse_task_arg(name));
    req.levels = o.levels;
    req.dim = o.dim;
    req.seeds = o.seeds;
    req.jobs = o.jobs;
    req.train = o.common.train;

    const bench::QualityReport report = bench::run_benchmark(req);

    const bool json = o.common.format == "json";
    const std::string path = join_path(o.common.out, json ? "quality.json" : "quality.csv");
    if (json)
        bench::write_quality_json(report, path);
    else
        bench::write_quality_csv(report, path);

    std::size_t diverged = 0;
    for (const bench::QualityRow& row : report.rows)
        if (row.status != "ok") ++diverged;
    std::printf("%zu rows (%zu diverged), wrote %s\n", report.rows.size(), diverged,
                path.c_str());
    return 0;
}

// --- minimize --------------------------------------------------------------

struct MinimizeOpts {
    CommonOpts common;
    std::string estimator = "vclub-s";
    std::size_t dim = 4;
    double init_mi = 2.0;
    std::size_t max_iters = 2000;
    std::size_t eval_every = 50;
    bool freeze_channel = false;
    bool no_sampling = false;
};

int cmd_minimize(MinimizeOpts& o) {
    finish_common(o.common);
    MinimizeConfig cfg;
    cfg.estimator = parse_id_arg(o.estimator);
    if (o.no_sampling) {
        if (cfg.estimator != est::EstimatorId::VClubSample)
            throw ContractError("--no-sampling only applies to the vclub-s estimator");
        cfg.estimator = est::EstimatorId::VClub;
    }
    cfg.dim = o.dim;
    cfg.init_true_mi = o.init_mi;
    cfg.max_iters = o.max_iters;
    cfg.mi_eval_every = o.eval_every;
    cfg.freeze_channel = o.freeze_channel;
    cfg.train = o.common.train;
    cfg.validate();

    LinearGaussianChannel channel = LinearGaussianChannel::with_true_mi(
        cfg.dim, cfg.init_true_mi, cfg.train.seed ^ 0x6368616e6e656cULL);
    const double start_mi = channel.true_mi();
    const MinimizeTrace trace = minimize_mi(channel, cfg);

    bench::ConfigEcho echo{{"command", "minimize"},
                           {"estimator", est::estimator_name(cfg.estimator)},
                           {"dim", std::to_string(cfg.dim)},
                           {"init_mi", bench::format_double(cfg.init_true_mi)},
                           {"max_iters", std::to_string(cfg.max_iters)},
                           {"eval_every", std::to_string(cfg.mi_eval_every)},
                           {"freeze_channel", cfg.freeze_channel ? "true" : "false"}};
    for (const auto& [k, v] : bench::train_config_echo(cfg.train)) echo.emplace_back(k, v);

    const bool json = o.common.format == "json";
    const std::string path = join_path(o.common.out, json ? "minimize.json" : "minimize.csv");
    if (json)
        bench::write_minimize_json(trace, echo, path);
    else
        bench::write_minimize_csv(trace, echo, path);

    const double final_mi = channel.true_mi();
    std::printf("true MI %.4f -> %.4f over %zu iterations%s\nwrote %s\n", start_mi, final_mi,
                o.max_iters, trace.any_divergence ? " (divergence flagged)" : "",
                path.c_str());
    return 0;
}

// --- timing ----------------------------------------------------------------

struct TimingOpts {
    CommonOpts common;
    std::vector<std::string> estimators;
    std::vector<std::size_t> batches = {32, 64, 128, 256, 512};
    std::size_t reps = 50;
    std::size_t dim = 20;
};

int cmd_timing(TimingOpts& o) {
    finish_common(o.common);
    std::vector<est::EstimatorId> ids;
    if (o.estimators.empty()) {
        ids = bench::default_benchmark_ids();
    } else {
        for (const std::string& name : o.estimators) ids.push_back(parse_id_arg(name));
    }
    const bench::TimingReport report =
        bench::time_estimators(ids, o.batches, o.reps, o.common.train, o.dim);

    const bool json = o.common.format == "json";
    const std::string path = join_path(o.common.out, json ? "timing.json" : "timing.csv");
    if (json)
        bench::write_timing_json(report, path);
    else
        bench::write_timing_csv(report, path);

    for (est::EstimatorId id : ids)
        std::printf("%s: log-log slope %.3f\n", est::estimator_name(id),
                    bench::loglog_slope(report, id));
    std::printf("wrote %s\n", path.c_str());
    return 0;
}

}  // namespace

int run(int argc, const char* const* argv) {
    CLI::App app{"mutual information bounds: estimation, benchmarking, minimization"};
    app.require_subcommand(1);
    app.set_config("--config", "",
                   "INI-style options file; put options in a [subcommand] section");

    EstimateOpts eo;
    CLI::App* estimate = app.add_subcommand("estimate", "train one estimator across MI levels");
    add_common(estimate, eo.common);
    estimate->add_option("--estimator", eo.estimator, "estimator id")->required();
    estimate->add_option("--task", eo.task, "data distribution")
        ->check(CLI::IsMember({"gaussian", "cubic"}));
    estimate->add_option("--levels", eo.levels, "target MI staircase")->delimiter(',');
    estimate->add_option("--dim", eo.dim, "sample dimension");
    estimate->add_option("--bandwidth", eo.bandwidth, "smoothing window for the trace output");

    BenchmarkOpts bo;
    CLI::App* benchmark = app.add_subcommand("benchmark", "estimator x task quality grid");
    add_common(benchmark, bo.common);
    benchmark->add_option("--estimators", bo.estimators, "estimator ids")->delimiter(',');
    benchmark->add_option("--tasks", bo.tasks, "data distributions")->delimiter(',');
    benchmark->add_option("--levels", bo.levels, "target MI staircase")->delimiter(',');
    benchmark->add_option("--dim", bo.dim, "sample dimension");
    benchmark->add_option("--seeds", bo.seeds, "number of seeds to aggregate");
    benchmark->add_option("--jobs", bo.jobs, "worker threads");

    MinimizeOpts mo;
    CLI::App* minimize = app.add_subcommand("minimize", "drive a channel's MI toward zero");
    add_common(minimize, mo.common);
    minimize->add_option("--estimator", mo.estimator, "estimator to descend");
    minimize->add_option("--dim", mo.dim, "channel dimension");
    minimize->add_option("--init-mi", mo.init_mi, "initial true MI of the channel");
    minimize->add_option("--max-iters", mo.max_iters, "minimization iterations");
    minimize->add_option("--eval-every", mo.eval_every, "exact MI evaluation cadence");
    minimize->add_flag("--freeze-channel", mo.freeze_channel,
                       "ablation: never update the channel");
    minimize->add_flag("--no-sampling", mo.no_sampling,
                       "use the all-pairs negative term instead of sampling");

    TimingOpts to;
    CLI::App* timing = app.add_subcommand("timing", "per-iteration cost vs batch size");
    add_common(timing, to.common);
    timing->add_option("--estimators", to.estimators, "estimator ids")->delimiter(',');
    timing->add_option("--batches", to.batches, "batch sizes, strictly increasing")
        ->delimiter(',');
    timing->add_option("--reps", to.reps, "timed repetitions per cell");
    timing->add_option("--dim", to.dim, "sample dimension");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (estimate->parsed()) return cmd_estimate(eo);
        if (benchmark->parsed()) return cmd_benchmark(bo);
        if (minimize->parsed()) return cmd_minimize(mo);
        return cmd_timing(to);
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numeric error: %s\n", e.what());
        return 3;
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return 1;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

}  // namespace mib::cli
