#include "mib/bench.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mib/errors.hpp"

namespace mib::bench {

using ordered_json = nlohmann::ordered_json;

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ConfigEcho train_config_echo(const TrainConfig& cfg) {
    return ConfigEcho{
        {"seed", std::to_string(cfg.seed)},
        {"batch_size", std::to_string(cfg.batch_size)},
        {"iters_per_level", std::to_string(cfg.iters_per_level)},
        {"learning_rate", format_double(cfg.learning_rate)},
        {"hidden_units", std::to_string(cfg.hidden_units)},
        {"approx_steps_per_iter", std::to_string(cfg.approx_steps_per_iter)},
        {"pairing", est::pairing_name(cfg.pairing)},
        {"mine_ema", cfg.mine_ema ? "true" : "false"},
        {"mine_ema_decay", format_double(cfg.mine_ema_decay)},
    };
}

// ---------------------------------------------------------------------------
// Statistics

namespace {

std::size_t window_size(std::size_t iters, double fraction) {
    if (!(fraction > 0.0 && fraction <= 1.0))
        throw ContractError("quality_stats: window fraction must lie in (0, 1]");
    const auto w = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(iters)));
    return std::min(iters, std::max<std::size_t>(1, w));
}

QualityRow stats_from_values(est::EstimatorId id, Task task, double level,
                             const std::vector<double>& values) {
    QualityRow row;
    row.id = id;
    row.task = task;
    row.level = level;
    double sum = 0.0;
    for (double v : values) sum += v;
    const double mean = sum / static_cast<double>(values.size());
    row.bias = mean - level;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    row.variance = values.size() > 1 ? ss / static_cast<double>(values.size() - 1) : 0.0;
    row.mse = row.bias * row.bias + row.variance;
    return row;
}

std::vector<double> window_values(const EstimateTrace& trace, std::size_t level_index,
                                  double fraction) {
    const std::size_t ipl = trace.iters_per_level;
    const std::size_t w = window_size(ipl, fraction);
    const std::size_t begin = level_index * ipl + (ipl - w);
    std::vector<double> out(w);
    for (std::size_t k = 0; k < w; ++k) out[k] = trace.points[begin + k].value;
    return out;
}

}  // namespace

std::vector<QualityRow> quality_stats(const EstimateTrace& trace, double window_fraction) {
    if (trace.levels.empty() || trace.iters_per_level == 0 ||
        trace.points.size() != trace.levels.size() * trace.iters_per_level)
        throw ContractError("quality_stats: trace does not cover levels x iters_per_level");
    std::vector<QualityRow> rows;
    rows.reserve(trace.levels.size());
    for (std::size_t li = 0; li < trace.levels.size(); ++li)
        rows.push_back(stats_from_values(trace.id, trace.task, trace.levels[li],
                                         window_values(trace, li, window_fraction)));
    return rows;
}

std::vector<double> smooth(const std::vector<double>& series, std::size_t bandwidth) {
    if (bandwidth == 0) throw ContractError("smooth: bandwidth must be positive");
    const std::size_t n = series.size();
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const long lo_raw = static_cast<long>(i) - static_cast<long>(bandwidth / 2);
        const long hi_raw = lo_raw + static_cast<long>(bandwidth) - 1;
        const std::size_t lo = lo_raw < 0 ? 0 : static_cast<std::size_t>(lo_raw);
        const std::size_t hi = hi_raw >= static_cast<long>(n) ? n - 1
                                                              : static_cast<std::size_t>(hi_raw);
        double acc = 0.0;
        for (std::size_t k = lo; k <= hi; ++k) acc += series[k];
        out[i] = acc / static_cast<double>(hi - lo + 1);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Timing

TimingReport time_estimators(const std::vector<est::EstimatorId>& ids,
                             const std::vector<std::size_t>& batch_sizes,
                             std::size_t reps, const TrainConfig& cfg,
                             std::size_t dim, double level_mi) {
    cfg.validate();
    if (ids.empty()) throw ContractError("time_estimators: no estimators given");
    if (batch_sizes.empty()) throw ContractError("time_estimators: no batch sizes given");
    for (std::size_t i = 0; i < batch_sizes.size(); ++i) {
        if (batch_sizes[i] < 2) throw ContractError("time_estimators: batch sizes must be >= 2");
        if (i > 0 && batch_sizes[i] <= batch_sizes[i - 1])
            throw ContractError("time_estimators: batch sizes must be strictly increasing");
    }
    if (reps < 30) throw ContractError("time_estimators: need at least 30 repetitions");

    constexpr std::size_t kWarmup = 5;
    const double rho = rho_for_mi(level_mi, dim);
    const CorrelatedGaussianSource src(dim, rho, /*cubic=*/false);

    TimingReport report;
    report.config = ConfigEcho{{"command", "timing"},
                               {"dim", std::to_string(dim)},
                               {"level", format_double(level_mi)},
                               {"reps", std::to_string(reps)}};
    for (const auto& [k, v] : train_config_echo(cfg)) report.config.emplace_back(k, v);

    for (est::EstimatorId id : ids) {
        for (std::size_t bs : batch_sizes) {
            EstimatorTrainer trainer(id, dim, dim, cfg);
            if (est::uses_known_conditional(id)) trainer.set_known_rho(rho);
            Rng data = Rng::stream(cfg.seed, 0);
            std::vector<Batch> batches;
            batches.reserve(kWarmup + reps);
            for (std::size_t k = 0; k < kWarmup + reps; ++k)
                batches.push_back(src.sample(bs, data));

            double total = 0.0;
            for (std::size_t k = 0; k < batches.size(); ++k) {
                const auto t0 = std::chrono::steady_clock::now();
                trainer.step(batches[k]);
                const auto t1 = std::chrono::steady_clock::now();
                if (k >= kWarmup)
                    total += std::chrono::duration<double>(t1 - t0).count();
            }
            TimingRow row;
            row.id = id;
            row.batch_size = bs;
            row.mean_seconds = total / static_cast<double>(reps);
            row.reps = reps;
            report.rows.push_back(row);
        }
    }
    return report;
}

double loglog_slope(const TimingReport& report, est::EstimatorId id) {
    std::vector<double> xs, ys;
    for (const TimingRow& row : report.rows) {
        if (row.id != id) continue;
        xs.push_back(std::log(static_cast<double>(row.batch_size)));
        ys.push_back(std::log(row.mean_seconds));
    }
    if (xs.size() < 2) throw ContractError("loglog_slope: need at least two batch sizes");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= static_cast<double>(xs.size());
    my /= static_cast<double>(xs.size());
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        num += (xs[i] - mx) * (ys[i] - my);
        den += (xs[i] - mx) * (xs[i] - mx);
    }
    return num / den;
}

// ---------------------------------------------------------------------------
// Benchmark grid

const std::vector<est::EstimatorId>& default_benchmark_ids() {
    static const std::vector<est::EstimatorId> ids = {
        est::EstimatorId::Nwj,    est::EstimatorId::Mine,
        est::EstimatorId::InfoNce, est::EstimatorId::VVub,
        est::EstimatorId::VL1Out, est::EstimatorId::VClub,
        est::EstimatorId::VClubSample};
    return ids;
}

QualityReport run_benchmark(const BenchmarkRequest& request) {
    request.train.validate();
    if (request.ids.empty()) throw ContractError("run_benchmark: no estimators given");
    if (request.tasks.empty()) throw ContractError("run_benchmark: no tasks given");
    if (request.levels.empty()) throw ContractError("run_benchmark: no levels given");
    if (request.dim == 0) throw ContractError("run_benchmark: dim must be positive");
    if (request.seeds == 0) throw ContractError("run_benchmark: seeds must be positive");
    if (request.jobs == 0) throw ContractError("run_benchmark: jobs must be positive");
    for (est::EstimatorId id : request.ids)
        for (Task task : request.tasks)
            if (task == Task::Cubic && est::uses_known_conditional(id))
                throw ContractError(
                    std::string("run_benchmark: ") + est::estimator_name(id) +
                    " needs the closed-form conditional, which the cubic task does not have");

    struct Cell {
        est::EstimatorId id;
        Task task;
    };
    std::vector<Cell> cells;
    for (est::EstimatorId id : request.ids)
        for (Task task : request.tasks) cells.push_back(Cell{id, task});

    std::vector<std::vector<QualityRow>> results(cells.size());
    std::vector<std::exception_ptr> errors(cells.size());
    std::atomic<std::size_t> next{0};

    const auto run_cell = [&](std::size_t ci) {
        const Cell& cell = cells[ci];
        try {
            std::vector<std::vector<double>> pooled(request.levels.size());
            for (std::size_t s = 0; s < request.seeds; ++s) {
                TrainConfig cfg = request.train;
                cfg.seed = request.train.seed + s;
                const EstimateTrace trace = estimate_over_schedule(
                    cell.id, cell.task, request.levels, request.dim, cfg);
                for (std::size_t li = 0; li < request.levels.size(); ++li) {
                    auto w = window_values(trace, li, 0.2);
                    pooled[li].insert(pooled[li].end(), w.begin(), w.end());
                }
            }
            for (std::size_t li = 0; li < request.levels.size(); ++li)
                results[ci].push_back(stats_from_values(cell.id, cell.task,
                                                        request.levels[li], pooled[li]));
        } catch (const NumericError&) {
            for (double level : request.levels) {
                QualityRow row;
                row.id = cell.id;
                row.task = cell.task;
                row.level = level;
                row.bias = row.variance = row.mse = kNaN;
                row.status = "diverged";
                results[ci].push_back(row);
            }
        } catch (...) {
            errors[ci] = std::current_exception();
        }
    };

    const std::size_t workers = std::min(request.jobs, cells.size());
    if (workers <= 1) {
        for (std::size_t ci = 0; ci < cells.size(); ++ci) run_cell(ci);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w)
            pool.emplace_back([&] {
                for (;;) {
                    const std::size_t ci = next.fetch_add(1);
                    if (ci >= cells.size()) return;
                    run_cell(ci);
                }
            });
        for (auto& t : pool) t.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);

    QualityReport report;
    std::string id_list, task_list, level_list;
    for (est::EstimatorId id : request.ids)
        id_list += std::string(id_list.empty() ? "" : ",") + est::estimator_name(id);
    for (Task task : request.tasks)
        task_list += std::string(task_list.empty() ? "" : ",") + task_name(task);
    for (double level : request.levels)
        level_list += (level_list.empty() ? "" : ",") + format_double(level);
    report.config = ConfigEcho{{"command", "benchmark"}, {"estimators", id_list},
                               {"tasks", task_list},     {"levels", level_list},
                               {"dim", std::to_string(request.dim)},
                               {"seeds", std::to_string(request.seeds)},
                               {"jobs", std::to_string(request.jobs)}};
    for (const auto& [k, v] : train_config_echo(request.train))
        report.config.emplace_back(k, v);
    for (auto& rows : results)
        for (auto& row : rows) report.rows.push_back(std::move(row));
    return report;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

std::ofstream open_out(const std::string& path) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(p.parent_path(), ec);
    }
    std::ofstream f(path);
    if (!f) throw IoError("cannot open " + path + " for writing");
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path + " for reading");
    return f;
}

void write_config_comments(std::ofstream& f, const ConfigEcho& config) {
    for (const auto& [k, v] : config) f << "# " << k << "=" << v << "\n";
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, const std::string& path) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str()) throw IoError(path + ": malformed number '" + s + "'");
    return v;
}

est::EstimatorId parse_id_or_throw(const std::string& s, const std::string& path) {
    const auto id = est::parse_estimator(s);
    if (!id) throw IoError(path + ": unknown estimator '" + s + "'");
    return *id;
}

Task parse_task_or_throw(const std::string& s, const std::string& path) {
    if (s == "gaussian") return Task::Gaussian;
    if (s == "cubic") return Task::Cubic;
    throw IoError(path + ": unknown task '" + s + "'");
}

// Reads config comments and the header; returns remaining data lines.
std::vector<std::string> read_csv_body(std::ifstream& f, const std::string& path,
                                       const std::string& expected_header, ConfigEcho& config) {
    std::string line;
    bool header_seen = false;
    std::vector<std::string> body;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::string kv = line.substr(1);
            if (!kv.empty() && kv[0] == ' ') kv = kv.substr(1);
            const auto eq = kv.find('=');
            if (eq != std::string::npos)
                config.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
            continue;
        }
        if (!header_seen) {
            if (line != expected_header)
                throw IoError(path + ": unexpected header '" + line + "'");
            header_seen = true;
            continue;
        }
        body.push_back(line);
    }
    if (!header_seen) throw IoError(path + ": missing header");
    return body;
}

ordered_json config_to_json(const ConfigEcho& config) {
    ordered_json j = ordered_json::object();
    for (const auto& [k, v] : config) j[k] = v;
    return j;
}

ConfigEcho config_from_json(const ordered_json& j) {
    ConfigEcho out;
    if (j.is_object())
        for (const auto& [k, v] : j.items()) out.emplace_back(k, v.get<std::string>());
    return out;
}

double json_double(const ordered_json& j) {
    return j.is_null() ? kNaN : j.get<double>();
}

// NaN has no JSON literal; emit null and map it back on read.
ordered_json double_to_json(double v) {
    if (std::isnan(v)) return nullptr;
    return v;
}

ordered_json load_json(const std::string& path) {
    auto f = open_in(path);
    ordered_json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return j;
}

}  // namespace

void write_quality_csv(const QualityReport& report, const std::string& path, bool with_status) {
    auto f = open_out(path);
    write_config_comments(f, report.config);
    f << "estimator,task,level,bias,variance,mse" << (with_status ? ",status" : "") << "\n";
    for (const QualityRow& row : report.rows) {
        f << est::estimator_name(row.id) << "," << task_name(row.task) << ","
          << format_double(row.level) << "," << format_double(row.bias) << ","
          << format_double(row.variance) << "," << format_double(row.mse);
        if (with_status) f << "," << row.status;
        f << "\n";
    }
    if (!f) throw IoError("failed while writing " + path);
}

QualityReport read_quality_csv(const std::string& path) {
    auto f = open_in(path);
    QualityReport report;
    std::string line;
    bool header_seen = false, with_status = false;
    std::vector<std::string> body;
    while (std::getline(f, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            std::string kv = line.substr(1);
            if (!kv.empty() && kv[0] == ' ') kv = kv.substr(1);
            const auto eq = kv.find('=');
            if (eq != std::string::npos)
                report.config.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
            continue;
        }
        if (!header_seen) {
            if (line == "estimator,task,level,bias,variance,mse,status")
                with_status = true;
            else if (line != "estimator,task,level,bias,variance,mse")
                throw IoError(path + ": unexpected header '" + line + "'");
            header_seen = true;
            continue;
        }
        body.push_back(line);
    }
    if (!header_seen) throw IoError(path + ": missing header");
    for (const std::string& row_line : body) {
        const auto fields = split_csv_line(row_line);
        if (fields.size() != (with_status ? 7u : 6u))
            throw IoError(path + ": wrong field count in '" + row_line + "'");
        QualityRow row;
        row.id = parse_id_or_throw(fields[0], path);
        row.task = parse_task_or_throw(fields[1], path);
        row.level = parse_double(fields[2], path);
        row.bias = parse_double(fields[3], path);
        row.variance = parse_double(fields[4], path);
        row.mse = parse_double(fields[5], path);
        if (with_status) row.status = fields[6];
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_quality_json(const QualityReport& report, const std::string& path, bool with_status) {
    ordered_json j;
    j["config"] = config_to_json(report.config);
    j["rows"] = ordered_json::array();
    for (const QualityRow& row : report.rows) {
        ordered_json r;
        r["estimator"] = est::estimator_name(row.id);
        r["task"] = task_name(row.task);
        r["level"] = row.level;
        r["bias"] = double_to_json(row.bias);
        r["variance"] = double_to_json(row.variance);
        r["mse"] = double_to_json(row.mse);
        if (with_status) r["status"] = row.status;
        j["rows"].push_back(std::move(r));
    }
    auto f = open_out(path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

QualityReport read_quality_json(const std::string& path) {
    const ordered_json j = load_json(path);
    QualityReport report;
    report.config = config_from_json(j.value("config", ordered_json::object()));
    for (const auto& r : j.value("rows", ordered_json::array())) {
        QualityRow row;
        row.id = parse_id_or_throw(r.at("estimator").get<std::string>(), path);
        row.task = parse_task_or_throw(r.at("task").get<std::string>(), path);
        row.level = json_double(r.at("level"));
        row.bias = json_double(r.at("bias"));
        row.variance = json_double(r.at("variance"));
        row.mse = json_double(r.at("mse"));
        if (r.contains("status")) row.status = r.at("status").get<std::string>();
        report.rows.push_back(std::move(row));
    }
    return report;
}

void write_timing_csv(const TimingReport& report, const std::string& path) {
    auto f = open_out(path);
    write_config_comments(f, report.config);
    f << "estimator,batch_size,mean_seconds,reps\n";
    for (const TimingRow& row : report.rows)
        f << est::estimator_name(row.id) << "," << row.batch_size << ","
          << format_double(row.mean_seconds) << "," << row.reps << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

TimingReport read_timing_csv(const std::string& path) {
    auto f = open_in(path);
    TimingReport report;
    const auto body = read_csv_body(f, path, "estimator,batch_size,mean_seconds,reps",
                                    report.config);
    for (const std::string& row_line : body) {
        const auto fields = split_csv_line(row_line);
        if (fields.size() != 4)
            throw IoError(path + ": wrong field count in '" + row_line + "'");
        TimingRow row;
        row.id = parse_id_or_throw(fields[0], path);
        row.batch_size = static_cast<std::size_t>(parse_double(fields[1], path));
        row.mean_seconds = parse_double(fields[2], path);
        row.reps = static_cast<std::size_t>(parse_double(fields[3], path));
        report.rows.push_back(row);
    }
    return report;
}

void write_timing_json(const TimingReport& report, const std::string& path) {
    ordered_json j;
    j["config"] = config_to_json(report.config);
    j["rows"] = ordered_json::array();
    for (const TimingRow& row : report.rows) {
        ordered_json r;
        r["estimator"] = est::estimator_name(row.id);
        r["batch_size"] = row.batch_size;
        r["mean_seconds"] = double_to_json(row.mean_seconds);
        r["reps"] = row.reps;
        j["rows"].push_back(std::move(r));
    }
    auto f = open_out(path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

TimingReport read_timing_json(const std::string& path) {
    const ordered_json j = load_json(path);
    TimingReport report;
    report.config = config_from_json(j.value("config", ordered_json::object()));
    for (const auto& r : j.value("rows", ordered_json::array())) {
        TimingRow row;
        row.id = parse_id_or_throw(r.at("estimator").get<std::string>(), path);
        row.batch_size = r.at("batch_size").get<std::size_t>();
        row.mean_seconds = json_double(r.at("mean_seconds"));
        row.reps = r.at("reps").get<std::size_t>();
        report.rows.push_back(row);
    }
    return report;
}

void write_trace_csv(const EstimateTrace& trace, const ConfigEcho& config,
                     const std::string& path, std::size_t smooth_bandwidth) {
    std::vector<double> values(trace.points.size());
    for (std::size_t i = 0; i < trace.points.size(); ++i) values[i] = trace.points[i].value;
    const std::vector<double> smoothed = smooth(values, smooth_bandwidth);
    auto f = open_out(path);
    write_config_comments(f, config);
    f << "iter,true_mi,estimate,smoothed\n";
    for (std::size_t i = 0; i < trace.points.size(); ++i)
        f << trace.points[i].iter << "," << format_double(trace.points[i].true_mi) << ","
          << format_double(trace.points[i].value) << "," << format_double(smoothed[i]) << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

void write_trace_json(const EstimateTrace& trace, const ConfigEcho& config,
                      const std::string& path, std::size_t smooth_bandwidth) {
    std::vector<double> values(trace.points.size());
    for (std::size_t i = 0; i < trace.points.size(); ++i) values[i] = trace.points[i].value;
    const std::vector<double> smoothed = smooth(values, smooth_bandwidth);
    ordered_json j;
    j["config"] = config_to_json(config);
    j["points"] = ordered_json::array();
    for (std::size_t i = 0; i < trace.points.size(); ++i) {
        ordered_json p;
        p["iter"] = trace.points[i].iter;
        p["true_mi"] = double_to_json(trace.points[i].true_mi);
        p["estimate"] = double_to_json(trace.points[i].value);
        p["smoothed"] = double_to_json(smoothed[i]);
        j["points"].push_back(std::move(p));
    }
    auto f = open_out(path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

void write_minimize_csv(const MinimizeTrace& trace, const ConfigEcho& config,
                        const std::string& path) {
    auto f = open_out(path);
    write_config_comments(f, config);
    f << "iter,estimate,true_mi,diverged\n";
    for (const MinimizePoint& p : trace.points)
        f << p.iter << "," << format_double(p.estimate) << "," << format_double(p.true_mi)
          << "," << (p.diverged ? 1 : 0) << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

void write_minimize_json(const MinimizeTrace& trace, const ConfigEcho& config,
                         const std::string& path) {
    ordered_json j;
    j["config"] = config_to_json(config);
    j["points"] = ordered_json::array();
    for (const MinimizePoint& p : trace.points) {
        ordered_json q;
        q["iter"] = p.iter;
        q["estimate"] = double_to_json(p.estimate);
        q["true_mi"] = double_to_json(p.true_mi);
        q["diverged"] = p.diverged;
        j["points"].push_back(std::move(q));
    }
    j["any_divergence"] = trace.any_divergence;
    auto f = open_out(path);
    f << j.dump(2) << "\n";
    if (!f) throw IoError("failed while writing " + path);
}

}  // namespace mib::bench
