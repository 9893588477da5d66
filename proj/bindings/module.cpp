#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "mib/bench.hpp"
#include "mib/distributions.hpp"
#include "mib/errors.hpp"
#include "mib/estimators.hpp"
#include "mib/rng.hpp"
#include "mib/trainer.hpp"

namespace py = pybind11;
using namespace mib;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a,
                 const char* name) {
    if (a.ndim() != 2) throw ContractError(std::string(name) + ": expected a 2-d array");
    Tensor t(static_cast<std::size_t>(a.shape(0)), static_cast<std::size_t>(a.shape(1)));
    std::memcpy(t.data(), a.data(), sizeof(double) * t.size());
    return t;
}

py::array_t<double> to_array(const Tensor& t) {
    py::array_t<double> a({t.rows(), t.cols()});
    std::memcpy(a.mutable_data(), t.data(), sizeof(double) * t.size());
    return a;
}

est::EstimatorId parse_id(const std::string& name) {
    const auto id = est::parse_estimator(name);
    if (!id) throw ContractError("unknown estimator '" + name + "'");
    return *id;
}

Task parse_task(const std::string& name) {
    if (name == "gaussian") return Task::Gaussian;
    if (name == "cubic") return Task::Cubic;
    throw ContractError("unknown task '" + name + "' (expected gaussian or cubic)");
}

Batch make_batch(const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
                 const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
    Batch b{to_tensor(x, "x"), to_tensor(y, "y")};
    if (b.x.rows() != b.y.rows()) throw ShapeError("x and y must have the same number of rows");
    return b;
}

py::dict trace_to_dict(const EstimateTrace& trace) {
    const std::size_t n = trace.points.size();
    py::array_t<long> iters(n);
    py::array_t<double> true_mi(n), value(n);
    for (std::size_t i = 0; i < n; ++i) {
        iters.mutable_at(i) = trace.points[i].iter;
        true_mi.mutable_at(i) = trace.points[i].true_mi;
        value.mutable_at(i) = trace.points[i].value;
    }
    py::dict d;
    d["estimator"] = est::estimator_name(trace.id);
    d["task"] = task_name(trace.task);
    d["dim"] = trace.dim;
    d["iters_per_level"] = trace.iters_per_level;
    d["levels"] = trace.levels;
    d["iter"] = iters;
    d["true_mi"] = true_mi;
    d["value"] = value;
    return d;
}

EstimateTrace trace_from_dict(const py::dict& d) {
    EstimateTrace trace;
    trace.id = parse_id(d["estimator"].cast<std::string>());
    trace.task = parse_task(d["task"].cast<std::string>());
    trace.dim = d["dim"].cast<std::size_t>();
    trace.iters_per_level = d["iters_per_level"].cast<std::size_t>();
    trace.levels = d["levels"].cast<std::vector<double>>();
    const auto iters = d["iter"].cast<py::array_t<long>>();
    const auto true_mi = d["true_mi"].cast<py::array_t<double>>();
    const auto value = d["value"].cast<py::array_t<double>>();
    const std::size_t n = static_cast<std::size_t>(iters.size());
    if (static_cast<std::size_t>(true_mi.size()) != n ||
        static_cast<std::size_t>(value.size()) != n)
        throw ShapeError("iter/true_mi/value arrays must have equal length");
    trace.points.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
        trace.points.push_back({iters.at(i), true_mi.at(i), value.at(i)});
    return trace;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Mutual information bounds: contrastive upper bounds, critic lower "
              "bounds, simulation benchmarks and MI minimisation.";

    py::class_<Rng>(m, "Rng", "Deterministic pseudo-random stream.")
        .def(py::init<std::uint64_t>(), py::arg("seed"))
        .def_static("stream", &Rng::stream, py::arg("seed"), py::arg("index"),
                    "Independent substream derived from (seed, index).");

    py::class_<TrainConfig>(m, "TrainConfig", "Training defaults for every estimator.")
        .def(py::init<>())
        .def_readwrite("batch_size", &TrainConfig::batch_size)
        .def_readwrite("iters_per_level", &TrainConfig::iters_per_level)
        .def_readwrite("learning_rate", &TrainConfig::learning_rate)
        .def_readwrite("hidden_units", &TrainConfig::hidden_units)
        .def_readwrite("approx_steps_per_iter", &TrainConfig::approx_steps_per_iter)
        .def_readwrite("seed", &TrainConfig::seed)
        .def_readwrite("mine_ema", &TrainConfig::mine_ema)
        .def_readwrite("mine_ema_decay", &TrainConfig::mine_ema_decay)
        .def_property(
            "pairing", [](const TrainConfig& c) { return std::string(est::pairing_name(c.pairing)); },
            [](TrainConfig& c, const std::string& name) {
                const auto p = est::parse_pairing(name);
                if (!p) throw ContractError("unknown pairing '" + name + "'");
                c.pairing = *p;
            })
        .def("validate", &TrainConfig::validate);

    py::class_<CorrelatedGaussianSource>(m, "Source",
                                         "Componentwise-correlated Gaussian pair source; cubic "
                                         "mode applies a fixed bijective (Wy)^3 transform.")
        .def(py::init<std::size_t, double, bool>(), py::arg("dim"), py::arg("rho"),
             py::arg("cubic") = false)
        .def_property_readonly("dim", &CorrelatedGaussianSource::dim)
        .def_property_readonly("rho", &CorrelatedGaussianSource::rho)
        .def_property_readonly("cubic", &CorrelatedGaussianSource::cubic)
        .def_property_readonly("true_mi", &CorrelatedGaussianSource::true_mi)
        .def(
            "sample",
            [](const CorrelatedGaussianSource& src, std::size_t n, Rng& rng) {
                const Batch b = src.sample(n, rng);
                return py::make_tuple(to_array(b.x), to_array(b.y));
            },
            py::arg("n"), py::arg("rng"), "Draw n paired rows; returns (x, y).");

    py::class_<LinearGaussianChannel>(m, "Channel",
                                      "y = Ax + eps linear-Gaussian channel with exact "
                                      "log-det mutual information.")
        .def_static("with_true_mi", &LinearGaussianChannel::with_true_mi, py::arg("dim"),
                    py::arg("target_mi"), py::arg("seed"))
        .def_property_readonly("dim", &LinearGaussianChannel::dim)
        .def_property_readonly("true_mi", &LinearGaussianChannel::true_mi)
        .def_property_readonly("a",
                               [](const LinearGaussianChannel& c) { return to_array(c.a()); })
        .def(
            "sample",
            [](const LinearGaussianChannel& c, std::size_t n, Rng& rng) {
                const Batch b = c.sample(n, rng);
                return py::make_tuple(to_array(b.x), to_array(b.y));
            },
            py::arg("n"), py::arg("rng"));

    m.def("estimators",
          [] {
              std::vector<std::string> names;
              for (const auto id : est::all_estimators()) names.push_back(est::estimator_name(id));
              return names;
          },
          "All estimator names, trainable and closed-form.");
    m.def("kind",
          [](const std::string& name) {
              return est::kind_of(parse_id(name)) == est::Kind::Upper ? "upper" : "lower";
          },
          py::arg("estimator"), "Whether the bound approaches MI from above or below.");
    m.def("rho_for_mi", &rho_for_mi, py::arg("mi"), py::arg("dim"),
          "Componentwise correlation giving the target MI at this dimension.");

    m.def(
        "known_estimate",
        [](const std::string& name, const CorrelatedGaussianSource& src,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
           const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
            return est::known_estimate(parse_id(name), src, make_batch(x, y)).value;
        },
        py::arg("estimator"), py::arg("source"), py::arg("x"), py::arg("y"),
        "Closed-form bound value using the source's exact conditional (club, vub, l1out).");

    py::class_<EstimatorTrainer>(m, "Trainer",
                                 "One estimator's trainable state plus optimizer. step() "
                                 "updates on the batch and evaluates the bound.")
        .def(py::init([](const std::string& name, std::size_t x_dim, std::size_t y_dim,
                         const TrainConfig& train) {
                 return EstimatorTrainer(parse_id(name), x_dim, y_dim, train);
             }),
             py::arg("estimator"), py::arg("x_dim"), py::arg("y_dim"),
             py::arg("train") = TrainConfig())
        .def_property_readonly("estimator",
                               [](const EstimatorTrainer& t) {
                                   return std::string(est::estimator_name(t.id()));
                               })
        .def_property_readonly("iterations", &EstimatorTrainer::iterations)
        .def("set_known_rho", &EstimatorTrainer::set_known_rho, py::arg("rho"))
        .def(
            "step",
            [](EstimatorTrainer& t,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
                const Batch b = make_batch(x, y);
                py::gil_scoped_release release;
                return t.step(b).value;
            },
            py::arg("x"), py::arg("y"))
        .def(
            "estimate",
            [](EstimatorTrainer& t,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& x,
               const py::array_t<double, py::array::c_style | py::array::forcecast>& y) {
                const Batch b = make_batch(x, y);
                py::gil_scoped_release release;
                return t.estimate(b).value;
            },
            py::arg("x"), py::arg("y"));

    m.def(
        "run_schedule",
        [](const std::string& name, const std::string& task, const std::vector<double>& levels,
           std::size_t dim, const TrainConfig& train) {
            const est::EstimatorId id = parse_id(name);
            const Task t = parse_task(task);
            EstimateTrace trace;
            {
                py::gil_scoped_release release;
                trace = estimate_over_schedule(id, t, levels, dim, train);
            }
            return trace_to_dict(trace);
        },
        py::arg("estimator"), py::arg("task") = "gaussian",
        py::arg("levels") = std::vector<double>{2.0, 4.0, 6.0, 8.0, 10.0}, py::arg("dim") = 20,
        py::arg("train") = TrainConfig(),
        "Train one estimator across the staircase of MI levels; returns the per-iteration "
        "trace as arrays.");

    m.def(
        "quality_stats",
        [](const py::dict& trace, double window_fraction) {
            const EstimateTrace t = trace_from_dict(trace);
            py::list rows;
            for (const auto& r : bench::quality_stats(t, window_fraction)) {
                py::dict d;
                d["estimator"] = est::estimator_name(r.id);
                d["task"] = task_name(r.task);
                d["level"] = r.level;
                d["bias"] = r.bias;
                d["variance"] = r.variance;
                d["mse"] = r.mse;
                d["status"] = r.status;
                rows.append(d);
            }
            return rows;
        },
        py::arg("trace"), py::arg("window_fraction") = 0.2,
        "Bias/variance/mse over the trailing window of each level.");

    m.def(
        "minimize",
        [](std::size_t dim, double init_true_mi, const std::string& estimator,
           std::size_t max_iters, std::size_t mi_eval_every, bool freeze_channel,
           std::uint64_t channel_seed, const TrainConfig& train) {
            MinimizeConfig cfg;
            cfg.estimator = parse_id(estimator);
            cfg.dim = dim;
            cfg.init_true_mi = init_true_mi;
            cfg.max_iters = max_iters;
            cfg.mi_eval_every = mi_eval_every;
            cfg.freeze_channel = freeze_channel;
            cfg.train = train;
            MinimizeTrace trace;
            double final_mi = 0.0;
            {
                py::gil_scoped_release release;
                LinearGaussianChannel channel =
                    LinearGaussianChannel::with_true_mi(dim, init_true_mi, channel_seed);
                trace = minimize_mi(channel, cfg);
                final_mi = channel.true_mi();
            }
            const std::size_t n = trace.points.size();
            py::array_t<long> iters(n);
            py::array_t<double> estimate(n), true_mi(n);
            py::array_t<bool> diverged(n);
            for (std::size_t i = 0; i < n; ++i) {
                iters.mutable_at(i) = trace.points[i].iter;
                estimate.mutable_at(i) = trace.points[i].estimate;
                true_mi.mutable_at(i) = trace.points[i].true_mi;
                diverged.mutable_at(i) = trace.points[i].diverged;
            }
            py::dict d;
            d["estimator"] = est::estimator_name(trace.id);
            d["iter"] = iters;
            d["estimate"] = estimate;
            d["true_mi"] = true_mi;
            d["diverged"] = diverged;
            d["any_divergence"] = trace.any_divergence;
            d["final_true_mi"] = final_mi;
            return d;
        },
        py::arg("dim") = 4, py::arg("init_true_mi") = 2.0, py::arg("estimator") = "vclub-s",
        py::arg("max_iters") = 2000, py::arg("mi_eval_every") = 50,
        py::arg("freeze_channel") = false, py::arg("channel_seed") = 7,
        py::arg("train") = TrainConfig(),
        "Drive a linear-Gaussian channel's MI down by descending the estimator; returns the "
        "minimisation trace with exact log-det MI checkpoints.");

    m.def(
        "time_estimators",
        [](const std::vector<std::string>& names, const std::vector<std::size_t>& batch_sizes,
           std::size_t reps, const TrainConfig& train, std::size_t dim, double level_mi) {
            std::vector<est::EstimatorId> ids;
            for (const auto& n : names) ids.push_back(parse_id(n));
            bench::TimingReport report;
            {
                py::gil_scoped_release release;
                report = bench::time_estimators(ids, batch_sizes, reps, train, dim, level_mi);
            }
            py::list rows;
            for (const auto& r : report.rows) {
                py::dict d;
                d["estimator"] = est::estimator_name(r.id);
                d["batch_size"] = r.batch_size;
                d["mean_seconds"] = r.mean_seconds;
                d["reps"] = r.reps;
                rows.append(d);
            }
            py::dict slopes;
            for (const auto id : ids)
                slopes[est::estimator_name(id)] = bench::loglog_slope(report, id);
            py::dict out;
            out["rows"] = rows;
            out["loglog_slope"] = slopes;
            return out;
        },
        py::arg("estimators"), py::arg("batch_sizes"), py::arg("reps") = 50,
        py::arg("train") = TrainConfig(), py::arg("dim") = 20, py::arg("level_mi") = 2.0,
        "Wall-clock per-iteration cost over batch sizes, plus log-log scaling slopes.");
}
