#include "mib/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "mib/errors.hpp"
#include "mib/tape.hpp"

namespace mib {

void TrainConfig::validate() const {
    if (batch_size < 2) throw ContractError("TrainConfig: batch_size must be >= 2");
    if (iters_per_level == 0) throw ContractError("TrainConfig: iters_per_level must be positive");
    if (!(learning_rate > 0.0)) throw ContractError("TrainConfig: learning_rate must be positive");
    if (hidden_units == 0) throw ContractError("TrainConfig: hidden_units must be positive");
    if (approx_steps_per_iter == 0)
        throw ContractError("TrainConfig: approx_steps_per_iter must be positive");
    if (!(mine_ema_decay > 0.0 && mine_ema_decay < 1.0))
        throw ContractError("TrainConfig: mine_ema_decay must lie in (0, 1)");
}

namespace {

std::vector<int> draw_negatives(Rng& rng, std::size_t n) {
    std::vector<int> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<int>(rng.below(n));
    return idx;
}

std::vector<int> draw_permutation(Rng& rng, std::size_t n) {
    std::vector<int> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<int>(i);
    for (std::size_t i = n; i-- > 1;) {
        const std::size_t j = rng.below(i + 1);
        std::swap(perm[i], perm[j]);
    }
    return perm;
}

// Builds the estimator's value node for a trainable id. Draws whatever
// auxiliary randomness the id needs (negatives, permutations) from `aux`.
int bound_node(Tape& tape, est::EstimatorId id, const TrainConfig& cfg,
               const DiagGaussianCond::Attached* cond, const AttachedNet* critic,
               int x, int y, Rng& aux) {
    const std::size_t n = tape.value(x).rows();
    switch (id) {
        case est::EstimatorId::VClub:
            return est::vclub(tape, *cond, x, y);
        case est::EstimatorId::VClubSample:
            return est::vclub_sampled(tape, *cond, x, y, draw_negatives(aux, n));
        case est::EstimatorId::VVub:
            return est::vub(tape, *cond, x, y);
        case est::EstimatorId::VL1Out:
            return est::vl1out(tape, *cond, x, y);
        case est::EstimatorId::Nwj:
        case est::EstimatorId::Mine: {
            std::vector<int> perm;
            const std::vector<int>* p = nullptr;
            if (cfg.pairing == est::Pairing::Shuffle) {
                perm = draw_permutation(aux, n);
                p = &perm;
            }
            return id == est::EstimatorId::Nwj
                       ? est::nwj(tape, *critic, x, y, cfg.pairing, p)
                       : est::mine(tape, *critic, x, y, cfg.pairing, p);
        }
        case est::EstimatorId::InfoNce:
            return est::infonce(tape, *critic, x, y);
        default:
            throw ContractError("bound_node: estimator has no trainable form");
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// EstimatorTrainer

EstimatorTrainer::EstimatorTrainer(est::EstimatorId id, std::size_t x_dim, std::size_t y_dim,
                                   const TrainConfig& cfg)
    : id_(id), cfg_(cfg), x_dim_(x_dim), y_dim_(y_dim),
      aux_rng_(Rng::stream(cfg.seed, 2)), adam_(cfg.learning_rate) {
    cfg_.validate();
    if (x_dim == 0 || y_dim == 0) throw ContractError("EstimatorTrainer: dimensions must be positive");
    Rng init = Rng::stream(cfg.seed, 1);
    if (est::uses_learned_conditional(id_)) {
        cond_.emplace(x_dim, y_dim, cfg_.hidden_units, init);
    } else if (est::uses_critic(id_)) {
        critic_.emplace(std::vector<std::size_t>{x_dim + y_dim, cfg_.hidden_units, 1}, init);
    }
}

void EstimatorTrainer::set_known_rho(double rho) {
    known_src_.emplace(y_dim_, rho, /*cubic=*/false);
}

est::Estimate EstimatorTrainer::step(const Batch& batch) {
    ++iter_;
    try {
        update(batch);
        return eval(batch);
    } catch (const NumericError& e) {
        throw NumericError(std::string(e.what()) + " at training iteration " +
                           std::to_string(iter_));
    }
}

est::Estimate EstimatorTrainer::estimate(const Batch& batch) { return eval(batch); }

void EstimatorTrainer::update(const Batch& batch) {
    if (est::uses_known_conditional(id_)) return;

    if (cond_) {
        Tape tape;
        auto att = cond_->attach(tape);
        const int x = tape.data(batch.x);
        const int y = tape.data(batch.y);
        tape.backward(est::loglik_loss(tape, att, x, y));
        adam_.step(att.params(), tape);
        return;
    }

    Tape tape;
    auto att = critic_->attach(tape);
    const int x = tape.data(batch.x);
    const int y = tape.data(batch.y);
    int loss;
    if (id_ == est::EstimatorId::Mine && cfg_.mine_ema &&
        cfg_.pairing == est::Pairing::AllPairs) {
        if (mine_ema_state_ <= 0.0) {
            // Seed the moving average with the current batch's partition term.
            Tape probe;
            auto patt = critic_->attach(probe);
            const int f = est::critic_scores(probe, patt, probe.data(batch.x), probe.data(batch.y));
            mine_ema_state_ = probe.value(probe.mean_all(probe.exp(f))).scalar_value();
        }
        auto parts = est::mine_ema(tape, att, x, y, mine_ema_state_, cfg_.mine_ema_decay);
        mine_ema_state_ = parts.new_ema;
        loss = parts.surrogate_loss;
    } else {
        loss = tape.scale(bound_node(tape, id_, cfg_, nullptr, &att, x, y, aux_rng_), -1.0);
    }
    tape.backward(loss);
    adam_.step(att.params, tape);
}

est::Estimate EstimatorTrainer::eval(const Batch& batch) {
    if (est::uses_known_conditional(id_)) {
        if (!known_src_)
            throw ContractError("EstimatorTrainer: closed-form estimator needs set_known_rho first");
        return est::known_estimate(id_, *known_src_, batch);
    }
    Tape tape;
    const int x = tape.data(batch.x);
    const int y = tape.data(batch.y);
    int node;
    if (cond_) {
        auto att = cond_->attach(tape);
        node = bound_node(tape, id_, cfg_, &att, nullptr, x, y, aux_rng_);
    } else {
        auto att = critic_->attach(tape);
        node = bound_node(tape, id_, cfg_, nullptr, &att, x, y, aux_rng_);
    }
    return est::Estimate{id_, est::kind_of(id_), tape.value(node).scalar_value()};
}

// ---------------------------------------------------------------------------
// Level schedule

EstimateTrace estimate_over_schedule(est::EstimatorId id, Task task,
                                     const std::vector<double>& levels,
                                     std::size_t dim, const TrainConfig& cfg) {
    cfg.validate();
    if (levels.empty()) throw ContractError("estimate_over_schedule: no levels given");
    if (dim == 0) throw ContractError("estimate_over_schedule: dim must be positive");
    if (task == Task::Cubic && est::uses_known_conditional(id))
        throw ContractError(
            "estimate_over_schedule: closed-form estimators are only defined for the gaussian task");

    EstimateTrace trace;
    trace.id = id;
    trace.task = task;
    trace.dim = dim;
    trace.iters_per_level = cfg.iters_per_level;
    trace.levels = levels;
    trace.points.reserve(levels.size() * cfg.iters_per_level);

    EstimatorTrainer trainer(id, dim, dim, cfg);
    Rng data = Rng::stream(cfg.seed, 0);
    long iter = 0;
    for (double level : levels) {
        const double rho = rho_for_mi(level, dim);
        CorrelatedGaussianSource src(dim, rho, task == Task::Cubic);
        if (est::uses_known_conditional(id)) trainer.set_known_rho(rho);
        for (std::size_t it = 0; it < cfg.iters_per_level; ++it, ++iter) {
            const Batch batch = src.sample(cfg.batch_size, data);
            const est::Estimate e = trainer.step(batch);
            trace.points.push_back(TracePoint{iter, level, e.value});
        }
    }
    return trace;
}

// ---------------------------------------------------------------------------
// MI minimization

void MinimizeConfig::validate() const {
    train.validate();
    if (dim == 0) throw ContractError("MinimizeConfig: dim must be positive");
    if (max_iters == 0) throw ContractError("MinimizeConfig: max_iters must be positive");
    if (mi_eval_every == 0 || max_iters % mi_eval_every != 0)
        throw ContractError("MinimizeConfig: mi_eval_every must divide max_iters");
    if (!(init_true_mi >= 0.0)) throw ContractError("MinimizeConfig: init_true_mi must be >= 0");
    if (est::uses_known_conditional(estimator))
        throw ContractError("MinimizeConfig: closed-form estimators cannot drive minimization");
}

MinimizeTrace minimize_mi(LinearGaussianChannel& channel, const MinimizeConfig& cfg,
                          const EventSink& events) {
    cfg.validate();
    if (channel.dim() != cfg.dim)
        throw ContractError("minimize_mi: channel dimension does not match the config");
    const auto emit = [&](TrainEvent e) {
        if (events) events(e);
    };

    const TrainConfig& tc = cfg.train;
    Rng data = Rng::stream(tc.seed, 0);
    Rng init = Rng::stream(tc.seed, 1);
    Rng aux = Rng::stream(tc.seed, 2);

    std::optional<DiagGaussianCond> cond;
    std::optional<DenseNet> critic;
    if (est::uses_learned_conditional(cfg.estimator))
        cond.emplace(cfg.dim, cfg.dim, tc.hidden_units, init);
    else
        critic.emplace(std::vector<std::size_t>{2 * cfg.dim, tc.hidden_units, 1}, init);

    Adam adam_q(tc.learning_rate);
    Adam adam_a(tc.learning_rate);
    double mine_ema_state = -1.0;

    MinimizeTrace trace;
    trace.id = cfg.estimator;
    const std::size_t window_points = std::max<std::size_t>(1, 500 / cfg.mi_eval_every);

    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        try {
            auto noise = channel.sample_noise(tc.batch_size, data);
            emit(TrainEvent::SampleBatch);
            Tensor y_plain = matmul_plain(noise.x, channel.a(), false, true);
            for (std::size_t i = 0; i < y_plain.size(); ++i)
                y_plain.data()[i] += noise.eps.data()[i];

            for (std::size_t s = 0; s < tc.approx_steps_per_iter; ++s) {
                Tape tape;
                const int x = tape.data(noise.x);
                const int y = tape.data(y_plain);
                if (cond) {
                    auto att = cond->attach(tape);
                    tape.backward(est::loglik_loss(tape, att, x, y));
                    adam_q.step(att.params(), tape);
                } else {
                    auto att = critic->attach(tape);
                    int loss;
                    if (cfg.estimator == est::EstimatorId::Mine && tc.mine_ema &&
                        tc.pairing == est::Pairing::AllPairs) {
                        if (mine_ema_state <= 0.0) {
                            Tape probe;
                            auto patt = critic->attach(probe);
                            const int f = est::critic_scores(probe, patt, probe.data(noise.x),
                                                             probe.data(y_plain));
                            mine_ema_state =
                                probe.value(probe.mean_all(probe.exp(f))).scalar_value();
                        }
                        auto parts = est::mine_ema(tape, att, x, y, mine_ema_state,
                                                   tc.mine_ema_decay);
                        mine_ema_state = parts.new_ema;
                        loss = parts.surrogate_loss;
                    } else {
                        loss = tape.scale(
                            bound_node(tape, cfg.estimator, tc, nullptr, &att, x, y, aux), -1.0);
                    }
                    tape.backward(loss);
                    adam_q.step(att.params, tape);
                }
                emit(TrainEvent::ApproxUpdate);
            }

            // Estimator value as a function of A: rebuild y = x A^T + eps on
            // the tape so the channel gradient flows through the samples.
            Tape tape;
            const int a_leaf = tape.leaf(channel.a());
            const int x = tape.data(noise.x);
            const int eps = tape.data(noise.eps);
            const int y = tape.add(tape.matmul(x, a_leaf, false, true), eps);
            int value_node;
            if (cond) {
                auto att = cond->attach(tape);
                value_node = bound_node(tape, cfg.estimator, tc, &att, nullptr, x, y, aux);
            } else {
                auto att = critic->attach(tape);
                value_node = bound_node(tape, cfg.estimator, tc, nullptr, &att, x, y, aux);
            }
            emit(TrainEvent::EstimatorEval);
            const double est_value = tape.value(value_node).scalar_value();

            if (!cfg.freeze_channel) {
                tape.backward(value_node);
                std::vector<ParamRef> a_ref = {ParamRef{&channel.a(), a_leaf}};
                adam_a.step(a_ref, tape);
                emit(TrainEvent::ChannelUpdate);
            }

            if ((iter + 1) % cfg.mi_eval_every == 0) {
                MinimizePoint pt;
                pt.iter = static_cast<long>(iter + 1);
                pt.estimate = est_value;
                pt.true_mi = channel.true_mi();
                if (trace.points.size() >= window_points) {
                    const MinimizePoint& past =
                        trace.points[trace.points.size() - window_points];
                    pt.diverged = pt.true_mi > past.true_mi + 1.0;
                }
                trace.any_divergence = trace.any_divergence || pt.diverged;
                trace.points.push_back(pt);
            }
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at minimization iteration " +
                               std::to_string(iter + 1));
        }
    }
    return trace;
}

}  // namespace mib
