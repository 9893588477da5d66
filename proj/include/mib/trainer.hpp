#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "mib/batch.hpp"
#include "mib/distributions.hpp"
#include "mib/estimators.hpp"
#include "mib/nn.hpp"
#include "mib/rng.hpp"
#include "mib/trace.hpp"

namespace mib {

struct TrainConfig {
    std::size_t batch_size = 64;
    std::size_t iters_per_level = 4000;
    double learning_rate = 5e-3;
    std::size_t hidden_units = 15;
    std::size_t approx_steps_per_iter = 1;
    std::uint64_t seed = 1;
    est::Pairing pairing = est::Pairing::AllPairs;
    bool mine_ema = false;
    double mine_ema_decay = 0.99;

    void validate() const;
};

// Owns one estimator's trainable state (conditional model or critic) and its
// optimizer. step() performs one training update on the batch and then
// evaluates the bound; closed-form estimators skip the update.
class EstimatorTrainer {
public:
    EstimatorTrainer(est::EstimatorId id, std::size_t x_dim, std::size_t y_dim,
                     const TrainConfig& cfg);

    est::EstimatorId id() const { return id_; }
    long iterations() const { return iter_; }

    // Closed-form estimators evaluate against N(rho x, (1-rho^2) I); the
    // correlation must be registered before the first step at each level.
    void set_known_rho(double rho);

    est::Estimate step(const Batch& batch);
    est::Estimate estimate(const Batch& batch);

    DiagGaussianCond* cond() { return cond_ ? &*cond_ : nullptr; }
    DenseNet* critic() { return critic_ ? &*critic_ : nullptr; }

private:
    void update(const Batch& batch);
    est::Estimate eval(const Batch& batch);

    est::EstimatorId id_;
    TrainConfig cfg_;
    std::size_t x_dim_, y_dim_;
    long iter_ = 0;
    Rng aux_rng_;  // negative indices and shuffle permutations
    std::optional<DiagGaussianCond> cond_;
    std::optional<DenseNet> critic_;
    Adam adam_;
    std::optional<CorrelatedGaussianSource> known_src_;
    double mine_ema_state_ = -1.0;
};

// Runs one estimator across a staircase of target MI levels on the simulation
// source, warm-starting the model between levels.
EstimateTrace estimate_over_schedule(est::EstimatorId id, Task task,
                                     const std::vector<double>& levels,
                                     std::size_t dim, const TrainConfig& cfg);

struct MinimizeConfig {
    est::EstimatorId estimator = est::EstimatorId::VClubSample;
    std::size_t dim = 4;
    double init_true_mi = 2.0;
    std::size_t max_iters = 2000;
    std::size_t mi_eval_every = 50;
    bool freeze_channel = false;  // ablation: keep A fixed, train only the approximation
    TrainConfig train;

    void validate() const;
};

// Observable phases of one minimization iteration, in order.
enum class TrainEvent { SampleBatch, ApproxUpdate, EstimatorEval, ChannelUpdate };
using EventSink = std::function<void(TrainEvent)>;

// Drives the channel matrix A to reduce I(x; y) by descending the estimator,
// alternating approximation updates with channel updates. The channel is
// modified in place. The exact channel MI is recorded every mi_eval_every
// iterations; an increase of more than one nat over a 500-iteration window is
// flagged as divergence but does not stop the run.
MinimizeTrace minimize_mi(LinearGaussianChannel& channel, const MinimizeConfig& cfg,
                          const EventSink& events = {});

}  // namespace mib
