#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mib/distributions.hpp"
#include "mib/nn.hpp"
#include "mib/tape.hpp"

namespace mib::est {

// The three "known" ids evaluate closed-form conditionals and involve no
// training; the v-prefixed and critic ids carry a learned model.
enum class EstimatorId {
    Club,         // known conditional
    VClub,        // learned conditional, all-pairs negative term
    VClubSample,  // learned conditional, one sampled negative per row
    Vub,          // known conditional vs standard-normal marginal
    VVub,         // learned conditional vs standard-normal marginal
    L1Out,        // known conditional, leave-one-out marginal
    VL1Out,       // learned conditional, leave-one-out marginal
    Nwj,          // critic lower bound
    Mine,         // critic lower bound
    InfoNce       // critic lower bound
};

enum class Kind { Upper, Lower };

// How the critic bounds pair negatives: every (x_i, y_j) combination, or a
// single shuffled pairing per row.
enum class Pairing { AllPairs, Shuffle };

Kind kind_of(EstimatorId id);
bool uses_known_conditional(EstimatorId id);
bool uses_learned_conditional(EstimatorId id);
bool uses_critic(EstimatorId id);

const char* estimator_name(EstimatorId id);
std::optional<EstimatorId> parse_estimator(const std::string& name);
const std::vector<EstimatorId>& all_estimators();

const char* pairing_name(Pairing p);
std::optional<Pairing> parse_pairing(const std::string& name);

struct Estimate {
    EstimatorId id;
    Kind kind;
    double value = 0.0;
};

// --- graph builders -------------------------------------------------------
// Each returns the id of a scalar node on the tape. `x`/`y` are node ids of
// n x dx and n x dy batches with matching row counts.

// Negative mean conditional log-likelihood; the training loss for every
// learned-conditional estimator.
int loglik_loss(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y);

// mean_i log q(y_i|x_i) - mean_{i,j} log q(y_j|x_i).
int vclub(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y);

// Sampled variant: one negative index per row, drawn uniformly from the batch
// (the row itself is allowed).
int vclub_sampled(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y,
                  const std::vector<int>& negatives);

// mean_i [log q(y_i|x_i) - log r(y_i)] with r = N(0, I).
int vub(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y);

// Leave-one-out bound from an n x n log-probability matrix node
// (entry (i, j) = log q(y_j|x_i)).
int l1out_from_matrix(Tape& tape, int log_prob_matrix);
int vl1out(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y);

// n x n critic score matrix: entry (i, j) = f(x_i, y_j).
int critic_scores(Tape& tape, const AttachedNet& critic, int x, int y);

// Critic bounds. Under Shuffle pairing the marginal term uses one permuted
// partner per row instead of the full score matrix; `perm` must then hold a
// permutation of 0..n-1. InfoNCE is defined over all pairs only.
int nwj(Tape& tape, const AttachedNet& critic, int x, int y,
        Pairing pairing = Pairing::AllPairs, const std::vector<int>* perm = nullptr);
int mine(Tape& tape, const AttachedNet& critic, int x, int y,
         Pairing pairing = Pairing::AllPairs, const std::vector<int>* perm = nullptr);
int infonce(Tape& tape, const AttachedNet& critic, int x, int y);

// MINE with its moving-average denominator correction: the bound value is the
// usual one, but the surrogate loss replaces the log-partition gradient by
// mean(exp f)/ema. Returns both nodes.
struct MineWithEma {
    int bound;
    int surrogate_loss;
    double new_ema;
};
MineWithEma mine_ema(Tape& tape, const AttachedNet& critic, int x, int y,
                     double ema, double decay);

// --- closed-form evaluation (no graph) ------------------------------------

// mean(diag) - mean(all) of a log-probability matrix.
double club_known_value(const Tensor& log_prob_matrix);
// Leave-one-out value of a log-probability matrix.
double l1out_known_value(const Tensor& log_prob_matrix);
// mean_i [log p(y_i|x_i) - log r(y_i)], r = N(0, I).
double vub_known_value(const Tensor& log_prob_diag, const Tensor& y);

// Evaluate a known-conditional estimator against the source's closed form.
Estimate known_estimate(EstimatorId id, const CorrelatedGaussianSource& src, const Batch& batch);

}  // namespace mib::est
