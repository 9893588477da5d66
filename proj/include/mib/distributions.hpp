#pragma once

#include <array>
#include <cstdint>

#include "mib/batch.hpp"
#include "mib/nn.hpp"
#include "mib/rng.hpp"
#include "mib/tape.hpp"
#include "mib/tensor.hpp"

namespace mib {

enum class Task { Gaussian, Cubic };

const char* task_name(Task task);

// Diagonal Gaussian conditional q(y|x) = N(mu(x), diag(exp(logvar(x)))) with
// both heads given by small MLPs. `hidden` is the total budget, split across
// one ReLU hidden layer per head; an odd budget gives the mean head the extra
// unit (each layer keeps at least one unit). When
// logvar_bound > 0 the raw logvar output is squashed through B*tanh(raw/B) so
// variances cannot collapse or explode during optimisation; a non-positive
// bound leaves the head unconstrained.
class DiagGaussianCond {
public:
    DiagGaussianCond(std::size_t x_dim, std::size_t y_dim, std::size_t hidden,
                     Rng& rng, double logvar_bound = 10.0);

    // Exact N(rho*x, (1-rho^2) I) expressed in the same network family, so the
    // learned and closed-form code paths share every arithmetic operation.
    static DiagGaussianCond frozen_gaussian(std::size_t dim, double rho);

    std::size_t x_dim() const { return x_dim_; }
    std::size_t y_dim() const { return y_dim_; }
    double logvar_bound() const { return logvar_bound_; }

    DenseNet& mu_net() { return mu_net_; }
    DenseNet& logvar_net() { return logvar_net_; }
    const DenseNet& mu_net() const { return mu_net_; }
    const DenseNet& logvar_net() const { return logvar_net_; }

    struct Attached;
    Attached attach(Tape& tape);

private:
    DiagGaussianCond(DenseNet mu, DenseNet logvar, double bound);

    std::size_t x_dim_;
    std::size_t y_dim_;
    double logvar_bound_;
    DenseNet mu_net_;
    DenseNet logvar_net_;
};

// Per-tape handle for one conditional model. mu/logvar are evaluated lazily per
// input node and cached so repeated bound constructions reuse the same graph.
struct DiagGaussianCond::Attached {
    AttachedNet mu;
    AttachedNet logvar;
    double bound = 0.0;

    int mu_out(Tape& tape, int x) const;
    int logvar_out(Tape& tape, int x) const;
    int ivar_out(Tape& tape, int x) const;
    // n x 1 vector of log q(y_i | x_i).
    int log_prob_diag(Tape& tape, int x, int y) const;
    // n x m matrix with entry (i, j) = log q(y_j | x_i), built as two matrix
    // products via the quadratic expansion of the squared distance.
    int log_prob_full(Tape& tape, int x, int y) const;
    std::vector<ParamRef> params() const;

    mutable std::vector<std::array<int, 4>> head_cache_;  // (x, mu, logvar, ivar) nodes
};

// Joint source for the simulation study: x ~ N(0, I_d) and
// y = rho*x + sqrt(1-rho^2)*eps componentwise, so each (x_k, y_k) pair is
// bivariate Gaussian with correlation rho. In cubic mode the y draw is mapped
// through y -> (W y)^3 with a fixed full-rank W; the transform is a bijection,
// so the mutual information of the pair is unchanged.
class CorrelatedGaussianSource {
public:
    CorrelatedGaussianSource(std::size_t dim, double rho, bool cubic,
                             std::uint64_t w_seed = kDefaultWSeed);

    static constexpr std::uint64_t kDefaultWSeed = 0x57ab1eull;

    std::size_t dim() const { return dim_; }
    double rho() const { return rho_; }
    bool cubic() const { return cubic_; }
    const Tensor& w() const;

    double true_mi() const;

    Batch sample(std::size_t n, Rng& rng) const;

    // Closed-form conditional density of the pre-transform pair; only defined
    // for the Gaussian task.
    Tensor cond_log_prob_diag(const Tensor& x, const Tensor& y) const;
    Tensor cond_log_prob_full(const Tensor& x, const Tensor& y) const;

private:
    std::size_t dim_;
    double rho_;
    bool cubic_;
    Tensor w_;
};

// Correlation giving a target mutual information at dimension d:
// rho = sqrt(1 - exp(-2 mi / d)). Inverse of CorrelatedGaussianSource::true_mi.
double rho_for_mi(double mi, std::size_t dim);

// y = A x + eps with x, eps ~ N(0, I_d): the trainable channel whose mutual
// information I(x; y) = 0.5 log det(I + A A^T) is driven down in minimisation.
class LinearGaussianChannel {
public:
    explicit LinearGaussianChannel(Tensor a);

    // Random A scaled so that the channel's mutual information equals
    // target_mi (bisection on the scale; exact to ~1e-12).
    static LinearGaussianChannel with_true_mi(std::size_t dim, double target_mi,
                                              std::uint64_t seed);

    std::size_t dim() const { return dim_; }
    Tensor& a() { return a_; }
    const Tensor& a() const { return a_; }

    struct Noise {
        Tensor x;
        Tensor eps;
    };
    Noise sample_noise(std::size_t n, Rng& rng) const;
    Batch sample(std::size_t n, Rng& rng) const;

    double true_mi() const;

private:
    std::size_t dim_;
    Tensor a_;
};

double channel_true_mi(const LinearGaussianChannel& channel);

}  // namespace mib
