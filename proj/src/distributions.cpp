#include "mib/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "mib/diag_gauss.hpp"
#include "mib/errors.hpp"

namespace mib {

const char* task_name(Task task) {
    return task == Task::Gaussian ? "gaussian" : "cubic";
}

// ---------------------------------------------------------------------------
// Small dense linear algebra helpers (SPD only, used for log-dets and a
// condition-number estimate; dimensions here are tiny).

namespace {

// Lower-triangular L with A = L L^T. Throws if A is not positive definite.
Tensor cholesky_spd(const Tensor& a) {
    const std::size_t n = a.rows();
    if (a.cols() != n) throw ShapeError("cholesky: matrix must be square");
    Tensor l(n, n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t i = j; i < n; ++i) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(s > 0.0)) throw NumericError("cholesky: matrix is not positive definite");
                l(j, j) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

// Solves (L L^T) x = b in place.
void cholesky_solve(const Tensor& l, std::vector<double>& x) {
    const std::size_t n = l.rows();
    for (std::size_t i = 0; i < n; ++i) {
        double s = x[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * x[k];
        x[i] = s / l(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
        double s = x[ii];
        for (std::size_t k = ii + 1; k < n; ++k) s -= l(k, ii) * x[k];
        x[ii] = s / l(ii, ii);
    }
}

// 2-norm condition number of W, estimated through power iteration on
// S = W^T W (largest eigenvalue) and inverse iteration via the Cholesky
// factor of S (smallest). Accurate to a few digits, which is all the
// acceptance threshold needs.
double condition_estimate(const Tensor& w) {
    const std::size_t n = w.rows();
    const Tensor s = matmul_plain(w, w, true, false);
    Tensor l;
    try {
        l = cholesky_spd(s);
    } catch (const NumericError&) {
        return std::numeric_limits<double>::infinity();
    }

    std::vector<double> v(n, 1.0), tmp(n);
    auto norm = [&](const std::vector<double>& z) {
        double acc = 0.0;
        for (double x : z) acc += x * x;
        return std::sqrt(acc);
    };

    double lam_max = 0.0;
    for (int it = 0; it < 200; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t k = 0; k < n; ++k) acc += s(i, k) * v[k];
            tmp[i] = acc;
        }
        lam_max = norm(tmp);
        if (lam_max == 0.0) return std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) v[i] = tmp[i] / lam_max;
    }

    std::fill(v.begin(), v.end(), 1.0);
    double inv_lam_min = 0.0;
    for (int it = 0; it < 200; ++it) {
        cholesky_solve(l, v);
        inv_lam_min = norm(v);
        if (!std::isfinite(inv_lam_min) || inv_lam_min == 0.0)
            return std::numeric_limits<double>::infinity();
        for (double& x : v) x /= inv_lam_min;
    }
    return std::sqrt(lam_max * inv_lam_min);
}

}  // namespace

// ---------------------------------------------------------------------------
// DiagGaussianCond

DiagGaussianCond::DiagGaussianCond(std::size_t x_dim, std::size_t y_dim, std::size_t hidden,
                                   Rng& rng, double logvar_bound)
    : x_dim_(x_dim), y_dim_(y_dim), logvar_bound_(logvar_bound) {
    if (x_dim == 0 || y_dim == 0 || hidden == 0)
        throw ContractError("DiagGaussianCond: dimensions must be positive");
    // The hidden budget is split between the heads; with an odd budget the
    // mean head takes the extra unit. The restricted width is load-bearing:
    // a conditional expressive enough to recover the true density drives the
    // contrastive bounds toward the full conditional contrast, which grows
    // with dimension and overshoots the rate badly.
    const std::size_t mu_hidden = std::max<std::size_t>(1, (hidden + 1) / 2);
    const std::size_t lv_hidden = std::max<std::size_t>(1, hidden / 2);
    mu_net_ = DenseNet({x_dim, mu_hidden, y_dim}, rng);
    logvar_net_ = DenseNet({x_dim, lv_hidden, y_dim}, rng);
}

DiagGaussianCond::DiagGaussianCond(DenseNet mu, DenseNet logvar, double bound)
    : x_dim_(mu.in_dim()), y_dim_(mu.out_dim()), logvar_bound_(bound),
      mu_net_(std::move(mu)), logvar_net_(std::move(logvar)) {}

DiagGaussianCond DiagGaussianCond::frozen_gaussian(std::size_t dim, double rho) {
    if (dim == 0) throw ContractError("frozen_gaussian: dim must be positive");
    if (!(std::abs(rho) < 1.0))
        throw ContractError("frozen_gaussian: correlation must lie in (-1, 1)");

    // mu(x) = rho * x, written as an MLP through the identity
    // x = relu(x) - relu(-x) so the frozen model shares the learned models'
    // forward pass operation for operation.
    DenseNet mu = DenseNet::zeros({dim, 2 * dim, dim});
    auto& ml = mu.layers();
    for (std::size_t k = 0; k < dim; ++k) {
        ml[0].w(k, k) = 1.0;
        ml[0].w(dim + k, k) = -1.0;
        ml[1].w(k, k) = rho;
        ml[1].w(k, dim + k) = -rho;
    }

    DenseNet lv = DenseNet::zeros({dim, 1, dim});
    const double log_var = std::log1p(-rho * rho);
    for (std::size_t k = 0; k < dim; ++k) lv.layers()[1].b(0, k) = log_var;

    // Bound disabled: the squash would perturb the exact logvar.
    return DiagGaussianCond(std::move(mu), std::move(lv), 0.0);
}

DiagGaussianCond::Attached DiagGaussianCond::attach(Tape& tape) {
    Attached att;
    att.mu = mu_net_.attach(tape);
    att.logvar = logvar_net_.attach(tape);
    att.bound = logvar_bound_;
    return att;
}

int DiagGaussianCond::Attached::mu_out(Tape& tape, int x) const {
    for (const auto& entry : head_cache_)
        if (entry[0] == x) return entry[1];
    const int m = mu.forward(tape, x);
    int raw = logvar.forward(tape, x);
    if (bound > 0.0)
        raw = tape.affine(tape.tanh(tape.affine(raw, 1.0 / bound, 0.0)), bound, 0.0);
    head_cache_.push_back({x, m, raw, -1});
    return m;
}

int DiagGaussianCond::Attached::logvar_out(Tape& tape, int x) const {
    mu_out(tape, x);
    for (const auto& entry : head_cache_)
        if (entry[0] == x) return entry[2];
    throw ContractError("logvar_out: head cache miss");  // unreachable
}

// exp(-logvar), shared between the diagonal and full pairings so that the two
// log-prob variants read the same inverse variances.
int DiagGaussianCond::Attached::ivar_out(Tape& tape, int x) const {
    const int lv = logvar_out(tape, x);
    for (auto& entry : head_cache_)
        if (entry[0] == x) {
            if (entry[3] < 0) entry[3] = tape.exp(tape.affine(lv, -1.0, 0.0));
            return entry[3];
        }
    throw ContractError("ivar_out: head cache miss");  // unreachable
}

int DiagGaussianCond::Attached::log_prob_diag(Tape& tape, int x, int y) const {
    const int m = mu_out(tape, x);
    const int lv = logvar_out(tape, x);
    const int iv = ivar_out(tape, x);
    const double d = static_cast<double>(tape.value(m).cols());
    const int quad = tape.sum_axis(tape.mul(tape.square(tape.sub(y, m)), iv), 1);
    return tape.affine(tape.add(quad, tape.sum_axis(lv, 1)), -0.5, -0.5 * d * kLog2Pi);
}

// The pairwise matrix expands the squared distance as
// y_j^2 - 2 mu_i y_j + mu_i^2 so the quadratic term becomes two matrix
// products; the per-row constants (mu^2/var and the log-determinant) come in
// through a column broadcast.
int DiagGaussianCond::Attached::log_prob_full(Tape& tape, int x, int y) const {
    const int m = mu_out(tape, x);
    const int lv = logvar_out(tape, x);
    const int iv = ivar_out(tape, x);
    const double d = static_cast<double>(tape.value(m).cols());
    const int a = tape.matmul(iv, tape.square(y), false, true);
    const int muiv = tape.mul(m, iv);
    const int b = tape.matmul(muiv, y, false, true);
    const int quad = tape.sub(a, tape.affine(b, 2.0, 0.0));
    const int crow = tape.add(tape.sum_axis(tape.mul(m, muiv), 1), tape.sum_axis(lv, 1));
    return tape.affine(tape.add_col(quad, crow), -0.5, -0.5 * d * kLog2Pi);
}

std::vector<ParamRef> DiagGaussianCond::Attached::params() const {
    std::vector<ParamRef> out = mu.params;
    out.insert(out.end(), logvar.params.begin(), logvar.params.end());
    return out;
}

// ---------------------------------------------------------------------------
// CorrelatedGaussianSource

CorrelatedGaussianSource::CorrelatedGaussianSource(std::size_t dim, double rho, bool cubic,
                                                   std::uint64_t w_seed)
    : dim_(dim), rho_(rho), cubic_(cubic) {
    if (dim == 0) throw ContractError("CorrelatedGaussianSource: dim must be positive");
    if (!(std::abs(rho) < 1.0))
        throw ContractError("CorrelatedGaussianSource: correlation must lie in (-1, 1)");
    if (cubic_) {
        Rng rng(w_seed);
        w_ = Tensor(dim, dim);
        // Redraw until the transform is comfortably invertible; a wildly
        // ill-conditioned W would make the task about numerics, not bounds.
        for (;;) {
            for (std::size_t i = 0; i < dim; ++i)
                for (std::size_t j = 0; j < dim; ++j) w_(i, j) = rng.normal();
            const double cond = condition_estimate(w_);
            if (cond < 1e3) break;
        }
    }
}

const Tensor& CorrelatedGaussianSource::w() const {
    if (!cubic_) throw ContractError("w: source has no cubic transform");
    return w_;
}

double CorrelatedGaussianSource::true_mi() const {
    return -0.5 * static_cast<double>(dim_) * std::log1p(-rho_ * rho_);
}

Batch CorrelatedGaussianSource::sample(std::size_t n, Rng& rng) const {
    if (n < 2) throw ContractError("sample: need at least 2 rows");
    Tensor x(n, dim_), y(n, dim_);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim_; ++k) x(i, k) = rng.normal();
    const double noise_scale = std::sqrt(std::max(0.0, 1.0 - rho_ * rho_));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim_; ++k)
            y(i, k) = rho_ * x(i, k) + noise_scale * rng.normal();
    if (cubic_) {
        Tensor t = matmul_plain(y, w_, false, true);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < dim_; ++k) {
                const double v = t(i, k);
                t(i, k) = v * v * v;
            }
        y = std::move(t);
    }
    return Batch{std::move(x), std::move(y)};
}

namespace {

void check_pair_shapes(const Tensor& x, const Tensor& y, std::size_t dim, bool same_rows) {
    if (x.cols() != dim || y.cols() != dim)
        throw ShapeError("cond_log_prob: column count must equal the source dimension");
    if (same_rows && x.rows() != y.rows())
        throw ShapeError("cond_log_prob: x and y must have the same number of rows");
    if (x.rows() == 0 || y.rows() == 0)
        throw ShapeError("cond_log_prob: empty batch");
}

}  // namespace

Tensor CorrelatedGaussianSource::cond_log_prob_diag(const Tensor& x, const Tensor& y) const {
    if (cubic_)
        throw ContractError("cond_log_prob: closed-form conditional is only available for the gaussian task");
    check_pair_shapes(x, y, dim_, true);
    const double log_var = std::log1p(-rho_ * rho_);
    std::vector<double> lv(dim_, log_var), ivar(dim_, std::exp(-log_var));
    Tensor mu(x.rows(), dim_);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t k = 0; k < dim_; ++k) mu(i, k) = rho_ * x(i, k);
    Tensor out(x.rows(), 1);
    for (std::size_t i = 0; i < x.rows(); ++i)
        out(i, 0) = diag_gauss_ll(mu.row(i), lv.data(), ivar.data(), y.row(i), dim_);
    return out;
}

Tensor CorrelatedGaussianSource::cond_log_prob_full(const Tensor& x, const Tensor& y) const {
    if (cubic_)
        throw ContractError("cond_log_prob: closed-form conditional is only available for the gaussian task");
    check_pair_shapes(x, y, dim_, false);
    const double log_var = std::log1p(-rho_ * rho_);
    std::vector<double> lv(dim_, log_var), ivar(dim_, std::exp(-log_var));
    Tensor mu(x.rows(), dim_);
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t k = 0; k < dim_; ++k) mu(i, k) = rho_ * x(i, k);
    Tensor out(x.rows(), y.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < y.rows(); ++j)
            out(i, j) = diag_gauss_ll(mu.row(i), lv.data(), ivar.data(), y.row(j), dim_);
    return out;
}

double rho_for_mi(double mi, std::size_t dim) {
    if (dim == 0) throw ContractError("rho_for_mi: dim must be positive");
    if (!(mi >= 0.0)) throw ContractError("rho_for_mi: mutual information must be >= 0");
    if (mi == 0.0) return 0.0;
    return std::sqrt(-std::expm1(-2.0 * mi / static_cast<double>(dim)));
}

// ---------------------------------------------------------------------------
// LinearGaussianChannel

LinearGaussianChannel::LinearGaussianChannel(Tensor a) : dim_(a.rows()), a_(std::move(a)) {
    if (a_.rows() == 0 || a_.rows() != a_.cols())
        throw ShapeError("LinearGaussianChannel: A must be square and non-empty");
}

LinearGaussianChannel LinearGaussianChannel::with_true_mi(std::size_t dim, double target_mi,
                                                          std::uint64_t seed) {
    if (dim == 0) throw ContractError("with_true_mi: dim must be positive");
    if (!(target_mi >= 0.0)) throw ContractError("with_true_mi: target must be >= 0");

    Tensor base(dim, dim);
    Rng rng(seed);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) base(i, j) = rng.normal();
    if (target_mi == 0.0) return LinearGaussianChannel(Tensor(dim, dim, 0.0));

    auto mi_at = [&](double s) {
        Tensor scaled = base;
        for (std::size_t i = 0; i < dim * dim; ++i) scaled.data()[i] *= s;
        return LinearGaussianChannel(scaled).true_mi();
    };

    double hi = 1.0;
    int guard = 0;
    while (mi_at(hi) < target_mi) {
        hi *= 2.0;
        if (++guard > 200) throw NumericError("with_true_mi: bisection bracket failed");
    }
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mi_at(mid) < target_mi ? lo : hi) = mid;
    }
    const double s = 0.5 * (lo + hi);
    Tensor a = base;
    for (std::size_t i = 0; i < dim * dim; ++i) a.data()[i] *= s;
    return LinearGaussianChannel(std::move(a));
}

LinearGaussianChannel::Noise LinearGaussianChannel::sample_noise(std::size_t n, Rng& rng) const {
    if (n < 2) throw ContractError("sample_noise: need at least 2 rows");
    Tensor x(n, dim_), eps(n, dim_);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim_; ++k) x(i, k) = rng.normal();
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim_; ++k) eps(i, k) = rng.normal();
    return Noise{std::move(x), std::move(eps)};
}

Batch LinearGaussianChannel::sample(std::size_t n, Rng& rng) const {
    Noise noise = sample_noise(n, rng);
    Tensor y = matmul_plain(noise.x, a_, false, true);
    for (std::size_t i = 0; i < n * dim_; ++i) y.data()[i] += noise.eps.data()[i];
    return Batch{std::move(noise.x), std::move(y)};
}

double LinearGaussianChannel::true_mi() const {
    if (!a_.all_finite()) throw NumericError("true_mi: channel matrix has non-finite entries");
    Tensor m = matmul_plain(a_, a_, false, true);
    for (std::size_t i = 0; i < dim_; ++i) m(i, i) += 1.0;
    const Tensor l = cholesky_spd(m);
    double acc = 0.0;
    for (std::size_t i = 0; i < dim_; ++i) acc += std::log(l(i, i));
    return acc;
}

double channel_true_mi(const LinearGaussianChannel& channel) { return channel.true_mi(); }

}  // namespace mib
