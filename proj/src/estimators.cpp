#include "mib/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mib/diag_gauss.hpp"
#include "mib/errors.hpp"

namespace mib::est {

Kind kind_of(EstimatorId id) {
    switch (id) {
        case EstimatorId::Club:
        case EstimatorId::VClub:
        case EstimatorId::VClubSample:
        case EstimatorId::Vub:
        case EstimatorId::VVub:
            return Kind::Upper;
        default:
            return Kind::Lower;
    }
}

bool uses_known_conditional(EstimatorId id) {
    return id == EstimatorId::Club || id == EstimatorId::Vub || id == EstimatorId::L1Out;
}

bool uses_learned_conditional(EstimatorId id) {
    return id == EstimatorId::VClub || id == EstimatorId::VClubSample ||
           id == EstimatorId::VVub || id == EstimatorId::VL1Out;
}

bool uses_critic(EstimatorId id) {
    return id == EstimatorId::Nwj || id == EstimatorId::Mine || id == EstimatorId::InfoNce;
}

const char* estimator_name(EstimatorId id) {
    switch (id) {
        case EstimatorId::Club: return "club";
        case EstimatorId::VClub: return "vclub";
        case EstimatorId::VClubSample: return "vclub-s";
        case EstimatorId::Vub: return "vub";
        case EstimatorId::VVub: return "vvub";
        case EstimatorId::L1Out: return "l1out";
        case EstimatorId::VL1Out: return "vl1out";
        case EstimatorId::Nwj: return "nwj";
        case EstimatorId::Mine: return "mine";
        case EstimatorId::InfoNce: return "infonce";
    }
    return "?";
}

const std::vector<EstimatorId>& all_estimators() {
    static const std::vector<EstimatorId> ids = {
        EstimatorId::Club, EstimatorId::VClub, EstimatorId::VClubSample,
        EstimatorId::Vub, EstimatorId::VVub, EstimatorId::L1Out,
        EstimatorId::VL1Out, EstimatorId::Nwj, EstimatorId::Mine,
        EstimatorId::InfoNce};
    return ids;
}

std::optional<EstimatorId> parse_estimator(const std::string& name) {
    for (EstimatorId id : all_estimators())
        if (name == estimator_name(id)) return id;
    return std::nullopt;
}

const char* pairing_name(Pairing p) {
    return p == Pairing::AllPairs ? "allpairs" : "shuffle";
}

std::optional<Pairing> parse_pairing(const std::string& name) {
    if (name == "allpairs") return Pairing::AllPairs;
    if (name == "shuffle") return Pairing::Shuffle;
    return std::nullopt;
}

namespace {

std::size_t batch_rows(const Tape& tape, int x, int y, const char* what) {
    const Tensor& tx = tape.value(x);
    const Tensor& ty = tape.value(y);
    if (tx.rows() != ty.rows()) throw ShapeError(std::string(what) + ": row count mismatch");
    if (tx.rows() < 2) throw ContractError(std::string(what) + ": need at least 2 rows");
    return tx.rows();
}

}  // namespace

int loglik_loss(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y) {
    batch_rows(tape, x, y, "loglik_loss");
    return tape.scale(tape.mean_all(cond.log_prob_diag(tape, x, y)), -1.0);
}

int vclub(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y) {
    batch_rows(tape, x, y, "vclub");
    const int lp_diag = cond.log_prob_diag(tape, x, y);
    const int lp_full = cond.log_prob_full(tape, x, y);
    return tape.sub(tape.mean_all(lp_diag), tape.mean_all(lp_full));
}

int vclub_sampled(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y,
                  const std::vector<int>& negatives) {
    const std::size_t n = batch_rows(tape, x, y, "vclub_sampled");
    if (negatives.size() != n)
        throw ContractError("vclub_sampled: need one negative index per row");
    const int lp_pos = cond.log_prob_diag(tape, x, y);
    const int y_neg = tape.gather_rows(y, negatives);
    const int lp_neg = cond.log_prob_diag(tape, x, y_neg);
    return tape.sub(tape.mean_all(lp_pos), tape.mean_all(lp_neg));
}

namespace {

// log r(y_i) under r = N(0, I) as an n x 1 node.
int std_normal_logpdf(Tape& tape, int y) {
    const std::size_t d = tape.value(y).cols();
    const int sq = tape.sum_axis(tape.square(y), 1);
    return tape.affine(sq, -0.5, -0.5 * static_cast<double>(d) * kLog2Pi);
}

}  // namespace

int vub(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y) {
    batch_rows(tape, x, y, "vub");
    const int lp_diag = cond.log_prob_diag(tape, x, y);
    return tape.sub(tape.mean_all(lp_diag), tape.mean_all(std_normal_logpdf(tape, y)));
}

int l1out_from_matrix(Tape& tape, int log_prob_matrix) {
    const Tensor& m = tape.value(log_prob_matrix);
    if (m.rows() != m.cols()) throw ShapeError("l1out: matrix must be square");
    if (m.rows() < 2) throw ContractError("l1out: need at least 2 rows");
    const int diag = tape.take_diag(log_prob_matrix);
    const int lse = tape.logsumexp(log_prob_matrix, /*axis=*/0, /*skip_diag=*/true);
    const int gap = tape.sub(tape.mean_all(diag), tape.mean_all(lse));
    return tape.add_const(gap, std::log(static_cast<double>(m.rows() - 1)));
}

int vl1out(Tape& tape, const DiagGaussianCond::Attached& cond, int x, int y) {
    batch_rows(tape, x, y, "vl1out");
    return l1out_from_matrix(tape, cond.log_prob_full(tape, x, y));
}

int critic_scores(Tape& tape, const AttachedNet& critic, int x, int y) {
    const std::size_t n = tape.value(x).rows();
    const std::size_t m = tape.value(y).rows();
    if (n == 0 || m == 0) throw ContractError("critic_scores: empty batch");
    std::vector<int> ix(n * m), iy(n * m);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) {
            ix[i * m + j] = static_cast<int>(i);
            iy[i * m + j] = static_cast<int>(j);
        }
    const int z = tape.concat_cols(tape.gather_rows(x, ix), tape.gather_rows(y, iy));
    const int s = critic.forward(tape, z);
    if (tape.value(s).cols() != 1) throw ShapeError("critic_scores: critic must output one column");
    return tape.reshape(s, n, m);
}

namespace {

// Scores of the diagonal pairs (x_i, y_i), or of (x_i, y_perm(i)) when a
// permutation is given; n x 1.
int paired_scores(Tape& tape, const AttachedNet& critic, int x, int y,
                  const std::vector<int>* perm) {
    const int yy = perm ? tape.gather_rows(y, *perm) : y;
    const int s = critic.forward(tape, tape.concat_cols(x, yy));
    if (tape.value(s).cols() != 1) throw ShapeError("critic scores: critic must output one column");
    return s;
}

void check_perm(const std::vector<int>* perm, std::size_t n, const char* what) {
    if (!perm || perm->size() != n)
        throw ContractError(std::string(what) + ": shuffle pairing needs a full permutation");
}

// logsumexp over every entry of a matrix node, as a scalar node.
int lse_all(Tape& tape, int m) {
    const Tensor& t = tape.value(m);
    return tape.logsumexp(tape.reshape(m, 1, t.rows() * t.cols()), /*axis=*/1);
}

}  // namespace

int nwj(Tape& tape, const AttachedNet& critic, int x, int y,
        Pairing pairing, const std::vector<int>* perm) {
    const std::size_t n = batch_rows(tape, x, y, "nwj");
    if (pairing == Pairing::AllPairs) {
        const int f = critic_scores(tape, critic, x, y);
        const int joint = tape.mean_all(tape.take_diag(f));
        const int marg = tape.exp(tape.add_const(
            lse_all(tape, f), -1.0 - std::log(static_cast<double>(n * n))));
        return tape.sub(joint, marg);
    }
    check_perm(perm, n, "nwj");
    const int joint = tape.mean_all(paired_scores(tape, critic, x, y, nullptr));
    const int lse = tape.logsumexp(
        tape.reshape(paired_scores(tape, critic, x, y, perm), 1, n), /*axis=*/1);
    const int marg = tape.exp(tape.add_const(lse, -1.0 - std::log(static_cast<double>(n))));
    return tape.sub(joint, marg);
}

int mine(Tape& tape, const AttachedNet& critic, int x, int y,
         Pairing pairing, const std::vector<int>* perm) {
    const std::size_t n = batch_rows(tape, x, y, "mine");
    if (pairing == Pairing::AllPairs) {
        const int f = critic_scores(tape, critic, x, y);
        const int joint = tape.mean_all(tape.take_diag(f));
        return tape.sub(joint, tape.add_const(lse_all(tape, f),
                                              -std::log(static_cast<double>(n * n))));
    }
    check_perm(perm, n, "mine");
    const int joint = tape.mean_all(paired_scores(tape, critic, x, y, nullptr));
    const int lse = tape.logsumexp(
        tape.reshape(paired_scores(tape, critic, x, y, perm), 1, n), /*axis=*/1);
    return tape.sub(joint, tape.add_const(lse, -std::log(static_cast<double>(n))));
}

int infonce(Tape& tape, const AttachedNet& critic, int x, int y) {
    const std::size_t n = batch_rows(tape, x, y, "infonce");
    const int f = critic_scores(tape, critic, x, y);
    const int joint = tape.mean_all(tape.take_diag(f));
    const int lse_rows = tape.mean_all(tape.logsumexp(f, /*axis=*/1));
    return tape.add_const(tape.sub(joint, lse_rows), std::log(static_cast<double>(n)));
}

MineWithEma mine_ema(Tape& tape, const AttachedNet& critic, int x, int y,
                     double ema, double decay) {
    const std::size_t n = batch_rows(tape, x, y, "mine");
    if (!(ema > 0.0)) throw ContractError("mine_ema: moving average must be positive");
    const int f = critic_scores(tape, critic, x, y);
    const int joint = tape.mean_all(tape.take_diag(f));
    const int bound = tape.sub(joint, tape.add_const(lse_all(tape, f),
                                                     -std::log(static_cast<double>(n * n))));
    const int mean_exp = tape.mean_all(tape.exp(f));
    // d(loss)/d(theta) = -d(joint)/d(theta) + d(mean exp f)/d(theta) / ema:
    // the bias-corrected MINE gradient with a frozen denominator.
    const int loss = tape.sub(tape.scale(mean_exp, 1.0 / ema), joint);
    const double new_ema = decay * ema + (1.0 - decay) * tape.value(mean_exp).scalar_value();
    return MineWithEma{bound, loss, new_ema};
}

// ---------------------------------------------------------------------------
// Closed-form evaluation

double club_known_value(const Tensor& m) {
    if (m.rows() != m.cols()) throw ShapeError("club: matrix must be square");
    const std::size_t n = m.rows();
    if (n < 2) throw ContractError("club: need at least 2 rows");
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag += m(i, i);
    double all = 0.0;
    for (std::size_t i = 0; i < n * n; ++i) all += m.data()[i];
    return diag / static_cast<double>(n) - all / static_cast<double>(n * n);
}

double l1out_known_value(const Tensor& m) {
    if (m.rows() != m.cols()) throw ShapeError("l1out: matrix must be square");
    const std::size_t n = m.rows();
    if (n < 2) throw ContractError("l1out: need at least 2 rows");
    double diag = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag += m(i, i);
    double lses = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < n; ++k) {
            if (k == j) continue;
            mx = std::max(mx, m(k, j));
        }
        double s = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            if (k == j) continue;
            s += std::exp(m(k, j) - mx);
        }
        lses += mx + std::log(s);
    }
    const double gap = diag / static_cast<double>(n) - lses / static_cast<double>(n);
    return gap + std::log(static_cast<double>(n - 1));
}

double vub_known_value(const Tensor& lp_diag, const Tensor& y) {
    if (lp_diag.cols() != 1 || lp_diag.rows() != y.rows())
        throw ShapeError("vub: log-probability vector must be n x 1 and match y");
    const std::size_t n = y.rows();
    if (n == 0) throw ContractError("vub: empty batch");
    const double c1 = -0.5 * static_cast<double>(y.cols()) * kLog2Pi;
    double lp = 0.0, lr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        lp += lp_diag(i, 0);
        double s = 0.0;
        for (std::size_t k = 0; k < y.cols(); ++k) s += y(i, k) * y(i, k);
        lr += -0.5 * s + c1;
    }
    return lp / static_cast<double>(n) - lr / static_cast<double>(n);
}

Estimate known_estimate(EstimatorId id, const CorrelatedGaussianSource& src, const Batch& batch) {
    double v = 0.0;
    switch (id) {
        case EstimatorId::Club:
            v = club_known_value(src.cond_log_prob_full(batch.x, batch.y));
            break;
        case EstimatorId::L1Out:
            v = l1out_known_value(src.cond_log_prob_full(batch.x, batch.y));
            break;
        case EstimatorId::Vub:
            v = vub_known_value(src.cond_log_prob_diag(batch.x, batch.y), batch.y);
            break;
        default:
            throw ContractError("known_estimate: estimator has no closed-form variant");
    }
    return Estimate{id, kind_of(id), v};
}

}  // namespace mib::est
