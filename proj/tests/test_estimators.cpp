#include <doctest.h>

#include <array>
#include <functional>
#include <cmath>
#include <vector>

#include "mib/distributions.hpp"
#include "mib/errors.hpp"
#include "mib/estimators.hpp"
#include "mib/rng.hpp"
#include "mib/tape.hpp"

using namespace mib;

namespace {

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

// Scalar-loop MLP forward, independent of the tape.
Tensor oracle_forward(const DenseNet& net, const Tensor& x) {
    Tensor h = x;
    for (std::size_t l = 0; l < net.layers().size(); ++l) {
        const auto& layer = net.layers()[l];
        Tensor z(h.rows(), layer.w.rows());
        for (std::size_t i = 0; i < h.rows(); ++i)
            for (std::size_t j = 0; j < layer.w.rows(); ++j) {
                double acc = layer.b(0, j);
                for (std::size_t k = 0; k < h.cols(); ++k) acc += h(i, k) * layer.w(j, k);
                z(i, j) = acc;
            }
        if (l + 1 < net.layers().size())
            for (std::size_t i = 0; i < z.size(); ++i)
                z.data()[i] = std::max(0.0, z.data()[i]);
        h = z;
    }
    return h;
}

// log q(y_j | x_i) for every pair, from the conditional's nets, by loops.
Tensor oracle_log_prob_matrix(DiagGaussianCond& cond, const Tensor& x, const Tensor& y) {
    const Tensor mu = oracle_forward(cond.mu_net(), x);
    Tensor lv = oracle_forward(cond.logvar_net(), x);
    if (cond.logvar_bound() > 0.0)
        for (std::size_t i = 0; i < lv.size(); ++i)
            lv.data()[i] = cond.logvar_bound() * std::tanh(lv.data()[i] / cond.logvar_bound());
    Tensor out(x.rows(), y.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < y.rows(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < y.cols(); ++k) {
                const double diff = y(j, k) - mu(i, k);
                acc += -0.5 * std::log(2.0 * 3.14159265358979323846) - 0.5 * lv(i, k) -
                       0.5 * diff * diff / std::exp(lv(i, k));
            }
            out(i, j) = acc;
        }
    return out;
}

// f(x_i, y_j) for every pair through the critic, by loops.
Tensor oracle_scores(const DenseNet& critic, const Tensor& x, const Tensor& y) {
    Tensor out(x.rows(), y.rows());
    for (std::size_t i = 0; i < x.rows(); ++i)
        for (std::size_t j = 0; j < y.rows(); ++j) {
            Tensor z(1, x.cols() + y.cols());
            for (std::size_t k = 0; k < x.cols(); ++k) z(0, k) = x(i, k);
            for (std::size_t k = 0; k < y.cols(); ++k) z(0, x.cols() + k) = y(j, k);
            out(i, j) = oracle_forward(critic, z)(0, 0);
        }
    return out;
}

struct Fixture {
    Rng rng{51};
    std::size_t n = 5, d = 3;
    DiagGaussianCond cond{3, 3, 6, rng};
    DenseNet critic{std::vector<std::size_t>{6, 6, 1}, rng};
    Tensor x = random_tensor(5, 3, rng);
    Tensor y = random_tensor(5, 3, rng);

    double graph_cond_value(const std::function<int(Tape&, const DiagGaussianCond::Attached&,
                                                    int, int)>& build) {
        Tape tape;
        auto att = cond.attach(tape);
        const int xl = tape.leaf(x), yl = tape.leaf(y);
        return tape.value(build(tape, att, xl, yl)).scalar_value();
    }

    double graph_critic_value(const std::function<int(Tape&, const AttachedNet&, int, int)>& build) {
        Tape tape;
        auto att = critic.attach(tape);
        const int xl = tape.leaf(x), yl = tape.leaf(y);
        return tape.value(build(tape, att, xl, yl)).scalar_value();
    }
};

}  // namespace

TEST_CASE("estimator names round-trip and classify correctly") {
    for (est::EstimatorId id : est::all_estimators()) {
        const auto parsed = est::parse_estimator(est::estimator_name(id));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == id);
    }
    CHECK_FALSE(est::parse_estimator("nope").has_value());
    CHECK(est::kind_of(est::EstimatorId::Club) == est::Kind::Upper);
    CHECK(est::kind_of(est::EstimatorId::VVub) == est::Kind::Upper);
    CHECK(est::kind_of(est::EstimatorId::L1Out) == est::Kind::Lower);
    CHECK(est::kind_of(est::EstimatorId::InfoNce) == est::Kind::Lower);
    CHECK(est::uses_known_conditional(est::EstimatorId::Club));
    CHECK(est::uses_learned_conditional(est::EstimatorId::VClubSample));
    CHECK(est::uses_critic(est::EstimatorId::Mine));
    CHECK(*est::parse_pairing("shuffle") == est::Pairing::Shuffle);
}

TEST_CASE("conditional bounds match scalar-loop oracles") {
    Fixture f;
    const Tensor lp = oracle_log_prob_matrix(f.cond, f.x, f.y);
    const std::size_t n = f.n;

    double diag_mean = 0.0, all_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag_mean += lp(i, i);
    diag_mean /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) all_mean += lp(i, j);
    all_mean /= static_cast<double>(n * n);

    SUBCASE("vclub") {
        const double got = f.graph_cond_value(
            [](Tape& t, const DiagGaussianCond::Attached& a, int x, int y) {
                return est::vclub(t, a, x, y);
            });
        CHECK(std::fabs(got - (diag_mean - all_mean)) < 1e-10);
    }

    SUBCASE("sampled negatives") {
        const std::vector<int> neg = {2, 0, 4, 4, 1};
        double neg_mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) neg_mean += lp(i, static_cast<std::size_t>(neg[i]));
        neg_mean /= static_cast<double>(n);
        const double got = f.graph_cond_value(
            [&](Tape& t, const DiagGaussianCond::Attached& a, int x, int y) {
                return est::vclub_sampled(t, a, x, y, neg);
            });
        CHECK(std::fabs(got - (diag_mean - neg_mean)) < 1e-10);
    }

    SUBCASE("variational upper bound against the unit marginal") {
        double marg = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t k = 0; k < f.d; ++k) s += f.y(i, k) * f.y(i, k);
            marg += -0.5 * s - 0.5 * static_cast<double>(f.d) *
                                   std::log(2.0 * 3.14159265358979323846);
        }
        marg /= static_cast<double>(n);
        const double got = f.graph_cond_value(
            [](Tape& t, const DiagGaussianCond::Attached& a, int x, int y) {
                return est::vub(t, a, x, y);
            });
        CHECK(std::fabs(got - (diag_mean - marg)) < 1e-10);
    }

    SUBCASE("leave-one-out") {
        double lse_mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                if (k != j) s += std::exp(lp(k, j));
            lse_mean += std::log(s);
        }
        lse_mean /= static_cast<double>(n);
        const double expect = diag_mean - lse_mean + std::log(static_cast<double>(n - 1));
        const double got = f.graph_cond_value(
            [](Tape& t, const DiagGaussianCond::Attached& a, int x, int y) {
                return est::vl1out(t, a, x, y);
            });
        CHECK(std::fabs(got - expect) < 1e-10);
    }

    SUBCASE("log-likelihood loss") {
        const double got = f.graph_cond_value(
            [](Tape& t, const DiagGaussianCond::Attached& a, int x, int y) {
                return est::loglik_loss(t, a, x, y);
            });
        CHECK(std::fabs(got - (-diag_mean)) < 1e-10);
    }
}

TEST_CASE("critic bounds match scalar-loop oracles") {
    Fixture f;
    const Tensor fm = oracle_scores(f.critic, f.x, f.y);
    const std::size_t n = f.n;

    double diag_mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) diag_mean += fm(i, i);
    diag_mean /= static_cast<double>(n);

    double sum_exp = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) sum_exp += std::exp(fm(i, j));

    SUBCASE("nwj") {
        const double expect = diag_mean - sum_exp / (std::exp(1.0) * static_cast<double>(n * n));
        const double got = f.graph_critic_value([](Tape& t, const AttachedNet& a, int x, int y) {
            return est::nwj(t, a, x, y);
        });
        CHECK(std::fabs(got - expect) < 1e-10);
    }

    SUBCASE("mine") {
        const double expect = diag_mean - std::log(sum_exp / static_cast<double>(n * n));
        const double got = f.graph_critic_value([](Tape& t, const AttachedNet& a, int x, int y) {
            return est::mine(t, a, x, y);
        });
        CHECK(std::fabs(got - expect) < 1e-10);
    }

    SUBCASE("infonce") {
        double lse_mean = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < n; ++j) s += std::exp(fm(i, j));
            lse_mean += std::log(s);
        }
        lse_mean /= static_cast<double>(n);
        const double expect = diag_mean - lse_mean + std::log(static_cast<double>(n));
        const double got = f.graph_critic_value([](Tape& t, const AttachedNet& a, int x, int y) {
            return est::infonce(t, a, x, y);
        });
        CHECK(std::fabs(got - expect) < 1e-10);
    }

    SUBCASE("shuffled pairing") {
        const std::vector<int> perm = {3, 1, 4, 0, 2};
        double marg_exp = 0.0, marg_lse = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            marg_exp += std::exp(fm(i, static_cast<std::size_t>(perm[i])));
        marg_lse = std::log(marg_exp / static_cast<double>(n));
        const double nwj_expect = diag_mean - marg_exp / (std::exp(1.0) * static_cast<double>(n));
        const double mine_expect = diag_mean - marg_lse;
        const double nwj_got = f.graph_critic_value(
            [&](Tape& t, const AttachedNet& a, int x, int y) {
                return est::nwj(t, a, x, y, est::Pairing::Shuffle, &perm);
            });
        const double mine_got = f.graph_critic_value(
            [&](Tape& t, const AttachedNet& a, int x, int y) {
                return est::mine(t, a, x, y, est::Pairing::Shuffle, &perm);
            });
        CHECK(std::fabs(nwj_got - nwj_expect) < 1e-10);
        CHECK(std::fabs(mine_got - mine_expect) < 1e-10);
    }
}

TEST_CASE("closed-form values agree with the graph") {
    const double rho = 0.55;
    const std::size_t n = 6, d = 2;
    const CorrelatedGaussianSource src(d, rho, false);
    Rng rng(52);
    const Batch batch = src.sample(n, rng);
    DiagGaussianCond frozen = DiagGaussianCond::frozen_gaussian(d, rho);

    Tape tape;
    auto att = frozen.attach(tape);
    const int xl = tape.leaf(batch.x), yl = tape.leaf(batch.y);
    const double vclub_graph = tape.value(est::vclub(tape, att, xl, yl)).scalar_value();
    const double l1out_graph =
        tape.value(est::l1out_from_matrix(tape, att.log_prob_full(tape, xl, yl))).scalar_value();
    const double vub_graph = tape.value(est::vub(tape, att, xl, yl)).scalar_value();

    // The graph builds the pairwise matrix through the expanded quadratic
    // while the closed form accumulates per pair, so agreement is to rounding,
    // not bit for bit.
    const Tensor kf = src.cond_log_prob_full(batch.x, batch.y);
    CHECK(vclub_graph == doctest::Approx(est::club_known_value(kf)).epsilon(1e-12));
    CHECK(l1out_graph == doctest::Approx(est::l1out_known_value(kf)).epsilon(1e-12));
    CHECK(vub_graph ==
          doctest::Approx(est::vub_known_value(src.cond_log_prob_diag(batch.x, batch.y), batch.y))
              .epsilon(1e-12));

    const auto club = est::known_estimate(est::EstimatorId::Club, src, batch);
    CHECK(club.value == est::club_known_value(kf));
    CHECK(club.kind == est::Kind::Upper);
    CHECK(est::known_estimate(est::EstimatorId::L1Out, src, batch).value ==
          est::l1out_known_value(kf));
    CHECK(est::known_estimate(est::EstimatorId::Vub, src, batch).value ==
          est::vub_known_value(src.cond_log_prob_diag(batch.x, batch.y), batch.y));
    CHECK_THROWS_AS(est::known_estimate(est::EstimatorId::VClub, src, batch), ContractError);
}

TEST_CASE("a conditional that ignores x nulls the contrastive bounds") {
    // Zero-weight nets: q(y|x) = N(0, I) for every x, so positive and negative
    // log-densities coincide and the log-ratios cancel.
    Rng rng(53);
    DiagGaussianCond cond(3, 3, 4, rng);
    for (auto& layer : cond.mu_net().layers()) {
        layer.w.fill(0.0);
        layer.b.fill(0.0);
    }
    for (auto& layer : cond.logvar_net().layers()) {
        layer.w.fill(0.0);
        layer.b.fill(0.0);
    }
    const Tensor x = random_tensor(16, 3, rng);
    const Tensor y = random_tensor(16, 3, rng);

    Tape tape;
    auto att = cond.attach(tape);
    const int xl = tape.leaf(x), yl = tape.leaf(y);
    CHECK(std::fabs(tape.value(est::vclub(tape, att, xl, yl)).scalar_value()) < 1e-9);
    CHECK(std::fabs(tape.value(est::vl1out(tape, att, xl, yl)).scalar_value()) < 1e-9);
}

TEST_CASE("sampling the row itself as negative gives exactly zero") {
    Fixture f;
    const std::vector<int> self = {0, 1, 2, 3, 4};
    const double got = f.graph_cond_value(
        [&](Tape& t, const DiagGaussianCond::Attached& a, int x, int y) {
            return est::vclub_sampled(t, a, x, y, self);
        });
    CHECK(got == 0.0);
}

TEST_CASE("sampled negatives average back to the all-pairs bound") {
    // n = 3: enumerate all 27 negative-index assignments exhaustively.
    const std::size_t n = 3, d = 2;
    Rng rng(54);
    DiagGaussianCond cond(d, d, 5, rng);
    const Tensor x = random_tensor(n, d, rng);
    const Tensor y = random_tensor(n, d, rng);

    Tape base;
    auto att0 = cond.attach(base);
    const double full =
        base.value(est::vclub(base, att0, base.leaf(x), base.leaf(y))).scalar_value();

    double acc = 0.0;
    std::size_t count = 0;
    for (int i0 = 0; i0 < 3; ++i0)
        for (int i1 = 0; i1 < 3; ++i1)
            for (int i2 = 0; i2 < 3; ++i2) {
                Tape tape;
                auto att = cond.attach(tape);
                acc += tape.value(est::vclub_sampled(tape, att, tape.leaf(x), tape.leaf(y),
                                                     {i0, i1, i2}))
                           .scalar_value();
                ++count;
            }
    CHECK(count == 27);
    CHECK(std::fabs(acc / 27.0 - full) < 1e-12);
}

TEST_CASE("jointly permuting the batch leaves bounds unchanged") {
    Fixture f;
    const std::vector<int> perm = {4, 2, 0, 1, 3};
    Tensor px(f.n, f.d), py(f.n, f.d);
    for (std::size_t i = 0; i < f.n; ++i)
        for (std::size_t k = 0; k < f.d; ++k) {
            px(i, k) = f.x(static_cast<std::size_t>(perm[i]), k);
            py(i, k) = f.y(static_cast<std::size_t>(perm[i]), k);
        }

    const auto value_on = [&](const Tensor& xx, const Tensor& yy, auto build) {
        Tape tape;
        auto catt = f.cond.attach(tape);
        auto katt = f.critic.attach(tape);
        const int xl = tape.leaf(xx), yl = tape.leaf(yy);
        return tape.value(build(tape, catt, katt, xl, yl)).scalar_value();
    };

    using CA = const DiagGaussianCond::Attached&;
    using KA = const AttachedNet&;
    const auto bounds = std::vector<std::function<int(Tape&, CA, KA, int, int)>>{
        [](Tape& t, CA c, KA, int x, int y) { return est::vclub(t, c, x, y); },
        [](Tape& t, CA c, KA, int x, int y) { return est::vub(t, c, x, y); },
        [](Tape& t, CA c, KA, int x, int y) { return est::vl1out(t, c, x, y); },
        [](Tape& t, CA, KA k, int x, int y) { return est::nwj(t, k, x, y); },
        [](Tape& t, CA, KA k, int x, int y) { return est::mine(t, k, x, y); },
        [](Tape& t, CA, KA k, int x, int y) { return est::infonce(t, k, x, y); },
    };
    for (const auto& build : bounds) {
        const double a = value_on(f.x, f.y, build);
        const double b = value_on(px, py, build);
        CHECK(std::fabs(a - b) < 1e-11);
    }
}

TEST_CASE("critic bound order and range properties") {
    Rng rng(55);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 4 + rep % 3, d = 2;
        DenseNet critic({2 * d, 5, 1}, rng);
        const Tensor x = random_tensor(n, d, rng, -2.0, 2.0);
        const Tensor y = random_tensor(n, d, rng, -2.0, 2.0);
        Tape tape;
        auto att = critic.attach(tape);
        const int xl = tape.leaf(x), yl = tape.leaf(y);
        const double v_nwj = tape.value(est::nwj(tape, att, xl, yl)).scalar_value();
        const double v_mine = tape.value(est::mine(tape, att, xl, yl)).scalar_value();
        const double v_nce = tape.value(est::infonce(tape, att, xl, yl)).scalar_value();
        // exp(z - 1) >= z makes the nwj partition term dominate mine's.
        CHECK(v_nwj <= v_mine + 1e-12);
        CHECK(v_nce <= std::log(static_cast<double>(n)) + 1e-12);
    }
}

TEST_CASE("mine is invariant to critic shifts, and the ema variant tracks it") {
    Fixture f;
    const double before = f.graph_critic_value([](Tape& t, const AttachedNet& a, int x, int y) {
        return est::mine(t, a, x, y);
    });
    f.critic.layers().back().b(0, 0) += 3.7;
    const double after = f.graph_critic_value([](Tape& t, const AttachedNet& a, int x, int y) {
        return est::mine(t, a, x, y);
    });
    CHECK(std::fabs(before - after) < 1e-11);

    Tape tape;
    auto att = f.critic.attach(tape);
    const int xl = tape.leaf(f.x), yl = tape.leaf(f.y);
    const auto parts = est::mine_ema(tape, att, xl, yl, 2.0, 0.99);
    CHECK(tape.value(parts.bound).scalar_value() == doctest::Approx(after).epsilon(1e-12));
    const Tensor fm = oracle_scores(f.critic, f.x, f.y);
    double mean_exp = 0.0;
    for (std::size_t i = 0; i < fm.size(); ++i) mean_exp += std::exp(fm.data()[i]);
    mean_exp /= static_cast<double>(fm.size());
    CHECK(parts.new_ema == doctest::Approx(0.99 * 2.0 + 0.01 * mean_exp).epsilon(1e-10));
    CHECK_THROWS_AS(est::mine_ema(tape, att, xl, yl, 0.0, 0.99), ContractError);
}

TEST_CASE("estimator preconditions") {
    Fixture f;
    Tape tape;
    auto catt = f.cond.attach(tape);
    auto katt = f.critic.attach(tape);
    const int x1 = tape.leaf(random_tensor(1, 3, f.rng));
    const int y1 = tape.leaf(random_tensor(1, 3, f.rng));
    CHECK_THROWS_AS(est::vclub(tape, catt, x1, y1), ContractError);
    CHECK_THROWS_AS(est::infonce(tape, katt, x1, y1), ContractError);

    const int xl = tape.leaf(f.x), yl = tape.leaf(f.y);
    CHECK_THROWS_AS(est::vclub_sampled(tape, catt, xl, yl, {0, 1}), ContractError);
    CHECK_THROWS_AS(est::vclub_sampled(tape, catt, xl, yl, {0, 1, 2, 3, 9}), ContractError);
    CHECK_THROWS_AS(est::nwj(tape, katt, xl, yl, est::Pairing::Shuffle, nullptr), ContractError);

    const int y_short = tape.leaf(random_tensor(4, 3, f.rng));
    CHECK_THROWS_AS(est::vclub(tape, catt, xl, y_short), ShapeError);

    const Tensor not_square(3, 4, 0.0);
    CHECK_THROWS_AS(est::club_known_value(not_square), ShapeError);
    CHECK_THROWS_AS(est::l1out_known_value(Tensor(1, 1, 0.0)), ContractError);
}
