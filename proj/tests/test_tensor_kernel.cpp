#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "mib/errors.hpp"
#include "mib/nn.hpp"
#include "mib/rng.hpp"
#include "mib/tape.hpp"
#include "mib/tensor.hpp"

using namespace mib;

namespace {

using GraphBuilder = std::function<int(Tape&, const std::vector<int>&)>;

double eval_scalar(const std::vector<Tensor>& inputs, const GraphBuilder& build) {
    Tape tape;
    std::vector<int> ids;
    ids.reserve(inputs.size());
    for (const Tensor& t : inputs) ids.push_back(tape.leaf(t));
    return tape.value(build(tape, ids)).scalar_value();
}

// Central finite differences against the tape's reverse sweep, every element
// of every input.
void check_grads(const std::vector<Tensor>& inputs, const GraphBuilder& build,
                 double tol = 1e-4) {
    Tape tape;
    std::vector<int> ids;
    for (const Tensor& t : inputs) ids.push_back(tape.leaf(t));
    const int loss = build(tape, ids);
    REQUIRE(tape.value(loss).is_scalar());
    tape.backward(loss);

    const double h = 1e-5;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        for (std::size_t e = 0; e < inputs[k].size(); ++e) {
            std::vector<Tensor> plus = inputs, minus = inputs;
            plus[k].data()[e] += h;
            minus[k].data()[e] -= h;
            const double fd = (eval_scalar(plus, build) - eval_scalar(minus, build)) / (2.0 * h);
            const double an = tape.grad(ids[k]).data()[e];
            const double scale = std::max({1.0, std::fabs(fd), std::fabs(an)});
            INFO("input ", k, " element ", e, " fd=", fd, " an=", an);
            CHECK(std::fabs(fd - an) / scale < tol);
        }
    }
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(r, c);
    for (std::size_t i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(lo, hi);
    return t;
}

}  // namespace

TEST_CASE("tensor shape contracts") {
    Tensor t(2, 3, 1.5);
    CHECK(t.rows() == 2);
    CHECK(t.cols() == 3);
    CHECK(t(1, 2) == 1.5);
    CHECK_FALSE(t.is_scalar());
    CHECK_THROWS_AS(t.scalar_value(), ContractError);
    CHECK(Tensor::scalar(4.0).scalar_value() == 4.0);
    CHECK_THROWS_AS(Tensor::from_rows({{1.0, 2.0}, {3.0}}), ShapeError);
}

TEST_CASE("rng streams are deterministic and distinct") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.uniform01() == b.uniform01());
    bool differs = false;
    Rng a2(42);
    for (int i = 0; i < 100; ++i) differs = differs || (a2.uniform01() != c.uniform01());
    CHECK(differs);

    Rng s0 = Rng::stream(7, 0), s1 = Rng::stream(7, 1);
    bool stream_differs = false;
    for (int i = 0; i < 100; ++i) stream_differs = stream_differs || (s0.raw() != s1.raw());
    CHECK(stream_differs);

    Rng u(5);
    for (int i = 0; i < 1000; ++i) {
        const double x = u.uniform01();
        CHECK(x >= 0.0);
        CHECK(x < 1.0);
        const auto k = u.below(7);
        CHECK(k < 7);
    }
}

TEST_CASE("rng normal moments") {
    Rng rng(11);
    const int n = 200000;
    double mean = 0.0, m2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double z = rng.normal();
        mean += z;
        m2 += z * z;
    }
    mean /= n;
    m2 /= n;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(std::fabs(m2 - 1.0) < 0.02);
}

TEST_CASE("matmul forward values with all transpose combinations") {
    Tape tape;
    const int a = tape.leaf(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}}));  // 3x2
    const int b = tape.leaf(Tensor::from_rows({{7.0, 8.0, 9.0}, {10.0, 11.0, 12.0}}));  // 2x3

    const Tensor ab = tape.value(tape.matmul(a, b));  // 3x3
    CHECK(ab(0, 0) == 27.0);   // 1*7 + 2*10
    CHECK(ab(2, 2) == 117.0);  // 5*9 + 6*12

    const Tensor atbt = tape.value(tape.matmul(a, b, true, true));  // 2x2
    CHECK(atbt.rows() == 2);
    CHECK(atbt(0, 0) == 1.0 * 7.0 + 3.0 * 8.0 + 5.0 * 9.0);

    const Tensor ata = tape.value(tape.matmul(a, a, true, false));  // 2x2
    CHECK(ata(0, 1) == 1.0 * 2.0 + 3.0 * 4.0 + 5.0 * 6.0);

    const Tensor bbt = tape.value(tape.matmul(b, b, false, true));  // 2x2
    CHECK(bbt(0, 0) == 49.0 + 64.0 + 81.0);

    CHECK_THROWS_AS(tape.matmul(a, a), ShapeError);
}

TEST_CASE("elementwise and broadcast forward values") {
    Tape tape;
    const int a = tape.leaf(Tensor::from_rows({{1.0, -2.0}, {3.0, 0.5}}));
    const int b = tape.leaf(Tensor::from_rows({{2.0, 4.0}, {-1.0, 8.0}}));

    CHECK(tape.value(tape.add(a, b))(0, 1) == 2.0);
    CHECK(tape.value(tape.sub(a, b))(1, 0) == 4.0);
    CHECK(tape.value(tape.mul(a, b))(1, 1) == 4.0);
    CHECK(tape.value(tape.div(a, b))(0, 1) == -0.5);
    CHECK(tape.value(tape.relu(a))(0, 1) == 0.0);
    CHECK(tape.value(tape.relu(a))(1, 0) == 3.0);
    CHECK(tape.value(tape.affine(a, 2.0, 1.0))(0, 0) == 3.0);
    CHECK(tape.value(tape.square(a))(0, 1) == 4.0);
    CHECK(tape.value(tape.tanh(a))(0, 0) == doctest::Approx(std::tanh(1.0)));

    const int row = tape.leaf(Tensor::from_rows({{10.0, 20.0}}));
    const Tensor ar = tape.value(tape.add_row(a, row));
    CHECK(ar(0, 0) == 11.0);
    CHECK(ar(1, 1) == 20.5);

    const int col = tape.leaf(Tensor::from_rows({{100.0}, {200.0}}));
    const Tensor ac = tape.value(tape.add_col(a, col));
    CHECK(ac(0, 1) == 98.0);
    CHECK(ac(1, 0) == 203.0);

    const int pos = tape.leaf(Tensor::from_rows({{1.0, 4.0}}));
    CHECK(tape.value(tape.log(pos))(0, 1) == doctest::Approx(std::log(4.0)));
    CHECK(tape.value(tape.exp(pos))(0, 0) == doctest::Approx(std::exp(1.0)));
}

TEST_CASE("reductions forward values") {
    Tape tape;
    const int a = tape.leaf(Tensor::from_rows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}}));
    CHECK(tape.value(tape.sum_all(a)).scalar_value() == 21.0);
    CHECK(tape.value(tape.mean_all(a)).scalar_value() == 3.5);

    const Tensor rows = tape.value(tape.sum_axis(a, 1));
    CHECK(rows.rows() == 2);
    CHECK(rows.cols() == 1);
    CHECK(rows(0, 0) == 6.0);
    CHECK(rows(1, 0) == 15.0);

    const Tensor cols = tape.value(tape.sum_axis(a, 0));
    CHECK(cols.rows() == 1);
    CHECK(cols.cols() == 3);
    CHECK(cols(0, 2) == 9.0);

    CHECK_THROWS_AS(tape.sum_axis(a, 2), ContractError);
}

TEST_CASE("logsumexp matches the naive formula and is overflow-safe") {
    Tape tape;
    const int a = tape.leaf(Tensor::from_rows({{0.1, 0.7, -0.3}, {1.2, -0.5, 0.4}}));
    const Tensor rows = tape.value(tape.logsumexp(a, 1));
    const double expect0 = std::log(std::exp(0.1) + std::exp(0.7) + std::exp(-0.3));
    CHECK(rows(0, 0) == doctest::Approx(expect0).epsilon(1e-12));

    const Tensor cols = tape.value(tape.logsumexp(a, 0));
    CHECK(cols.cols() == 3);
    CHECK(cols(0, 1) == doctest::Approx(std::log(std::exp(0.7) + std::exp(-0.5))).epsilon(1e-12));

    // Values this large overflow exp() unless the reduction shifts by the max.
    const int big = tape.leaf(Tensor::from_rows({{1000.0, 1000.1}}));
    const double lse = tape.value(tape.logsumexp(big, 1)).scalar_value();
    CHECK(std::isfinite(lse));
    CHECK(lse == doctest::Approx(1000.1 + std::log1p(std::exp(-0.1))).epsilon(1e-12));

    const int sq = tape.leaf(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
    const Tensor masked = tape.value(tape.logsumexp(sq, 0, true));
    CHECK(masked(0, 0) == doctest::Approx(3.0).epsilon(1e-12));  // only the (1,0) entry
    CHECK(masked(0, 1) == doctest::Approx(2.0).epsilon(1e-12));  // only the (0,1) entry

    CHECK_THROWS_AS(tape.logsumexp(a, 0, true), ContractError);  // not square
}

TEST_CASE("gather, concat, reshape, take_diag forward values") {
    Tape tape;
    const int a = tape.leaf(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0}}));
    const Tensor g = tape.value(tape.gather_rows(a, {2, 0, 2}));
    CHECK(g.rows() == 3);
    CHECK(g(0, 1) == 6.0);
    CHECK(g(1, 0) == 1.0);
    CHECK(g(2, 0) == 5.0);
    CHECK_THROWS_AS(tape.gather_rows(a, {3}), ContractError);
    CHECK_THROWS_AS(tape.gather_rows(a, {-1}), ContractError);

    const int b = tape.leaf(Tensor::from_rows({{7.0}, {8.0}, {9.0}}));
    const Tensor cc = tape.value(tape.concat_cols(a, b));
    CHECK(cc.cols() == 3);
    CHECK(cc(1, 2) == 8.0);
    CHECK(cc(2, 0) == 5.0);

    const Tensor rs = tape.value(tape.reshape(a, 2, 3));
    CHECK(rs(0, 2) == 3.0);
    CHECK(rs(1, 0) == 4.0);
    CHECK_THROWS_AS(tape.reshape(a, 4, 2), ShapeError);

    const int sq = tape.leaf(Tensor::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
    const Tensor d = tape.value(tape.take_diag(sq));
    CHECK(d.rows() == 2);
    CHECK(d.cols() == 1);
    CHECK(d(1, 0) == 4.0);
    CHECK_THROWS_AS(tape.take_diag(a), ShapeError);
}

TEST_CASE("non-finite forward values are a hard error") {
    Tape tape;
    const int neg = tape.leaf(Tensor::from_rows({{-1.0}}));
    CHECK_THROWS_AS(tape.log(neg), NumericError);
    const int huge = tape.leaf(Tensor::from_rows({{1000.0}}));
    CHECK_THROWS_AS(tape.exp(huge), NumericError);
    const int zero = tape.leaf(Tensor::from_rows({{0.0}}));
    const int one = tape.leaf(Tensor::from_rows({{1.0}}));
    CHECK_THROWS_AS(tape.div(one, zero), NumericError);
}

TEST_CASE("backward contracts") {
    Tape tape;
    const int a = tape.leaf(Tensor::from_rows({{1.0, 2.0}}));
    CHECK_THROWS_AS(tape.grad(a), ContractError);
    CHECK_THROWS_AS(tape.backward(a), ContractError);  // loss not scalar
    const int s = tape.mean_all(a);
    tape.backward(s);
    CHECK(tape.grad(a)(0, 0) == 0.5);
    CHECK(tape.grad(a)(0, 1) == 0.5);
}

TEST_CASE("gradients: matmul chains with transposes") {
    Rng rng(1);
    const std::vector<Tensor> inputs = {random_tensor(3, 2, rng), random_tensor(3, 2, rng),
                                        random_tensor(3, 3, rng)};
    check_grads(inputs, [](Tape& t, const std::vector<int>& in) {
        const int m1 = t.matmul(in[0], in[1], true, false);   // 2x2
        const int m2 = t.matmul(in[1], in[0], false, true);   // 3x3
        const int m3 = t.matmul(m2, in[2], false, false);     // 3x3
        const int m4 = t.matmul(in[2], m2, true, true);       // 3x3
        return t.add(t.mean_all(m1), t.mean_all(t.add(m3, m4)));
    });
}

TEST_CASE("gradients: elementwise ops and broadcasts") {
    Rng rng(2);
    std::vector<Tensor> inputs = {random_tensor(2, 3, rng), random_tensor(2, 3, rng, 0.5, 1.5),
                                  random_tensor(1, 3, rng), random_tensor(2, 1, rng)};
    check_grads(inputs, [](Tape& t, const std::vector<int>& in) {
        const int q = t.div(t.mul(in[0], in[1]), in[1]);
        const int r = t.add_col(t.add_row(q, in[2]), in[3]);
        const int s = t.sub(t.tanh(r), t.square(t.affine(in[0], 0.3, -0.1)));
        const int u = t.add(t.exp(t.affine(s, 0.5, 0.0)), t.log(in[1]));
        return t.add(t.mean_all(u), t.mean_all(t.sum_axis(u, 0)));
    });
}

TEST_CASE("gradients: relu away from the kink") {
    Rng rng(3);
    std::vector<Tensor> inputs = {random_tensor(3, 3, rng)};
    check_grads(inputs, [](Tape& t, const std::vector<int>& in) {
        const int hi = t.relu(t.add_const(in[0], 3.0));   // always active
        const int lo = t.relu(t.add_const(in[0], -3.0));  // always clipped
        return t.mean_all(t.add(hi, lo));
    });
}

TEST_CASE("gradients: reductions, logsumexp, gather, concat, reshape, diag") {
    Rng rng(4);
    std::vector<Tensor> inputs = {random_tensor(3, 3, rng), random_tensor(3, 2, rng)};
    check_grads(inputs, [](Tape& t, const std::vector<int>& in) {
        const int l1 = t.logsumexp(in[0], 1);
        const int l0 = t.logsumexp(in[0], 0);
        const int lm = t.logsumexp(in[0], 0, true);
        const int g = t.gather_rows(in[1], {0, 2, 2, 1});
        const int cc = t.concat_cols(g, g);                 // 4x4
        const int rs = t.reshape(cc, 2, 8);
        const int d = t.take_diag(in[0]);
        const int parts = t.add(t.mean_all(l1), t.add(t.mean_all(l0), t.mean_all(lm)));
        return t.add(parts, t.add(t.mean_all(rs), t.sum_all(d)));
    });
}

TEST_CASE("gradients: fused dense layer") {
    Rng rng(5);
    std::vector<Tensor> inputs = {random_tensor(4, 3, rng), random_tensor(2, 3, rng),
                                  random_tensor(1, 2, rng)};
    check_grads(inputs, [](Tape& t, const std::vector<int>& in) {
        const int with_relu = t.linear(in[0], in[1], in[2], true);
        const int plain = t.linear(in[0], in[1], in[2], false);
        return t.add(t.mean_all(with_relu), t.mean_all(plain));
    });
}

TEST_CASE("fused dense layer matches the composed ops bit for bit") {
    Rng rng(6);
    const Tensor xv = random_tensor(5, 3, rng), wv = random_tensor(4, 3, rng),
                 bv = random_tensor(1, 4, rng);
    Tape tape;
    const int x = tape.leaf(xv), w = tape.leaf(wv), b = tape.leaf(bv);
    const Tensor composed = tape.value(tape.relu(tape.add_row(tape.matmul(x, w, false, true), b)));
    const Tensor fused = tape.value(tape.linear(x, w, b, true));
    for (std::size_t i = 0; i < composed.size(); ++i)
        CHECK(fused.data()[i] == composed.data()[i]);

    CHECK_THROWS_AS(tape.linear(x, tape.leaf(Tensor(4, 2)), b, false), ShapeError);
    CHECK_THROWS_AS(tape.linear(x, w, tape.leaf(Tensor(1, 3)), false), ShapeError);
}

TEST_CASE("data nodes take part in values but not gradients") {
    Rng rng(7);
    const Tensor av = random_tensor(3, 3, rng), bv = random_tensor(3, 3, rng);
    Tape tape;
    const int a = tape.leaf(av);
    const int b = tape.data(bv);
    tape.backward(tape.mean_all(tape.mul(a, b)));
    const Tensor& da = tape.grad(a);
    const Tensor& db = tape.grad(b);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(da.data()[i] == doctest::Approx(bv.data()[i] / 9.0).epsilon(1e-12));
        CHECK(db.data()[i] == 0.0);
    }

    // A graph whose loss depends only on data nodes still evaluates, and the
    // sweep leaves every adjoint at zero.
    Tape t2;
    const int c = t2.data(av);
    const int d = t2.data(bv);
    t2.backward(t2.mean_all(t2.matmul(c, d)));
    CHECK(t2.grad(c).data()[0] == 0.0);
    CHECK(t2.grad(d).data()[0] == 0.0);
}

TEST_CASE("graph evaluation is deterministic") {
    auto run = [] {
        Rng rng(9);
        Tape tape;
        const int a = tape.leaf(random_tensor(4, 4, rng));
        const int b = tape.leaf(random_tensor(4, 4, rng));
        const int v = tape.mean_all(tape.logsumexp(tape.matmul(a, b), 1));
        tape.backward(v);
        return std::pair<double, double>(tape.value(v).scalar_value(),
                                         tape.grad(a)(2, 3));
    };
    const auto r1 = run(), r2 = run();
    CHECK(r1.first == r2.first);
    CHECK(r1.second == r2.second);
}

TEST_CASE("dense net: plain and taped forward agree exactly") {
    Rng rng(10);
    DenseNet net({3, 5, 2}, rng);
    const Tensor x = random_tensor(4, 3, rng);
    const Tensor plain = net.forward_plain(x);

    Tape tape;
    const auto att = net.attach(tape);
    const Tensor taped = tape.value(att.forward(tape, tape.leaf(x)));
    REQUIRE(taped.rows() == 4);
    REQUIRE(taped.cols() == 2);
    for (std::size_t i = 0; i < taped.size(); ++i)
        CHECK(taped.data()[i] == plain.data()[i]);
}

TEST_CASE("dense net: glorot bounds and zero biases") {
    Rng rng(12);
    DenseNet net({6, 4}, rng);
    const double a = std::sqrt(6.0 / (6.0 + 4.0));
    for (const auto& layer : net.layers()) {
        for (std::size_t i = 0; i < layer.w.size(); ++i) {
            CHECK(layer.w.data()[i] <= a);
            CHECK(layer.w.data()[i] >= -a);
        }
        for (std::size_t i = 0; i < layer.b.size(); ++i) CHECK(layer.b.data()[i] == 0.0);
    }
}

TEST_CASE("dense net: parameter gradients match finite differences") {
    Rng rng(13);
    DenseNet net({2, 4, 1}, rng);
    const Tensor x = random_tensor(5, 2, rng);

    Tape tape;
    auto att = net.attach(tape);
    const int loss = tape.mean_all(tape.square(att.forward(tape, tape.leaf(x))));
    tape.backward(loss);

    auto loss_plain = [&](const DenseNet& n) {
        const Tensor out = n.forward_plain(x);
        double acc = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) acc += out.data()[i] * out.data()[i];
        return acc / static_cast<double>(out.size());
    };

    const double h = 1e-6;
    for (std::size_t p = 0; p < att.params.size(); ++p) {
        Tensor& param = *att.params[p].param;
        const Tensor& grad = tape.grad(att.params[p].node);
        for (std::size_t e = 0; e < param.size(); ++e) {
            const double keep = param.data()[e];
            param.data()[e] = keep + h;
            const double fp = loss_plain(net);
            param.data()[e] = keep - h;
            const double fm = loss_plain(net);
            param.data()[e] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double an = grad.data()[e];
            const double scale = std::max({1.0, std::fabs(fd), std::fabs(an)});
            CHECK(std::fabs(fd - an) / scale < 1e-4);
        }
    }
}

TEST_CASE("adam matches the reference recursion") {
    // Scalar parameter, fixed gradient sequence, hand-rolled update.
    Tensor param = Tensor::scalar(1.0);
    Adam adam(0.1);
    const double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double ref = 1.0, m = 0.0, v = 0.0;
    const std::vector<double> grads = {0.5, -1.25, 0.75, 2.0, -0.1};
    for (std::size_t t = 0; t < grads.size(); ++t) {
        const Tensor g = Tensor::scalar(grads[t]);
        adam.step({&param}, {&g});
        m = beta1 * m + (1.0 - beta1) * grads[t];
        v = beta2 * v + (1.0 - beta2) * grads[t] * grads[t];
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t + 1));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t + 1));
        ref -= 0.1 * (m / bc1) / (std::sqrt(v / bc2) + eps);
        CHECK(param.scalar_value() == doctest::Approx(ref).epsilon(1e-15));
    }
    CHECK(adam.steps() == 5);
}

TEST_CASE("adam rejects shape changes and non-finite gradients") {
    Tensor param(2, 2, 1.0);
    Adam adam(0.01);
    const Tensor good(2, 2, 0.1);
    adam.step({&param}, {&good});
    const Tensor wrong(2, 3, 0.1);
    CHECK_THROWS_AS(adam.step({&param}, {&wrong}), ShapeError);
    Tensor bad(2, 2, 0.1);
    bad(0, 0) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(adam.step({&param}, {&bad}), NumericError);
}
