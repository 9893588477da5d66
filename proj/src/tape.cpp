#include "mib/tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>


namespace mib {

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::MatMul: return "matmul";
        case Op::Linear: return "linear";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::Div: return "div";
        case Op::AddRow: return "add_row";
        case Op::AddCol: return "add_col";
        case Op::Affine: return "affine";
        case Op::Relu: return "relu";
        case Op::Tanh: return "tanh";
        case Op::Exp: return "exp";
        case Op::Log: return "log";
        case Op::Square: return "square";
        case Op::SumAll: return "sum_all";
        case Op::MeanAll: return "mean_all";
        case Op::SumAxis: return "sum_axis";
        case Op::LogSumExp: return "logsumexp";
        case Op::GatherRows: return "gather_rows";
        case Op::ConcatCols: return "concat_cols";
        case Op::Reshape: return "reshape";
        case Op::TakeDiag: return "take_diag";
    }
    return "?";
}

namespace {

// out (+)= op(A) * op(B)
void matmul_into(Tensor& out, const Tensor& A, const Tensor& B, bool ta, bool tb, bool accumulate) {
    const std::size_t m = ta ? A.cols() : A.rows();
    const std::size_t k = ta ? A.rows() : A.cols();
    const std::size_t kb = tb ? B.cols() : B.rows();
    const std::size_t n = tb ? B.rows() : B.cols();
    if (k != kb) throw ShapeError("matmul: inner dimensions disagree");
    if (!accumulate) out = Tensor(m, n);
    if (out.rows() != m || out.cols() != n) throw ShapeError("matmul: output shape mismatch");

    if (!ta && !tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* o = out.row(i);
            const double* ar = A.row(i);
            for (std::size_t p = 0; p < k; ++p) {
                const double av = ar[p];
                const double* br = B.row(p);
                for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
            }
        }
    } else if (!ta && tb) {
        for (std::size_t i = 0; i < m; ++i) {
            double* o = out.row(i);
            const double* ar = A.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const double* br = B.row(j);
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += ar[p] * br[p];
                o[j] += acc;
            }
        }
    } else if (ta && !tb) {
        for (std::size_t p = 0; p < k; ++p) {
            const double* ar = A.row(p);
            const double* br = B.row(p);
            for (std::size_t i = 0; i < m; ++i) {
                const double av = ar[i];
                double* o = out.row(i);
                for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
            }
        }
    } else {
        for (std::size_t i = 0; i < m; ++i) {
            double* o = out.row(i);
            for (std::size_t j = 0; j < n; ++j) {
                const double* br = B.row(j);
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += A(p, i) * br[p];
                o[j] += acc;
            }
        }
    }
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": operand shapes differ");
}

}  // namespace

Tensor matmul_plain(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
    Tensor out;
    matmul_into(out, a, b, trans_a, trans_b, false);
    return out;
}

const Tape::Node& Tape::node(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ContractError("tape: node id out of range");
    return nodes_[static_cast<std::size_t>(id)];
}

const Tensor& Tape::grad(int id) const {
    const Node& n = node(id);
    if (!has_grads_) throw ContractError("tape: backward() has not run");
    return n.grad;
}

int Tape::push(Node n, const char* what) {
    if (!n.value.all_finite())
        throw NumericError(std::string("non-finite value produced by ") + what);
    if (n.op != Op::Leaf) {
        auto in_req = [this](int id) { return id >= 0 && nodes_[static_cast<std::size_t>(id)].req; };
        n.req = in_req(n.a) || in_req(n.b) || in_req(n.c);
    }
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::leaf(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.value = std::move(v);
    return push(std::move(n), "leaf");
}

int Tape::data(Tensor v) {
    Node n;
    n.op = Op::Leaf;
    n.req = false;
    n.value = std::move(v);
    return push(std::move(n), "leaf");
}

int Tape::matmul(int a, int b, bool trans_a, bool trans_b) {
    Node n;
    n.op = Op::MatMul;
    n.a = a;
    n.b = b;
    n.ta = trans_a;
    n.tb = trans_b;
    matmul_into(n.value, node(a).value, node(b).value, trans_a, trans_b, false);
    return push(std::move(n), "matmul");
}

// Whole dense layer as one node. Accumulation order matches
// matmul(x, w, false, true) followed by add_row and relu exactly, so a
// fused layer and the composed ops produce bitwise-identical values.
int Tape::linear(int x, int w, int bias, bool apply_relu) {
    const Tensor& xv = node(x).value;
    const Tensor& wv = node(w).value;
    const Tensor& bv = node(bias).value;
    if (wv.cols() != xv.cols()) throw ShapeError("linear: inner dimensions disagree");
    if (bv.rows() != 1 || bv.cols() != wv.rows())
        throw ShapeError("linear: bias must be a 1 x out row vector");
    Node n;
    n.op = Op::Linear;
    n.a = x;
    n.b = w;
    n.c = bias;
    n.ta = apply_relu;
    const std::size_t m = xv.rows(), k = xv.cols(), f = wv.rows();
    n.value = Tensor(m, f);
    for (std::size_t i = 0; i < m; ++i) {
        const double* xr = xv.row(i);
        double* o = n.value.row(i);
        for (std::size_t j = 0; j < f; ++j) {
            const double* wr = wv.row(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += xr[p] * wr[p];
            acc += bv.data()[j];
            o[j] = (apply_relu && acc < 0.0) ? 0.0 : acc;
        }
    }
    return push(std::move(n), "linear");
}

int Tape::add(int a, int b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    check_same_shape(ta, tb, "add");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    n.value = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.value.data()[i] += tb.data()[i];
    return push(std::move(n), "add");
}

int Tape::sub(int a, int b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    check_same_shape(ta, tb, "sub");
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    n.value = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.value.data()[i] -= tb.data()[i];
    return push(std::move(n), "sub");
}

int Tape::mul(int a, int b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    check_same_shape(ta, tb, "mul");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    n.value = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.value.data()[i] *= tb.data()[i];
    return push(std::move(n), "mul");
}

int Tape::div(int a, int b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    check_same_shape(ta, tb, "div");
    Node n;
    n.op = Op::Div;
    n.a = a;
    n.b = b;
    n.value = ta;
    for (std::size_t i = 0; i < tb.size(); ++i) n.value.data()[i] /= tb.data()[i];
    return push(std::move(n), "div");
}

int Tape::add_row(int m, int row) {
    const Tensor& tm = node(m).value;
    const Tensor& tr = node(row).value;
    if (tr.rows() != 1 || tr.cols() != tm.cols())
        throw ShapeError("add_row: expected a 1 x cols row vector");
    Node n;
    n.op = Op::AddRow;
    n.a = m;
    n.b = row;
    n.value = tm;
    for (std::size_t i = 0; i < tm.rows(); ++i) {
        double* o = n.value.row(i);
        for (std::size_t j = 0; j < tm.cols(); ++j) o[j] += tr.data()[j];
    }
    return push(std::move(n), "add_row");
}

int Tape::add_col(int m, int col) {
    const Tensor& tm = node(m).value;
    const Tensor& tc = node(col).value;
    if (tc.cols() != 1 || tc.rows() != tm.rows())
        throw ShapeError("add_col: expected a rows x 1 column vector");
    Node n;
    n.op = Op::AddCol;
    n.a = m;
    n.b = col;
    n.value = tm;
    for (std::size_t i = 0; i < tm.rows(); ++i) {
        double* o = n.value.row(i);
        const double cv = tc.data()[i];
        for (std::size_t j = 0; j < tm.cols(); ++j) o[j] += cv;
    }
    return push(std::move(n), "add_col");
}

int Tape::affine(int a, double mul_c, double add_c) {
    Node n;
    n.op = Op::Affine;
    n.a = a;
    n.c0 = mul_c;
    n.c1 = add_c;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i)
        n.value.data()[i] = mul_c * n.value.data()[i] + add_c;
    return push(std::move(n), "affine");
}

int Tape::relu(int a) {
    Node n;
    n.op = Op::Relu;
    n.a = a;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i)
        if (n.value.data()[i] < 0.0) n.value.data()[i] = 0.0;
    return push(std::move(n), "relu");
}

int Tape::tanh(int a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i)
        n.value.data()[i] = std::tanh(n.value.data()[i]);
    return push(std::move(n), "tanh");
}

int Tape::exp(int a) {
    Node n;
    n.op = Op::Exp;
    n.a = a;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i)
        n.value.data()[i] = std::exp(n.value.data()[i]);
    return push(std::move(n), "exp");
}

int Tape::log(int a) {
    Node n;
    n.op = Op::Log;
    n.a = a;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i)
        n.value.data()[i] = std::log(n.value.data()[i]);
    return push(std::move(n), "log");
}

int Tape::square(int a) {
    Node n;
    n.op = Op::Square;
    n.a = a;
    n.value = node(a).value;
    for (std::size_t i = 0; i < n.value.size(); ++i)
        n.value.data()[i] *= n.value.data()[i];
    return push(std::move(n), "square");
}

int Tape::sum_all(int a) {
    Node n;
    n.op = Op::SumAll;
    n.a = a;
    const Tensor& t = node(a).value;
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += t.data()[i];
    n.value = Tensor::scalar(acc);
    return push(std::move(n), "sum_all");
}

int Tape::mean_all(int a) {
    const Tensor& t = node(a).value;
    if (t.size() == 0) throw ContractError("mean_all: empty tensor");
    Node n;
    n.op = Op::MeanAll;
    n.a = a;
    double acc = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) acc += t.data()[i];
    n.value = Tensor::scalar(acc / static_cast<double>(t.size()));
    return push(std::move(n), "mean_all");
}

int Tape::sum_axis(int a, int axis) {
    const Tensor& t = node(a).value;
    if (axis != 0 && axis != 1) throw ContractError("sum_axis: axis must be 0 or 1");
    Node n;
    n.op = Op::SumAxis;
    n.a = a;
    n.axis = axis;
    if (axis == 1) {
        n.value = Tensor(t.rows(), 1);
        for (std::size_t i = 0; i < t.rows(); ++i) {
            double acc = 0.0;
            const double* r = t.row(i);
            for (std::size_t j = 0; j < t.cols(); ++j) acc += r[j];
            n.value(i, 0) = acc;
        }
    } else {
        n.value = Tensor(1, t.cols());
        for (std::size_t i = 0; i < t.rows(); ++i) {
            const double* r = t.row(i);
            for (std::size_t j = 0; j < t.cols(); ++j) n.value(0, j) += r[j];
        }
    }
    return push(std::move(n), "sum_axis");
}

int Tape::logsumexp(int a, int axis, bool skip_diag) {
    const Tensor& t = node(a).value;
    if (axis != 0 && axis != 1) throw ContractError("logsumexp: axis must be 0 or 1");
    if (skip_diag && (t.rows() != t.cols() || t.rows() < 2))
        throw ContractError("logsumexp: diagonal mask needs a square matrix, n >= 2");
    const std::size_t groups = axis == 1 ? t.rows() : t.cols();
    const std::size_t extent = axis == 1 ? t.cols() : t.rows();
    if (extent == 0 || (skip_diag && extent == 1))
        throw ContractError("logsumexp: empty reduction");

    Node n;
    n.op = Op::LogSumExp;
    n.a = a;
    n.axis = axis;
    n.tb = skip_diag;
    n.value = axis == 1 ? Tensor(groups, 1) : Tensor(1, groups);
    for (std::size_t g = 0; g < groups; ++g) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < extent; ++k) {
            if (skip_diag && k == g) continue;
            const double v = axis == 1 ? t(g, k) : t(k, g);
            mx = std::max(mx, v);
        }
        double s = 0.0;
        for (std::size_t k = 0; k < extent; ++k) {
            if (skip_diag && k == g) continue;
            const double v = axis == 1 ? t(g, k) : t(k, g);
            s += std::exp(v - mx);
        }
        n.value.data()[g] = mx + std::log(s);
    }
    return push(std::move(n), "logsumexp");
}

int Tape::gather_rows(int a, std::vector<int> indices) {
    const Tensor& t = node(a).value;
    for (int idx : indices)
        if (idx < 0 || static_cast<std::size_t>(idx) >= t.rows())
            throw ContractError("gather_rows: index out of range");
    Node n;
    n.op = Op::GatherRows;
    n.a = a;
    n.value = Tensor(indices.size(), t.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const double* src = t.row(static_cast<std::size_t>(indices[i]));
        std::copy(src, src + t.cols(), n.value.row(i));
    }
    n.indices = std::move(indices);
    return push(std::move(n), "gather_rows");
}

int Tape::concat_cols(int a, int b) {
    const Tensor& ta = node(a).value;
    const Tensor& tb = node(b).value;
    if (ta.rows() != tb.rows()) throw ShapeError("concat_cols: row counts differ");
    Node n;
    n.op = Op::ConcatCols;
    n.a = a;
    n.b = b;
    n.value = Tensor(ta.rows(), ta.cols() + tb.cols());
    for (std::size_t i = 0; i < ta.rows(); ++i) {
        std::copy(ta.row(i), ta.row(i) + ta.cols(), n.value.row(i));
        std::copy(tb.row(i), tb.row(i) + tb.cols(), n.value.row(i) + ta.cols());
    }
    return push(std::move(n), "concat_cols");
}

int Tape::reshape(int a, std::size_t rows, std::size_t cols) {
    const Tensor& t = node(a).value;
    if (rows * cols != t.size()) throw ShapeError("reshape: element count changes");
    Node n;
    n.op = Op::Reshape;
    n.a = a;
    n.value = Tensor(rows, cols);
    std::copy(t.data(), t.data() + t.size(), n.value.data());
    return push(std::move(n), "reshape");
}

int Tape::take_diag(int a) {
    const Tensor& t = node(a).value;
    if (t.rows() != t.cols()) throw ShapeError("take_diag: matrix is not square");
    Node n;
    n.op = Op::TakeDiag;
    n.a = a;
    n.value = Tensor(t.rows(), 1);
    for (std::size_t i = 0; i < t.rows(); ++i) n.value(i, 0) = t(i, i);
    return push(std::move(n), "take_diag");
}

void Tape::backward(int loss) {
    const Node& ln = node(loss);
    if (!ln.value.is_scalar()) throw ContractError("backward: loss must be scalar");

    for (Node& n : nodes_) {
        n.grad = Tensor(n.value.rows(), n.value.cols());
    }
    nodes_[static_cast<std::size_t>(loss)].grad.data()[0] = 1.0;
    has_grads_ = true;

    for (int id = loss; id >= 0; --id) backward_node(id);

    for (const Node& n : nodes_)
        if (!n.grad.all_finite())
            throw NumericError(std::string("non-finite gradient at ") + op_name(n.op));
}

void Tape::backward_node(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.req) return;  // nothing below wants a gradient
    const Tensor& g = n.grad;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            const Tensor& av = nodes_[n.a].value;
            const Tensor& bv = nodes_[n.b].value;
            if (nodes_[n.a].req) {
                if (n.ta)
                    matmul_into(da, bv, g, n.tb, true, true);
                else
                    matmul_into(da, g, bv, false, !n.tb, true);
            }
            if (nodes_[n.b].req) {
                if (n.tb)
                    matmul_into(db, g, av, true, n.ta, true);
                else
                    matmul_into(db, av, g, !n.ta, false, true);
            }
            break;
        }
        case Op::Linear: {
            const Tensor& xv = nodes_[n.a].value;
            const Tensor& wv = nodes_[n.b].value;
            // Relu folds into the output mask: zero rows of g where the
            // activation clamped.
            Tensor gz = g;
            if (n.ta) {
                const double* ov = n.value.data();
                for (std::size_t i = 0; i < gz.size(); ++i)
                    if (ov[i] <= 0.0) gz.data()[i] = 0.0;
            }
            if (nodes_[n.a].req) matmul_into(nodes_[n.a].grad, gz, wv, false, false, true);
            if (nodes_[n.b].req) matmul_into(nodes_[n.b].grad, gz, xv, true, false, true);
            if (nodes_[n.c].req) {
                Tensor& dbias = nodes_[n.c].grad;
                for (std::size_t i = 0; i < gz.rows(); ++i) {
                    const double* gr = gz.row(i);
                    for (std::size_t j = 0; j < gz.cols(); ++j) dbias.data()[j] += gr[j];
                }
            }
            break;
        }
        case Op::Add: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            if (nodes_[n.a].req)
                for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
            if (nodes_[n.b].req)
                for (std::size_t i = 0; i < g.size(); ++i) db.data()[i] += g.data()[i];
            break;
        }
        case Op::Sub: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            if (nodes_[n.a].req)
                for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
            if (nodes_[n.b].req)
                for (std::size_t i = 0; i < g.size(); ++i) db.data()[i] -= g.data()[i];
            break;
        }
        case Op::Mul: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            const Tensor& av = nodes_[n.a].value;
            const Tensor& bv = nodes_[n.b].value;
            if (nodes_[n.a].req)
                for (std::size_t i = 0; i < g.size(); ++i)
                    da.data()[i] += g.data()[i] * bv.data()[i];
            if (nodes_[n.b].req)
                for (std::size_t i = 0; i < g.size(); ++i)
                    db.data()[i] += g.data()[i] * av.data()[i];
            break;
        }
        case Op::Div: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            const Tensor& bv = nodes_[n.b].value;
            const bool need_a = nodes_[n.a].req, need_b = nodes_[n.b].req;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double inv = 1.0 / bv.data()[i];
                if (need_a) da.data()[i] += g.data()[i] * inv;
                if (need_b) db.data()[i] -= g.data()[i] * n.value.data()[i] * inv;
            }
            break;
        }
        case Op::AddRow: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            const bool need_a = nodes_[n.a].req, need_b = nodes_[n.b].req;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    if (need_a) da(i, j) += g(i, j);
                    if (need_b) db(0, j) += g(i, j);
                }
            break;
        }
        case Op::AddCol: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            const bool need_a = nodes_[n.a].req, need_b = nodes_[n.b].req;
            for (std::size_t i = 0; i < g.rows(); ++i)
                for (std::size_t j = 0; j < g.cols(); ++j) {
                    if (need_a) da(i, j) += g(i, j);
                    if (need_b) db(i, 0) += g(i, j);
                }
            break;
        }
        case Op::Affine: {
            Tensor& da = nodes_[n.a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += n.c0 * g.data()[i];
            break;
        }
        case Op::Relu: {
            Tensor& da = nodes_[n.a].grad;
            const Tensor& av = nodes_[n.a].value;
            for (std::size_t i = 0; i < g.size(); ++i)
                if (av.data()[i] > 0.0) da.data()[i] += g.data()[i];
            break;
        }
        case Op::Tanh: {
            Tensor& da = nodes_[n.a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double t = n.value.data()[i];
                da.data()[i] += g.data()[i] * (1.0 - t * t);
            }
            break;
        }
        case Op::Exp: {
            Tensor& da = nodes_[n.a].grad;
            for (std::size_t i = 0; i < g.size(); ++i)
                da.data()[i] += g.data()[i] * n.value.data()[i];
            break;
        }
        case Op::Log: {
            Tensor& da = nodes_[n.a].grad;
            const Tensor& av = nodes_[n.a].value;
            for (std::size_t i = 0; i < g.size(); ++i)
                da.data()[i] += g.data()[i] / av.data()[i];
            break;
        }
        case Op::Square: {
            Tensor& da = nodes_[n.a].grad;
            const Tensor& av = nodes_[n.a].value;
            for (std::size_t i = 0; i < g.size(); ++i)
                da.data()[i] += 2.0 * av.data()[i] * g.data()[i];
            break;
        }
        case Op::SumAll: {
            Tensor& da = nodes_[n.a].grad;
            const double gv = g.data()[0];
            for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] += gv;
            break;
        }
        case Op::MeanAll: {
            Tensor& da = nodes_[n.a].grad;
            const double gv = g.data()[0] / static_cast<double>(da.size());
            for (std::size_t i = 0; i < da.size(); ++i) da.data()[i] += gv;
            break;
        }
        case Op::SumAxis: {
            Tensor& da = nodes_[n.a].grad;
            for (std::size_t i = 0; i < da.rows(); ++i)
                for (std::size_t j = 0; j < da.cols(); ++j)
                    da(i, j) += n.axis == 1 ? g(i, 0) : g(0, j);
            break;
        }
        case Op::LogSumExp: {
            Tensor& da = nodes_[n.a].grad;
            const Tensor& av = nodes_[n.a].value;
            const bool skip_diag = n.tb;
            const std::size_t groups = n.axis == 1 ? av.rows() : av.cols();
            const std::size_t extent = n.axis == 1 ? av.cols() : av.rows();
            for (std::size_t gi = 0; gi < groups; ++gi) {
                const double gv = g.data()[gi];
                const double out = n.value.data()[gi];
                for (std::size_t k = 0; k < extent; ++k) {
                    if (skip_diag && k == gi) continue;
                    if (n.axis == 1)
                        da(gi, k) += gv * std::exp(av(gi, k) - out);
                    else
                        da(k, gi) += gv * std::exp(av(k, gi) - out);
                }
            }
            break;
        }
        case Op::GatherRows: {
            Tensor& da = nodes_[n.a].grad;
            for (std::size_t i = 0; i < n.indices.size(); ++i) {
                double* dst = da.row(static_cast<std::size_t>(n.indices[i]));
                const double* src = g.row(i);
                for (std::size_t j = 0; j < g.cols(); ++j) dst[j] += src[j];
            }
            break;
        }
        case Op::ConcatCols: {
            Tensor& da = nodes_[n.a].grad;
            Tensor& db = nodes_[n.b].grad;
            const bool need_a = nodes_[n.a].req, need_b = nodes_[n.b].req;
            for (std::size_t i = 0; i < g.rows(); ++i) {
                const double* src = g.row(i);
                double* la = da.row(i);
                double* lb = db.row(i);
                if (need_a)
                    for (std::size_t j = 0; j < da.cols(); ++j) la[j] += src[j];
                if (need_b)
                    for (std::size_t j = 0; j < db.cols(); ++j) lb[j] += src[da.cols() + j];
            }
            break;
        }
        case Op::Reshape: {
            Tensor& da = nodes_[n.a].grad;
            for (std::size_t i = 0; i < g.size(); ++i) da.data()[i] += g.data()[i];
            break;
        }
        case Op::TakeDiag: {
            Tensor& da = nodes_[n.a].grad;
            for (std::size_t i = 0; i < g.rows(); ++i) da(i, i) += g(i, 0);
            break;
        }
    }
}

}  // namespace mib
