#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mib/tensor.hpp"

namespace mib {

// Primitive operations recorded on the tape. The set is fixed: every
// estimator in this project compiles to these, no general broadcasting.
enum class Op : std::uint8_t {
    Leaf,
    MatMul,       // optional transpose on either operand
    Linear,       // x * W^T + bias row, optional relu; one node per layer
    Add,
    Sub,
    Mul,
    Div,
    AddRow,       // matrix + row vector, broadcast over rows
    AddCol,       // matrix + column vector, broadcast over columns
    Affine,       // c0 * x + c1, elementwise constants
    Relu,
    Tanh,
    Exp,
    Log,
    Square,
    SumAll,
    MeanAll,
    SumAxis,      // axis 0: over rows -> 1 x c; axis 1: over cols -> r x 1
    LogSumExp,    // max-shifted, same axis convention; optional diagonal mask
    GatherRows,
    ConcatCols,
    Reshape,
    TakeDiag
};

const char* op_name(Op op);

// Computation graph: a flat record of primitive operations in topological
// (construction) order, with one value and one adjoint buffer per node.
// Building an op runs it immediately; backward() then fills the adjoints
// in a single reverse sweep. Non-finite values anywhere are a hard error.
class Tape {
public:
    struct Node {
        Op op = Op::Leaf;
        int a = -1, b = -1, c = -1;
        bool ta = false, tb = false;   // MatMul transposes; ta doubles as Linear's relu
                                       // flag, tb as LogSumExp's skip_diag
        int axis = 0;
        double c0 = 0.0, c1 = 0.0;     // Affine constants
        std::vector<int> indices;      // GatherRows
        bool req = true;               // false: no gradient needed below this node
        Tensor value;
        Tensor grad;
    };

    int leaf(Tensor v);
    // Like leaf(), but marks the tensor as plain input data: the backward
    // sweep skips any subgraph that touches only data nodes.
    int data(Tensor v);

    int matmul(int a, int b, bool trans_a = false, bool trans_b = false);
    int linear(int x, int w, int bias, bool apply_relu);
    int add(int a, int b);
    int sub(int a, int b);
    int mul(int a, int b);
    int div(int a, int b);
    int add_row(int m, int row);
    int add_col(int m, int col);
    int affine(int a, double mul_c, double add_c);
    int scale(int a, double c) { return affine(a, c, 0.0); }
    int add_const(int a, double c) { return affine(a, 1.0, c); }
    int relu(int a);
    int tanh(int a);
    int exp(int a);
    int log(int a);
    int square(int a);
    int sum_all(int a);
    int mean_all(int a);
    int sum_axis(int a, int axis);
    int logsumexp(int a, int axis, bool skip_diag = false);
    int gather_rows(int a, std::vector<int> indices);
    int concat_cols(int a, int b);
    int reshape(int a, std::size_t rows, std::size_t cols);
    int take_diag(int a);

    // Reverse sweep from a scalar loss node. Visits nodes in reverse
    // topological order exactly once; leaves not on a path to the loss
    // keep a zero gradient.
    void backward(int loss);

    const Tensor& value(int id) const { return node(id).value; }
    const Tensor& grad(int id) const;
    std::size_t size() const { return nodes_.size(); }

private:
    const Node& node(int id) const;
    int push(Node n, const char* what);
    void backward_node(int id);

    std::vector<Node> nodes_;
    bool has_grads_ = false;
};

// Plain matmul on tensors (no graph); shared by the tape and the optimizer-free
// evaluation paths.
Tensor matmul_plain(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

}  // namespace mib
