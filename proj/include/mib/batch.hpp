#pragma once

#include "mib/tensor.hpp"

namespace mib {

// Paired samples {(x_i, y_i)}: row i of x goes with row i of y.
struct Batch {
    Tensor x;
    Tensor y;

    std::size_t size() const { return x.rows(); }
};

}  // namespace mib
