#pragma once

#include <vector>

#include "mib/rng.hpp"
#include "mib/tape.hpp"
#include "mib/tensor.hpp"

namespace mib {

// One fully connected layer: w is out x in, b is 1 x out.
struct DenseLayer {
    Tensor w;
    Tensor b;
};

// A parameter tensor together with its leaf node on some tape.
struct ParamRef {
    Tensor* param = nullptr;
    int node = -1;
};

class DenseNet;

// A net whose parameters have been registered as leaves on a tape.
struct AttachedNet {
    std::vector<int> w_nodes;
    std::vector<int> b_nodes;
    std::vector<ParamRef> params;

    // Builds affine-ReLU-...-affine on the tape; x is batch x in_dim.
    int forward(Tape& tape, int x) const;
};

// Plain MLP with ReLU hidden activations and a linear last layer.
class DenseNet {
public:
    DenseNet() = default;

    // Glorot-uniform initialization: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
    DenseNet(const std::vector<std::size_t>& widths, Rng& rng);

    static DenseNet zeros(const std::vector<std::size_t>& widths);

    std::size_t in_dim() const;
    std::size_t out_dim() const;
    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    AttachedNet attach(Tape& tape);

    // Forward pass without recording a graph.
    Tensor forward_plain(const Tensor& x) const;

private:
    std::vector<DenseLayer> layers_;
};

// Bias-corrected Adam. Moment buffers are created on the first step and must
// keep matching the parameter shapes afterwards; the caller is responsible
// for passing parameters in a stable order.
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                  double eps = 1e-8);

    void step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads);
    void step(const std::vector<ParamRef>& params, const Tape& tape);

    long steps() const { return step_count_; }
    double learning_rate() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<Tensor> m_, v_;
};

}  // namespace mib
