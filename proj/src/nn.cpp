#include "mib/nn.hpp"

#include <cmath>

#include "mib/errors.hpp"

namespace mib {

DenseNet::DenseNet(const std::vector<std::size_t>& widths, Rng& rng) {
    if (widths.size() < 2) throw ContractError("DenseNet: need at least [in, out] widths");
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        const std::size_t fan_in = widths[l];
        const std::size_t fan_out = widths[l + 1];
        const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        DenseLayer layer{Tensor(fan_out, fan_in), Tensor(1, fan_out)};
        for (std::size_t i = 0; i < layer.w.size(); ++i)
            layer.w.data()[i] = rng.uniform(-a, a);
        layers_.push_back(std::move(layer));
    }
}

DenseNet DenseNet::zeros(const std::vector<std::size_t>& widths) {
    if (widths.size() < 2) throw ContractError("DenseNet: need at least [in, out] widths");
    DenseNet net;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l)
        net.layers_.push_back({Tensor(widths[l + 1], widths[l]), Tensor(1, widths[l + 1])});
    return net;
}

std::size_t DenseNet::in_dim() const { return layers_.front().w.cols(); }
std::size_t DenseNet::out_dim() const { return layers_.back().w.rows(); }

AttachedNet DenseNet::attach(Tape& tape) {
    AttachedNet out;
    for (DenseLayer& layer : layers_) {
        const int w = tape.leaf(layer.w);
        const int b = tape.leaf(layer.b);
        out.w_nodes.push_back(w);
        out.b_nodes.push_back(b);
        out.params.push_back({&layer.w, w});
        out.params.push_back({&layer.b, b});
    }
    return out;
}

int AttachedNet::forward(Tape& tape, int x) const {
    int h = x;
    for (std::size_t l = 0; l < w_nodes.size(); ++l)
        h = tape.linear(h, w_nodes[l], b_nodes[l], l + 1 < w_nodes.size());
    return h;
}

Tensor DenseNet::forward_plain(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Tensor z = matmul_plain(h, layers_[l].w, false, true);
        for (std::size_t i = 0; i < z.rows(); ++i)
            for (std::size_t j = 0; j < z.cols(); ++j) z(i, j) += layers_[l].b(0, j);
        if (l + 1 < layers_.size())
            for (std::size_t i = 0; i < z.size(); ++i)
                if (z.data()[i] < 0.0) z.data()[i] = 0.0;
        h = std::move(z);
    }
    return h;
}

Adam::Adam(double learning_rate, double beta1, double beta2, double eps)
    : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (lr_ <= 0.0) throw ContractError("Adam: learning rate must be positive");
}

void Adam::step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads) {
    if (params.size() != grads.size()) throw ContractError("Adam: params/grads count mismatch");
    if (m_.empty()) {
        for (const Tensor* p : params) {
            m_.emplace_back(p->rows(), p->cols());
            v_.emplace_back(p->rows(), p->cols());
        }
    }
    if (m_.size() != params.size()) throw ContractError("Adam: parameter group changed size");

    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& param = *params[p];
        const Tensor& grad = *grads[p];
        if (!param.same_shape(grad) || !param.same_shape(m_[p]))
            throw ShapeError("Adam: gradient shape does not match parameter");
        if (!grad.all_finite()) throw NumericError("Adam: non-finite gradient");
        for (std::size_t i = 0; i < param.size(); ++i) {
            const double g = grad.data()[i];
            double& m = m_[p].data()[i];
            double& v = v_[p].data()[i];
            m = beta1_ * m + (1.0 - beta1_) * g;
            v = beta2_ * v + (1.0 - beta2_) * g * g;
            param.data()[i] -= lr_ * (m / bc1) / (std::sqrt(v / bc2) + eps_);
        }
    }
}

void Adam::step(const std::vector<ParamRef>& params, const Tape& tape) {
    std::vector<Tensor*> ps;
    std::vector<const Tensor*> gs;
    ps.reserve(params.size());
    gs.reserve(params.size());
    for (const ParamRef& ref : params) {
        ps.push_back(ref.param);
        gs.push_back(&tape.grad(ref.node));
    }
    step(ps, gs);
}

}  // namespace mib
