#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "micro/rng.hpp"
#include "micro/tape.hpp"
#include "micro/tensor.hpp"

namespace micro {

enum class Act { Relu, Tanh, Identity };

inline void apply_activation(Tensor& t, Act act) {
    switch (act) {
        case Act::Relu:
            for (double& x : t.data) x = x > 0.0 ? x : 0.0;
            break;
        case Act::Tanh:
            for (double& x : t.data) x = std::tanh(x);
            break;
        case Act::Identity:
            break;
    }
}

struct Dense {
    Tensor w;  // [in, out]
    Tensor b;  // [1, out]
};

/// Fully connected net with a shared hidden activation and a linear head.
struct Mlp {
    std::vector<Dense> layers;
    Act hidden_act = Act::Relu;

    /// dims = {in, h1, ..., out}. Weights and biases are initialized
    /// uniformly on [-1/sqrt(fan_in), 1/sqrt(fan_in)].
    static Mlp make(const std::vector<size_t>& dims, Act hidden_act, Rng& rng) {
        require_arg(dims.size() >= 2, "Mlp::make: need at least input and output dims");
        Mlp net;
        net.hidden_act = hidden_act;
        for (size_t i = 0; i + 1 < dims.size(); ++i) {
            Dense d{Tensor(dims[i], dims[i + 1]), Tensor(1, dims[i + 1])};
            const double s = 1.0 / std::sqrt(static_cast<double>(dims[i]));
            for (double& x : d.w.data) x = rng.uniform(-s, s);
            for (double& x : d.b.data) x = rng.uniform(-s, s);
            net.layers.push_back(std::move(d));
        }
        return net;
    }

    size_t in_dim() const { return layers.front().w.rows; }
    size_t out_dim() const { return layers.back().w.cols; }

    /// Inference-only forward (no tape, no gradients): x is [n, in].
    Tensor forward_plain(const Tensor& x) const {
        require_arg(x.cols == in_dim(), "Mlp::forward_plain: input width mismatch");
        Tensor h = x;
        for (size_t i = 0; i < layers.size(); ++i) {
            Tensor z(h.rows, layers[i].w.cols);
            emap(z).noalias() = emap(h) * emap(layers[i].w);
            emap(z).rowwise() += emap(layers[i].b).row(0);
            if (i + 1 < layers.size()) apply_activation(z, hidden_act);
            h = std::move(z);
        }
        return h;
    }

    /// Node ids of the staged copies of this net's parameters on a tape.
    struct Staged {
        std::vector<Tape::NodeId> ws, bs;
    };

    /// Stage parameters onto the tape. With trainable=false the parameters
    /// are constants: forward values are identical but backward skips the
    /// weight-gradient GEMMs (used for critics inside the policy loss).
    Staged stage(Tape& t, bool trainable) const {
        Staged st;
        for (const Dense& d : layers) {
            st.ws.push_back(trainable ? t.param(d.w) : t.input(d.w));
            st.bs.push_back(trainable ? t.param(d.b) : t.input(d.b));
        }
        return st;
    }

    /// Differentiable forward through staged parameters.
    Tape::NodeId forward(Tape& t, const Staged& st, Tape::NodeId x) const {
        Tape::NodeId h = x;
        for (size_t i = 0; i < layers.size(); ++i) {
            h = t.add_rowvec(t.matmul(h, st.ws[i]), st.bs[i]);
            if (i + 1 < layers.size()) {
                if (hidden_act == Act::Relu) h = t.relu(h);
                else if (hidden_act == Act::Tanh) h = t.tanh(h);
            }
        }
        return h;
    }
};

/// Adam with bias correction for one tensor.
struct AdamState {
    Tensor m, v;
    uint64_t step = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    explicit AdamState(size_t rows = 0, size_t cols = 0) : m(rows, cols), v(rows, cols) {}

    void update(Tensor& param, const Tensor& grad, double lr) {
        require_arg(param.same_shape(grad) && param.same_shape(m), "AdamState::update: shape mismatch");
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (size_t i = 0; i < param.data.size(); ++i) {
            const double g = grad.data[i];
            m.data[i] = beta1 * m.data[i] + (1.0 - beta1) * g;
            v.data[i] = beta2 * v.data[i] + (1.0 - beta2) * g * g;
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            param.data[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
    }
};

/// Adam states for every tensor in an Mlp.
struct MlpAdam {
    std::vector<AdamState> ws, bs;

    MlpAdam() = default;
    explicit MlpAdam(const Mlp& net) {
        for (const Dense& d : net.layers) {
            ws.emplace_back(d.w.rows, d.w.cols);
            bs.emplace_back(d.b.rows, d.b.cols);
        }
    }

    /// Apply one Adam step from the gradients accumulated on the tape.
    void apply(Mlp& net, const Tape& t, const Mlp::Staged& st, double lr) {
        for (size_t i = 0; i < net.layers.size(); ++i) {
            ws[i].update(net.layers[i].w, t.grad(st.ws[i]), lr);
            bs[i].update(net.layers[i].b, t.grad(st.bs[i]), lr);
        }
    }
};

/// Polyak update: target <- tau * online + (1 - tau) * target.
inline void soft_update(Mlp& target, const Mlp& online, double tau) {
    require_arg(target.layers.size() == online.layers.size(), "soft_update: layer count mismatch");
    for (size_t i = 0; i < target.layers.size(); ++i) {
        Tensor& tw = target.layers[i].w;
        Tensor& tb = target.layers[i].b;
        const Tensor& ow = online.layers[i].w;
        const Tensor& ob = online.layers[i].b;
        require_arg(tw.same_shape(ow) && tb.same_shape(ob), "soft_update: shape mismatch");
        for (size_t j = 0; j < tw.data.size(); ++j)
            tw.data[j] = tau * ow.data[j] + (1.0 - tau) * tw.data[j];
        for (size_t j = 0; j < tb.data.size(); ++j)
            tb.data[j] = tau * ob.data[j] + (1.0 - tau) * tb.data[j];
    }
}

}  // namespace micro
