#pragma once

#include "slt/features.hpp"

namespace slt::optim {

struct Sgd {
    double lr = 0.01;
    double weight_decay = 0.0;

    void step(Tensor& param, const Tensor& grad) const {
        for (std::size_t i = 0; i < param.data.size(); ++i)
            param.data[i] -= lr * (grad.data[i] + weight_decay * param.data[i]);
    }
};

// Decoupled weight decay; keeps per-parameter first/second moment state keyed
// by name so a fresh optimizer can be rebuilt from a checkpointed step count.
class AdamW {
public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    void step(const std::string& name, Tensor& param, const Tensor& grad) {
        State& s = state_[name];
        if (s.m.data.empty()) {
            s.m = Tensor::zeros(param.shape);
            s.v = Tensor::zeros(param.shape);
        }
        ++s.t;
        double bc1 = 1.0 - std::pow(beta1, s.t);
        double bc2 = 1.0 - std::pow(beta2, s.t);
        for (std::size_t i = 0; i < param.data.size(); ++i) {
            double g = grad.data[i];
            s.m.data[i] = beta1 * s.m.data[i] + (1.0 - beta1) * g;
            s.v.data[i] = beta2 * s.v.data[i] + (1.0 - beta2) * g * g;
            double mh = s.m.data[i] / bc1;
            double vh = s.v.data[i] / bc2;
            param.data[i] -= lr * (mh / (std::sqrt(vh) + eps) + weight_decay * param.data[i]);
        }
    }

private:
    struct State {
        Tensor m, v;
        long t = 0;
    };
    std::map<std::string, State> state_;
};

}  // namespace slt::optim
