#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "fairdiff/autodiff.hpp"

namespace fairdiff {

/// (step, loss) samples recorded by a training loop.
struct LossCurve {
    std::vector<std::pair<int, double>> points;
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;  // decoupled (AdamW); off by default
};

/// Adaptive-moment optimizer with bias correction and optional decoupled
/// weight decay. Frozen parameters are never updated; gradients are cleared
/// after every step.
class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (Parameter* p : params_) {
            m_.push_back(Tensor::zeros(p->value.shape));
            v_.push_back(Tensor::zeros(p->value.shape));
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Parameter& p = *params_[i];
            if (p.frozen || !p.trainable) {
                p.zero_grad();
                continue;
            }
            for (size_t j = 0; j < p.value.numel(); ++j) {
                const double g = p.grad.v[j];
                if (!std::isfinite(g)) throw std::runtime_error("non-finite gradient in parameter '" + p.name + "'");
                m_[i].v[j] = cfg_.beta1 * m_[i].v[j] + (1.0 - cfg_.beta1) * g;
                v_[i].v[j] = cfg_.beta2 * v_[i].v[j] + (1.0 - cfg_.beta2) * g * g;
                const double mhat = m_[i].v[j] / bc1;
                const double vhat = v_[i].v[j] / bc2;
                double upd = cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
                if (cfg_.weight_decay > 0.0) upd += cfg_.lr * cfg_.weight_decay * p.value.v[j];
                p.value.v[j] -= upd;
            }
            p.zero_grad();
        }
    }

    long step_count() const { return t_; }
    const std::vector<Parameter*>& params() const { return params_; }

private:
    std::vector<Parameter*> params_;
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

}  // namespace fairdiff
