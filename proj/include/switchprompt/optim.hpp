#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "switchprompt/tensor.hpp"

namespace switchprompt {

/// Adam with bias correction.
class Adam {
   public:
    struct Options {
        double lr = 5e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(std::vector<Tensor> params, Options opt) : params_(std::move(params)), opt_(opt) {
        for (const auto& p : params_) {
            first_.emplace_back(p.size(), 0.0);
            second_.emplace_back(p.size(), 0.0);
        }
    }

    double lr() const { return opt_.lr; }
    void set_lr(double lr) { opt_.lr = lr; }
    std::size_t steps() const { return t_; }
    const std::vector<Tensor>& params() const { return params_; }

    void step() {
        ++t_;
        const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t k = 0; k < params_.size(); ++k) {
            if (!params_[k].has_grad()) continue;
            const auto& g = params_[k].node().grad;
            auto v = params_[k].mutable_values();
            for (std::size_t i = 0; i < v.size(); ++i) {
                first_[k][i] = opt_.beta1 * first_[k][i] + (1.0 - opt_.beta1) * g[i];
                second_[k][i] = opt_.beta2 * second_[k][i] + (1.0 - opt_.beta2) * g[i] * g[i];
                v[i] -= opt_.lr * (first_[k][i] / c1) / (std::sqrt(second_[k][i] / c2) + opt_.eps);
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

   private:
    std::vector<Tensor> params_;
    Options opt_;
    std::vector<std::vector<double>> first_, second_;
    std::size_t t_ = 0;
};

/// Multiplies the learning rate by gamma after every epoch.
class ExponentialLR {
   public:
    ExponentialLR(Adam& optimizer, double gamma) : optimizer_(optimizer), gamma_(gamma) {}

    void step() {
        optimizer_.set_lr(optimizer_.lr() * gamma_);
        ++epoch_;
    }
    std::size_t epoch() const { return epoch_; }

   private:
    Adam& optimizer_;
    double gamma_;
    std::size_t epoch_ = 0;
};

/// Rescales gradients in place so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
inline double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.node().grad) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const double f = max_norm / (norm + 1e-12);
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.node().grad) g *= f;
        }
    }
    return norm;
}

}  // namespace switchprompt
