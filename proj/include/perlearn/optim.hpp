#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "perlearn/common.hpp"

namespace perlearn {

enum class OptimKind { sgd, adam };

struct OptimConfig {
    OptimKind kind = OptimKind::sgd;
    double lr = 0.01;
    double momentum = 0.0;     // sgd only
    double weight_decay = 0.0; // applied as L2 term added to the gradient
    double beta1 = 0.9;        // adam
    double beta2 = 0.999;      // adam
    double eps_hat = 1e-8;     // adam denominator epsilon, outside the sqrt
};

inline OptimKind optim_kind_from_string(const std::string& s) {
    if (s == "sgd") return OptimKind::sgd;
    if (s == "adam") return OptimKind::adam;
    throw Error(ErrorCategory::config, "unknown optimizer kind: " + s);
}

// Stateful first-order optimizer over a flat parameter vector.
class Optimizer {
public:
    explicit Optimizer(OptimConfig cfg) : cfg_(cfg) {}

    void reset(size_t n) {
        m_.assign(n, 0.0);
        v_.assign(n, 0.0);
        t_ = 0;
    }

    // In-place update; grad is not modified.
    void step(std::vector<double>& params, const std::vector<double>& grad) {
        require(params.size() == grad.size(), ErrorCategory::dimension,
                "optimizer step: params/grad size mismatch");
        if (m_.size() != params.size()) reset(params.size());
        ++t_;
        size_t n = params.size();
        if (cfg_.kind == OptimKind::sgd) {
            for (size_t i = 0; i < n; ++i) {
                double g = grad[i] + cfg_.weight_decay * params[i];
                if (cfg_.momentum != 0.0) {
                    m_[i] = cfg_.momentum * m_[i] + g;
                    g = m_[i];
                }
                params[i] -= cfg_.lr * g;
            }
        } else {
            double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
            double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
            for (size_t i = 0; i < n; ++i) {
                double g = grad[i] + cfg_.weight_decay * params[i];
                m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
                v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g * g;
                double mh = m_[i] / bc1;
                double vh = v_[i] / bc2;
                params[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps_hat);
            }
        }
    }

    uint64_t steps_taken() const { return t_; }

private:
    OptimConfig cfg_;
    std::vector<double> m_, v_;
    uint64_t t_ = 0;
};

}  // namespace perlearn
