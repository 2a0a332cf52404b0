#pragma once

#include <cmath>
#include <complex>
#include <span>
#include <vector>

#include "famae/nn.hpp"

namespace famae {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.99;
    double eps = 1e-8;
};

/// Adam with bias correction. Complex parameters are updated as independent
/// (re, im) pairs. Parameters that received no gradient in a step are left
/// untouched, moments included.
class Adam {
public:
    Adam(ParamList params, AdamConfig cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& p : params_) {
            const std::size_t n = p.scalar_count();
            m_.emplace_back(n, 0.0);
            v_.emplace_back(n, 0.0);
        }
    }

    const AdamConfig& config() const { return cfg_; }
    std::size_t steps() const { return step_; }

    void zero_grad() { zero_grads(params_); }

    void step() {
        ++step_;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            std::visit(
                [&](auto& t) {
                    if (!t.has_grad()) return;
                    update(as_reals(t.mutable_data()), as_reals(t.mutable_grad()), m_[i], v_[i], c1, c2);
                },
                params_[i].tensor);
        }
    }

private:
    static std::span<double> as_reals(std::span<double> s) { return s; }
    static std::span<double> as_reals(std::span<cdouble> s) {
        // std::complex<double> is layout-compatible with double[2]
        return {reinterpret_cast<double*>(s.data()), s.size() * 2};
    }

    void update(std::span<double> w, std::span<double> g, std::vector<double>& m, std::vector<double>& v, double c1,
                double c2) const {
        for (std::size_t j = 0; j < w.size(); ++j) {
            m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
            v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
            w[j] -= cfg_.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
        }
    }

    ParamList params_;
    AdamConfig cfg_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::size_t step_ = 0;
};

} // namespace famae
