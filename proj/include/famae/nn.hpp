#pragma once

// Parameter registry and the small building blocks shared by every model.

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "famae/ops.hpp"
#include "famae/rng.hpp"
#include "famae/tensor.hpp"

namespace famae {

/// A named handle to a trainable tensor. Handles share storage with the
/// module that owns the parameter.
struct ParamRef {
    std::string name;
    std::variant<TensorF, TensorC> tensor;

    const Shape& shape() const {
        return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, tensor);
    }
    bool is_complex() const { return std::holds_alternative<TensorC>(tensor); }
    /// Real degrees of freedom (two per complex element).
    std::size_t scalar_count() const {
        return std::visit([](const auto& t) { return t.numel(); }, tensor) * (is_complex() ? 2 : 1);
    }
    void zero_grad() {
        std::visit([](auto& t) { t.zero_grad(); }, tensor);
    }
};

using ParamList = std::vector<ParamRef>;

inline std::size_t count_scalars(const ParamList& params) {
    std::size_t total = 0;
    for (const auto& p : params) total += p.scalar_count();
    return total;
}

inline void zero_grads(ParamList& params) {
    for (auto& p : params) p.zero_grad();
}

/// Training switches threaded through every forward pass.
struct ForwardContext {
    bool training = false;
    Rng* dropout_rng = nullptr;

    TensorF maybe_dropout(const TensorF& x, double rate) const {
        if (!training || rate <= 0.0 || dropout_rng == nullptr) return x;
        return dropout(x, rate, *dropout_rng);
    }
};

inline std::vector<double> normal_values(std::size_t n, double stddev, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, stddev);
    return v;
}

struct Linear {
    TensorF weight; // [in, out]
    TensorF bias;   // [out]

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(in));
        std::vector<double> w(in * out), b(out);
        for (auto& x : w) x = rng.uniform(-bound, bound);
        for (auto& x : b) x = rng.uniform(-bound, bound);
        weight = TensorF({in, out}, std::move(w), true);
        bias = TensorF({out}, std::move(b), true);
    }

    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }

    TensorF operator()(const TensorF& x) const { return linear(x, weight, bias); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".weight", weight});
        out.push_back({prefix + ".bias", bias});
    }
};

struct LayerNorm {
    TensorF gamma;
    TensorF beta;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t width)
        : gamma(TensorF::full({width}, 1.0, true)), beta(TensorF::zeros({width}, true)) {}

    TensorF operator()(const TensorF& x) const { return layer_norm(x, gamma, beta); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".gamma", gamma});
        out.push_back({prefix + ".beta", beta});
    }
};

/// Two linear layers with a GELU in between.
struct Mlp {
    Linear fc1;
    Linear fc2;

    Mlp() = default;
    Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

    TensorF operator()(const TensorF& x, const ForwardContext& ctx = {}, double rate = 0.0) const {
        return fc2(ctx.maybe_dropout(gelu(fc1(x)), rate));
    }

    void collect(ParamList& out, const std::string& prefix) const {
        fc1.collect(out, prefix + ".fc1");
        fc2.collect(out, prefix + ".fc2");
    }
};

} // namespace famae
