#pragma once

// Multi-head frequency filter layer.
//
// Tokens X [..., N, D] are moved to the frequency domain along the token
// axis (real half spectrum, N/2+1 bins), modulated by a bank of H learnable
// complex filters K [H, D] that does not depend on N, and brought back with
// the matching inverse transform. Two ways of combining the heads:
//
//   query:   Z' = Z * ((Re Z) W K)        W [D, H] real
//   maxpool: Z'[i,j] = Z[i,j] K[k*,j],     k* = argmax_k |Z[i,j] K[k,j]|
//
// Maxpool keeps the complex product of largest modulus (ties resolve to the
// smallest head index) so the phase survives the inverse transform.

#include <cmath>
#include <stdexcept>
#include <string>
#include <string_view>

#include "famae/nn.hpp"
#include "famae/spectral_ops.hpp"

namespace famae {

enum class FilterOperator { Query, MaxPool };

inline std::string_view to_string(FilterOperator op) { return op == FilterOperator::Query ? "query" : "maxpool"; }

inline FilterOperator parse_filter_operator(std::string_view name) {
    if (name == "query") return FilterOperator::Query;
    if (name == "maxpool") return FilterOperator::MaxPool;
    throw std::invalid_argument("unknown filter operator '" + std::string(name) + "' (expected query|maxpool)");
}

struct FrequencyFilterBank {
    FilterOperator kind = FilterOperator::Query;
    TensorC filters; // K [H, D]
    TensorF query;   // W [D, H]

    FrequencyFilterBank() = default;

    FrequencyFilterBank(std::size_t heads, std::size_t width, FilterOperator op, Rng& rng, double init_std = 0.02)
        : kind(op) {
        if (heads == 0 || width == 0) throw std::invalid_argument("FrequencyFilterBank: heads and width must be >= 1");
        std::vector<cdouble> k(heads * width);
        for (auto& v : k) {
            const double re = rng.normal(0.0, init_std);
            const double im = rng.normal(0.0, init_std);
            v = {re, im};
        }
        filters = TensorC({heads, width}, std::move(k), true);
        query = TensorF({width, heads}, normal_values(width * heads, init_std, rng), true);
    }

    /// Explicit parameters; shapes are validated.
    FrequencyFilterBank(TensorC k, TensorF w, FilterOperator op) : kind(op), filters(std::move(k)), query(std::move(w)) {
        if (filters.rank() != 2 || query.rank() != 2 || filters.dim(0) != query.dim(1) ||
            filters.dim(1) != query.dim(0)) {
            throw ShapeError("FrequencyFilterBank: K " + shape_str(filters.shape()) + " and W " +
                             shape_str(query.shape()) + " disagree on heads/width");
        }
    }

    std::size_t heads() const { return filters.dim(0); }
    std::size_t width() const { return filters.dim(1); }

    void collect(ParamList& out, const std::string& prefix) const {
        out.push_back({prefix + ".filters", filters});
        // the query matrix only participates in the query operator
        if (kind == FilterOperator::Query) out.push_back({prefix + ".query", query});
    }
};

namespace detail {

inline void require_bank_width(const TensorC& z, const FrequencyFilterBank& bank, const char* op) {
    if (z.rank() == 0 || z.shape().back() != bank.width()) {
        throw ShapeError(std::string(op) + ": spectrum " + shape_str(z.shape()) + " does not match bank width " +
                         std::to_string(bank.width()));
    }
}

} // namespace detail

inline TensorC apply_query_filter(const TensorC& z, const FrequencyFilterBank& bank) {
    if (bank.kind != FilterOperator::Query) throw std::invalid_argument("apply_query_filter: bank uses maxpool");
    detail::require_bank_width(z, bank, "apply_query_filter");
    const TensorF weights = matmul(real_part(z), bank.query);      // [..., H]
    const TensorC modulation = real_matmul_complex(weights, bank.filters); // [..., D]
    return mul(z, modulation);
}

inline TensorC apply_maxpool_filter(const TensorC& z, const FrequencyFilterBank& bank) {
    if (bank.kind != FilterOperator::MaxPool) throw std::invalid_argument("apply_maxpool_filter: bank uses query");
    detail::require_bank_width(z, bank, "apply_maxpool_filter");
    const std::size_t heads = bank.heads(), d = bank.width();
    const std::size_t rows = z.numel() / d;
    const auto k = bank.filters.data();
    std::vector<cdouble> out(z.numel());
    std::vector<std::uint32_t> choice(z.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
            const cdouble zij = z[r * d + j];
            std::size_t best = 0;
            cdouble best_val = zij * k[j];
            double best_abs = std::abs(best_val);
            for (std::size_t h = 1; h < heads; ++h) {
                const cdouble v = zij * k[h * d + j];
                const double a = std::abs(v);
                if (a > best_abs) {
                    best = h;
                    best_abs = a;
                    best_val = v;
                }
            }
            out[r * d + j] = best_val;
            choice[r * d + j] = static_cast<std::uint32_t>(best);
        }
    }
    auto nz = z.node();
    auto nk = bank.filters.node();
    return detail::make_result<cdouble>(z.shape(), std::move(out), {nz, nk},
                                        [nz, nk, choice = std::move(choice), rows, d](detail::Node<cdouble>& self) {
                                            if (nz->requires_grad) nz->ensure_grad();
                                            if (nk->requires_grad) nk->ensure_grad();
                                            for (std::size_t r = 0; r < rows; ++r) {
                                                for (std::size_t j = 0; j < d; ++j) {
                                                    const std::size_t idx = r * d + j;
                                                    const std::size_t kidx = choice[idx] * d + j;
                                                    const cdouble g = self.grad[idx];
                                                    if (nz->requires_grad) nz->grad[idx] += std::conj(nk->data[kidx]) * g;
                                                    if (nk->requires_grad) nk->grad[kidx] += std::conj(nz->data[idx]) * g;
                                                }
                                            }
                                        });
}

inline TensorC apply_filter(const TensorC& z, const FrequencyFilterBank& bank) {
    return bank.kind == FilterOperator::Query ? apply_query_filter(z, bank) : apply_maxpool_filter(z, bank);
}

/// Freq-L: rdft along the token axis (second to last), filter, irdft.
inline TensorF freq_layer_forward(const TensorF& x, const FrequencyFilterBank& bank) {
    if (x.rank() < 2) throw ShapeError("freq_layer_forward: expected [..., N, D], got " + shape_str(x.shape()));
    const std::size_t axis = x.rank() - 2;
    const std::size_t n = x.dim(axis);
    if (n == 0) throw ShapeError("freq_layer_forward: no tokens");
    if (x.shape().back() != bank.width()) {
        throw ShapeError("freq_layer_forward: token width " + std::to_string(x.shape().back()) +
                         " does not match bank width " + std::to_string(bank.width()));
    }
    return irdft(apply_filter(rdft(x, axis), bank), axis, n);
}

} // namespace famae
