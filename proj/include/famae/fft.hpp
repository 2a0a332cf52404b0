#pragma once

// Raw (non-differentiable) discrete Fourier transform kernels.
//
// forward:  z_k = sum_n x_n exp(-2 pi i k n / N)
// backward: x_n = sum_k z_k exp(+2 pi i k n / N)   (no 1/N factor)
//
// Lengths that are powers of two use an iterative radix-2 transform, short
// lengths use a cached twiddle table, everything else goes through
// Bluestein's chirp-z algorithm on a power-of-two grid.

#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace famae::fft {

using cdouble = std::complex<double>;

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

inline std::size_t next_power_of_two(std::size_t n) {
    std::size_t m = 1;
    while (m < n) m <<= 1;
    return m;
}

/// exp(-2 pi i k / n), with k reduced mod n first to keep the argument small.
inline cdouble unit_root(std::size_t k, std::size_t n) {
    k %= n;
    if (k == 0) return {1.0, 0.0};
    if (4 * k == n) return {0.0, -1.0};
    if (2 * k == n) return {-1.0, 0.0};
    if (4 * k == 3 * n) return {0.0, 1.0};
    const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
    return {std::cos(angle), std::sin(angle)};
}

class Plan {
public:
    static constexpr std::size_t kDirectMax = 16;

    explicit Plan(std::size_t n) : n_(n) {
        if (n == 0) throw std::invalid_argument("fft::Plan: length must be >= 1");
        if (is_power_of_two(n) && n > 2) {
            kind_ = Kind::Radix2;
            init_radix2();
        } else if (n <= kDirectMax) {
            kind_ = Kind::Direct;
            roots_.resize(n);
            for (std::size_t k = 0; k < n; ++k) roots_[k] = unit_root(k, n);
        } else {
            kind_ = Kind::Bluestein;
            init_bluestein();
        }
    }

    std::size_t size() const { return n_; }

    void forward(std::span<cdouble> x) const { run(x, false); }
    void backward(std::span<cdouble> x) const { run(x, true); }

private:
    enum class Kind { Direct, Radix2, Bluestein };

    void run(std::span<cdouble> x, bool inverse) const {
        if (x.size() != n_) throw std::invalid_argument("fft::Plan: length mismatch");
        switch (kind_) {
        case Kind::Direct:
            direct(x, inverse);
            break;
        case Kind::Radix2:
            radix2(x, inverse);
            break;
        case Kind::Bluestein:
            bluestein(x, inverse);
            break;
        }
    }

    void direct(std::span<cdouble> x, bool inverse) const {
        std::vector<cdouble> out(n_);
        for (std::size_t k = 0; k < n_; ++k) {
            cdouble acc{};
            std::size_t idx = 0;
            for (std::size_t j = 0; j < n_; ++j) {
                const cdouble w = inverse ? std::conj(roots_[idx]) : roots_[idx];
                acc += x[j] * w;
                idx += k;
                if (idx >= n_) idx -= n_;
            }
            out[k] = acc;
        }
        std::copy(out.begin(), out.end(), x.begin());
    }

    void init_radix2() {
        bitrev_.resize(n_);
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < n_) ++bits;
        for (std::size_t i = 0; i < n_; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b) {
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
            }
            bitrev_[i] = r;
        }
        roots_.resize(n_ / 2);
        for (std::size_t k = 0; k < n_ / 2; ++k) roots_[k] = unit_root(k, n_);
    }

    void radix2(std::span<cdouble> x, bool inverse) const {
        for (std::size_t i = 0; i < n_; ++i) {
            const std::size_t j = bitrev_[i];
            if (i < j) std::swap(x[i], x[j]);
        }
        for (std::size_t len = 2; len <= n_; len <<= 1) {
            const std::size_t half = len / 2;
            const std::size_t stride = n_ / len;
            for (std::size_t start = 0; start < n_; start += len) {
                for (std::size_t j = 0; j < half; ++j) {
                    const cdouble w = inverse ? std::conj(roots_[j * stride]) : roots_[j * stride];
                    const cdouble u = x[start + j];
                    const cdouble v = x[start + j + half] * w;
                    x[start + j] = u + v;
                    x[start + j + half] = u - v;
                }
            }
        }
    }

    void init_bluestein() {
        m_ = next_power_of_two(2 * n_ - 1);
        inner_ = std::make_unique<Plan>(m_);
        chirp_.resize(n_);
        // exp(-i pi k^2 / n) == unit_root(k^2 mod 2n, 2n)
        const std::size_t two_n = 2 * n_;
        for (std::size_t k = 0; k < n_; ++k) {
            chirp_[k] = unit_root((k * k) % two_n, two_n);
        }
        kernel_.assign(m_, cdouble{});
        kernel_[0] = std::conj(chirp_[0]);
        for (std::size_t k = 1; k < n_; ++k) {
            kernel_[k] = std::conj(chirp_[k]);
            kernel_[m_ - k] = std::conj(chirp_[k]);
        }
        inner_->forward(kernel_);
    }

    void bluestein(std::span<cdouble> x, bool inverse) const {
        // The inverse transform is conj(forward(conj(x))).
        std::vector<cdouble> a(m_, cdouble{});
        for (std::size_t k = 0; k < n_; ++k) {
            const cdouble v = inverse ? std::conj(x[k]) : x[k];
            a[k] = v * chirp_[k];
        }
        inner_->forward(a);
        for (std::size_t k = 0; k < m_; ++k) a[k] *= kernel_[k];
        inner_->backward(a);
        const double scale = 1.0 / static_cast<double>(m_);
        for (std::size_t k = 0; k < n_; ++k) {
            const cdouble v = a[k] * scale * chirp_[k];
            x[k] = inverse ? std::conj(v) : v;
        }
    }

    std::size_t n_;
    Kind kind_ = Kind::Direct;
    std::vector<cdouble> roots_;
    std::vector<std::size_t> bitrev_;
    std::size_t m_ = 0;
    std::unique_ptr<Plan> inner_;
    std::vector<cdouble> chirp_;
    std::vector<cdouble> kernel_;
};

/// Per-thread plan cache.
inline const Plan& plan_for(std::size_t n) {
    thread_local std::map<std::size_t, std::unique_ptr<Plan>> cache;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, std::make_unique<Plan>(n)).first;
    return *it->second;
}

/// Transform every 1-D line along the middle axis of an [outer, n, inner]
/// row-major block in place.
inline void transform_axis(std::span<cdouble> data, std::size_t outer, std::size_t n, std::size_t inner,
                           bool inverse) {
    const Plan& plan = plan_for(n);
    std::vector<cdouble> line(n);
    for (std::size_t o = 0; o < outer; ++o) {
        cdouble* base = data.data() + o * n * inner;
        for (std::size_t i = 0; i < inner; ++i) {
            for (std::size_t k = 0; k < n; ++k) line[k] = base[k * inner + i];
            if (inverse) {
                plan.backward(line);
            } else {
                plan.forward(line);
            }
            for (std::size_t k = 0; k < n; ++k) base[k * inner + i] = line[k];
        }
    }
}

} // namespace famae::fft
