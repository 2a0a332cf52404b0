#pragma once

// Differentiable discrete Fourier transforms and complex helpers.
//
//   dft   z_k = sum_n x_n e^{-2 pi i k n / N}
//   idft  x_n = (1/N) sum_k z_k e^{+2 pi i k n / N}
//   rdft  first floor(N/2)+1 bins of dft of a real input
//   irdft real inverse of rdft; imaginary parts of the DC bin (and of the
//         Nyquist bin for even N) are ignored
//
// All transforms act along one axis of an arbitrary-rank tensor.

#include <complex>
#include <string>
#include <vector>

#include "famae/fft.hpp"
#include "famae/ops.hpp"
#include "famae/tensor.hpp"

namespace famae {

namespace detail {

inline std::vector<cdouble> transformed(std::vector<cdouble> data, const Shape& shape, std::size_t axis, bool inverse) {
    std::size_t outer = 0, n = 0, inner = 0;
    axis_split(shape, axis, outer, n, inner);
    if (n == 0) throw ShapeError("dft: empty transform axis");
    fft::transform_axis(data, outer, n, inner, inverse);
    return data;
}

/// Full-length forward spectrum of real data, truncated to `bins` along axis.
inline std::vector<cdouble> real_forward(std::span<const double> x, const Shape& shape, std::size_t axis, std::size_t bins) {
    std::size_t outer = 0, n = 0, inner = 0;
    axis_split(shape, axis, outer, n, inner);
    std::vector<cdouble> full(x.begin(), x.end());
    fft::transform_axis(full, outer, n, inner, false);
    std::vector<cdouble> out(outer * bins * inner);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < bins; ++k)
            std::copy_n(full.data() + (o * n + k) * inner, inner, out.data() + (o * bins + k) * inner);
    return out;
}

/// sum_k c_k z_k e^{+2 pi i k n / N}, real part only, with c_k the
/// half-spectrum multiplicity (1 for DC and Nyquist, 2 otherwise). No 1/N.
inline std::vector<double> half_spectrum_synthesis(std::span<const cdouble> z, std::size_t outer, std::size_t bins,
                                                   std::size_t inner, std::size_t n_out) {
    std::vector<cdouble> full(outer * n_out * inner, cdouble{});
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < bins; ++k) {
            const bool single = (k == 0) || (2 * k == n_out);
            const cdouble* src = z.data() + (o * bins + k) * inner;
            cdouble* dst = full.data() + (o * n_out + k) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                dst[i] = single ? cdouble(src[i].real(), 0.0) : 2.0 * src[i];
            }
        }
    }
    fft::transform_axis(full, outer, n_out, inner, true);
    std::vector<double> out(full.size());
    for (std::size_t i = 0; i < full.size(); ++i) out[i] = full[i].real();
    return out;
}

} // namespace detail

inline TensorC dft(const TensorC& x, std::size_t axis) {
    std::size_t outer = 0, n = 0, inner = 0;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    auto out = detail::transformed(x.values(), x.shape(), axis, false);
    auto nx = x.node();
    return detail::make_result<cdouble>(x.shape(), std::move(out), {nx}, [nx, axis](detail::Node<cdouble>& self) {
        // adjoint of F is F^H = unnormalized backward transform
        auto g = detail::transformed(self.grad, self.shape, axis, true);
        nx->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) nx->grad[i] += g[i];
    });
}

inline TensorC idft(const TensorC& z, std::size_t axis) {
    std::size_t outer = 0, n = 0, inner = 0;
    detail::axis_split(z.shape(), axis, outer, n, inner);
    auto out = detail::transformed(z.values(), z.shape(), axis, true);
    const double inv = 1.0 / static_cast<double>(n);
    for (auto& v : out) v *= inv;
    auto nz = z.node();
    return detail::make_result<cdouble>(z.shape(), std::move(out), {nz}, [nz, axis, inv](detail::Node<cdouble>& self) {
        auto g = detail::transformed(self.grad, self.shape, axis, false);
        nz->ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) nz->grad[i] += inv * g[i];
    });
}

inline TensorC rdft(const TensorF& x, std::size_t axis) {
    std::size_t outer = 0, n = 0, inner = 0;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    if (n == 0) throw ShapeError("rdft: empty transform axis");
    const std::size_t bins = n / 2 + 1;
    Shape out_shape = x.shape();
    out_shape[axis] = bins;
    auto out = detail::real_forward(x.data(), x.shape(), axis, bins);
    auto nx = x.node();
    return detail::make_result<cdouble>(out_shape, std::move(out), {nx},
                                        [nx, outer, n, inner, bins](detail::Node<cdouble>& self) {
                                            // dL/dx_n = Re sum_{k<bins} g_k e^{+2 pi i k n / N}
                                            std::vector<cdouble> padded(outer * n * inner, cdouble{});
                                            for (std::size_t o = 0; o < outer; ++o)
                                                for (std::size_t k = 0; k < bins; ++k)
                                                    std::copy_n(self.grad.data() + (o * bins + k) * inner, inner,
                                                                padded.data() + (o * n + k) * inner);
                                            fft::transform_axis(padded, outer, n, inner, true);
                                            nx->ensure_grad();
                                            for (std::size_t i = 0; i < padded.size(); ++i) nx->grad[i] += padded[i].real();
                                        });
}

inline TensorF irdft(const TensorC& z, std::size_t axis, std::size_t n_out) {
    std::size_t outer = 0, bins = 0, inner = 0;
    detail::axis_split(z.shape(), axis, outer, bins, inner);
    if (n_out == 0 || bins != n_out / 2 + 1) {
        throw ShapeError("irdft: " + std::to_string(bins) + " bins do not match n_out=" + std::to_string(n_out));
    }
    Shape out_shape = z.shape();
    out_shape[axis] = n_out;
    auto out = detail::half_spectrum_synthesis(z.data(), outer, bins, inner, n_out);
    const double inv = 1.0 / static_cast<double>(n_out);
    for (auto& v : out) v *= inv;
    auto nz = z.node();
    return detail::make_result<double>(
        out_shape, std::move(out), {nz}, [nz, outer, bins, inner, n_out, inv, axis](detail::Node<double>& self) {
            // dL/dz_k = (c_k / N) * rdft(g)_k, with c_k the half-spectrum multiplicity
            auto spec = detail::real_forward(self.grad, self.shape, axis, bins);
            nz->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t k = 0; k < bins; ++k) {
                    const bool single = (k == 0) || (2 * k == n_out);
                    const double c = (single ? 1.0 : 2.0) * inv;
                    for (std::size_t i = 0; i < inner; ++i) {
                        const std::size_t idx = (o * bins + k) * inner + i;
                        cdouble g = c * spec[idx];
                        // the imaginary part of single bins never reaches the output
                        if (single) g = cdouble(g.real(), 0.0);
                        nz->grad[idx] += g;
                    }
                }
            }
        });
}

inline TensorC to_complex(const TensorF& x) {
    std::vector<cdouble> out(x.data().begin(), x.data().end());
    auto nx = x.node();
    return detail::make_result<cdouble>(x.shape(), std::move(out), {nx}, [nx](detail::Node<cdouble>& self) {
        nx->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += self.grad[i].real();
    });
}

inline TensorF real_part(const TensorC& z) {
    std::vector<double> out(z.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i].real();
    auto nz = z.node();
    return detail::make_result<double>(z.shape(), std::move(out), {nz}, [nz](detail::Node<double>& self) {
        nz->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) nz->grad[i] += cdouble(self.grad[i], 0.0);
    });
}

inline TensorF imag_part(const TensorC& z) {
    std::vector<double> out(z.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = z[i].imag();
    auto nz = z.node();
    return detail::make_result<double>(z.shape(), std::move(out), {nz}, [nz](detail::Node<double>& self) {
        nz->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) nz->grad[i] += cdouble(0.0, self.grad[i]);
    });
}

/// |z|^2 elementwise.
inline TensorF abs2(const TensorC& z) {
    std::vector<double> out(z.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::norm(z[i]);
    auto nz = z.node();
    return detail::make_result<double>(z.shape(), std::move(out), {nz}, [nz](detail::Node<double>& self) {
        nz->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) nz->grad[i] += 2.0 * self.grad[i] * nz->data[i];
    });
}

/// Real q [..., H] times complex k [H, D] -> complex [..., D].
inline TensorC real_matmul_complex(const TensorF& q, const TensorC& k) {
    if (k.rank() != 2 || q.rank() == 0 || q.shape().back() != k.dim(0)) {
        throw ShapeError("real_matmul_complex: incompatible shapes " + shape_str(q.shape()) + " and " +
                         shape_str(k.shape()));
    }
    const std::size_t h = k.dim(0), d = k.dim(1);
    const std::size_t rows = h == 0 ? 0 : q.numel() / h;
    Shape out_shape = q.shape();
    out_shape.back() = d;
    std::vector<cdouble> out(rows * d);
    {
        detail::ConstMatMap<double> Q(q.data().data(), rows, h);
        detail::ConstMatMap<cdouble> K(k.data().data(), h, d);
        detail::MatMap<cdouble> M(out.data(), rows, d);
        M.noalias() = Q.cast<cdouble>() * K;
    }
    auto nq = q.node();
    auto nk = k.node();
    return detail::make_result<cdouble>(out_shape, std::move(out), {nq, nk}, [nq, nk, rows, h, d](detail::Node<cdouble>& self) {
        detail::ConstMatMap<cdouble> G(self.grad.data(), rows, d);
        if (nq->requires_grad) {
            // dL/dq = Re(G K^H)
            nq->ensure_grad();
            detail::ConstMatMap<cdouble> K(nk->data.data(), h, d);
            detail::CRowMat gq = G * K.adjoint();
            for (std::size_t i = 0; i < rows * h; ++i) nq->grad[i] += gq.data()[i].real();
        }
        if (nk->requires_grad) {
            nk->ensure_grad();
            detail::ConstMatMap<double> Q(nq->data.data(), rows, h);
            detail::MatMap<cdouble> GK(nk->grad.data(), h, d);
            GK.noalias() += Q.transpose().cast<cdouble>() * G;
        }
    });
}

} // namespace famae
