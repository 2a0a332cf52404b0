#pragma once

// Differentiable real-valued operations.

#include <Eigen/Core>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "famae/rng.hpp"
#include "famae/tensor.hpp"

namespace famae {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CRowMat = Eigen::Matrix<cdouble, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <class T>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
    if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

/// Splits a shape into [outer, n, inner] around an axis.
inline void axis_split(const Shape& shape, std::size_t axis, std::size_t& outer, std::size_t& n, std::size_t& inner) {
    if (axis >= shape.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape));
    }
    outer = 1;
    inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    n = shape[axis];
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440;

inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

inline double gelu_slope(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = std::exp(-0.5 * x * x) * (std::numbers::inv_sqrtpi * kInvSqrt2);
    return cdf + x * pdf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "add");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(a.shape(), std::move(out), {na, nb}, [na, nb](detail::Node<T>& self) {
        for (auto* p : {na.get(), nb.get()}) {
            if (!p->requires_grad) continue;
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        }
    });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "sub");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(a.shape(), std::move(out), {na, nb}, [na, nb](detail::Node<T>& self) {
        if (na->requires_grad) {
            na->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += self.grad[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] -= self.grad[i];
        }
    });
}

/// Elementwise product. For complex operands the gradient follows the
/// conj convention documented in tensor.hpp.
template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::require_same_shape(a.shape(), b.shape(), "mul");
    std::vector<T> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<T>(a.shape(), std::move(out), {na, nb}, [na, nb](detail::Node<T>& self) {
        auto cj = [](T v) {
            if constexpr (std::is_same_v<T, cdouble>) {
                return std::conj(v);
            } else {
                return v;
            }
        };
        if (na->requires_grad) {
            na->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) na->grad[i] += cj(nb->data[i]) * self.grad[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) nb->grad[i] += cj(na->data[i]) * self.grad[i];
        }
    });
}

inline TensorF scale(const TensorF& x, double factor) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
    auto nx = x.node();
    return detail::make_result<double>(x.shape(), std::move(out), {nx}, [nx, factor](detail::Node<double>& self) {
        nx->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += factor * self.grad[i];
    });
}

/// x + b where b's shape equals the trailing dimensions of x.
inline TensorF add_broadcast(const TensorF& x, const TensorF& b) {
    const Shape& xs = x.shape();
    const Shape& bs = b.shape();
    if (bs.size() > xs.size() || !std::equal(bs.rbegin(), bs.rend(), xs.rbegin())) {
        throw ShapeError("add_broadcast: " + shape_str(bs) + " is not a trailing shape of " + shape_str(xs));
    }
    const std::size_t inner = b.numel();
    const std::size_t outer = inner == 0 ? 0 : x.numel() / inner;
    std::vector<double> out(x.numel());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = x[o * inner + i] + b[i];
    }
    auto nx = x.node();
    auto nb = b.node();
    return detail::make_result<double>(xs, std::move(out), {nx, nb}, [nx, nb, outer, inner](detail::Node<double>& self) {
        if (nx->requires_grad) {
            nx->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += self.grad[i];
        }
        if (nb->requires_grad) {
            nb->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t i = 0; i < inner; ++i) nb->grad[i] += self.grad[o * inner + i];
            }
        }
    });
}

inline TensorF gelu(const TensorF& x) {
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::gelu_value(x[i]);
    auto nx = x.node();
    return detail::make_result<double>(x.shape(), std::move(out), {nx}, [nx](detail::Node<double>& self) {
        nx->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += detail::gelu_slope(nx->data[i]) * self.grad[i];
    });
}

/// Inverted dropout; identity when p == 0.
inline TensorF dropout(const TensorF& x, double p, Rng& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw std::invalid_argument("dropout: rate must be < 1");
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    std::vector<double> out(x.numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
        mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
        out[i] = x[i] * mask[i];
    }
    auto nx = x.node();
    return detail::make_result<double>(x.shape(), std::move(out), {nx},
                                       [nx, mask = std::move(mask)](detail::Node<double>& self) {
                                           nx->ensure_grad();
                                           for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                               nx->grad[i] += mask[i] * self.grad[i];
                                           }
                                       });
}

// ---------------------------------------------------------------------------
// Reductions

inline TensorF sum(const TensorF& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    auto nx = x.node();
    return detail::make_result<double>(Shape{}, {acc}, {nx}, [nx](detail::Node<double>& self) {
        nx->ensure_grad();
        for (double& g : nx->grad) g += self.grad[0];
    });
}

inline TensorF mean(const TensorF& x) {
    if (x.numel() == 0) throw ShapeError("mean: empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

/// sum_i w_i x_i with constant weights; entries with zero weight are never
/// read, so non-finite values there cannot leak into the result.
inline TensorF weighted_sum(const TensorF& x, std::vector<double> weights) {
    if (weights.size() != x.numel()) throw ShapeError("weighted_sum: weight count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] != 0.0) acc += weights[i] * x[i];
    }
    auto nx = x.node();
    return detail::make_result<double>(Shape{}, {acc}, {nx}, [nx, w = std::move(weights)](detail::Node<double>& self) {
        nx->ensure_grad();
        for (std::size_t i = 0; i < w.size(); ++i) nx->grad[i] += w[i] * self.grad[0];
    });
}

/// Mean over one axis; the axis is removed from the shape.
inline TensorF mean_axis(const TensorF& x, std::size_t axis) {
    std::size_t outer = 0, n = 0, inner = 0;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    if (n == 0) throw ShapeError("mean_axis: empty axis");
    Shape out_shape = x.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(outer * inner, 0.0);
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t k = 0; k < n; ++k) {
            const double* row = x.data().data() + (o * n + k) * inner;
            for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += row[i];
        }
    }
    for (double& v : out) v *= inv;
    auto nx = x.node();
    return detail::make_result<double>(out_shape, std::move(out), {nx}, [nx, outer, n, inner, inv](detail::Node<double>& self) {
        nx->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t k = 0; k < n; ++k) {
                for (std::size_t i = 0; i < inner; ++i) nx->grad[(o * n + k) * inner + i] += inv * self.grad[o * inner + i];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Linear algebra

/// x [..., K] times w [K, M] -> [..., M].
template <class T>
Tensor<T> matmul(const Tensor<T>& x, const Tensor<T>& w) {
    if (w.rank() != 2 || x.rank() == 0 || x.shape().back() != w.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(x.shape()) + " and " + shape_str(w.shape()));
    }
    const std::size_t k = w.dim(0);
    const std::size_t m = w.dim(1);
    const std::size_t rows = k == 0 ? 0 : x.numel() / k;
    Shape out_shape = x.shape();
    out_shape.back() = m;
    std::vector<T> out(rows * m);
    {
        detail::ConstMatMap<T> X(x.data().data(), rows, k);
        detail::ConstMatMap<T> W(w.data().data(), k, m);
        detail::MatMap<T> Y(out.data(), rows, m);
        Y.noalias() = X * W;
    }
    auto nx = x.node();
    auto nw = w.node();
    return detail::make_result<T>(out_shape, std::move(out), {nx, nw}, [nx, nw, rows, k, m](detail::Node<T>& self) {
        detail::ConstMatMap<T> G(self.grad.data(), rows, m);
        if (nx->requires_grad) {
            nx->ensure_grad();
            detail::ConstMatMap<T> W(nw->data.data(), k, m);
            detail::MatMap<T> GX(nx->grad.data(), rows, k);
            GX.noalias() += G * W.adjoint();
        }
        if (nw->requires_grad) {
            nw->ensure_grad();
            detail::ConstMatMap<T> X(nx->data.data(), rows, k);
            detail::MatMap<T> GW(nw->grad.data(), k, m);
            GW.noalias() += X.adjoint() * G;
        }
    });
}

inline TensorF linear(const TensorF& x, const TensorF& weight, const TensorF& bias) {
    return add_broadcast(matmul(x, weight), bias);
}

/// Batched a [B, n, k] times b [B, k, m], or b^T when b is [B, m, k] and
/// transpose_b is set.
inline TensorF bmm(const TensorF& a, const TensorF& b, bool transpose_b = false) {
    if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    const std::size_t batch = a.dim(0), n = a.dim(1), k = a.dim(2);
    const std::size_t m = transpose_b ? b.dim(1) : b.dim(2);
    if ((transpose_b ? b.dim(2) : b.dim(1)) != k) {
        throw ShapeError("bmm: inner dimension mismatch " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    }
    std::vector<double> out(batch * n * m);
    for (std::size_t i = 0; i < batch; ++i) {
        detail::ConstMatMap<double> A(a.data().data() + i * n * k, n, k);
        detail::MatMap<double> Y(out.data() + i * n * m, n, m);
        if (transpose_b) {
            detail::ConstMatMap<double> Bm(b.data().data() + i * m * k, m, k);
            Y.noalias() = A * Bm.transpose();
        } else {
            detail::ConstMatMap<double> Bm(b.data().data() + i * k * m, k, m);
            Y.noalias() = A * Bm;
        }
    }
    auto na = a.node();
    auto nb = b.node();
    return detail::make_result<double>(
        Shape{batch, n, m}, std::move(out), {na, nb}, [na, nb, batch, n, k, m, transpose_b](detail::Node<double>& self) {
            if (na->requires_grad) na->ensure_grad();
            if (nb->requires_grad) nb->ensure_grad();
            for (std::size_t i = 0; i < batch; ++i) {
                detail::ConstMatMap<double> G(self.grad.data() + i * n * m, n, m);
                detail::ConstMatMap<double> A(na->data.data() + i * n * k, n, k);
                if (transpose_b) {
                    detail::ConstMatMap<double> Bm(nb->data.data() + i * m * k, m, k);
                    if (na->requires_grad) {
                        detail::MatMap<double> GA(na->grad.data() + i * n * k, n, k);
                        GA.noalias() += G * Bm;
                    }
                    if (nb->requires_grad) {
                        detail::MatMap<double> GB(nb->grad.data() + i * m * k, m, k);
                        GB.noalias() += G.transpose() * A;
                    }
                } else {
                    detail::ConstMatMap<double> Bm(nb->data.data() + i * k * m, k, m);
                    if (na->requires_grad) {
                        detail::MatMap<double> GA(na->grad.data() + i * n * k, n, k);
                        GA.noalias() += G * Bm.transpose();
                    }
                    if (nb->requires_grad) {
                        detail::MatMap<double> GB(nb->grad.data() + i * k * m, k, m);
                        GB.noalias() += A.transpose() * G;
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Normalization and softmax over the last axis

inline TensorF layer_norm(const TensorF& x, const TensorF& gamma, const TensorF& beta, double eps = 1e-5) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d) throw ShapeError("layer_norm: parameter width mismatch");
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += in[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mu) * (in[j] - mu);
        var /= static_cast<double>(d);
        inv_std[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (in[j] - mu) * inv_std[r];
            out[r * d + j] = gamma[j] * xhat[r * d + j] + beta[j];
        }
    }
    auto nx = x.node();
    auto ng = gamma.node();
    auto nb = beta.node();
    return detail::make_result<double>(
        x.shape(), std::move(out), {nx, ng, nb},
        [nx, ng, nb, rows, d, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node<double>& self) {
            if (ng->requires_grad) ng->ensure_grad();
            if (nb->requires_grad) nb->ensure_grad();
            if (nx->requires_grad) nx->ensure_grad();
            const double inv_d = 1.0 / static_cast<double>(d);
            for (std::size_t r = 0; r < rows; ++r) {
                const double* g = self.grad.data() + r * d;
                const double* xh = xhat.data() + r * d;
                double mean_g = 0.0, mean_gx = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    if (ng->requires_grad) ng->grad[j] += g[j] * xh[j];
                    if (nb->requires_grad) nb->grad[j] += g[j];
                    const double gh = g[j] * ng->data[j];
                    mean_g += gh;
                    mean_gx += gh * xh[j];
                }
                if (!nx->requires_grad) continue;
                mean_g *= inv_d;
                mean_gx *= inv_d;
                for (std::size_t j = 0; j < d; ++j) {
                    const double gh = g[j] * ng->data[j];
                    nx->grad[r * d + j] += inv_std[r] * (gh - mean_g - xh[j] * mean_gx);
                }
            }
        });
}

inline TensorF softmax(const TensorF& x) {
    if (x.rank() == 0) throw ShapeError("softmax: scalar input");
    const std::size_t d = x.shape().back();
    const std::size_t rows = d == 0 ? 0 : x.numel() / d;
    std::vector<double> out(x.numel());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * d;
        double mx = in[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            out[r * d + j] = std::exp(in[j] - mx);
            total += out[r * d + j];
        }
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] /= total;
    }
    auto nx = x.node();
    auto result = detail::make_result<double>(x.shape(), out, {nx}, nullptr);
    if (result.requires_grad()) {
        result.node()->backward_fn = [nx, rows, d](detail::Node<double>& self) {
            nx->ensure_grad();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = self.data.data() + r * d;
                const double* g = self.grad.data() + r * d;
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) nx->grad[r * d + j] += y[j] * (g[j] - dot);
            }
        };
    }
    return result;
}

/// Mean softmax cross-entropy of logits [B, K] against integer labels.
inline TensorF cross_entropy(const TensorF& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
        throw ShapeError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const std::size_t batch = logits.dim(0), classes = logits.dim(1);
    std::vector<double> probs(logits.numel());
    double loss = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
            throw std::out_of_range("cross_entropy: label " + std::to_string(labels[b]) + " out of range");
        }
        const double* z = logits.data().data() + b * classes;
        double mx = z[0];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, z[j]);
        double total = 0.0;
        for (std::size_t j = 0; j < classes; ++j) total += std::exp(z[j] - mx);
        const double lse = mx + std::log(total);
        loss += lse - z[labels[b]];
        for (std::size_t j = 0; j < classes; ++j) probs[b * classes + j] = std::exp(z[j] - lse);
    }
    loss /= static_cast<double>(batch);
    auto nl = logits.node();
    return detail::make_result<double>(Shape{}, {loss}, {nl},
                                       [nl, labels, batch, classes, probs = std::move(probs)](detail::Node<double>& self) {
                                           nl->ensure_grad();
                                           const double g = self.grad[0] / static_cast<double>(batch);
                                           for (std::size_t b = 0; b < batch; ++b) {
                                               for (std::size_t j = 0; j < classes; ++j) {
                                                   const double onehot = static_cast<int>(j) == labels[b] ? 1.0 : 0.0;
                                                   nl->grad[b * classes + j] += g * (probs[b * classes + j] - onehot);
                                               }
                                           }
                                       });
}

// ---------------------------------------------------------------------------
// Layout

inline TensorF reshape(const TensorF& x, Shape shape) {
    if (numel_of(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    auto nx = x.node();
    return detail::make_result<double>(std::move(shape), x.values(), {nx}, [nx](detail::Node<double>& self) {
        nx->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) nx->grad[i] += self.grad[i];
    });
}

/// Concatenate along an axis; all other extents must agree.
inline TensorF concat(const std::vector<TensorF>& parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    Shape out_shape = parts[0].shape();
    if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range");
    out_shape[axis] = 0;
    std::vector<std::size_t> widths;
    std::size_t outer = 0, n = 0, inner = 0;
    for (const auto& p : parts) {
        Shape s = p.shape();
        if (s.size() != out_shape.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != parts[0].shape()[i]) throw ShapeError("concat: extent mismatch on axis " + std::to_string(i));
        }
        detail::axis_split(s, axis, outer, n, inner);
        widths.push_back(n * inner);
        out_shape[axis] += n;
    }
    std::size_t total_width = 0;
    for (auto w : widths) total_width += w;
    std::vector<double> out(outer * total_width);
    std::vector<std::shared_ptr<detail::NodeBase>> parents;
    std::vector<std::shared_ptr<detail::Node<double>>> typed;
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(parts[p].data().data() + o * widths[p], widths[p], out.data() + o * total_width + offset);
        }
        offset += widths[p];
        parents.push_back(parts[p].node());
        typed.push_back(parts[p].node());
    }
    return detail::make_result<double>(out_shape, std::move(out), std::move(parents),
                                       [typed, widths, outer, total_width](detail::Node<double>& self) {
                                           std::size_t off = 0;
                                           for (std::size_t p = 0; p < typed.size(); ++p) {
                                               auto& node = typed[p];
                                               if (node->requires_grad) {
                                                   node->ensure_grad();
                                                   for (std::size_t o = 0; o < outer; ++o) {
                                                       for (std::size_t i = 0; i < widths[p]; ++i) {
                                                           node->grad[o * widths[p] + i] +=
                                                               self.grad[o * total_width + off + i];
                                                       }
                                                   }
                                               }
                                               off += widths[p];
                                           }
                                       });
}

/// Half-open range [begin, end) along an axis.
inline TensorF slice(const TensorF& x, std::size_t axis, std::size_t begin, std::size_t end) {
    std::size_t outer = 0, n = 0, inner = 0;
    detail::axis_split(x.shape(), axis, outer, n, inner);
    if (begin > end || end > n) throw ShapeError("slice: range out of bounds");
    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    const std::size_t width = (end - begin) * inner;
    std::vector<double> out(outer * width);
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(x.data().data() + (o * n + begin) * inner, width, out.data() + o * width);
    }
    auto nx = x.node();
    return detail::make_result<double>(out_shape, std::move(out), {nx}, [nx, outer, n, inner, begin, width](detail::Node<double>& self) {
        nx->ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < width; ++i) nx->grad[(o * n + begin) * inner + i] += self.grad[o * width + i];
        }
    });
}

/// Rows of a [R, D] matrix by index -> [len, D].
inline TensorF index_rows(const TensorF& x, const std::vector<std::size_t>& rows) {
    if (x.rank() != 2) throw ShapeError("index_rows: expected a matrix");
    const std::size_t r = x.dim(0), d = x.dim(1);
    std::vector<double> out(rows.size() * d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= r) throw std::out_of_range("index_rows: row " + std::to_string(rows[i]) + " out of range");
        std::copy_n(x.data().data() + rows[i] * d, d, out.data() + i * d);
    }
    auto nx = x.node();
    return detail::make_result<double>(Shape{rows.size(), d}, std::move(out), {nx}, [nx, rows, d](detail::Node<double>& self) {
        nx->ensure_grad();
        for (std::size_t i = 0; i < rows.size(); ++i) {
            for (std::size_t j = 0; j < d; ++j) nx->grad[rows[i] * d + j] += self.grad[i * d + j];
        }
    });
}

/// Per-batch token selection: x [B, T, D], indices[b] of equal length T'
/// -> [B, T', D].
inline TensorF gather_tokens(const TensorF& x, const std::vector<std::vector<std::size_t>>& indices) {
    if (x.rank() != 3 || indices.size() != x.dim(0)) throw ShapeError("gather_tokens: expected [B, T, D] and B index lists");
    const std::size_t batch = x.dim(0), t = x.dim(1), d = x.dim(2);
    const std::size_t kept = indices.empty() ? 0 : indices[0].size();
    std::vector<double> out(batch * kept * d);
    for (std::size_t b = 0; b < batch; ++b) {
        if (indices[b].size() != kept) throw ShapeError("gather_tokens: ragged index lists");
        for (std::size_t i = 0; i < kept; ++i) {
            if (indices[b][i] >= t) throw std::out_of_range("gather_tokens: token index out of range");
            std::copy_n(x.data().data() + (b * t + indices[b][i]) * d, d, out.data() + (b * kept + i) * d);
        }
    }
    auto nx = x.node();
    return detail::make_result<double>(Shape{batch, kept, d}, std::move(out), {nx},
                                       [nx, indices, batch, t, d, kept](detail::Node<double>& self) {
                                           nx->ensure_grad();
                                           for (std::size_t b = 0; b < batch; ++b) {
                                               for (std::size_t i = 0; i < kept; ++i) {
                                                   double* dst = nx->grad.data() + (b * t + indices[b][i]) * d;
                                                   const double* src = self.grad.data() + (b * kept + i) * d;
                                                   for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                                               }
                                           }
                                       });
}

/// Inverse of gather_tokens: places kept [B, T', D] rows at indices[b] of a
/// [B, T, D] grid and fills every other slot with `fill` [D].
inline TensorF scatter_tokens(const TensorF& kept, const std::vector<std::vector<std::size_t>>& indices, std::size_t t,
                              const TensorF& fill) {
    if (kept.rank() != 3 || indices.size() != kept.dim(0)) throw ShapeError("scatter_tokens: expected [B, T', D]");
    const std::size_t batch = kept.dim(0), k = kept.dim(1), d = kept.dim(2);
    if (fill.numel() != d) throw ShapeError("scatter_tokens: fill width mismatch");
    std::vector<std::vector<long>> source(batch, std::vector<long>(t, -1));
    for (std::size_t b = 0; b < batch; ++b) {
        if (indices[b].size() != k) throw ShapeError("scatter_tokens: ragged index lists");
        for (std::size_t i = 0; i < k; ++i) {
            if (indices[b][i] >= t || source[b][indices[b][i]] != -1) {
                throw std::out_of_range("scatter_tokens: index out of range or repeated");
            }
            source[b][indices[b][i]] = static_cast<long>(i);
        }
    }
    std::vector<double> out(batch * t * d);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t s = 0; s < t; ++s) {
            const double* src = source[b][s] < 0 ? fill.data().data()
                                                 : kept.data().data() + (b * k + static_cast<std::size_t>(source[b][s])) * d;
            std::copy_n(src, d, out.data() + (b * t + s) * d);
        }
    }
    auto nk = kept.node();
    auto nf = fill.node();
    return detail::make_result<double>(Shape{batch, t, d}, std::move(out), {nk, nf},
                                       [nk, nf, source = std::move(source), batch, t, k, d](detail::Node<double>& self) {
                                           if (nk->requires_grad) nk->ensure_grad();
                                           if (nf->requires_grad) nf->ensure_grad();
                                           for (std::size_t b = 0; b < batch; ++b) {
                                               for (std::size_t s = 0; s < t; ++s) {
                                                   const double* g = self.grad.data() + (b * t + s) * d;
                                                   if (source[b][s] < 0) {
                                                       if (!nf->requires_grad) continue;
                                                       for (std::size_t j = 0; j < d; ++j) nf->grad[j] += g[j];
                                                   } else if (nk->requires_grad) {
                                                       double* dst = nk->grad.data() +
                                                                     (b * k + static_cast<std::size_t>(source[b][s])) * d;
                                                       for (std::size_t j = 0; j < d; ++j) dst[j] += g[j];
                                                   }
                                               }
                                           }
                                       });
}

/// [B, T, H*dh] -> [B*H, T, dh]
inline TensorF split_heads(const TensorF& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(2) % heads != 0) throw ShapeError("split_heads: width not divisible by heads");
    const std::size_t batch = x.dim(0), t = x.dim(1), d = x.dim(2), dh = d / heads;
    std::vector<double> out(x.numel());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(x.data().data() + (b * t + s) * d + h * dh, dh, out.data() + ((b * heads + h) * t + s) * dh);
    auto nx = x.node();
    return detail::make_result<double>(Shape{batch * heads, t, dh}, std::move(out), {nx},
                                       [nx, batch, t, d, dh, heads](detail::Node<double>& self) {
                                           nx->ensure_grad();
                                           for (std::size_t b = 0; b < batch; ++b)
                                               for (std::size_t s = 0; s < t; ++s)
                                                   for (std::size_t h = 0; h < heads; ++h)
                                                       for (std::size_t j = 0; j < dh; ++j)
                                                           nx->grad[(b * t + s) * d + h * dh + j] +=
                                                               self.grad[((b * heads + h) * t + s) * dh + j];
                                       });
}

/// [B*H, T, dh] -> [B, T, H*dh]
inline TensorF merge_heads(const TensorF& x, std::size_t heads) {
    if (x.rank() != 3 || heads == 0 || x.dim(0) % heads != 0) throw ShapeError("merge_heads: batch not divisible by heads");
    const std::size_t batch = x.dim(0) / heads, t = x.dim(1), dh = x.dim(2), d = dh * heads;
    std::vector<double> out(x.numel());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t s = 0; s < t; ++s)
            for (std::size_t h = 0; h < heads; ++h)
                std::copy_n(x.data().data() + ((b * heads + h) * t + s) * dh, dh, out.data() + (b * t + s) * d + h * dh);
    auto nx = x.node();
    return detail::make_result<double>(Shape{batch, t, d}, std::move(out), {nx},
                                       [nx, batch, t, d, dh, heads](detail::Node<double>& self) {
                                           nx->ensure_grad();
                                           for (std::size_t b = 0; b < batch; ++b)
                                               for (std::size_t s = 0; s < t; ++s)
                                                   for (std::size_t h = 0; h < heads; ++h)
                                                       for (std::size_t j = 0; j < dh; ++j)
                                                           nx->grad[((b * heads + h) * t + s) * dh + j] +=
                                                               self.grad[(b * t + s) * d + h * dh + j];
                                       });
}

} // namespace famae
