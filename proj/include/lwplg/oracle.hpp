#pragma once

// Brute-force references for the verification suites. Everything here is
// written against raw buffers with its own loops and shares no kernel code
// with the production operators.

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "lwplg/tensor.hpp"

namespace lwplg::oracle {

// Scaled dot-product attention over rank-2 row-major buffers (tokens, dim).
template <typename T>
std::vector<T> naive_attention(const std::vector<T>& q, const std::vector<T>& k,
                               const std::vector<T>& v, int64_t tokens, int64_t dim) {
    require(static_cast<int64_t>(q.size()) == tokens * dim &&
                static_cast<int64_t>(k.size()) == tokens * dim &&
                static_cast<int64_t>(v.size()) == tokens * dim,
            "naive_attention: buffer sizes do not match tokens*dim");
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dim));
    std::vector<T> out(static_cast<size_t>(tokens * dim), T(0));
    std::vector<double> scores(static_cast<size_t>(tokens));
    for (int64_t i = 0; i < tokens; ++i) {
        double mx = -1e300;
        for (int64_t j = 0; j < tokens; ++j) {
            double s = 0;
            for (int64_t d = 0; d < dim; ++d)
                s += static_cast<double>(q[i * dim + d]) * static_cast<double>(k[j * dim + d]);
            s *= inv_sqrt_d;
            scores[static_cast<size_t>(j)] = s;
            if (s > mx) mx = s;
        }
        double sum = 0;
        for (int64_t j = 0; j < tokens; ++j) {
            scores[static_cast<size_t>(j)] = std::exp(scores[static_cast<size_t>(j)] - mx);
            sum += scores[static_cast<size_t>(j)];
        }
        for (int64_t j = 0; j < tokens; ++j) {
            const double w = scores[static_cast<size_t>(j)] / sum;
            for (int64_t d = 0; d < dim; ++d)
                out[i * dim + d] += static_cast<T>(w * static_cast<double>(v[j * dim + d]));
        }
    }
    return out;
}

enum class PoolMode { Max, Mean };

// Literal per-bin scan with the floor/ceil bin rule.
template <typename T>
Tensor4<T> naive_adaptive_pool(const Tensor4<T>& x, int out_h, int out_w, PoolMode mode) {
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    Tensor4<T> out = Tensor4<T>::zeros({N, C, out_h, out_w});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < out_h; ++i)
                for (int64_t j = 0; j < out_w; ++j) {
                    const int64_t r0 = (i * H) / out_h;
                    const int64_t r1 = ((i + 1) * H + out_h - 1) / out_h;
                    const int64_t c0 = (j * W) / out_w;
                    const int64_t c1 = ((j + 1) * W + out_w - 1) / out_w;
                    if (mode == PoolMode::Max) {
                        T best = x.at(n, c, r0, c0);
                        for (int64_t r = r0; r < r1; ++r)
                            for (int64_t q = c0; q < c1; ++q)
                                if (x.at(n, c, r, q) > best) best = x.at(n, c, r, q);
                        out.at(n, c, i, j) = best;
                    } else {
                        T acc = 0;
                        for (int64_t r = r0; r < r1; ++r)
                            for (int64_t q = c0; q < c1; ++q) acc += x.at(n, c, r, q);
                        out.at(n, c, i, j) = acc / static_cast<T>((r1 - r0) * (c1 - c0));
                    }
                }
    return out;
}

// Half-pixel-center bilinear interpolation evaluated directly per site.
template <typename T>
Tensor4<T> naive_bilinear(const Tensor4<T>& x, int out_h, int out_w) {
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    Tensor4<T> out = Tensor4<T>::zeros({N, C, out_h, out_w});
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < out_h; ++i)
                for (int64_t j = 0; j < out_w; ++j) {
                    double sy = (static_cast<double>(i) + 0.5) * static_cast<double>(H) /
                                    static_cast<double>(out_h) -
                                0.5;
                    double sx = (static_cast<double>(j) + 0.5) * static_cast<double>(W) /
                                    static_cast<double>(out_w) -
                                0.5;
                    sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
                    sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
                    const int64_t y0 = static_cast<int64_t>(std::floor(sy));
                    const int64_t x0 = static_cast<int64_t>(std::floor(sx));
                    const int64_t y1 = std::min(y0 + 1, H - 1);
                    const int64_t x1 = std::min(x0 + 1, W - 1);
                    const double fy = sy - static_cast<double>(y0);
                    const double fx = sx - static_cast<double>(x0);
                    const double val =
                        (1.0 - fy) * ((1.0 - fx) * static_cast<double>(x.at(n, c, y0, x0)) +
                                      fx * static_cast<double>(x.at(n, c, y0, x1))) +
                        fy * ((1.0 - fx) * static_cast<double>(x.at(n, c, y1, x0)) +
                              fx * static_cast<double>(x.at(n, c, y1, x1)));
                    out.at(n, c, i, j) = static_cast<T>(val);
                }
    return out;
}

// Central finite differences of a scalar function, one element at a time.
// Bounded to small tensors: the cost is two evaluations per element.
template <typename T>
Tensor4<T> finite_diff_grad(const std::function<T(const Tensor4<T>&)>& f, const Tensor4<T>& x,
                            T eps) {
    require(eps > 0, "finite_diff_grad: eps must be positive");
    require(x.numel() <= 4096,
            "finite_diff_grad: tensor has " + std::to_string(x.numel()) +
                " elements, limit is 4096");
    Tensor4<T> grad = Tensor4<T>::zeros(x.shape);
    Tensor4<T> probe = x.clone();
    T* p = probe.data();
    T* g = grad.data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T keep = p[i];
        p[i] = keep + eps;
        const T hi = f(probe);
        p[i] = keep - eps;
        const T lo = f(probe);
        p[i] = keep;
        g[i] = (hi - lo) / (T(2) * eps);
    }
    return grad;
}

inline double rel_err(double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Gradient comparison metric: elements where the reference is tiny are held
// to an absolute 1e-8, everything else to the relative error above.
inline double grad_err(double analytic, double reference) {
    if (std::abs(reference) < 1e-8 && std::abs(analytic) < 1e-8) return 0.0;
    if (std::abs(reference) < 1e-8)
        return std::abs(analytic - reference) <= 1e-8 ? 0.0 : rel_err(analytic, reference);
    return rel_err(analytic, reference);
}

template <typename T>
double max_grad_err(const Tensor4<T>& analytic, const Tensor4<T>& reference) {
    require(analytic.shape == reference.shape, "max_grad_err: shape mismatch");
    double worst = 0.0;
    for (int64_t i = 0; i < analytic.numel(); ++i)
        worst = std::max(worst, grad_err(static_cast<double>(analytic.data()[i]),
                                         static_cast<double>(reference.data()[i])));
    return worst;
}

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.shape == b.shape, "max_abs_diff: shape mismatch");
    double worst = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i)
        worst = std::max(worst, std::abs(static_cast<double>(a.data()[i]) -
                                         static_cast<double>(b.data()[i])));
    return worst;
}

}  // namespace lwplg::oracle
