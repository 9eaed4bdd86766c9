#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "lwplg/tape.hpp"
#include "lwplg/tensor.hpp"

namespace lwplg {

// ---------------------------------------------------------------------------
// MAC instrumentation. Forward conv/matmul kernels add their multiply-
// accumulate counts to the active tally; backward passes never count.
// ---------------------------------------------------------------------------

struct MacTally {
    uint64_t conv = 0;
    uint64_t matmul = 0;

    uint64_t total() const { return conv + matmul; }

    static MacTally*& current() {
        thread_local MacTally* active = nullptr;
        return active;
    }

    class Scope {
    public:
        explicit Scope(MacTally& t) : prev_(current()) { current() = &t; }
        ~Scope() { current() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        MacTally* prev_;
    };
};

inline void tally_conv(uint64_t macs) {
    if (auto* t = MacTally::current()) t->conv += macs;
}
inline void tally_matmul(uint64_t macs) {
    if (auto* t = MacTally::current()) t->matmul += macs;
}

namespace detail {

// Arms the output for recording. Must run before the backward closure is
// built so the closure's by-value copy of the output already shares the
// gradient buffer.
template <typename T>
bool arm(Tensor4<T>& out, bool any_grad) {
    auto* tape = GradTape<T>::current();
    if (!tape || !any_grad) return false;
    out.set_requires_grad(true);
    return true;
}

template <typename T, typename Fn>
void record(Tensor4<T>& out, bool armed, Fn&& fn) {
    if (!armed) return;
    GradTape<T>::current()->record(out, std::forward<Fn>(fn));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> add(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.shape == b.shape,
            "add: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    Tensor4<T> out = Tensor4<T>::zeros(a.shape);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] + pb[i];
    const bool recording = detail::arm(out, a.requires_grad() || b.requires_grad());
    detail::record(out, recording, [a, b, out]() mutable {
        const T* g = out.grad();
        if (a.requires_grad()) {
            T* ga = a.grad();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i];
        }
        if (b.requires_grad()) {
            T* gb = b.grad();
            for (int64_t i = 0; i < b.numel(); ++i) gb[i] += g[i];
        }
    });
    return out;
}

template <typename T>
Tensor4<T> mul(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.shape == b.shape,
            "mul: shape mismatch " + a.shape.str() + " vs " + b.shape.str());
    Tensor4<T> out = Tensor4<T>::zeros(a.shape);
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * pb[i];
    const bool recording = detail::arm(out, a.requires_grad() || b.requires_grad());
    detail::record(out, recording, [a, b, out]() mutable {
        const T* g = out.grad();
        const T* pa = a.data();
        const T* pb = b.data();
        if (a.requires_grad()) {
            T* ga = a.grad();
            for (int64_t i = 0; i < a.numel(); ++i) ga[i] += g[i] * pb[i];
        }
        if (b.requires_grad()) {
            T* gb = b.grad();
            for (int64_t i = 0; i < b.numel(); ++i) gb[i] += g[i] * pa[i];
        }
    });
    return out;
}

template <typename T>
Tensor4<T> scale(const Tensor4<T>& x, T s) {
    Tensor4<T> out = Tensor4<T>::zeros(x.shape);
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] * s;
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, s]() mutable {
        const T* g = out.grad();
        T* gx = x.grad();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i] * s;
    });
    return out;
}

template <typename T>
Tensor4<T> add_scalar(const Tensor4<T>& x, T s) {
    Tensor4<T> out = Tensor4<T>::zeros(x.shape);
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = px[i] + s;
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out]() mutable {
        const T* g = out.grad();
        T* gx = x.grad();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i];
    });
    return out;
}

// x: (n,c,h,w) scaled per sample and channel by s: (n,c,1,1).
template <typename T>
Tensor4<T> mul_bcast_hw(const Tensor4<T>& x, const Tensor4<T>& s) {
    require(s.shape.n == x.shape.n && s.shape.c == x.shape.c && s.shape.h == 1 && s.shape.w == 1,
            "mul_bcast_hw: scale shape " + s.shape.str() + " incompatible with " + x.shape.str());
    Tensor4<T> out = Tensor4<T>::zeros(x.shape);
    const int64_t hw = x.shape.h * x.shape.w;
    const T* px = x.data();
    const T* ps = s.data();
    T* po = out.data();
    for (int64_t nc = 0; nc < x.shape.n * x.shape.c; ++nc) {
        const T sv = ps[nc];
        for (int64_t i = 0; i < hw; ++i) po[nc * hw + i] = px[nc * hw + i] * sv;
    }
    const bool recording = detail::arm(out, x.requires_grad() || s.requires_grad());
    detail::record(out, recording, [x, s, out, hw]() mutable {
        const T* g = out.grad();
        const T* px = x.data();
        const T* ps = s.data();
        if (x.requires_grad()) {
            T* gx = x.grad();
            for (int64_t nc = 0; nc < x.shape.n * x.shape.c; ++nc)
                for (int64_t i = 0; i < hw; ++i) gx[nc * hw + i] += g[nc * hw + i] * ps[nc];
        }
        if (s.requires_grad()) {
            T* gs = s.grad();
            for (int64_t nc = 0; nc < x.shape.n * x.shape.c; ++nc) {
                T acc = 0;
                for (int64_t i = 0; i < hw; ++i) acc += g[nc * hw + i] * px[nc * hw + i];
                gs[nc] += acc;
            }
        }
    });
    return out;
}

// Per-channel affine map y = gamma[c] * x + beta[c]; gamma/beta are (c,1,1,1).
template <typename T>
Tensor4<T> affine_channel(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta) {
    const int64_t C = x.shape.c;
    require(gamma.shape == Shape4{C, 1, 1, 1} && beta.shape == Shape4{C, 1, 1, 1},
            "affine_channel: expected per-channel vectors of length " + std::to_string(C));
    Tensor4<T> out = Tensor4<T>::zeros(x.shape);
    const int64_t hw = x.shape.h * x.shape.w;
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    T* po = out.data();
    for (int64_t n = 0; n < x.shape.n; ++n)
        for (int64_t c = 0; c < C; ++c) {
            const int64_t base = (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) po[base + i] = pg[c] * px[base + i] + pb[c];
        }
    const bool recording = detail::arm(out, x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    detail::record(out, recording,
                   [x, gamma, beta, out, hw, C]() mutable {
                       const T* g = out.grad();
                       const T* px = x.data();
                       const T* pg = gamma.data();
                       for (int64_t n = 0; n < x.shape.n; ++n)
                           for (int64_t c = 0; c < C; ++c) {
                               const int64_t base = (n * C + c) * hw;
                               if (x.requires_grad()) {
                                   T* gx = x.grad();
                                   for (int64_t i = 0; i < hw; ++i) gx[base + i] += g[base + i] * pg[c];
                               }
                               if (gamma.requires_grad()) {
                                   T acc = 0;
                                   for (int64_t i = 0; i < hw; ++i) acc += g[base + i] * px[base + i];
                                   gamma.grad()[c] += acc;
                               }
                               if (beta.requires_grad()) {
                                   T acc = 0;
                                   for (int64_t i = 0; i < hw; ++i) acc += g[base + i];
                                   beta.grad()[c] += acc;
                               }
                           }
                   });
    return out;
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

enum class Act { Identity, SiLU, GeLU, Sigmoid };

namespace detail {

template <typename T>
T sigmoid_val(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

// Exact Gaussian-CDF GeLU.
template <typename T>
T gelu_val(T v) {
    return T(0.5) * v * (T(1) + std::erf(v * T(0.70710678118654752440)));
}

template <typename T>
T act_val(T v, Act kind) {
    switch (kind) {
        case Act::Identity: return v;
        case Act::SiLU: return v * sigmoid_val(v);
        case Act::GeLU: return gelu_val(v);
        case Act::Sigmoid: return sigmoid_val(v);
    }
    return v;
}

template <typename T>
T act_deriv(T v, Act kind) {
    switch (kind) {
        case Act::Identity: return T(1);
        case Act::SiLU: {
            T s = sigmoid_val(v);
            return s * (T(1) + v * (T(1) - s));
        }
        case Act::GeLU: {
            T cdf = T(0.5) * (T(1) + std::erf(v * T(0.70710678118654752440)));
            T pdf = std::exp(-T(0.5) * v * v) * T(0.39894228040143267794);
            return cdf + v * pdf;
        }
        case Act::Sigmoid: {
            T s = sigmoid_val(v);
            return s * (T(1) - s);
        }
    }
    return T(1);
}

}  // namespace detail

template <typename T>
Tensor4<T> act(const Tensor4<T>& x, Act kind) {
    Tensor4<T> out = Tensor4<T>::zeros(x.shape);
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = detail::act_val(px[i], kind);
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, kind]() mutable {
        const T* g = out.grad();
        const T* px = x.data();
        T* gx = x.grad();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g[i] * detail::act_deriv(px[i], kind);
    });
    return out;
}

template <typename T>
Tensor4<T> sqrt_elem(const Tensor4<T>& x) {
    Tensor4<T> out = Tensor4<T>::zeros(x.shape);
    const T* px = x.data();
    T* po = out.data();
    for (int64_t i = 0; i < x.numel(); ++i) po[i] = std::sqrt(px[i]);
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out]() mutable {
        const T* g = out.grad();
        const T* py = out.data();
        T* gx = x.grad();
        for (int64_t i = 0; i < x.numel(); ++i) {
            T denom = std::max(T(2) * py[i], T(1e-20));
            gx[i] += g[i] / denom;
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Softmax over one axis, overflow-safe via max subtraction. The remaining
// axes enumerate the rows.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> softmax(const Tensor4<T>& x, int axis) {
    require(axis >= 0 && axis <= 3, "softmax: axis out of range");
    const int64_t cols = x.shape.dim(axis);
    require(cols >= 1, "softmax: axis " + std::to_string(axis) + " has zero extent");
    Tensor4<T> out = Tensor4<T>::zeros(x.shape);

    std::array<int64_t, 4> dims{x.shape.n, x.shape.c, x.shape.h, x.shape.w};
    std::array<int64_t, 4> strides{x.shape.c * x.shape.h * x.shape.w, x.shape.h * x.shape.w,
                                   x.shape.w, 1};
    const int64_t col_stride = strides[static_cast<size_t>(axis)];

    std::vector<int64_t> row_starts;
    std::array<int64_t, 4> it{0, 0, 0, 0};
    // enumerate all index tuples with the softmax axis pinned to zero
    for (it[0] = 0; it[0] < (axis == 0 ? 1 : dims[0]); ++it[0])
        for (it[1] = 0; it[1] < (axis == 1 ? 1 : dims[1]); ++it[1])
            for (it[2] = 0; it[2] < (axis == 2 ? 1 : dims[2]); ++it[2])
                for (it[3] = 0; it[3] < (axis == 3 ? 1 : dims[3]); ++it[3])
                    row_starts.push_back(it[0] * strides[0] + it[1] * strides[1] +
                                         it[2] * strides[2] + it[3] * strides[3]);

    const T* px = x.data();
    T* po = out.data();
    for (int64_t start : row_starts) {
        T mx = px[start];
        for (int64_t j = 1; j < cols; ++j) mx = std::max(mx, px[start + j * col_stride]);
        T sum = 0;
        for (int64_t j = 0; j < cols; ++j) {
            T e = std::exp(px[start + j * col_stride] - mx);
            po[start + j * col_stride] = e;
            sum += e;
        }
        for (int64_t j = 0; j < cols; ++j) po[start + j * col_stride] /= sum;
    }

    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording,
                   [x, out, row_starts, cols, col_stride]() mutable {
                       const T* g = out.grad();
                       const T* py = out.data();
                       T* gx = x.grad();
                       for (int64_t start : row_starts) {
                           T dot = 0;
                           for (int64_t j = 0; j < cols; ++j)
                               dot += g[start + j * col_stride] * py[start + j * col_stride];
                           for (int64_t j = 0; j < cols; ++j) {
                               const int64_t k = start + j * col_stride;
                               gx[k] += py[k] * (g[k] - dot);
                           }
                       }
                   });
    return out;
}

// ---------------------------------------------------------------------------
// Convolution. Weight layout (c_out, c_in/groups, k, k); bias is optional
// with canonical vector shape (c_out,1,1,1).
// ---------------------------------------------------------------------------

inline int64_t conv_out_size(int64_t in, int64_t k, int64_t stride, int64_t pad) {
    return (in + 2 * pad - k) / stride + 1;
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight,
                  const std::optional<Tensor4<T>>& bias, int stride, int pad, int groups) {
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    const int64_t Cout = weight.shape.n, Cing = weight.shape.c, K = weight.shape.h;
    require(weight.shape.h == weight.shape.w, "conv2d: kernel must be square, got " + weight.shape.str());
    require(groups >= 1 && C % groups == 0,
            "conv2d: input channels " + std::to_string(C) + " not divisible by groups " +
                std::to_string(groups));
    require(Cout % groups == 0, "conv2d: output channels " + std::to_string(Cout) +
                                    " not divisible by groups " + std::to_string(groups));
    require(Cing == C / groups, "conv2d: weight expects " + std::to_string(Cing) +
                                    " channels per group but input provides " +
                                    std::to_string(C / groups));
    require(K <= H + 2 * pad && K <= W + 2 * pad,
            "conv2d: kernel " + std::to_string(K) + " exceeds padded input " +
                std::to_string(H + 2 * pad) + "x" + std::to_string(W + 2 * pad));
    if (bias)
        require(bias->shape == Shape4{Cout, 1, 1, 1},
                "conv2d: bias shape " + bias->shape.str() + " does not match c_out " +
                    std::to_string(Cout));

    const int64_t OH = conv_out_size(H, K, stride, pad);
    const int64_t OW = conv_out_size(W, K, stride, pad);
    require(OH >= 1 && OW >= 1, "conv2d: empty output for input " + x.shape.str());
    Tensor4<T> out = Tensor4<T>::zeros({N, Cout, OH, OW});

    const int64_t cout_per_group = Cout / groups;
    const T* px = x.data();
    const T* pw = weight.data();
    const T* pb = bias ? bias->data() : nullptr;
    T* po = out.data();

    if (K == 1 && pad == 0) {
        // pointwise path; per-element accumulation order matches the general
        // loop (bias first, then ascending ci), so results are bit-identical
        for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Cout; ++co) {
                const int64_t g = co / cout_per_group;
                const T bval = pb ? pb[co] : T(0);
                T* obase = po + (n * Cout + co) * OH * OW;
                for (int64_t i = 0; i < OH * OW; ++i) obase[i] = bval;
                for (int64_t ci = 0; ci < Cing; ++ci) {
                    const T wv = pw[co * Cing + ci];
                    const T* xc = px + (n * C + g * Cing + ci) * H * W;
                    if (stride == 1) {
                        for (int64_t i = 0; i < OH * OW; ++i) obase[i] += wv * xc[i];
                    } else {
                        for (int64_t oh = 0; oh < OH; ++oh) {
                            const T* xrow = xc + oh * stride * W;
                            T* orow = obase + oh * OW;
                            for (int64_t ow = 0; ow < OW; ++ow) orow[ow] += wv * xrow[ow * stride];
                        }
                    }
                }
            }
    } else {
        for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Cout; ++co) {
                const int64_t g = co / cout_per_group;
                const T* wbase = pw + co * Cing * K * K;
                const T bval = pb ? pb[co] : T(0);
                T* obase = po + (n * Cout + co) * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh)
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const int64_t ih0 = oh * stride - pad;
                        const int64_t iw0 = ow * stride - pad;
                        T acc = bval;
                        for (int64_t ci = 0; ci < Cing; ++ci) {
                            const T* xc = px + (n * C + g * Cing + ci) * H * W;
                            const T* wc = wbase + ci * K * K;
                            for (int64_t kh = 0; kh < K; ++kh) {
                                const int64_t ih = ih0 + kh;
                                if (ih < 0 || ih >= H) continue;
                                const T* xrow = xc + ih * W;
                                const T* wrow = wc + kh * K;
                                for (int64_t kw = 0; kw < K; ++kw) {
                                    const int64_t iw = iw0 + kw;
                                    if (iw < 0 || iw >= W) continue;
                                    acc += xrow[iw] * wrow[kw];
                                }
                            }
                        }
                        obase[oh * OW + ow] = acc;
                    }
            }
    }

    tally_conv(static_cast<uint64_t>(N * OH * OW) * static_cast<uint64_t>(K * K * Cing * Cout));

    const bool any = x.requires_grad() || weight.requires_grad() ||
                     (bias && bias->requires_grad());
    const bool recording = detail::arm(out, any);
    detail::record(out, recording, [x, weight, bias, out, stride, pad, groups]() mutable {
        const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        const int64_t Cout = weight.shape.n, Cing = weight.shape.c, K = weight.shape.h;
        const int64_t OH = out.shape.h, OW = out.shape.w;
        const int64_t cout_per_group = Cout / groups;
        const T* g = out.grad();
        const T* px = x.data();
        const T* pw = weight.data();
        T* gx = x.requires_grad() ? x.grad() : nullptr;
        T* gw = weight.requires_grad() ? weight.grad() : nullptr;
        T* gb = (bias && bias->requires_grad()) ? bias->grad() : nullptr;
        if (K == 1 && pad == 0) {
            for (int64_t n = 0; n < N; ++n)
                for (int64_t co = 0; co < Cout; ++co) {
                    const int64_t grp = co / cout_per_group;
                    const T* gout = g + (n * Cout + co) * OH * OW;
                    if (gb) {
                        T acc = 0;
                        for (int64_t i = 0; i < OH * OW; ++i) acc += gout[i];
                        gb[co] += acc;
                    }
                    for (int64_t ci = 0; ci < Cing; ++ci) {
                        const int64_t xoff = (n * C + grp * Cing + ci) * H * W;
                        const T wv = pw[co * Cing + ci];
                        T wacc = 0;
                        for (int64_t oh = 0; oh < OH; ++oh)
                            for (int64_t ow = 0; ow < OW; ++ow) {
                                const T gv = gout[oh * OW + ow];
                                const int64_t xi = xoff + oh * stride * W + ow * stride;
                                if (gx) gx[xi] += gv * wv;
                                wacc += gv * px[xi];
                            }
                        if (gw) gw[co * Cing + ci] += wacc;
                    }
                }
            return;
        }
        for (int64_t n = 0; n < N; ++n)
            for (int64_t co = 0; co < Cout; ++co) {
                const int64_t grp = co / cout_per_group;
                const T* wbase = pw + co * Cing * K * K;
                T* gwbase = gw ? gw + co * Cing * K * K : nullptr;
                const T* gout = g + (n * Cout + co) * OH * OW;
                for (int64_t oh = 0; oh < OH; ++oh)
                    for (int64_t ow = 0; ow < OW; ++ow) {
                        const T gv = gout[oh * OW + ow];
                        if (gv == T(0)) continue;
                        if (gb) gb[co] += gv;
                        const int64_t ih0 = oh * stride - pad;
                        const int64_t iw0 = ow * stride - pad;
                        for (int64_t ci = 0; ci < Cing; ++ci) {
                            const int64_t xoff = (n * C + grp * Cing + ci) * H * W;
                            for (int64_t kh = 0; kh < K; ++kh) {
                                const int64_t ih = ih0 + kh;
                                if (ih < 0 || ih >= H) continue;
                                for (int64_t kw = 0; kw < K; ++kw) {
                                    const int64_t iw = iw0 + kw;
                                    if (iw < 0 || iw >= W) continue;
                                    const int64_t xi = xoff + ih * W + iw;
                                    const int64_t wi = (ci * K + kh) * K + kw;
                                    if (gx) gx[xi] += gv * wbase[wi];
                                    if (gwbase) gwbase[wi] += gv * px[xi];
                                }
                            }
                        }
                    }
            }
    });
    return out;
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const Tensor4<T>& weight, int stride, int pad, int groups) {
    return conv2d(x, weight, std::optional<Tensor4<T>>{}, stride, pad, groups);
}

// ---------------------------------------------------------------------------
// Layer normalization over the channel axis at each spatial site.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> layer_norm(const Tensor4<T>& x, const Tensor4<T>& gamma, const Tensor4<T>& beta,
                      double eps) {
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    require(C >= 1, "layer_norm: zero channels");
    require(eps > 0, "layer_norm: eps must be positive");
    require(gamma.shape == Shape4{C, 1, 1, 1} && beta.shape == Shape4{C, 1, 1, 1},
            "layer_norm: gamma/beta must be per-channel vectors of length " + std::to_string(C));

    Tensor4<T> out = Tensor4<T>::zeros(x.shape);
    const int64_t HW = H * W;
    const T* px = x.data();
    const T* pg = gamma.data();
    const T* pb = beta.data();
    T* po = out.data();

    for (int64_t n = 0; n < N; ++n)
        for (int64_t s = 0; s < HW; ++s) {
            const int64_t base = n * C * HW + s;
            T mean = 0;
            for (int64_t c = 0; c < C; ++c) mean += px[base + c * HW];
            mean /= static_cast<T>(C);
            T var = 0;
            for (int64_t c = 0; c < C; ++c) {
                T d = px[base + c * HW] - mean;
                var += d * d;
            }
            var /= static_cast<T>(C);
            const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
            for (int64_t c = 0; c < C; ++c) {
                T xhat = (px[base + c * HW] - mean) * inv;
                po[base + c * HW] = pg[c] * xhat + pb[c];
            }
        }

    const bool any = x.requires_grad() || gamma.requires_grad() || beta.requires_grad();
    const bool recording = detail::arm(out, any);
    detail::record(out, recording, [x, gamma, beta, out, eps]() mutable {
        const int64_t N = x.shape.n, C = x.shape.c, HW = x.shape.h * x.shape.w;
        const T* g = out.grad();
        const T* px = x.data();
        const T* pg = gamma.data();
        T* gx = x.requires_grad() ? x.grad() : nullptr;
        T* gg = gamma.requires_grad() ? gamma.grad() : nullptr;
        T* gbta = beta.requires_grad() ? beta.grad() : nullptr;
        std::vector<T> xhat(static_cast<size_t>(C));
        for (int64_t n = 0; n < N; ++n)
            for (int64_t s = 0; s < HW; ++s) {
                const int64_t base = n * C * HW + s;
                T mean = 0;
                for (int64_t c = 0; c < C; ++c) mean += px[base + c * HW];
                mean /= static_cast<T>(C);
                T var = 0;
                for (int64_t c = 0; c < C; ++c) {
                    T d = px[base + c * HW] - mean;
                    var += d * d;
                }
                var /= static_cast<T>(C);
                const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
                T s1 = 0, s2 = 0;
                for (int64_t c = 0; c < C; ++c) {
                    xhat[static_cast<size_t>(c)] = (px[base + c * HW] - mean) * inv;
                    const T gy = g[base + c * HW];
                    s1 += pg[c] * gy;
                    s2 += pg[c] * gy * xhat[static_cast<size_t>(c)];
                }
                for (int64_t c = 0; c < C; ++c) {
                    const T gy = g[base + c * HW];
                    if (gx)
                        gx[base + c * HW] += inv * (pg[c] * gy - s1 / static_cast<T>(C) -
                                                    xhat[static_cast<size_t>(c)] * s2 /
                                                        static_cast<T>(C));
                    if (gg) gg[c] += gy * xhat[static_cast<size_t>(c)];
                    if (gbta) gbta[c] += gy;
                }
            }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Adaptive pooling. Bin (i,j) covers input rows [floor(i*h/oh), ceil((i+1)*h/oh))
// and the analogous columns; when the input is smaller than the output the
// same formula yields overlapping one-element bins.
// ---------------------------------------------------------------------------

inline std::pair<int64_t, int64_t> pool_bin(int64_t i, int64_t in, int64_t out) {
    int64_t lo = (i * in) / out;
    int64_t hi = ((i + 1) * in + out - 1) / out;
    return {lo, hi};
}

template <typename T>
Tensor4<T> adaptive_max_pool2d(const Tensor4<T>& x, int out_h, int out_w) {
    require(out_h >= 1 && out_w >= 1, "adaptive_max_pool2d: output size must be positive");
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    Tensor4<T> out = Tensor4<T>::zeros({N, C, out_h, out_w});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* xc = px + nc * H * W;
        T* oc = po + nc * out_h * out_w;
        for (int64_t i = 0; i < out_h; ++i) {
            auto [r0, r1] = pool_bin(i, H, out_h);
            for (int64_t j = 0; j < out_w; ++j) {
                auto [c0, c1] = pool_bin(j, W, out_w);
                T best = xc[r0 * W + c0];
                for (int64_t r = r0; r < r1; ++r)
                    for (int64_t c = c0; c < c1; ++c) best = std::max(best, xc[r * W + c]);
                oc[i * out_w + j] = best;
            }
        }
    }
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, out_h, out_w]() mutable {
        const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        const T* g = out.grad();
        const T* px = x.data();
        T* gx = x.grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            const T* xc = px + nc * H * W;
            T* gc = gx + nc * H * W;
            const T* go = g + nc * out_h * out_w;
            for (int64_t i = 0; i < out_h; ++i) {
                auto [r0, r1] = pool_bin(i, H, out_h);
                for (int64_t j = 0; j < out_w; ++j) {
                    auto [c0, c1] = pool_bin(j, W, out_w);
                    // gradient goes to the first maximal element in scan order
                    int64_t bi = r0 * W + c0;
                    T best = xc[bi];
                    for (int64_t r = r0; r < r1; ++r)
                        for (int64_t c = c0; c < c1; ++c)
                            if (xc[r * W + c] > best) {
                                best = xc[r * W + c];
                                bi = r * W + c;
                            }
                    gc[bi] += go[i * out_w + j];
                }
            }
        }
    });
    return out;
}

template <typename T>
Tensor4<T> adaptive_avg_pool2d(const Tensor4<T>& x, int out_h, int out_w) {
    require(out_h >= 1 && out_w >= 1, "adaptive_avg_pool2d: output size must be positive");
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    Tensor4<T> out = Tensor4<T>::zeros({N, C, out_h, out_w});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* xc = px + nc * H * W;
        T* oc = po + nc * out_h * out_w;
        for (int64_t i = 0; i < out_h; ++i) {
            auto [r0, r1] = pool_bin(i, H, out_h);
            for (int64_t j = 0; j < out_w; ++j) {
                auto [c0, c1] = pool_bin(j, W, out_w);
                T acc = 0;
                for (int64_t r = r0; r < r1; ++r)
                    for (int64_t c = c0; c < c1; ++c) acc += xc[r * W + c];
                oc[i * out_w + j] = acc / static_cast<T>((r1 - r0) * (c1 - c0));
            }
        }
    }
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, out_h, out_w]() mutable {
        const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        const T* g = out.grad();
        T* gx = x.grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            T* gc = gx + nc * H * W;
            const T* go = g + nc * out_h * out_w;
            for (int64_t i = 0; i < out_h; ++i) {
                auto [r0, r1] = pool_bin(i, H, out_h);
                for (int64_t j = 0; j < out_w; ++j) {
                    auto [c0, c1] = pool_bin(j, W, out_w);
                    const T share = go[i * out_w + j] / static_cast<T>((r1 - r0) * (c1 - c0));
                    for (int64_t r = r0; r < r1; ++r)
                        for (int64_t c = c0; c < c1; ++c) gc[r * W + c] += share;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Bilinear resize with half-pixel source centers (align_corners = false).
// ---------------------------------------------------------------------------

namespace detail {

struct BilinearTap {
    int64_t lo;
    int64_t hi;
    double frac;
};

inline BilinearTap bilinear_tap(int64_t dst, int64_t in, int64_t out) {
    double src = (static_cast<double>(dst) + 0.5) * static_cast<double>(in) /
                     static_cast<double>(out) -
                 0.5;
    src = std::min(std::max(src, 0.0), static_cast<double>(in - 1));
    int64_t lo = static_cast<int64_t>(std::floor(src));
    int64_t hi = std::min(lo + 1, in - 1);
    return {lo, hi, src - static_cast<double>(lo)};
}

}  // namespace detail

template <typename T>
Tensor4<T> bilinear_resize(const Tensor4<T>& x, int out_h, int out_w) {
    require(out_h >= 1 && out_w >= 1, "bilinear_resize: output size must be positive");
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    Tensor4<T> out = Tensor4<T>::zeros({N, C, out_h, out_w});
    const T* px = x.data();
    T* po = out.data();
    std::vector<detail::BilinearTap> rtap(static_cast<size_t>(out_h)), ctap(static_cast<size_t>(out_w));
    for (int64_t i = 0; i < out_h; ++i) rtap[static_cast<size_t>(i)] = detail::bilinear_tap(i, H, out_h);
    for (int64_t j = 0; j < out_w; ++j) ctap[static_cast<size_t>(j)] = detail::bilinear_tap(j, W, out_w);
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* xc = px + nc * H * W;
        T* oc = po + nc * out_h * out_w;
        for (int64_t i = 0; i < out_h; ++i) {
            const auto& rt = rtap[static_cast<size_t>(i)];
            for (int64_t j = 0; j < out_w; ++j) {
                const auto& ct = ctap[static_cast<size_t>(j)];
                const T fy = static_cast<T>(rt.frac), fx = static_cast<T>(ct.frac);
                oc[i * out_w + j] = (T(1) - fy) * ((T(1) - fx) * xc[rt.lo * W + ct.lo] +
                                                   fx * xc[rt.lo * W + ct.hi]) +
                                    fy * ((T(1) - fx) * xc[rt.hi * W + ct.lo] +
                                          fx * xc[rt.hi * W + ct.hi]);
            }
        }
    }
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, out_h, out_w, rtap, ctap]() mutable {
        const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        const T* g = out.grad();
        T* gx = x.grad();
        for (int64_t nc = 0; nc < N * C; ++nc) {
            T* gc = gx + nc * H * W;
            const T* go = g + nc * out_h * out_w;
            for (int64_t i = 0; i < out_h; ++i) {
                const auto& rt = rtap[static_cast<size_t>(i)];
                for (int64_t j = 0; j < out_w; ++j) {
                    const auto& ct = ctap[static_cast<size_t>(j)];
                    const T fy = static_cast<T>(rt.frac), fx = static_cast<T>(ct.frac);
                    const T gv = go[i * out_w + j];
                    gc[rt.lo * W + ct.lo] += gv * (T(1) - fy) * (T(1) - fx);
                    gc[rt.lo * W + ct.hi] += gv * (T(1) - fy) * fx;
                    gc[rt.hi * W + ct.lo] += gv * fy * (T(1) - fx);
                    gc[rt.hi * W + ct.hi] += gv * fy * fx;
                }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Batched matrix products on token tensors laid out (batch, rows, cols, 1).
// matmul_nt contracts the trailing axis of both operands (A * B^T), which is
// the attention-score pattern; matmul_nn is the plain product.
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> matmul_nt(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.shape.w == 1 && b.shape.w == 1, "matmul_nt: operands must be (batch,rows,cols,1)");
    require(a.shape.n == b.shape.n, "matmul_nt: batch mismatch " + a.shape.str() + " vs " + b.shape.str());
    require(a.shape.h == b.shape.h,
            "matmul_nt: inner dim mismatch " + a.shape.str() + " vs " + b.shape.str());
    const int64_t B = a.shape.n, M = a.shape.c, K = a.shape.h, N = b.shape.c;
    Tensor4<T> out = Tensor4<T>::zeros({B, M, N, 1});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t bb = 0; bb < B; ++bb) {
        const T* ab = pa + bb * M * K;
        const T* bbp = pb + bb * N * K;
        T* ob = po + bb * M * N;
        for (int64_t i = 0; i < M; ++i)
            for (int64_t j = 0; j < N; ++j) {
                T acc = 0;
                const T* ar = ab + i * K;
                const T* br = bbp + j * K;
                for (int64_t k = 0; k < K; ++k) acc += ar[k] * br[k];
                ob[i * N + j] = acc;
            }
    }
    tally_matmul(static_cast<uint64_t>(B) * static_cast<uint64_t>(M * N * K));
    const bool recording = detail::arm(out, a.requires_grad() || b.requires_grad());
    detail::record(out, recording, [a, b, out]() mutable {
        const int64_t B = a.shape.n, M = a.shape.c, K = a.shape.h, N = b.shape.c;
        const T* g = out.grad();
        const T* pa = a.data();
        const T* pb = b.data();
        for (int64_t bb = 0; bb < B; ++bb) {
            const T* gb = g + bb * M * N;
            if (a.requires_grad()) {
                T* ga = a.grad() + bb * M * K;
                const T* bbp = pb + bb * N * K;
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t j = 0; j < N; ++j) {
                        const T gv = gb[i * N + j];
                        for (int64_t k = 0; k < K; ++k) ga[i * K + k] += gv * bbp[j * K + k];
                    }
            }
            if (b.requires_grad()) {
                T* gbm = b.grad() + bb * N * K;
                const T* ab = pa + bb * M * K;
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t j = 0; j < N; ++j) {
                        const T gv = gb[i * N + j];
                        for (int64_t k = 0; k < K; ++k) gbm[j * K + k] += gv * ab[i * K + k];
                    }
            }
        }
    });
    return out;
}

template <typename T>
Tensor4<T> matmul_nn(const Tensor4<T>& a, const Tensor4<T>& b) {
    require(a.shape.w == 1 && b.shape.w == 1, "matmul_nn: operands must be (batch,rows,cols,1)");
    require(a.shape.n == b.shape.n, "matmul_nn: batch mismatch " + a.shape.str() + " vs " + b.shape.str());
    require(a.shape.h == b.shape.c,
            "matmul_nn: inner dim mismatch " + a.shape.str() + " vs " + b.shape.str());
    const int64_t B = a.shape.n, M = a.shape.c, K = a.shape.h, N = b.shape.h;
    Tensor4<T> out = Tensor4<T>::zeros({B, M, N, 1});
    const T* pa = a.data();
    const T* pb = b.data();
    T* po = out.data();
    for (int64_t bb = 0; bb < B; ++bb) {
        const T* ab = pa + bb * M * K;
        const T* bbp = pb + bb * K * N;
        T* ob = po + bb * M * N;
        for (int64_t i = 0; i < M; ++i) {
            T* orow = ob + i * N;
            for (int64_t k = 0; k < K; ++k) {
                const T av = ab[i * K + k];
                const T* brow = bbp + k * N;
                for (int64_t j = 0; j < N; ++j) orow[j] += av * brow[j];
            }
        }
    }
    tally_matmul(static_cast<uint64_t>(B) * static_cast<uint64_t>(M * N * K));
    const bool recording = detail::arm(out, a.requires_grad() || b.requires_grad());
    detail::record(out, recording, [a, b, out]() mutable {
        const int64_t B = a.shape.n, M = a.shape.c, K = a.shape.h, N = b.shape.h;
        const T* g = out.grad();
        const T* pa = a.data();
        const T* pb = b.data();
        for (int64_t bb = 0; bb < B; ++bb) {
            const T* gb = g + bb * M * N;
            if (a.requires_grad()) {
                T* ga = a.grad() + bb * M * K;
                const T* bbp = pb + bb * K * N;
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t k = 0; k < K; ++k) {
                        T acc = 0;
                        for (int64_t j = 0; j < N; ++j) acc += gb[i * N + j] * bbp[k * N + j];
                        ga[i * K + k] += acc;
                    }
            }
            if (b.requires_grad()) {
                T* gbm = b.grad() + bb * K * N;
                const T* ab = pa + bb * M * K;
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t k = 0; k < K; ++k) {
                        const T av = ab[i * K + k];
                        for (int64_t j = 0; j < N; ++j) gbm[k * N + j] += av * gb[i * N + j];
                    }
            }
        }
    });
    return out;
}

// ---------------------------------------------------------------------------
// Slicing, concatenation and spatial routing
// ---------------------------------------------------------------------------

namespace detail {

// Copies a contiguous-along-axis region between tensors that agree on every
// other dimension. Used by narrow/cat forward and backward routing.
template <typename T, bool Accumulate>
void copy_axis_region(const T* src, const Shape4& ss, int64_t s_start, T* dst, const Shape4& ds,
                      int64_t d_start, int axis, int64_t len) {
    std::array<int64_t, 4> sd{ss.n, ss.c, ss.h, ss.w};
    std::array<int64_t, 4> dd{ds.n, ds.c, ds.h, ds.w};
    std::array<int64_t, 4> sstr{ss.c * ss.h * ss.w, ss.h * ss.w, ss.w, 1};
    std::array<int64_t, 4> dstr{ds.c * ds.h * ds.w, ds.h * ds.w, ds.w, 1};
    std::array<int64_t, 4> iter = sd;
    iter[static_cast<size_t>(axis)] = len;
    for (int64_t i0 = 0; i0 < iter[0]; ++i0)
        for (int64_t i1 = 0; i1 < iter[1]; ++i1)
            for (int64_t i2 = 0; i2 < iter[2]; ++i2)
                for (int64_t i3 = 0; i3 < iter[3]; ++i3) {
                    std::array<int64_t, 4> si{i0, i1, i2, i3};
                    std::array<int64_t, 4> di{i0, i1, i2, i3};
                    si[static_cast<size_t>(axis)] += s_start;
                    di[static_cast<size_t>(axis)] += d_start;
                    const int64_t sidx =
                        si[0] * sstr[0] + si[1] * sstr[1] + si[2] * sstr[2] + si[3] * sstr[3];
                    const int64_t didx =
                        di[0] * dstr[0] + di[1] * dstr[1] + di[2] * dstr[2] + di[3] * dstr[3];
                    if constexpr (Accumulate)
                        dst[didx] += src[sidx];
                    else
                        dst[didx] = src[sidx];
                }
}

}  // namespace detail

template <typename T>
Tensor4<T> narrow(const Tensor4<T>& x, int axis, int64_t start, int64_t len) {
    require(axis >= 0 && axis <= 3, "narrow: axis out of range");
    const int64_t extent = x.shape.dim(axis);
    require(start >= 0 && len >= 0 && start + len <= extent,
            "narrow: range [" + std::to_string(start) + "," + std::to_string(start + len) +
                ") exceeds axis extent " + std::to_string(extent));
    Shape4 os = x.shape;
    os.set_dim(axis, len);
    Tensor4<T> out = Tensor4<T>::zeros(os);
    if (len > 0)
        detail::copy_axis_region<T, false>(x.data(), x.shape, start, out.data(), os, 0, axis, len);
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, axis, start, len]() mutable {
        if (len > 0)
            detail::copy_axis_region<T, true>(out.grad(), out.shape, 0, x.grad(), x.shape, start,
                                              axis, len);
    });
    return out;
}

template <typename T>
Tensor4<T> cat(int axis, const std::vector<Tensor4<T>>& parts) {
    require(!parts.empty(), "cat: no operands");
    require(axis >= 0 && axis <= 3, "cat: axis out of range");
    Shape4 os = parts[0].shape;
    int64_t total = 0;
    for (const auto& p : parts) {
        Shape4 ref = p.shape;
        ref.set_dim(axis, os.dim(axis));
        require(ref == os, "cat: operand shape " + p.shape.str() +
                               " incompatible along axis " + std::to_string(axis));
        total += p.shape.dim(axis);
    }
    os.set_dim(axis, total);
    Tensor4<T> out = Tensor4<T>::zeros(os);
    int64_t offset = 0;
    bool any = false;
    for (const auto& p : parts) {
        const int64_t len = p.shape.dim(axis);
        if (len > 0)
            detail::copy_axis_region<T, false>(p.data(), p.shape, 0, out.data(), os, offset, axis,
                                               len);
        offset += len;
        any = any || p.requires_grad();
    }
    const bool recording = detail::arm(out, any);
    detail::record(out, recording, [parts, out, axis]() mutable {
        int64_t offset = 0;
        for (auto& p : parts) {
            const int64_t len = p.shape.dim(axis);
            if (p.requires_grad() && len > 0)
                detail::copy_axis_region<T, true>(out.grad(), out.shape, offset, p.grad(), p.shape,
                                                  0, axis, len);
            offset += len;
        }
    });
    return out;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> split_channels(const Tensor4<T>& x, int64_t c_a) {
    require(c_a >= 0 && c_a <= x.shape.c,
            "split_channels: split point " + std::to_string(c_a) + " outside 0.." +
                std::to_string(x.shape.c));
    return {narrow(x, 1, 0, c_a), narrow(x, 1, c_a, x.shape.c - c_a)};
}

template <typename T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
    return cat(1, std::vector<Tensor4<T>>{a, b});
}

// Non-overlapping win x win tiles flattened to token rows. Output layout is
// (n * windows, win * win, c, 1) with windows enumerated row-major over the
// grid and tokens row-major inside each tile.
template <typename T>
Tensor4<T> window_partition(const Tensor4<T>& x, int win) {
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    require(win >= 1, "window_partition: window must be positive");
    require(H % win == 0 && W % win == 0,
            "window_partition: spatial dims " + std::to_string(H) + "x" + std::to_string(W) +
                " not divisible by window " + std::to_string(win));
    const int64_t gh = H / win, gw = W / win;
    const int64_t tokens = static_cast<int64_t>(win) * win;
    Tensor4<T> out = Tensor4<T>::zeros({N * gh * gw, tokens, C, 1});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t wy = 0; wy < gh; ++wy)
            for (int64_t wx = 0; wx < gw; ++wx) {
                const int64_t b = (n * gh + wy) * gw + wx;
                for (int64_t ty = 0; ty < win; ++ty)
                    for (int64_t tx = 0; tx < win; ++tx) {
                        const int64_t t = ty * win + tx;
                        const int64_t ih = wy * win + ty, iw = wx * win + tx;
                        for (int64_t c = 0; c < C; ++c)
                            po[(b * tokens + t) * C + c] = px[((n * C + c) * H + ih) * W + iw];
                    }
            }
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, win]() mutable {
        const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        const int64_t gh = H / win, gw = W / win, tokens = static_cast<int64_t>(win) * win;
        const T* g = out.grad();
        T* gx = x.grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t wy = 0; wy < gh; ++wy)
                for (int64_t wx = 0; wx < gw; ++wx) {
                    const int64_t b = (n * gh + wy) * gw + wx;
                    for (int64_t ty = 0; ty < win; ++ty)
                        for (int64_t tx = 0; tx < win; ++tx) {
                            const int64_t t = ty * win + tx;
                            const int64_t ih = wy * win + ty, iw = wx * win + tx;
                            for (int64_t c = 0; c < C; ++c)
                                gx[((n * C + c) * H + ih) * W + iw] += g[(b * tokens + t) * C + c];
                        }
                }
    });
    return out;
}

template <typename T>
Tensor4<T> window_reverse(const Tensor4<T>& tokens, int win, int64_t h, int64_t w) {
    require(win >= 1 && h % win == 0 && w % win == 0,
            "window_reverse: target " + std::to_string(h) + "x" + std::to_string(w) +
                " not divisible by window " + std::to_string(win));
    const int64_t gh = h / win, gw = w / win;
    const int64_t per_image = gh * gw;
    require(tokens.shape.n % per_image == 0,
            "window_reverse: batch " + std::to_string(tokens.shape.n) +
                " is not a multiple of the window count " + std::to_string(per_image));
    require(tokens.shape.c == static_cast<int64_t>(win) * win && tokens.shape.w == 1,
            "window_reverse: token tensor shape " + tokens.shape.str() +
                " does not match window " + std::to_string(win));
    const int64_t N = tokens.shape.n / per_image;
    const int64_t C = tokens.shape.h;
    const int64_t tok = tokens.shape.c;
    Tensor4<T> out = Tensor4<T>::zeros({N, C, h, w});
    const T* pt = tokens.data();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t wy = 0; wy < gh; ++wy)
            for (int64_t wx = 0; wx < gw; ++wx) {
                const int64_t b = (n * gh + wy) * gw + wx;
                for (int64_t ty = 0; ty < win; ++ty)
                    for (int64_t tx = 0; tx < win; ++tx) {
                        const int64_t t = ty * win + tx;
                        const int64_t ih = wy * win + ty, iw = wx * win + tx;
                        for (int64_t c = 0; c < C; ++c)
                            po[((n * C + c) * h + ih) * w + iw] = pt[(b * tok + t) * C + c];
                    }
            }
    const bool recording = detail::arm(out, tokens.requires_grad());
    detail::record(out, recording, [tokens, out, win, h, w]() mutable {
        const int64_t gh = h / win, gw = w / win;
        const int64_t N = out.shape.n, C = out.shape.c;
        const int64_t tok = tokens.shape.c;
        const T* g = out.grad();
        T* gt = tokens.grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t wy = 0; wy < gh; ++wy)
                for (int64_t wx = 0; wx < gw; ++wx) {
                    const int64_t b = (n * gh + wy) * gw + wx;
                    for (int64_t ty = 0; ty < win; ++ty)
                        for (int64_t tx = 0; tx < win; ++tx) {
                            const int64_t t = ty * win + tx;
                            const int64_t ih = wy * win + ty, iw = wx * win + tx;
                            for (int64_t c = 0; c < C; ++c)
                                gt[(b * tok + t) * C + c] += g[((n * C + c) * h + ih) * w + iw];
                        }
                }
    });
    return out;
}

// Zero padding appended at the bottom/right edges.
template <typename T>
Tensor4<T> pad_bottom_right(const Tensor4<T>& x, int64_t pad_h, int64_t pad_w) {
    require(pad_h >= 0 && pad_w >= 0, "pad_bottom_right: negative padding");
    const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
    Tensor4<T> out = Tensor4<T>::zeros({N, C, H + pad_h, W + pad_w});
    const T* px = x.data();
    T* po = out.data();
    const int64_t OW = W + pad_w;
    for (int64_t nc = 0; nc < N * C; ++nc)
        for (int64_t r = 0; r < H; ++r)
            for (int64_t c = 0; c < W; ++c)
                po[(nc * (H + pad_h) + r) * OW + c] = px[(nc * H + r) * W + c];
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, pad_h, pad_w]() mutable {
        const int64_t N = x.shape.n, C = x.shape.c, H = x.shape.h, W = x.shape.w;
        const int64_t OW = W + pad_w;
        (void)pad_h;
        const T* g = out.grad();
        T* gx = x.grad();
        for (int64_t nc = 0; nc < N * C; ++nc)
            for (int64_t r = 0; r < H; ++r)
                for (int64_t c = 0; c < W; ++c)
                    gx[(nc * H + r) * W + c] += g[(nc * out.shape.h + r) * OW + c];
    });
    return out;
}

template <typename T>
Tensor4<T> crop_top_left(const Tensor4<T>& x, int64_t h, int64_t w) {
    return narrow(narrow(x, 2, 0, h), 3, 0, w);
}

// ---------------------------------------------------------------------------
// Reductions and losses
// ---------------------------------------------------------------------------

template <typename T>
Tensor4<T> reduce_sum_hw(const Tensor4<T>& x) {
    const int64_t NC = x.shape.n * x.shape.c, HW = x.shape.h * x.shape.w;
    Tensor4<T> out = Tensor4<T>::zeros({x.shape.n, x.shape.c, 1, 1});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t nc = 0; nc < NC; ++nc) {
        T acc = 0;
        for (int64_t i = 0; i < HW; ++i) acc += px[nc * HW + i];
        po[nc] = acc;
    }
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, NC, HW]() mutable {
        const T* g = out.grad();
        T* gx = x.grad();
        for (int64_t nc = 0; nc < NC; ++nc)
            for (int64_t i = 0; i < HW; ++i) gx[nc * HW + i] += g[nc];
    });
    return out;
}

// Mean over channels of a (n,c,1,1) tensor.
template <typename T>
Tensor4<T> reduce_mean_c(const Tensor4<T>& x) {
    require(x.shape.h == 1 && x.shape.w == 1, "reduce_mean_c: expects (n,c,1,1) input");
    const int64_t N = x.shape.n, C = x.shape.c;
    Tensor4<T> out = Tensor4<T>::zeros({N, 1, 1, 1});
    const T* px = x.data();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n) {
        T acc = 0;
        for (int64_t c = 0; c < C; ++c) acc += px[n * C + c];
        po[n] = acc / static_cast<T>(C);
    }
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out, N, C]() mutable {
        const T* g = out.grad();
        T* gx = x.grad();
        for (int64_t n = 0; n < N; ++n)
            for (int64_t c = 0; c < C; ++c) gx[n * C + c] += g[n] / static_cast<T>(C);
    });
    return out;
}

// x: (n,c,1,1) divided per sample by d: (n,1,1,1).
template <typename T>
Tensor4<T> div_bcast_n(const Tensor4<T>& x, const Tensor4<T>& d) {
    require(x.shape.h == 1 && x.shape.w == 1, "div_bcast_n: expects (n,c,1,1) numerator");
    require(d.shape == Shape4{x.shape.n, 1, 1, 1},
            "div_bcast_n: denominator shape " + d.shape.str() + " must be (n,1,1,1)");
    const int64_t N = x.shape.n, C = x.shape.c;
    Tensor4<T> out = Tensor4<T>::zeros(x.shape);
    const T* px = x.data();
    const T* pd = d.data();
    T* po = out.data();
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) po[n * C + c] = px[n * C + c] / pd[n];
    const bool recording = detail::arm(out, x.requires_grad() || d.requires_grad());
    detail::record(out, recording, [x, d, out, N, C]() mutable {
        const T* g = out.grad();
        const T* px = x.data();
        const T* pd = d.data();
        if (x.requires_grad()) {
            T* gx = x.grad();
            for (int64_t n = 0; n < N; ++n)
                for (int64_t c = 0; c < C; ++c) gx[n * C + c] += g[n * C + c] / pd[n];
        }
        if (d.requires_grad()) {
            T* gd = d.grad();
            for (int64_t n = 0; n < N; ++n) {
                T acc = 0;
                for (int64_t c = 0; c < C; ++c)
                    acc -= g[n * C + c] * px[n * C + c] / (pd[n] * pd[n]);
                gd[n] += acc;
            }
        }
    });
    return out;
}

template <typename T>
Tensor4<T> sum_all(const Tensor4<T>& x) {
    Tensor4<T> out = Tensor4<T>::zeros({1, 1, 1, 1});
    const T* px = x.data();
    T acc = 0;
    for (int64_t i = 0; i < x.numel(); ++i) acc += px[i];
    out.data()[0] = acc;
    const bool recording = detail::arm(out, x.requires_grad());
    detail::record(out, recording, [x, out]() mutable {
        const T g = out.grad()[0];
        T* gx = x.grad();
        for (int64_t i = 0; i < x.numel(); ++i) gx[i] += g;
    });
    return out;
}

// Mean cross-entropy of logits (n, classes, 1, 1) against integer labels.
template <typename T>
Tensor4<T> cross_entropy(const Tensor4<T>& logits, const std::vector<int>& labels) {
    const int64_t N = logits.shape.n, K = logits.shape.c;
    require(logits.shape.h == 1 && logits.shape.w == 1,
            "cross_entropy: expects logits of shape (n,classes,1,1)");
    require(static_cast<int64_t>(labels.size()) == N,
            "cross_entropy: label count " + std::to_string(labels.size()) +
                " does not match batch " + std::to_string(N));
    for (int v : labels)
        require(v >= 0 && v < K, "cross_entropy: label " + std::to_string(v) + " out of range");
    Tensor4<T> out = Tensor4<T>::zeros({1, 1, 1, 1});
    const T* pl = logits.data();
    T loss = 0;
    for (int64_t n = 0; n < N; ++n) {
        const T* row = pl + n * K;
        T mx = row[0];
        for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
        T sum = 0;
        for (int64_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
        loss += (std::log(sum) + mx) - row[labels[static_cast<size_t>(n)]];
    }
    out.data()[0] = loss / static_cast<T>(N);
    const bool recording = detail::arm(out, logits.requires_grad());
    detail::record(out, recording, [logits, out, labels]() mutable {
        const int64_t N = logits.shape.n, K = logits.shape.c;
        const T g = out.grad()[0];
        const T* pl = logits.data();
        T* gl = logits.grad();
        for (int64_t n = 0; n < N; ++n) {
            const T* row = pl + n * K;
            T mx = row[0];
            for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
            T sum = 0;
            for (int64_t k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
            for (int64_t k = 0; k < K; ++k) {
                T p = std::exp(row[k] - mx) / sum;
                T onehot = (k == labels[static_cast<size_t>(n)]) ? T(1) : T(0);
                gl[n * K + k] += g * (p - onehot) / static_cast<T>(N);
            }
        }
    });
    return out;
}

}  // namespace lwplg
