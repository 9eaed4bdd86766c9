#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "lwplg/config.hpp"
#include "lwplg/ops.hpp"
#include "lwplg/weights.hpp"

namespace lwplg {

// Creates parameters with the shared init policy and registers each one in
// the weight store under a slash-delimited path, exactly once.
template <typename T>
struct ParamBuilder {
    Rng& rng;
    WeightStore<T>& store;
    bool requires_grad = false;

    Tensor4<T> trunc_normal(const std::string& name, Shape4 s, double stddev = 0.02) {
        Tensor4<T> t = Tensor4<T>::zeros(s);
        fill_trunc_normal(t, rng, stddev);
        return finish(name, std::move(t));
    }
    Tensor4<T> zeros(const std::string& name, Shape4 s) {
        return finish(name, Tensor4<T>::zeros(s));
    }
    Tensor4<T> ones(const std::string& name, Shape4 s) {
        return finish(name, Tensor4<T>::full(s, T(1)));
    }

private:
    Tensor4<T> finish(const std::string& name, Tensor4<T> t) {
        t.set_requires_grad(requires_grad);
        return store.add(name, std::move(t));
    }
};

// ---------------------------------------------------------------------------
// Parameterized layers
// ---------------------------------------------------------------------------

template <typename T>
struct Conv2dLayer {
    Tensor4<T> weight;
    std::optional<Tensor4<T>> bias;
    int stride = 1;
    int pad = 0;
    int groups = 1;

    Conv2dLayer() = default;
    Conv2dLayer(ParamBuilder<T>& pb, const std::string& prefix, int c_in, int c_out, int k,
                int stride_, int pad_, int groups_, bool with_bias)
        : stride(stride_), pad(pad_), groups(groups_) {
        require(c_in % groups_ == 0 && c_out % groups_ == 0,
                prefix + ": channels not divisible by groups");
        // fan-in-scaled truncated normal; a fixed small std starves the
        // forward signal and stalls plain-SGD training
        const double fan_in = static_cast<double>(c_in / groups_) * k * k;
        weight = pb.trunc_normal(prefix + "/weight", {c_out, c_in / groups_, k, k},
                                 std::sqrt(2.0 / fan_in));
        if (with_bias) bias = pb.zeros(prefix + "/bias", {c_out, 1, 1, 1});
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        return conv2d(x, weight, bias, stride, pad, groups);
    }
};

template <typename T>
struct LayerNormLayer {
    Tensor4<T> gamma, beta;
    double eps = 1e-5;

    LayerNormLayer() = default;
    LayerNormLayer(ParamBuilder<T>& pb, const std::string& prefix, int channels) {
        gamma = pb.ones(prefix + "/gamma", {channels, 1, 1, 1});
        beta = pb.zeros(prefix + "/beta", {channels, 1, 1, 1});
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const { return layer_norm(x, gamma, beta, eps); }
};

// Squeeze-and-excitation gate: global average, bottleneck pair, sigmoid
// scale. The inner activation mirrors the surrounding block.
template <typename T>
struct SeBlock {
    Conv2dLayer<T> reduce, expand;
    Act inner = Act::SiLU;

    SeBlock() = default;
    SeBlock(ParamBuilder<T>& pb, const std::string& prefix, int channels, int divisor, Act inner_)
        : inner(inner_) {
        const int hidden = channels / divisor;
        require(hidden >= 1, prefix + ": reduction by 1/" + std::to_string(divisor) +
                                 " leaves no channels for width " + std::to_string(channels));
        reduce = Conv2dLayer<T>(pb, prefix + "/reduce", channels, hidden, 1, 1, 0, 1, true);
        expand = Conv2dLayer<T>(pb, prefix + "/expand", hidden, channels, 1, 1, 0, 1, true);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        auto squeezed = adaptive_avg_pool2d(x, 1, 1);
        auto gate = act(expand(act(reduce(squeezed), inner)), Act::Sigmoid);
        return mul_bcast_hw(x, gate);
    }
};

// Global response normalization: per-channel spatial L2 norms divided by
// their mean, learned affine, residual. Gamma/beta start at zero so the
// block begins as an identity.
template <typename T>
struct GrnLayer {
    Tensor4<T> gamma, beta;
    double eps = 1e-6;

    GrnLayer() = default;
    GrnLayer(ParamBuilder<T>& pb, const std::string& prefix, int channels) {
        gamma = pb.zeros(prefix + "/gamma", {channels, 1, 1, 1});
        beta = pb.zeros(prefix + "/beta", {channels, 1, 1, 1});
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        auto norms = sqrt_elem(reduce_sum_hw(mul(x, x)));
        auto mean = add_scalar(reduce_mean_c(norms), static_cast<T>(eps));
        auto scaled = mul_bcast_hw(x, div_bcast_n(norms, mean));
        return add(affine_channel(scaled, gamma, beta), x);
    }
};

// ---------------------------------------------------------------------------
// Patch embedding / downsampling
// ---------------------------------------------------------------------------

// Lightweight stride-2 embedding: depthwise 3x3, SiLU, SE(1/8), pointwise mix,
// residual, then a strided 1x1 for the spatial/channel change followed by a
// depthwise 3x3 and layer norm.
template <typename T>
struct LwPatchEmbed {
    Conv2dLayer<T> dw1, pw_mix, pw_down, dw2;
    SeBlock<T> se;
    LayerNormLayer<T> norm;

    LwPatchEmbed() = default;
    LwPatchEmbed(ParamBuilder<T>& pb, const std::string& prefix, int c_in, int c_out) {
        dw1 = Conv2dLayer<T>(pb, prefix + "/dw1", c_in, c_in, 3, 1, 1, c_in, true);
        se = SeBlock<T>(pb, prefix + "/se", c_in, 8, Act::SiLU);
        pw_mix = Conv2dLayer<T>(pb, prefix + "/pw_mix", c_in, c_in, 1, 1, 0, 1, true);
        pw_down = Conv2dLayer<T>(pb, prefix + "/pw_down", c_in, c_out, 1, 2, 0, 1, true);
        dw2 = Conv2dLayer<T>(pb, prefix + "/dw2", c_out, c_out, 3, 1, 1, c_out, true);
        norm = LayerNormLayer<T>(pb, prefix + "/norm", c_out);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        require(x.shape.h >= 2 && x.shape.w >= 2,
                "LwPatchEmbed: input " + x.shape.str() + " too small to downsample");
        auto mixed = pw_mix(se(act(dw1(x), Act::SiLU)));
        return norm(dw2(pw_down(add(mixed, x))));
    }
};

// Reference stride-2 embedding with GeLU, SE(1/4) and a dense strided 3x3.
// Kept for the parameter-savings comparison and ablation checks.
template <typename T>
struct BaselinePatchEmbed {
    Conv2dLayer<T> dw1, pw_mix, sconv;
    SeBlock<T> se;
    LayerNormLayer<T> norm;

    BaselinePatchEmbed() = default;
    BaselinePatchEmbed(ParamBuilder<T>& pb, const std::string& prefix, int c_in, int c_out) {
        dw1 = Conv2dLayer<T>(pb, prefix + "/dw1", c_in, c_in, 3, 1, 1, c_in, true);
        se = SeBlock<T>(pb, prefix + "/se", c_in, 4, Act::GeLU);
        pw_mix = Conv2dLayer<T>(pb, prefix + "/pw_mix", c_in, c_in, 1, 1, 0, 1, true);
        sconv = Conv2dLayer<T>(pb, prefix + "/sconv", c_in, c_out, 3, 2, 1, 1, true);
        norm = LayerNormLayer<T>(pb, prefix + "/norm", c_out);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        require(x.shape.h >= 2 && x.shape.w >= 2,
                "BaselinePatchEmbed: input " + x.shape.str() + " too small to downsample");
        auto mixed = pw_mix(se(act(dw1(x), Act::GeLU)));
        return norm(sconv(add(mixed, x)));
    }
};

// ---------------------------------------------------------------------------
// Feed-forward networks
// ---------------------------------------------------------------------------

// Expansion by alpha, depthwise 3x3 with GRN, then a restore projection fed
// with the concatenation of the expansion output and the depthwise output.
template <typename T>
struct CcfFfnPlus {
    Conv2dLayer<T> expand, dw, restore;
    GrnLayer<T> grn;

    CcfFfnPlus() = default;
    CcfFfnPlus(ParamBuilder<T>& pb, const std::string& prefix, int channels, int alpha = 3) {
        const int hidden = channels * alpha;
        expand = Conv2dLayer<T>(pb, prefix + "/expand", channels, hidden, 1, 1, 0, 1, true);
        dw = Conv2dLayer<T>(pb, prefix + "/dw", hidden, hidden, 3, 1, 1, hidden, true);
        grn = GrnLayer<T>(pb, prefix + "/grn", hidden);
        restore = Conv2dLayer<T>(pb, prefix + "/restore", 2 * hidden, channels, 1, 1, 0, 1, true);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        auto e = act(expand(x), Act::GeLU);
        auto d = grn(dw(e));
        return restore(concat_channels(e, d));
    }
};

// Original feed-forward: expansion, depthwise 3x3, restore. No GRN, no concat.
template <typename T>
struct CcfFfnBaseline {
    Conv2dLayer<T> expand, dw, restore;

    CcfFfnBaseline() = default;
    CcfFfnBaseline(ParamBuilder<T>& pb, const std::string& prefix, int channels, int alpha = 4) {
        const int hidden = channels * alpha;
        expand = Conv2dLayer<T>(pb, prefix + "/expand", channels, hidden, 1, 1, 0, 1, true);
        dw = Conv2dLayer<T>(pb, prefix + "/dw", hidden, hidden, 3, 1, 1, hidden, true);
        restore = Conv2dLayer<T>(pb, prefix + "/restore", hidden, channels, 1, 1, 0, 1, true);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        return restore(dw(act(expand(x), Act::GeLU)));
    }
};

// ---------------------------------------------------------------------------
// Attention
// ---------------------------------------------------------------------------

// Multi-head scaled dot-product attention over token tensors (B, T, C, 1).
template <typename T>
Tensor4<T> token_self_attention(const Tensor4<T>& q, const Tensor4<T>& k, const Tensor4<T>& v,
                                int heads) {
    const int64_t C = q.shape.h;
    require(heads >= 1 && C % heads == 0,
            "token_self_attention: " + std::to_string(C) + " channels not divisible by " +
                std::to_string(heads) + " heads");
    const int64_t d = C / heads;
    const T inv_sqrt_d = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
    std::vector<Tensor4<T>> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
        auto qh = scale(narrow(q, 2, h * d, d), inv_sqrt_d);
        auto kh = narrow(k, 2, h * d, d);
        auto vh = narrow(v, 2, h * d, d);
        auto attn = softmax(matmul_nt(qh, kh), 2);
        head_outs.push_back(matmul_nn(attn, vh));
    }
    return cat(2, head_outs);
}

// Window self-attention over non-overlapping win x win tiles. Q, K and V come
// from one fused pointwise projection (no bias); windows are independent and
// the caller is responsible for padding to a window multiple.
template <typename T>
struct LocalWindowAttention {
    Conv2dLayer<T> qkv;
    int win = 7;
    int heads = 1;

    LocalWindowAttention() = default;
    LocalWindowAttention(ParamBuilder<T>& pb, const std::string& prefix, int channels, int win_,
                         int heads_)
        : win(win_), heads(heads_) {
        require(heads_ >= 1 && channels % heads_ == 0,
                prefix + ": " + std::to_string(channels) + " channels not divisible by " +
                    std::to_string(heads_) + " heads");
        qkv = Conv2dLayer<T>(pb, prefix + "/qkv", channels, 3 * channels, 1, 1, 0, 1, false);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        const int64_t C = x.shape.c, H = x.shape.h, W = x.shape.w;
        auto proj = qkv(x);
        auto q = window_partition(narrow(proj, 1, 0, C), win);
        auto k = window_partition(narrow(proj, 1, C, C), win);
        auto v = window_partition(narrow(proj, 1, 2 * C, C), win);
        return window_reverse(token_self_attention(q, k, v, heads), win, H, W);
    }
};

// Global branch: adaptive max pooling to a fixed g x g token grid, attention
// over those tokens, bilinear restore to the input resolution. The attention
// cost is independent of the input size.
template <typename T>
struct GlobalPooledAttention {
    Conv2dLayer<T> qkv;
    int win = 14;
    int heads = 1;

    GlobalPooledAttention() = default;
    GlobalPooledAttention(ParamBuilder<T>& pb, const std::string& prefix, int channels, int win_,
                          int heads_)
        : win(win_), heads(heads_) {
        require(heads_ >= 1 && channels % heads_ == 0,
                prefix + ": " + std::to_string(channels) + " channels not divisible by " +
                    std::to_string(heads_) + " heads");
        qkv = Conv2dLayer<T>(pb, prefix + "/qkv", channels, 3 * channels, 1, 1, 0, 1, false);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        const int64_t C = x.shape.c, H = x.shape.h, W = x.shape.w;
        auto pooled = adaptive_max_pool2d(x, win, win);
        auto proj = qkv(pooled);
        auto q = window_partition(narrow(proj, 1, 0, C), win);
        auto k = window_partition(narrow(proj, 1, C, C), win);
        auto v = window_partition(narrow(proj, 1, 2 * C, C), win);
        auto attended = window_reverse(token_self_attention(q, k, v, heads), win, win, win);
        return bilinear_resize(attended, static_cast<int>(H), static_cast<int>(W));
    }
};

// Parallel local-global self-attention. The input is split along the feature
// depth; the local share runs window attention (zero-padded bottom/right to a
// window multiple, cropped back), the remainder runs pooled global attention,
// and the branch outputs are concatenated.
template <typename T>
struct PlgSa {
    int c_local = 0;
    LocalWindowAttention<T> local;
    std::optional<GlobalPooledAttention<T>> global;

    PlgSa() = default;
    PlgSa(ParamBuilder<T>& pb, const std::string& prefix, const StageConfig& stage) {
        const int total_heads = stage.lsa.heads + (stage.gsa.present ? stage.gsa.heads : 0);
        require(stage.channels % total_heads == 0,
                prefix + ": split ratio " + std::to_string(stage.lsa.heads) + "/" +
                    std::to_string(total_heads) + " of " + std::to_string(stage.channels) +
                    " channels is not an integer");
        c_local = stage.local_channels();
        local = LocalWindowAttention<T>(pb, prefix + "/local", c_local, stage.lsa.window,
                                        stage.lsa.heads);
        if (stage.gsa.present)
            global = GlobalPooledAttention<T>(pb, prefix + "/global", stage.global_channels(),
                                              stage.gsa.window, stage.gsa.heads);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        const int64_t H = x.shape.h, W = x.shape.w;
        auto [x_local, x_global] = split_channels(x, c_local);
        const int win = local.win;
        const int64_t pad_h = (win - H % win) % win;
        const int64_t pad_w = (win - W % win) % win;
        auto y_local = local(pad_bottom_right(x_local, pad_h, pad_w));
        if (pad_h || pad_w) y_local = crop_top_left(y_local, H, W);
        if (!global) return y_local;
        return concat_channels(y_local, (*global)(x_global));
    }
};

// Pre-norm transformer block: attention and feed-forward residuals, each
// preceded by a layer normalization. No dropout or stochastic depth.
template <typename T>
struct TransformerBlock {
    LayerNormLayer<T> norm1, norm2;
    PlgSa<T> attn;
    CcfFfnPlus<T> ffn;

    TransformerBlock() = default;
    TransformerBlock(ParamBuilder<T>& pb, const std::string& prefix, const StageConfig& stage,
                     int alpha = 3) {
        norm1 = LayerNormLayer<T>(pb, prefix + "/norm1", stage.channels);
        attn = PlgSa<T>(pb, prefix + "/attn", stage);
        norm2 = LayerNormLayer<T>(pb, prefix + "/norm2", stage.channels);
        ffn = CcfFfnPlus<T>(pb, prefix + "/ffn", stage.channels, alpha);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        auto u = add(x, attn(norm1(x)));
        return add(u, ffn(norm2(u)));
    }
};

// ---------------------------------------------------------------------------
// Stem, expansion
// ---------------------------------------------------------------------------

// Overlapping patch embedding at stride 4: two 3x3 stride-2 convolutions with
// SiLU between and layer norm after.
template <typename T>
struct ConvStem {
    Conv2dLayer<T> conv1, conv2;
    LayerNormLayer<T> norm;

    ConvStem() = default;
    ConvStem(ParamBuilder<T>& pb, const std::string& prefix, int img_channels, int c1) {
        require(c1 % 2 == 0, prefix + ": stem width " + std::to_string(c1) + " must be even");
        conv1 = Conv2dLayer<T>(pb, prefix + "/conv1", img_channels, c1 / 2, 3, 2, 1, 1, true);
        conv2 = Conv2dLayer<T>(pb, prefix + "/conv2", c1 / 2, c1, 3, 2, 1, 1, true);
        norm = LayerNormLayer<T>(pb, prefix + "/norm", c1);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const {
        require(x.shape.h >= 4 && x.shape.w >= 4,
                "ConvStem: input " + x.shape.str() + " smaller than the stride-4 stem");
        return norm(conv2(act(conv1(x), Act::SiLU)));
    }
};

// Final channel expansion at stride 1, realized as a separable 3x3
// (depthwise 3x3 then pointwise c4 -> c5) with SiLU and layer norm.
template <typename T>
struct ChannelExpansion {
    Conv2dLayer<T> dw, pw;
    LayerNormLayer<T> norm;

    ChannelExpansion() = default;
    ChannelExpansion(ParamBuilder<T>& pb, const std::string& prefix, int c4, int c5) {
        dw = Conv2dLayer<T>(pb, prefix + "/dw", c4, c4, 3, 1, 1, c4, true);
        pw = Conv2dLayer<T>(pb, prefix + "/pw", c4, c5, 1, 1, 0, 1, true);
        norm = LayerNormLayer<T>(pb, prefix + "/norm", c5);
    }

    Tensor4<T> operator()(const Tensor4<T>& x) const { return norm(act(pw(dw(x)), Act::SiLU)); }
};

}  // namespace lwplg
