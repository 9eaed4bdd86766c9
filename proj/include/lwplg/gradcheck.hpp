#pragma once

// Named finite-difference gradient checks used by tests and the CLI. Every
// check compares the tape gradient of one tensor against central differences
// in f64 at eps = 1e-4 under the max-relative-error metric.

#include <functional>
#include <string>
#include <vector>

#include "lwplg/blocks.hpp"
#include "lwplg/model.hpp"
#include "lwplg/oracle.hpp"

namespace lwplg {

enum class CheckScope { Ops, Blocks, Model, All };

struct CheckResult {
    std::string name;
    double max_err = 0.0;
    double tol = 1e-5;
    bool pass = false;
};

namespace detail {

struct CheckSpec {
    std::string name;
    Tensor4<double> wrt;
    std::function<Tensor4<double>()> loss;
};

inline CheckResult run_check(const CheckSpec& spec, double eps = 1e-4, double tol = 1e-5) {
    spec.wrt.zero_grad();
    GradTape<double> tape;
    {
        GradTape<double>::Scope rec(tape);
        Tensor4<double> l = spec.loss();
        tape.backward(l);
    }
    Tensor4<double> analytic = Tensor4<double>::zeros(spec.wrt.shape);
    for (int64_t i = 0; i < spec.wrt.numel(); ++i) analytic.data()[i] = spec.wrt.grad()[i];

    Tensor4<double> original = spec.wrt.clone();
    auto f = [&](const Tensor4<double>& probe) {
        *spec.wrt.buf = *probe.buf;
        return spec.loss().data()[0];
    };
    Tensor4<double> fd = oracle::finite_diff_grad<double>(f, original, eps);
    *spec.wrt.buf = *original.buf;

    CheckResult result;
    result.name = spec.name;
    result.tol = tol;
    result.max_err = oracle::max_grad_err(analytic, fd);
    result.pass = result.max_err < tol;
    return result;
}

inline Tensor4<double> rand_tensor(Shape4 s, Rng& rng, bool needs_grad = true) {
    Tensor4<double> t = Tensor4<double>::zeros(s);
    fill_uniform(t, rng, -1.0, 1.0);
    t.set_requires_grad(needs_grad);
    return t;
}

}  // namespace detail

inline std::vector<detail::CheckSpec> op_checks(uint64_t seed) {
    using detail::rand_tensor;
    std::vector<detail::CheckSpec> out;
    auto rng = std::make_shared<Rng>(seed);

    {
        auto x = rand_tensor({1, 3, 6, 6}, *rng);
        auto w = rand_tensor({4, 3, 3, 3}, *rng);
        auto b = rand_tensor({4, 1, 1, 1}, *rng);
        auto loss = [x, w, b]() { return sum_all(act(conv2d(x, w, std::optional{b}, 1, 1, 1), Act::SiLU)); };
        out.push_back({"conv2d 3x3 wrt input", x, loss});
        out.push_back({"conv2d 3x3 wrt weight", w, loss});
        out.push_back({"conv2d 3x3 wrt bias", b, loss});
    }
    {
        auto x = rand_tensor({2, 4, 7, 7}, *rng);
        auto w = rand_tensor({4, 1, 3, 3}, *rng);
        auto loss = [x, w]() { return sum_all(act(conv2d(x, w, 2, 1, 4), Act::GeLU)); };
        out.push_back({"conv2d depthwise stride-2 wrt input", x, loss});
        out.push_back({"conv2d depthwise stride-2 wrt weight", w, loss});
    }
    {
        auto x = rand_tensor({2, 5, 3, 3}, *rng);
        auto g = rand_tensor({5, 1, 1, 1}, *rng);
        auto b = rand_tensor({5, 1, 1, 1}, *rng);
        auto loss = [x, g, b]() { return sum_all(act(layer_norm(x, g, b, 1e-5), Act::SiLU)); };
        out.push_back({"layer_norm wrt input", x, loss});
        out.push_back({"layer_norm wrt gamma", g, loss});
        out.push_back({"layer_norm wrt beta", b, loss});
    }
    {
        // Weight vectors bounded away from zero keep every gradient element
        // well above the finite-difference noise floor.
        auto make_weights = [&](Shape4 s) {
            auto v = Tensor4<double>::zeros(s);
            for (int64_t i = 0; i < v.numel(); ++i) {
                const double mag = rng->uniform(0.5, 1.5);
                v.data()[i] = rng->uniform01() < 0.5 ? -mag : mag;
            }
            return v;
        };
        auto x = rand_tensor({2, 3, 4, 4}, *rng);
        auto v = make_weights({2, 3, 4, 4});
        out.push_back({"silu", x, [x, v]() { return sum_all(mul(act(x, Act::SiLU), v)); }});
        out.push_back({"sigmoid", x, [x, v]() { return sum_all(mul(act(x, Act::Sigmoid), v)); }});
        // gelu's derivative has a root near -0.75; probe the monotone region
        auto xg = Tensor4<double>::zeros({2, 3, 4, 4});
        fill_uniform(xg, *rng, 0.1, 1.8);
        xg.set_requires_grad(true);
        out.push_back({"gelu", xg, [xg, v]() { return sum_all(mul(act(xg, Act::GeLU), v)); }});
    }
    {
        auto x = rand_tensor({2, 4, 6, 1}, *rng);
        auto v = rand_tensor({2, 4, 6, 1}, *rng);
        out.push_back({"softmax rows", x, [x, v]() { return sum_all(mul(softmax(x, 2), v)); }});
    }
    {
        auto x = rand_tensor({1, 2, 7, 5}, *rng);
        auto v = rand_tensor({1, 2, 3, 2}, *rng);
        out.push_back(
            {"adaptive_max_pool2d", x, [x, v]() { return sum_all(mul(adaptive_max_pool2d(x, 3, 2), v)); }});
        auto v2 = rand_tensor({1, 2, 3, 3}, *rng);
        out.push_back(
            {"adaptive_avg_pool2d", x, [x, v2]() { return sum_all(mul(adaptive_avg_pool2d(x, 3, 3), v2)); }});
    }
    {
        auto x = rand_tensor({1, 2, 5, 7}, *rng);
        auto v = rand_tensor({1, 2, 8, 6}, *rng);
        out.push_back(
            {"bilinear_resize", x, [x, v]() { return sum_all(mul(bilinear_resize(x, 8, 6), v)); }});
    }
    {
        auto a = rand_tensor({2, 3, 4, 1}, *rng);
        auto b = rand_tensor({2, 5, 4, 1}, *rng);
        auto loss = [a, b]() { return sum_all(act(matmul_nt(a, b), Act::SiLU)); };
        out.push_back({"matmul_nt wrt a", a, loss});
        out.push_back({"matmul_nt wrt b", b, loss});
    }
    {
        auto a = rand_tensor({2, 3, 4, 1}, *rng);
        auto b = rand_tensor({2, 4, 5, 1}, *rng);
        auto loss = [a, b]() { return sum_all(act(matmul_nn(a, b), Act::SiLU)); };
        out.push_back({"matmul_nn wrt a", a, loss});
        out.push_back({"matmul_nn wrt b", b, loss});
    }
    {
        auto x = rand_tensor({2, 3, 6, 6}, *rng);
        auto v = rand_tensor({8, 9, 3, 1}, *rng);
        out.push_back({"window_partition", x, [x, v]() {
                           return sum_all(mul(window_partition(x, 3), v));
                       }});
        out.push_back({"window partition/reverse round trip", x, [x]() {
                           auto t = window_partition(x, 3);
                           return sum_all(mul(window_reverse(t, 3, 6, 6), x));
                       }});
    }
    {
        auto x = rand_tensor({1, 3, 5, 5}, *rng);
        out.push_back({"pad + crop", x, [x]() {
                           auto padded = pad_bottom_right(x, 2, 1);
                           return sum_all(mul(crop_top_left(padded, 5, 5), x));
                       }});
    }
    {
        auto x = rand_tensor({2, 4, 3, 3}, *rng);
        auto s = rand_tensor({2, 4, 1, 1}, *rng);
        auto loss = [x, s]() { return sum_all(act(mul_bcast_hw(x, s), Act::SiLU)); };
        out.push_back({"mul_bcast_hw wrt x", x, loss});
        out.push_back({"mul_bcast_hw wrt scale", s, loss});
    }
    {
        auto x = rand_tensor({2, 3, 4, 4}, *rng);
        auto g = rand_tensor({3, 1, 1, 1}, *rng);
        auto b = rand_tensor({3, 1, 1, 1}, *rng);
        auto loss = [x, g, b]() { return sum_all(act(affine_channel(x, g, b), Act::GeLU)); };
        out.push_back({"affine_channel wrt x", x, loss});
        out.push_back({"affine_channel wrt gamma", g, loss});
    }
    {
        auto x = rand_tensor({2, 3, 4, 4}, *rng);
        auto v = rand_tensor({2, 3, 1, 1}, *rng, false);
        for (int64_t i = 0; i < v.numel(); ++i) v.data()[i] += (v.data()[i] < 0 ? -1.0 : 1.0);
        out.push_back({"spatial L2 / mean / divide chain", x, [x, v]() {
                           auto norms = sqrt_elem(reduce_sum_hw(mul(x, x)));
                           auto mean = add_scalar(reduce_mean_c(norms), 1e-6);
                           return sum_all(mul(div_bcast_n(norms, mean), v));
                       }});
    }
    {
        auto logits = rand_tensor({3, 4, 1, 1}, *rng);
        out.push_back({"cross_entropy", logits, [logits]() {
                           return cross_entropy(logits, std::vector<int>{1, 0, 3});
                       }});
    }
    {
        auto x = rand_tensor({2, 2, 3, 3}, *rng);
        auto y = rand_tensor({2, 2, 3, 3}, *rng);
        out.push_back({"split/concat channels", x, [x, y]() {
                           auto [a, b] = split_channels(x, 1);
                           return sum_all(mul(concat_channels(b, a), y));
                       }});
    }
    return out;
}

inline std::vector<detail::CheckSpec> block_checks(uint64_t seed) {
    using detail::rand_tensor;
    std::vector<detail::CheckSpec> out;
    auto rng = std::make_shared<Rng>(seed + 1);

    auto make_builder = [](std::shared_ptr<Rng> r, std::shared_ptr<WeightStore<double>> store) {
        return ParamBuilder<double>{*r, *store, true};
    };
    // random cotangent bounded away from zero
    auto cot = [rng](Shape4 s) {
        auto v = Tensor4<double>::zeros(s);
        for (int64_t i = 0; i < v.numel(); ++i) {
            const double mag = rng->uniform(0.5, 1.5);
            v.data()[i] = rng->uniform01() < 0.5 ? -mag : mag;
        }
        return v;
    };
    // replaces the tiny init with magnitude-bounded weights so every path
    // through a block carries a gradient clear of the fd noise floor
    auto randomize = [rng](WeightStore<double>& store) {
        for (auto& [name, t] : store)
            for (int64_t i = 0; i < t.numel(); ++i) {
                const double mag = rng->uniform(0.3, 1.0);
                t.data()[i] = rng->uniform01() < 0.5 ? -mag : mag;
            }
    };

    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto se = std::make_shared<SeBlock<double>>(pb, "se", 8, 8, Act::SiLU);
        auto x = rand_tensor({1, 8, 4, 4}, *rng);
        auto v = cot({1, 8, 4, 4});
        auto loss = [se, x, v]() { return sum_all(mul((*se)(x), v)); };
        out.push_back({"se_block wrt input", x, loss});
        out.push_back({"se_block wrt reduce weight", se->reduce.weight, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto grn = std::make_shared<GrnLayer<double>>(pb, "grn", 3);
        fill_uniform(grn->gamma, *rng, -0.5, 0.5);
        fill_uniform(grn->beta, *rng, -0.5, 0.5);
        auto x = rand_tensor({2, 3, 2, 2}, *rng);
        auto v = cot({2, 3, 2, 2});
        auto loss = [grn, x, v]() { return sum_all(mul((*grn)(x), v)); };
        out.push_back({"grn wrt input", x, loss});
        out.push_back({"grn wrt gamma", grn->gamma, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto embed = std::make_shared<LwPatchEmbed<double>>(pb, "embed", 8, 12);
        randomize(*store);
        auto x = rand_tensor({1, 8, 6, 6}, *rng);
        auto v = cot({1, 12, 3, 3});
        auto loss = [embed, x, v]() { return sum_all(mul((*embed)(x), v)); };
        out.push_back({"lw_patch_embed wrt input", x, loss});
        out.push_back({"lw_patch_embed wrt pw_down weight", embed->pw_down.weight, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto embed = std::make_shared<BaselinePatchEmbed<double>>(pb, "embed", 8, 12);
        randomize(*store);
        auto x = rand_tensor({1, 8, 6, 6}, *rng);
        auto v = cot({1, 12, 3, 3});
        auto loss = [embed, x, v]() { return sum_all(mul((*embed)(x), v)); };
        out.push_back({"baseline_patch_embed wrt input", x, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto ffn = std::make_shared<CcfFfnPlus<double>>(pb, "ffn", 6, 3);
        auto x = rand_tensor({1, 6, 5, 5}, *rng);
        auto v = cot({1, 6, 5, 5});
        auto loss = [ffn, x, v]() { return sum_all(mul((*ffn)(x), v)); };
        out.push_back({"ccf_ffn_plus wrt input", x, loss});
        out.push_back({"ccf_ffn_plus wrt expand weight", ffn->expand.weight, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto ffn = std::make_shared<CcfFfnBaseline<double>>(pb, "ffn", 6, 4);
        auto x = rand_tensor({1, 6, 4, 4}, *rng);
        auto v = cot({1, 6, 4, 4});
        auto loss = [ffn, x, v]() { return sum_all(mul((*ffn)(x), v)); };
        out.push_back({"ccf_ffn_baseline wrt input", x, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto attn = std::make_shared<LocalWindowAttention<double>>(pb, "lwa", 8, 3, 2);
        auto x = rand_tensor({1, 8, 6, 6}, *rng);
        auto v = cot({1, 8, 6, 6});
        auto loss = [attn, x, v]() { return sum_all(mul((*attn)(x), v)); };
        out.push_back({"local_window_attention wrt input", x, loss});
        out.push_back({"local_window_attention wrt qkv weight", attn->qkv.weight, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto attn = std::make_shared<GlobalPooledAttention<double>>(pb, "gpa", 8, 3, 2);
        auto x = rand_tensor({1, 8, 6, 6}, *rng);
        auto v = cot({1, 8, 6, 6});
        auto loss = [attn, x, v]() { return sum_all(mul((*attn)(x), v)); };
        out.push_back({"global_pooled_attention wrt input", x, loss});
        out.push_back({"global_pooled_attention wrt qkv weight", attn->qkv.weight, loss});
    }
    {
        StageConfig stage{12, 1, AttnSpec::make(3, 1), AttnSpec::make(4, 2), false};
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto sa = std::make_shared<PlgSa<double>>(pb, "plgsa", stage);
        auto x = rand_tensor({1, 12, 5, 5}, *rng);  // 5x5 exercises local padding
        auto v = cot({1, 12, 5, 5});
        auto loss = [sa, x, v]() { return sum_all(mul((*sa)(x), v)); };
        out.push_back({"lw_plg_sa wrt input", x, loss});
    }
    {
        StageConfig stage{12, 1, AttnSpec::make(3, 1), AttnSpec::make(4, 2), false};
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto block = std::make_shared<TransformerBlock<double>>(pb, "block", stage);
        auto x = rand_tensor({1, 12, 5, 5}, *rng);
        auto v = cot({1, 12, 5, 5});
        auto loss = [block, x, v]() { return sum_all(mul((*block)(x), v)); };
        out.push_back({"transformer_block wrt input", x, loss});
        out.push_back({"transformer_block wrt ffn restore weight", block->ffn.restore.weight, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto stem = std::make_shared<ConvStem<double>>(pb, "stem", 3, 8);
        auto x = rand_tensor({1, 3, 8, 8}, *rng);
        auto v = cot({1, 8, 2, 2});
        auto loss = [stem, x, v]() { return sum_all(mul((*stem)(x), v)); };
        out.push_back({"conv_stem wrt input", x, loss});
        out.push_back({"conv_stem wrt conv1 weight", stem->conv1.weight, loss});
    }
    {
        auto store = std::make_shared<WeightStore<double>>();
        auto pb = make_builder(rng, store);
        auto exp = std::make_shared<ChannelExpansion<double>>(pb, "exp", 6, 10);
        auto x = rand_tensor({1, 6, 3, 3}, *rng);
        auto v = cot({1, 10, 3, 3});
        auto loss = [exp, x, v]() { return sum_all(mul((*exp)(x), v)); };
        out.push_back({"channel_expansion wrt input", x, loss});
    }
    return out;
}

inline std::vector<detail::CheckSpec> model_checks(uint64_t seed) {
    std::vector<detail::CheckSpec> out;
    auto rng = std::make_shared<Rng>(seed + 2);
    auto net = std::make_shared<Network<double>>(build_model<double>(micro_config(2), seed, true));
    auto x = detail::rand_tensor({1, 3, 32, 32}, *rng, false);
    // weighted logit sum: full end-to-end path with far less curvature than
    // a softmax loss, keeping finite differences inside the tolerance
    auto v = Tensor4<double>::from({1, 2, 1, 1}, {1.25, -0.75});
    auto loss = [net, x, v]() { return sum_all(mul(net->forward(x), v)); };
    out.push_back({"micro model end-to-end wrt stem conv1 weight",
                   net->store->get("stem/conv1/weight"), loss});
    out.push_back({"micro model end-to-end wrt stage3 norm1 gamma",
                   net->store->get("stage3/block0/norm1/gamma"), loss});
    out.push_back({"micro model end-to-end wrt head bias", net->store->get("head/bias"), loss});
    // the loss surface itself (softmax cross-entropy) is finite-difference
    // checked against the logits here
    auto logits = detail::rand_tensor({2, 2, 1, 1}, *rng);
    out.push_back({"micro model cross-entropy wrt logits", logits, [logits]() {
                       return cross_entropy(logits, std::vector<int>{1, 0});
                   }});
    return out;
}

inline std::vector<CheckResult> run_gradchecks(CheckScope scope, uint64_t seed) {
    std::vector<detail::CheckSpec> specs;
    auto extend = [&](std::vector<detail::CheckSpec> more) {
        for (auto& s : more) specs.push_back(std::move(s));
    };
    if (scope == CheckScope::Ops || scope == CheckScope::All) extend(op_checks(seed));
    if (scope == CheckScope::Blocks || scope == CheckScope::All) extend(block_checks(seed));
    if (scope == CheckScope::Model || scope == CheckScope::All) extend(model_checks(seed));
    std::vector<CheckResult> results;
    results.reserve(specs.size());
    for (const auto& s : specs) results.push_back(detail::run_check(s));
    return results;
}

// Harness sanity: corrupts the analytic gradient of one check and reports
// whether the comparison caught it.
inline bool gradcheck_selftest(uint64_t seed) {
    Rng rng(seed + 3);
    auto x = detail::rand_tensor({1, 2, 4, 4}, rng);
    GradTape<double> tape;
    {
        GradTape<double>::Scope rec(tape);
        auto l = sum_all(act(x, Act::SiLU));
        tape.backward(l);
    }
    Tensor4<double> analytic = Tensor4<double>::zeros(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) analytic.data()[i] = x.grad()[i];
    analytic.data()[0] += 1e-3;  // deliberate corruption
    auto f = [&x](const Tensor4<double>& probe) {
        *x.buf = *probe.buf;
        return sum_all(act(x, Act::SiLU)).data()[0];
    };
    Tensor4<double> fd = oracle::finite_diff_grad<double>(f, x.clone(), 1e-4);
    return oracle::max_grad_err(analytic, fd) >= 1e-5;  // true when the corruption is detected
}

}  // namespace lwplg
