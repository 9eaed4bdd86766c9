// Acceptance suite: runs every published-target and property check at its
// stated tolerance and prints one pass/fail line per criterion. Exits with
// the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "lwplg/analysis.hpp"
#include "lwplg/gradcheck.hpp"
#include "lwplg/model.hpp"
#include "lwplg/oracle.hpp"
#include "lwplg/train.hpp"

using namespace lwplg;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void fail(const std::string& why) {
        pass = false;
        if (!detail.empty()) detail += "; ";
        detail += why;
    }
    void note(const std::string& what) {
        if (!detail.empty()) detail += "; ";
        detail += what;
    }
};

std::vector<double> project_tokens(const Tensor4<double>& x, const Tensor4<double>& w,
                                   int64_t row0, int64_t dim) {
    const int64_t C = x.shape.c, H = x.shape.h, W = x.shape.w;
    std::vector<double> out(static_cast<size_t>(H * W * dim), 0.0);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t xx = 0; xx < W; ++xx)
            for (int64_t d = 0; d < dim; ++d) {
                double acc = 0;
                for (int64_t c = 0; c < C; ++c)
                    acc += w.at(row0 + d, c, 0, 0) * x.at(0, c, y, xx);
                out[static_cast<size_t>((y * W + xx) * dim + d)] = acc;
            }
    return out;
}

std::vector<double> gather_window(const std::vector<double>& tokens, int64_t map_w, int64_t dim,
                                  int64_t wy, int64_t wx, int64_t win) {
    std::vector<double> out(static_cast<size_t>(win * win * dim));
    for (int64_t ty = 0; ty < win; ++ty)
        for (int64_t tx = 0; tx < win; ++tx) {
            const int64_t site = (wy * win + ty) * map_w + (wx * win + tx);
            for (int64_t d = 0; d < dim; ++d)
                out[static_cast<size_t>((ty * win + tx) * dim + d)] =
                    tokens[static_cast<size_t>(site * dim + d)];
        }
    return out;
}

std::string mval(int64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f M", static_cast<double>(v) / 1e6);
    return buf;
}

std::string gval(uint64_t v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f G", static_cast<double>(v) / 1e9);
    return buf;
}

// --- criterion 1: parameter parity --------------------------------------

Outcome criterion_params() {
    Outcome out;
    for (const char* name : {"A", "R"}) {
        auto cfg = variant_config(name);
        auto net = build_model<float>(cfg, 0, false);
        const int64_t total = count_params(net).total;
        if (total != analytic_param_count(cfg))
            out.fail(std::string(name) + ": dual-path parameter counts disagree");
        out.note(std::string(name) + "=" + mval(total));
        if (total < 4750000 || total > 5250000)
            out.fail(std::string(name) + " outside 5.0M +/- 5%");
    }
    return out;
}

// --- criterion 2: flop parity --------------------------------------------

Outcome criterion_flops() {
    Outcome out;
    const uint64_t a = count_flops(variant_config("A"), 224, 224).total();
    const uint64_t r = count_flops(variant_config("R"), 224, 224).total();
    out.note("A=" + gval(a) + " (target 1.6 G +/- 10%)");
    out.note("R=" + gval(r) + " (target 0.7 G +/- 10%)");
    if (a < 1440000000ull || a > 1760000000ull) out.fail("A outside 1.6 G +/- 10%");
    if (r < 630000000ull || r > 770000000ull) out.fail("R outside 0.7 G +/- 10%");
    return out;
}

// --- criterion 3: resolution sweep shape ----------------------------------

Outcome criterion_sweep() {
    Outcome out;
    for (const char* name : {"A", "R"}) {
        auto cfg = variant_config(name);
        auto rows = resolution_sweep(cfg, {224, 448, 896});
        for (size_t i = 1; i < rows.size(); ++i) {
            const double ratio = static_cast<double>(rows[i].total_macs) /
                                 static_cast<double>(rows[i - 1].total_macs);
            if (ratio > 4.6)
                out.fail(std::string(name) + ": doubling ratio " + std::to_string(ratio) +
                         " exceeds 4.6");
        }
        if (rows[0].global_attn_macs != rows[1].global_attn_macs ||
            rows[1].global_attn_macs != rows[2].global_attn_macs)
            out.fail(std::string(name) + ": global attention column varies with size");

        FlopOptions naive;
        naive.naive_global = true;
        auto ref = resolution_sweep(cfg, {224, 448, 896}, naive);
        if (ref[1].global_attn_macs != 16 * ref[0].global_attn_macs ||
            ref[2].global_attn_macs != 16 * ref[1].global_attn_macs)
            out.fail(std::string(name) + ": naive reference column is not 16x per doubling");
    }
    const auto rows =
        resolution_sweep(variant_config("A"), {224, 448, 896});
    out.note("A doubling ratios " +
             std::to_string(static_cast<double>(rows[1].total_macs) /
                            static_cast<double>(rows[0].total_macs)) +
             ", " +
             std::to_string(static_cast<double>(rows[2].total_macs) /
                            static_cast<double>(rows[1].total_macs)));
    return out;
}

// --- criterion 4: patch-embedding savings ---------------------------------

Outcome criterion_embed_savings() {
    Outcome out;
    const int transitions[3][2] = {{64, 96}, {96, 128}, {128, 192}};
    for (const auto& t : transitions) {
        auto cmp = compare_patch_embed_params(t[0], t[1]);
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%d->%d: %.1f%%", t[0], t[1], cmp.savings * 100.0);
        out.note(buf);
        if (cmp.savings < 0.70)
            out.fail(std::string(buf) + " below the 70% savings threshold");
    }
    return out;
}

// --- criterion 5: feed-forward swap direction ------------------------------

Outcome criterion_ffn_swap() {
    Outcome out;
    auto cfg = variant_config("A");
    const uint64_t plus = count_flops(cfg, 224, 224, {FfnKind::Plus, 3, false}).total();
    const uint64_t base = count_flops(cfg, 224, 224, {FfnKind::Baseline, 4, false}).total();
    const double ratio =
        (static_cast<double>(plus) - static_cast<double>(base)) / static_cast<double>(base);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "flop change %+.2f%% (%s -> %s)", ratio * 100.0,
                  gval(base).c_str(), gval(plus).c_str());
    out.note(buf);
    if (ratio < 0.05 || ratio > 0.12) out.fail("outside the +5%..+12% window");
    return out;
}

// --- criterion 6: oracle equivalence ---------------------------------------

Outcome criterion_oracles() {
    Outcome out;
    Rng rng(606);

    {  // local window attention vs per-window naive attention
        WeightStore<double> store;
        ParamBuilder<double> pb{rng, store, false};
        LocalWindowAttention<double> attn(pb, "lwa", 32, 7, 1);
        auto x = Tensor4<double>::zeros({1, 32, 14, 14});
        fill_uniform(x, rng, -1.0, 1.0);
        auto y = attn(x);
        auto q = project_tokens(x, attn.qkv.weight, 0, 32);
        auto k = project_tokens(x, attn.qkv.weight, 32, 32);
        auto v = project_tokens(x, attn.qkv.weight, 64, 32);
        double worst = 0;
        for (int64_t wy = 0; wy < 2; ++wy)
            for (int64_t wx = 0; wx < 2; ++wx) {
                auto ref = oracle::naive_attention(gather_window(q, 14, 32, wy, wx, 7),
                                                   gather_window(k, 14, 32, wy, wx, 7),
                                                   gather_window(v, 14, 32, wy, wx, 7), 49, 32);
                for (int64_t t = 0; t < 49; ++t)
                    for (int64_t c = 0; c < 32; ++c)
                        worst = std::max(worst,
                                         std::abs(y.at(0, c, wy * 7 + t / 7, wx * 7 + t % 7) -
                                                  ref[static_cast<size_t>(t * 32 + c)]));
            }
        out.note("local vs naive max diff " + std::to_string(worst));
        if (worst > 1e-6) out.fail("local window attention deviates from the naive oracle");
    }
    {  // global pooled attention vs composed pool -> attention -> bilinear
        WeightStore<double> store;
        ParamBuilder<double> pb{rng, store, false};
        GlobalPooledAttention<double> attn(pb, "gpa", 48, 14, 1);
        auto x = Tensor4<double>::zeros({1, 48, 28, 28});
        fill_uniform(x, rng, -1.0, 1.0);
        auto y = attn(x);
        auto pooled = oracle::naive_adaptive_pool(x, 14, 14, oracle::PoolMode::Max);
        auto q = project_tokens(pooled, attn.qkv.weight, 0, 48);
        auto k = project_tokens(pooled, attn.qkv.weight, 48, 48);
        auto v = project_tokens(pooled, attn.qkv.weight, 96, 48);
        auto att = oracle::naive_attention(q, k, v, 196, 48);
        auto att_map = Tensor4<double>::zeros({1, 48, 14, 14});
        for (int64_t t = 0; t < 196; ++t)
            for (int64_t c = 0; c < 48; ++c)
                att_map.at(0, c, t / 14, t % 14) = att[static_cast<size_t>(t * 48 + c)];
        const double worst = oracle::max_abs_diff(y, oracle::naive_bilinear(att_map, 28, 28));
        out.note("global vs composed max diff " + std::to_string(worst));
        if (worst > 1e-6) out.fail("global pooled attention deviates from the composed oracle");
    }
    {  // pooling and interpolation kernels vs their brute-force references
        auto x = Tensor4<double>::zeros({1, 3, 17, 11});
        fill_uniform(x, rng, -2.0, 2.0);
        if (oracle::max_abs_diff(adaptive_max_pool2d(x, 7, 5),
                                 oracle::naive_adaptive_pool(x, 7, 5, oracle::PoolMode::Max)) != 0)
            out.fail("adaptive max pooling deviates from the oracle");
        if (oracle::max_abs_diff(adaptive_avg_pool2d(x, 7, 5),
                                 oracle::naive_adaptive_pool(x, 7, 5, oracle::PoolMode::Mean)) >
            1e-12)
            out.fail("adaptive average pooling deviates from the oracle");
        if (oracle::max_abs_diff(bilinear_resize(x, 23, 9), oracle::naive_bilinear(x, 23, 9)) >
            1e-12)
            out.fail("bilinear resize deviates from the oracle");
    }
    return out;
}

// --- criterion 7: gradient soundness ----------------------------------------

Outcome criterion_gradients() {
    Outcome out;
    auto results = run_gradchecks(CheckScope::All, 2024);
    int failures = 0;
    double worst = 0;
    for (const auto& r : results) {
        worst = std::max(worst, r.max_err);
        if (!r.pass) {
            ++failures;
            out.fail(r.name + " max rel err " + std::to_string(r.max_err));
        }
    }
    out.note(std::to_string(results.size()) + " checks, worst rel err " + std::to_string(worst));
    return out;
}

// --- criterion 8: structural invariants -------------------------------------

Outcome criterion_structure() {
    Outcome out;
    Rng rng(808);

    {  // stage-grid and width trace at 224^2 for both variants
        struct Expect {
            const char* name;
            int64_t channels[4];
        };
        const Expect expects[2] = {{"A", {64, 96, 128, 192}}, {"R", {48, 96, 240, 384}}};
        const int64_t grids[4] = {56, 28, 14, 7};
        for (const auto& e : expects) {
            auto cfg = variant_config(e.name);
            auto net = build_model<float>(cfg, 0, false);
            auto x = Tensor4<float>::zeros({1, 3, 224, 224});
            fill_uniform(x, rng, -1.0, 1.0);
            std::vector<Shape4> trace;
            auto logits = net.forward(x, &trace);
            if (!(logits.shape == Shape4{1, 1000, 1, 1}))
                out.fail(std::string(e.name) + ": logits shape " + logits.shape.str());
            for (int s = 0; s < 4; ++s) {
                const Shape4 got = trace[static_cast<size_t>(s + 1)];
                if (got.c != e.channels[s] || got.h != grids[s] || got.w != grids[s])
                    out.fail(std::string(e.name) + " stage " + std::to_string(s + 1) +
                             " trace " + got.str());
            }
            // uniform per-head dimension across every stage
            const int want_dim = e.name[0] == 'A' ? 32 : 48;
            for (const auto& st : cfg.stages)
                if (st.head_dim() != want_dim)
                    out.fail(std::string(e.name) + ": non-uniform head dim");
        }
        out.note("stage grids 56/28/14/7 with the configured widths");
    }
    {  // zero-projection transformer block is a bit-exact identity
        StageConfig stage{12, 1, AttnSpec::make(3, 1), AttnSpec::make(4, 2), false};
        WeightStore<double> store;
        ParamBuilder<double> pb{rng, store, false};
        TransformerBlock<double> block(pb, "block", stage);
        for (auto* w : {&block.attn.local.qkv.weight, &block.attn.global->qkv.weight,
                        &block.ffn.restore.weight})
            for (int64_t i = 0; i < w->numel(); ++i) w->data()[i] = 0.0;
        for (int64_t i = 0; i < block.ffn.restore.bias->numel(); ++i)
            block.ffn.restore.bias->data()[i] = 0.0;
        auto x = Tensor4<double>::zeros({2, 12, 5, 5});
        fill_uniform(x, rng, -1.0, 1.0);
        if (!same_values(block(x), x)) out.fail("zero-projection block is not the identity");
    }
    {  // split/concat and partition/reverse round trips, bit-exact
        auto x = Tensor4<float>::zeros({2, 6, 14, 14});
        fill_uniform(x, rng, -1.0, 1.0);
        auto [a, b] = split_channels(x, 2);
        if (!same_values(concat_channels(a, b), x)) out.fail("split/concat round trip broken");
        if (!same_values(window_reverse(window_partition(x, 7), 7, 14, 14), x))
            out.fail("partition/reverse round trip broken");
    }
    {  // weights save/load round trip, bit-exact store and forward reproduction
        auto net = build_model<float>(micro_config(3), 17, false);
        const std::string path = "acceptance_roundtrip.lwpv";
        net.save(path);
        auto loaded = load_weights<float>(path);
        if (loaded.size() != net.store->size())
            out.fail("weights round trip changed the entry count");
        for (const auto& [name, t] : *net.store)
            if (!same_values(loaded.get(name), t)) {
                out.fail("weights round trip is not bit-exact at '" + name + "'");
                break;
            }
        auto other = build_model<float>(micro_config(3), 99, false);
        other.load(path);
        auto x = Tensor4<float>::zeros({1, 3, 32, 32});
        fill_uniform(x, rng, -1.0, 1.0);
        if (!same_values(net.forward(x), other.forward(x)))
            out.fail("weights round trip does not reproduce the forward pass");
        std::remove(path.c_str());
    }
    return out;
}

// --- criterion 9: learning smoke test ----------------------------------------

Outcome criterion_training() {
    Outcome out;
    ToyTrainOptions opt;  // 3 classes, <= 500 steps, lr 3e-3, batch 16, seed 0
    auto result = train_toy<float>(opt);
    char buf[128];
    std::snprintf(buf, sizeof(buf), "accuracy %.4f after %d steps", result.final_accuracy,
                  result.steps_run);
    out.note(buf);
    if (result.diverged) out.fail("training diverged");
    if (result.steps_run > 500) out.fail("exceeded the 500-step budget");
    if (result.final_accuracy < 0.95) out.fail("below the 95% accuracy bar");

    // determinism: a short re-run reproduces the loss curve bit-exactly
    ToyTrainOptions short_opt = opt;
    short_opt.max_steps = 30;
    short_opt.target_accuracy = 2.0;
    auto r1 = train_toy<float>(short_opt);
    auto r2 = train_toy<float>(short_opt);
    if (r1.losses != r2.losses) out.fail("loss curve is not deterministic for a fixed seed");
    return out;
}

}  // namespace

int main() {
    struct Entry {
        int id;
        const char* name;
        Outcome (*run)();
    };
    const Entry entries[] = {
        {1, "parameter parity (5.0 M +/- 5%, both variants)", criterion_params},
        {2, "FLOP parity at 224^2 (A 1.6 G, R 0.7 G, +/- 10%)", criterion_flops},
        {3, "resolution sweep shape (near-linear growth, constant global column)",
         criterion_sweep},
        {4, "patch-embedding parameter savings >= 70%", criterion_embed_savings},
        {5, "feed-forward swap moves FLOPs by +5%..+12%", criterion_ffn_swap},
        {6, "oracle equivalence (attention, pooling, interpolation)", criterion_oracles},
        {7, "gradient soundness (finite differences, rel err < 1e-5)", criterion_gradients},
        {8, "structural invariants (shape trace, identities, round trips)", criterion_structure},
        {9, "learning smoke test (>= 95% within 500 SGD steps)", criterion_training},
    };

    int failures = 0;
    for (const auto& e : entries) {
        const auto start = std::chrono::steady_clock::now();
        Outcome result = e.run();
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("[%s] criterion %d: %s (%.1fs)%s%s\n", result.pass ? "PASS" : "FAIL", e.id,
                    e.name, secs, result.detail.empty() ? "" : " -- ", result.detail.c_str());
        std::fflush(stdout);
        if (!result.pass) ++failures;
    }
    std::printf("%d of 9 criteria passed\n", 9 - failures);
    return failures;
}
