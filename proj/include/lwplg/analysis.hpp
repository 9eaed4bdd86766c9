#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <future>
#include <string>
#include <vector>

#include "lwplg/config.hpp"
#include "lwplg/model.hpp"

namespace lwplg {

// ---------------------------------------------------------------------------
// Parameter accounting
// ---------------------------------------------------------------------------

struct ParamRow {
    std::string path;
    Shape4 shape;
    int64_t count = 0;
};

struct ParamReport {
    std::vector<ParamRow> rows;
    std::vector<std::pair<std::string, int64_t>> group_totals;  // stem, stage1..4, expansion, head
    int64_t total = 0;
};

template <typename T>
ParamReport count_params(const Network<T>& net) {
    ParamReport report;
    for (const auto& [name, t] : *net.store) {
        report.rows.push_back({name, t.shape, t.numel()});
        const std::string group = name.substr(0, name.find('/'));
        if (report.group_totals.empty() || report.group_totals.back().first != group)
            report.group_totals.emplace_back(group, 0);
        report.group_totals.back().second += t.numel();
        report.total += t.numel();
    }
    return report;
}

namespace detail {

inline int64_t conv_params(int64_t c_in, int64_t c_out, int64_t k, int64_t groups, bool bias) {
    return c_out * (c_in / groups) * k * k + (bias ? c_out : 0);
}

inline int64_t se_params(int64_t c, int64_t divisor) {
    const int64_t hidden = c / divisor;
    return conv_params(c, hidden, 1, 1, true) + conv_params(hidden, c, 1, 1, true);
}

inline int64_t lw_embed_params(int64_t ci, int64_t co) {
    return conv_params(ci, ci, 3, ci, true) + se_params(ci, 8) + conv_params(ci, ci, 1, 1, true) +
           conv_params(ci, co, 1, 1, true) + conv_params(co, co, 3, co, true) + 2 * co;
}

inline int64_t baseline_embed_params(int64_t ci, int64_t co) {
    return conv_params(ci, ci, 3, ci, true) + se_params(ci, 4) + conv_params(ci, ci, 1, 1, true) +
           conv_params(ci, co, 3, 1, true) + 2 * co;
}

inline int64_t ffn_plus_params(int64_t c, int64_t alpha) {
    const int64_t hidden = alpha * c;
    return conv_params(c, hidden, 1, 1, true) + conv_params(hidden, hidden, 3, hidden, true) +
           2 * hidden + conv_params(2 * hidden, c, 1, 1, true);
}

inline int64_t ffn_baseline_params(int64_t c, int64_t alpha) {
    const int64_t hidden = alpha * c;
    return conv_params(c, hidden, 1, 1, true) + conv_params(hidden, hidden, 3, hidden, true) +
           conv_params(hidden, c, 1, 1, true);
}

inline int64_t block_params(const StageConfig& s, int64_t alpha = 3) {
    const int64_t c = s.channels, cl = s.local_channels(), cg = s.global_channels();
    int64_t qkv = conv_params(cl, 3 * cl, 1, 1, false);
    if (s.gsa.present) qkv += conv_params(cg, 3 * cg, 1, 1, false);
    return 4 * c + qkv + ffn_plus_params(c, alpha);
}

}  // namespace detail

// Closed-form parameter count derived from the configuration alone; kept
// independent of the built network so the two paths cross-check each other.
inline int64_t analytic_param_count(const ModelConfig& cfg) {
    const int64_t c1 = cfg.stem_channels;
    int64_t total = detail::conv_params(cfg.img_channels, c1 / 2, 3, 1, true) +
                    detail::conv_params(c1 / 2, c1, 3, 1, true) + 2 * c1;
    int64_t prev = c1;
    for (const auto& s : cfg.stages) {
        if (s.downsample_in) total += detail::lw_embed_params(prev, s.channels);
        total += s.repeats * detail::block_params(s);
        prev = s.channels;
    }
    total += detail::conv_params(prev, prev, 3, prev, true) +
             detail::conv_params(prev, cfg.expansion_channels, 1, 1, true) +
             2 * cfg.expansion_channels;
    total += detail::conv_params(cfg.expansion_channels, cfg.num_classes, 1, 1, true);
    return total;
}

// Parameter comparison of the two stride-2 embeddings at one transition.
struct EmbedComparison {
    int64_t baseline = 0;
    int64_t lw = 0;
    double savings = 0.0;  // fraction of baseline parameters removed
};

inline EmbedComparison compare_patch_embed_params(int c_in, int c_out) {
    require(c_in >= 8 && c_out >= 8, "compare_patch_embed_params: widths must be >= 8");
    EmbedComparison cmp;
    cmp.baseline = detail::baseline_embed_params(c_in, c_out);
    cmp.lw = detail::lw_embed_params(c_in, c_out);
    cmp.savings = 1.0 - static_cast<double>(cmp.lw) / static_cast<double>(cmp.baseline);
    return cmp;
}

// ---------------------------------------------------------------------------
// Analytic FLOP accounting. Convention: 1 MAC = 1 FLOP; convolutions,
// projections and attention score/value products are counted; normalization,
// activations, pooling and interpolation are excluded. Batch size one.
// ---------------------------------------------------------------------------

inline const char* kFlopConvention =
    "1 MAC = 1 FLOP; conv/linear projections and attention score/value products counted; "
    "norms, activations, pooling and interpolation excluded";

enum class FlopBucket { Conv, LocalAttn, GlobalAttn };

struct FlopRow {
    std::string path;
    uint64_t macs = 0;
    FlopBucket bucket = FlopBucket::Conv;
};

struct FlopReport {
    int height = 0;
    int width = 0;
    std::string convention = kFlopConvention;
    std::vector<FlopRow> rows;
    uint64_t conv_macs = 0;
    uint64_t local_attn_macs = 0;
    uint64_t global_attn_macs = 0;

    uint64_t total() const { return conv_macs + local_attn_macs + global_attn_macs; }
};

enum class FfnKind { Plus, Baseline };

struct FlopOptions {
    FfnKind ffn = FfnKind::Plus;
    int ffn_alpha = 3;
    // Reference mode for growth comparisons: the global branch attends over
    // every token instead of the pooled fixed-size window.
    bool naive_global = false;
};

namespace detail {

struct FlopAcc {
    FlopReport report;

    void add(const std::string& path, uint64_t macs, FlopBucket bucket) {
        report.rows.push_back({path, macs, bucket});
        switch (bucket) {
            case FlopBucket::Conv: report.conv_macs += macs; break;
            case FlopBucket::LocalAttn: report.local_attn_macs += macs; break;
            case FlopBucket::GlobalAttn: report.global_attn_macs += macs; break;
        }
    }
};

}  // namespace detail

inline FlopReport count_flops(const ModelConfig& cfg, int height, int width,
                              const FlopOptions& opts = {}) {
    cfg.validate();
    require(height >= 32 && width >= 32, "count_flops: input below the 32x32 minimum");
    detail::FlopAcc acc;
    acc.report.height = height;
    acc.report.width = width;

    auto u = [](int64_t v) { return static_cast<uint64_t>(v); };

    int64_t h = conv_out_size(height, 3, 2, 1);
    int64_t w = conv_out_size(width, 3, 2, 1);
    const int64_t c1 = cfg.stem_channels;
    acc.add("stem/conv1", u(h * w * 9 * cfg.img_channels * (c1 / 2)), FlopBucket::Conv);
    h = conv_out_size(h, 3, 2, 1);
    w = conv_out_size(w, 3, 2, 1);
    acc.add("stem/conv2", u(h * w * 9 * (c1 / 2) * c1), FlopBucket::Conv);

    int64_t prev = c1;
    for (size_t i = 0; i < cfg.stages.size(); ++i) {
        const auto& s = cfg.stages[i];
        const std::string sname = "stage" + std::to_string(i + 1);
        if (s.downsample_in) {
            acc.add(sname + "/down/dw1", u(h * w * 9 * prev), FlopBucket::Conv);
            acc.add(sname + "/down/se", u(2 * prev * (prev / 8)), FlopBucket::Conv);
            acc.add(sname + "/down/pw_mix", u(h * w * prev * prev), FlopBucket::Conv);
            const int64_t h2 = conv_out_size(h, 1, 2, 0);
            const int64_t w2 = conv_out_size(w, 1, 2, 0);
            acc.add(sname + "/down/pw_down", u(h2 * w2 * prev * s.channels), FlopBucket::Conv);
            acc.add(sname + "/down/dw2", u(h2 * w2 * 9 * s.channels), FlopBucket::Conv);
            h = h2;
            w = w2;
        }
        const int64_t c = s.channels;
        const int64_t cl = s.local_channels();
        const int64_t cg = s.global_channels();
        const int64_t win = s.lsa.window;
        const int64_t hp = (h + win - 1) / win * win;
        const int64_t wp = (w + win - 1) / win * win;
        const int64_t windows = (hp / win) * (wp / win);
        const int64_t wtok = win * win;

        uint64_t local_qkv = u(hp * wp * cl * 3 * cl);
        uint64_t local_attn = u(windows) * u(2 * wtok * wtok * cl);
        uint64_t global_qkv = 0, global_attn = 0;
        if (s.gsa.present) {
            const int64_t gtok = opts.naive_global
                                     ? h * w
                                     : static_cast<int64_t>(s.gsa.window) * s.gsa.window;
            global_qkv = u(gtok * cg * 3 * cg);
            global_attn = u(2 * gtok * gtok * cg);
        }
        uint64_t ffn = 0;
        if (opts.ffn == FfnKind::Plus) {
            const int64_t hidden = static_cast<int64_t>(opts.ffn_alpha) * c;
            ffn = u(h * w * (c * hidden + 9 * hidden + 2 * hidden * c));
        } else {
            const int64_t hidden = static_cast<int64_t>(opts.ffn_alpha) * c;
            ffn = u(h * w * (c * hidden + 9 * hidden + hidden * c));
        }
        for (int b = 0; b < s.repeats; ++b) {
            const std::string bname = sname + "/block" + std::to_string(b);
            acc.add(bname + "/attn/local/qkv", local_qkv, FlopBucket::Conv);
            acc.add(bname + "/attn/local/scores+values", local_attn, FlopBucket::LocalAttn);
            if (s.gsa.present) {
                acc.add(bname + "/attn/global/qkv", global_qkv, FlopBucket::Conv);
                acc.add(bname + "/attn/global/scores+values", global_attn,
                        FlopBucket::GlobalAttn);
            }
            acc.add(bname + "/ffn", ffn, FlopBucket::Conv);
        }
        prev = c;
    }

    acc.add("expansion/dw", u(h * w * 9 * prev), FlopBucket::Conv);
    acc.add("expansion/pw", u(h * w * prev * cfg.expansion_channels), FlopBucket::Conv);
    acc.add("head", u(cfg.expansion_channels * cfg.num_classes), FlopBucket::Conv);
    return acc.report;
}

// ---------------------------------------------------------------------------
// Resolution sweep
// ---------------------------------------------------------------------------

struct SweepRow {
    int size = 0;
    uint64_t total_macs = 0;
    uint64_t local_attn_macs = 0;
    uint64_t global_attn_macs = 0;
    uint64_t conv_macs = 0;
};

inline int sweep_thread_cap() {
    if (const char* env = std::getenv("LWPV_THREADS")) {
        const int v = std::atoi(env);
        if (v >= 1) return v;
    }
    return 1;
}

inline std::vector<SweepRow> resolution_sweep(const ModelConfig& cfg, const std::vector<int>& sizes,
                                              const FlopOptions& opts = {}) {
    for (int s : sizes) require(s >= 32, "resolution_sweep: sizes must be >= 32");
    std::vector<SweepRow> rows(sizes.size());
    auto compute = [&](size_t i) {
        const FlopReport r = count_flops(cfg, sizes[i], sizes[i], opts);
        rows[i] = {sizes[i], r.total(), r.local_attn_macs, r.global_attn_macs, r.conv_macs};
    };
    const int threads = sweep_thread_cap();
    if (threads <= 1 || sizes.size() <= 1) {
        for (size_t i = 0; i < sizes.size(); ++i) compute(i);
    } else {
        std::vector<std::future<void>> pending;
        for (size_t i = 0; i < sizes.size(); ++i)
            pending.push_back(std::async(std::launch::async, compute, i));
        for (auto& f : pending) f.get();
    }
    return rows;
}

inline std::string gflops_str(uint64_t macs) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", static_cast<double>(macs) / 1e9);
    return buf;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::string out = "size,total_gflops,local_attn_gflops,global_attn_gflops,conv_gflops\n";
    for (const auto& r : rows) {
        out += std::to_string(r.size) + "," + gflops_str(r.total_macs) + "," +
               gflops_str(r.local_attn_macs) + "," + gflops_str(r.global_attn_macs) + "," +
               gflops_str(r.conv_macs) + "\n";
    }
    return out;
}

}  // namespace lwplg
