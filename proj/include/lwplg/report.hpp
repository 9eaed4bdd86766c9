#pragma once

// Text / JSON / CSV rendering for the describe, params and flops surfaces.
// Kept out of the CLI so the formats can be golden-tested.

#include <cstdio>
#include <string>

#include "json.hpp"
#include "lwplg/analysis.hpp"
#include "lwplg/config.hpp"

namespace lwplg {

inline std::string describe_text(const ModelConfig& cfg) {
    std::string out;
    out += "LW PLG-ViT variant " + cfg.name + " (image channels " +
           std::to_string(cfg.img_channels) + ")\n";
    out += "stem: s=4, C1=" + std::to_string(cfg.stem_channels) + "\n";
    for (size_t i = 0; i < cfg.stages.size(); ++i) {
        const auto& s = cfg.stages[i];
        out += "stage " + std::to_string(i + 1) + ": blocks=" + std::to_string(s.repeats) +
               ", C=" + std::to_string(s.channels) + ", lsa " + std::to_string(s.lsa.window) +
               "/" + std::to_string(s.lsa.heads);
        if (s.gsa.present)
            out += ", gsa " + std::to_string(s.gsa.window) + "/" + std::to_string(s.gsa.heads);
        else
            out += ", gsa: absent";
        out += ", r=" + split_ratio_str(s) + ", head_dim=" + std::to_string(s.head_dim()) + "\n";
    }
    out += "expansion: s=1, C5=" + std::to_string(cfg.expansion_channels) + "\n";
    out += "head: global average pool + linear -> " + std::to_string(cfg.num_classes) +
           " classes\n";
    return out;
}

inline std::string params_summary_line(int64_t total) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f M", static_cast<double>(total) / 1e6);
    return "total: " + std::to_string(total) + " (" + buf + ")";
}

inline nlohmann::json params_json(const ModelConfig& cfg, const ParamReport& report) {
    nlohmann::json groups = nlohmann::json::array();
    for (const auto& [group, count] : report.group_totals)
        groups.push_back({{"group", group}, {"params", count}});
    return {{"variant", cfg.name},
            {"classes", cfg.num_classes},
            {"total_params", report.total},
            {"groups", groups}};
}

inline std::string params_csv(const ParamReport& report) {
    auto dims = [](const Shape4& s) {
        return std::to_string(s.n) + "x" + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
               std::to_string(s.w);
    };
    std::string out = "path,shape,params\n";
    for (const auto& row : report.rows)
        out += row.path + "," + dims(row.shape) + "," + std::to_string(row.count) + "\n";
    out += "total,," + std::to_string(report.total) + "\n";
    return out;
}

inline std::string flops_text(const ModelConfig& cfg, const FlopReport& report) {
    char gbuf[64];
    std::snprintf(gbuf, sizeof(gbuf), "%.4f G", static_cast<double>(report.total()) / 1e9);
    std::string out;
    out += "variant " + cfg.name + " at " + std::to_string(report.height) + "x" +
           std::to_string(report.width) + "\n";
    out += "convention: " + report.convention + "\n";
    out += "conv/projection MACs:    " + std::to_string(report.conv_macs) + "\n";
    out += "local attention MACs:    " + std::to_string(report.local_attn_macs) + "\n";
    out += "global attention MACs:   " + std::to_string(report.global_attn_macs) + "\n";
    out += "total: " + std::to_string(report.total()) + " MACs (" + gbuf + ")\n";
    return out;
}

inline nlohmann::json flops_json(const ModelConfig& cfg, const FlopReport& report) {
    return {{"variant", cfg.name},
            {"height", report.height},
            {"width", report.width},
            {"convention", report.convention},
            {"conv_macs", report.conv_macs},
            {"local_attn_macs", report.local_attn_macs},
            {"global_attn_macs", report.global_attn_macs},
            {"total_macs", report.total()},
            {"total_gflops", static_cast<double>(report.total()) / 1e9}};
}

}  // namespace lwplg
