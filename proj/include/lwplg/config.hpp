#pragma once

#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "lwplg/tensor.hpp"

namespace lwplg {

// One attention branch: window side length in tokens and head count. The
// global branch may be absent for a stage.
struct AttnSpec {
    int window = 0;
    int heads = 0;
    bool present = false;

    static AttnSpec make(int window, int heads) { return {window, heads, true}; }
    static AttnSpec absent() { return {0, 0, false}; }
};

struct StageConfig {
    int channels = 0;
    int repeats = 0;
    AttnSpec lsa;
    AttnSpec gsa;
    bool downsample_in = false;

    // Channel split: the local branch receives heads_l / (heads_l + heads_g)
    // of the stage width, which keeps the per-head dimension uniform across
    // both branches for every published configuration.
    int local_channels() const {
        if (!gsa.present) return channels;
        return channels * lsa.heads / (lsa.heads + gsa.heads);
    }
    int global_channels() const { return channels - local_channels(); }
    int head_dim() const {
        const int total = lsa.heads + (gsa.present ? gsa.heads : 0);
        return channels / total;
    }
};

struct ModelConfig {
    std::string name;
    int stem_channels = 0;
    std::vector<StageConfig> stages;
    int expansion_channels = 0;
    int num_classes = 1000;
    int img_channels = 3;

    void validate() const {
        require(stages.size() == 4, "ModelConfig: expected exactly 4 stages, got " +
                                        std::to_string(stages.size()));
        require(stem_channels >= 2 && stem_channels % 2 == 0,
                "ModelConfig: stem channels must be even, got " + std::to_string(stem_channels));
        require(!stages[0].downsample_in, "ModelConfig: stage 1 must not carry a downsample");
        require(num_classes >= 1, "ModelConfig: num_classes must be positive");
        int prev = stem_channels;
        for (size_t i = 0; i < stages.size(); ++i) {
            const auto& s = stages[i];
            const std::string tag = "stage " + std::to_string(i + 1);
            require(s.repeats >= 1, "ModelConfig: " + tag + " repeats must be >= 1");
            require(s.lsa.present && s.lsa.window >= 1 && s.lsa.heads >= 1,
                    "ModelConfig: " + tag + " needs a local attention spec");
            if (s.gsa.present)
                require(s.gsa.window >= 1 && s.gsa.heads >= 1,
                        "ModelConfig: " + tag + " global attention spec invalid");
            const int total_heads = s.lsa.heads + (s.gsa.present ? s.gsa.heads : 0);
            require(s.channels % total_heads == 0,
                    "ModelConfig: " + tag + " channels " + std::to_string(s.channels) +
                        " not divisible by total heads " + std::to_string(total_heads));
            require(s.local_channels() % s.lsa.heads == 0,
                    "ModelConfig: " + tag + " local channels not divisible by heads");
            if (s.gsa.present)
                require(s.global_channels() % s.gsa.heads == 0,
                        "ModelConfig: " + tag + " global channels not divisible by heads");
            if (i == 0)
                require(s.channels == prev,
                        "ModelConfig: stage 1 width must match the stem output");
            else
                require(s.downsample_in, "ModelConfig: " + tag + " must carry a downsample");
            prev = s.channels;
        }
        require(expansion_channels >= 1, "ModelConfig: expansion width must be positive");
    }
};

// Published model configurations.
inline ModelConfig variant_config(const std::string& name) {
    ModelConfig cfg;
    cfg.name = name;
    if (name == "A") {
        cfg.stem_channels = 64;
        cfg.stages = {
            {64, 3, AttnSpec::make(7, 1), AttnSpec::make(7, 1), false},
            {96, 4, AttnSpec::make(7, 1), AttnSpec::make(14, 2), true},
            {128, 12, AttnSpec::make(7, 2), AttnSpec::make(14, 2), true},
            {192, 4, AttnSpec::make(7, 3), AttnSpec::make(7, 3), true},
        };
        cfg.expansion_channels = 576;
    } else if (name == "R") {
        cfg.stem_channels = 48;
        cfg.stages = {
            {48, 1, AttnSpec::make(7, 1), AttnSpec::absent(), false},
            {96, 1, AttnSpec::make(7, 1), AttnSpec::make(14, 1), true},
            {240, 3, AttnSpec::make(7, 2), AttnSpec::make(14, 3), true},
            {384, 1, AttnSpec::make(7, 4), AttnSpec::make(7, 4), true},
        };
        cfg.expansion_channels = 960;
    } else {
        fail("variant_config: unknown variant '" + name + "' (expected A or R)");
    }
    cfg.validate();
    return cfg;
}

// Desk-scale configuration used by the toy trainer and end-to-end gradient
// checks: one block per stage, variant-A attention shapes, uniform head
// dimension 8.
inline ModelConfig micro_config(int num_classes) {
    ModelConfig cfg;
    cfg.name = "micro";
    cfg.stem_channels = 16;
    cfg.stages = {
        {16, 1, AttnSpec::make(7, 1), AttnSpec::make(7, 1), false},
        {24, 1, AttnSpec::make(7, 1), AttnSpec::make(14, 2), true},
        {32, 1, AttnSpec::make(7, 2), AttnSpec::make(14, 2), true},
        {48, 1, AttnSpec::make(7, 3), AttnSpec::make(7, 3), true},
    };
    cfg.expansion_channels = 96;
    cfg.num_classes = num_classes;
    cfg.validate();
    return cfg;
}

// --- JSON round trip; unknown keys are rejected ----------------------------

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                       const std::string& where) {
    require(j.is_object(), "config json: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) ok = true;
        require(ok, "config json: unknown key '" + it.key() + "' in " + where);
    }
}

inline nlohmann::json attn_to_json(const AttnSpec& a) {
    return {{"window", a.window}, {"heads", a.heads}, {"present", a.present}};
}

inline AttnSpec attn_from_json(const nlohmann::json& j, const std::string& where) {
    check_keys(j, {"window", "heads", "present"}, where);
    AttnSpec a;
    a.window = j.at("window").get<int>();
    a.heads = j.at("heads").get<int>();
    a.present = j.at("present").get<bool>();
    return a;
}

}  // namespace detail

inline nlohmann::json config_to_json(const ModelConfig& cfg) {
    nlohmann::json stages = nlohmann::json::array();
    for (const auto& s : cfg.stages)
        stages.push_back({{"channels", s.channels},
                          {"repeats", s.repeats},
                          {"lsa", detail::attn_to_json(s.lsa)},
                          {"gsa", detail::attn_to_json(s.gsa)},
                          {"downsample_in", s.downsample_in}});
    return {{"name", cfg.name},
            {"stem_channels", cfg.stem_channels},
            {"stages", stages},
            {"expansion_channels", cfg.expansion_channels},
            {"num_classes", cfg.num_classes},
            {"img_channels", cfg.img_channels}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
    detail::check_keys(j,
                       {"name", "stem_channels", "stages", "expansion_channels", "num_classes",
                        "img_channels"},
                       "model config");
    ModelConfig cfg;
    cfg.name = j.at("name").get<std::string>();
    cfg.stem_channels = j.at("stem_channels").get<int>();
    require(j.at("stages").is_array(), "config json: stages must be an array");
    int idx = 0;
    for (const auto& js : j.at("stages")) {
        const std::string where = "stage[" + std::to_string(idx++) + "]";
        detail::check_keys(js, {"channels", "repeats", "lsa", "gsa", "downsample_in"}, where);
        StageConfig s;
        s.channels = js.at("channels").get<int>();
        s.repeats = js.at("repeats").get<int>();
        s.lsa = detail::attn_from_json(js.at("lsa"), where + ".lsa");
        s.gsa = detail::attn_from_json(js.at("gsa"), where + ".gsa");
        s.downsample_in = js.at("downsample_in").get<bool>();
        cfg.stages.push_back(s);
    }
    cfg.expansion_channels = j.at("expansion_channels").get<int>();
    cfg.num_classes = j.at("num_classes").get<int>();
    if (j.contains("img_channels")) cfg.img_channels = j.at("img_channels").get<int>();
    cfg.validate();
    return cfg;
}

inline ModelConfig load_config(const std::string& path) {
    std::ifstream is(path);
    require(is.good(), "load_config: cannot open '" + path + "'");
    nlohmann::json j;
    is >> j;
    return config_from_json(j);
}

// Reduced fraction of channels routed to the local branch, e.g. "1/2".
inline std::string split_ratio_str(const StageConfig& s) {
    if (!s.gsa.present) return "1";
    int num = s.lsa.heads, den = s.lsa.heads + s.gsa.heads;
    int g = std::gcd(num, den);
    return std::to_string(num / g) + "/" + std::to_string(den / g);
}

}  // namespace lwplg
