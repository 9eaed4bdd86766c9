#pragma once

#include <memory>
#include <string>
#include <vector>

#include "lwplg/blocks.hpp"
#include "lwplg/config.hpp"
#include "lwplg/weights.hpp"

namespace lwplg {

// Built, weight-bearing network. Blocks hold shallow handles onto the
// tensors owned by the store, so loading weights by name updates the
// network in place.
template <typename T>
struct Network {
    ModelConfig cfg;
    std::shared_ptr<WeightStore<T>> store;

    struct Stage {
        std::optional<LwPatchEmbed<T>> down;
        std::vector<TransformerBlock<T>> blocks;
    };

    ConvStem<T> stem;
    std::vector<Stage> stages;
    ChannelExpansion<T> expansion;
    Conv2dLayer<T> head;

    // Forward to logits (n, num_classes, 1, 1). When trace is given it
    // receives the output shape of the stem and of every stage.
    Tensor4<T> forward(const Tensor4<T>& x, std::vector<Shape4>* trace = nullptr) const {
        require(x.shape.c == cfg.img_channels,
                "forward: input has " + std::to_string(x.shape.c) + " channels, expected " +
                    std::to_string(cfg.img_channels));
        require(x.shape.h >= 32 && x.shape.w >= 32,
                "forward: input " + x.shape.str() + " below the 32x32 minimum");
        auto y = stem(x);
        if (trace) trace->push_back(y.shape);
        for (const auto& stage : stages) {
            if (stage.down) y = (*stage.down)(y);
            for (const auto& block : stage.blocks) y = block(y);
            if (trace) trace->push_back(y.shape);
        }
        y = expansion(y);
        if (trace) trace->push_back(y.shape);
        return head(adaptive_avg_pool2d(y, 1, 1));
    }

    void load(const std::string& path) {
        WeightStore<T> loaded = load_weights<T>(path);
        require(loaded.size() == store->size(),
                "load: file has " + std::to_string(loaded.size()) + " tensors, network has " +
                    std::to_string(store->size()));
        for (auto& [name, t] : *store) {
            const Tensor4<T>& src = loaded.get(name);
            require(src.shape == t.shape, "load: tensor '" + name + "' has shape " +
                                              src.shape.str() + ", expected " + t.shape.str());
            *t.buf = *src.buf;
        }
    }

    void save(const std::string& path) const { save_weights(*store, path); }
};

// Deterministic assembly: a given (config, seed) pair always produces a
// bit-identical weight store.
template <typename T>
Network<T> build_model(const ModelConfig& cfg, uint64_t seed, bool requires_grad = false) {
    cfg.validate();
    Network<T> net;
    net.cfg = cfg;
    net.store = std::make_shared<WeightStore<T>>();
    Rng rng(seed);
    ParamBuilder<T> pb{rng, *net.store, requires_grad};

    net.stem = ConvStem<T>(pb, "stem", cfg.img_channels, cfg.stem_channels);
    int prev = cfg.stem_channels;
    for (size_t i = 0; i < cfg.stages.size(); ++i) {
        const auto& sc = cfg.stages[i];
        const std::string sname = "stage" + std::to_string(i + 1);
        typename Network<T>::Stage stage;
        if (sc.downsample_in) stage.down = LwPatchEmbed<T>(pb, sname + "/down", prev, sc.channels);
        for (int b = 0; b < sc.repeats; ++b)
            stage.blocks.emplace_back(pb, sname + "/block" + std::to_string(b), sc);
        net.stages.push_back(std::move(stage));
        prev = sc.channels;
    }
    net.expansion = ChannelExpansion<T>(pb, "expansion", prev, cfg.expansion_channels);
    net.head = Conv2dLayer<T>(pb, "head", cfg.expansion_channels, cfg.num_classes, 1, 1, 0, 1,
                              true);
    return net;
}

}  // namespace lwplg
