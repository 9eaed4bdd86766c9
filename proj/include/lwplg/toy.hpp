#pragma once

// Procedural shape-classification dataset for desk-scale training runs.
// Class 0: filled disc, class 1: filled rectangle, class 2: cross. Every
// sample is a pure function of (seed, index); labels cycle through the
// classes, so any contiguous index range of length k * num_classes is
// class-balanced.

#include <cstdint>
#include <vector>

#include "lwplg/tensor.hpp"

namespace lwplg {

constexpr int kToyImageSize = 32;
constexpr int kToyMaxClasses = 3;

template <typename T>
struct ToySample {
    Tensor4<T> image;  // (1, 3, 32, 32)
    int label = 0;
};

namespace detail {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

}  // namespace detail

template <typename T>
ToySample<T> make_toy_sample(uint64_t seed, int64_t index, int num_classes) {
    require(num_classes >= 1 && num_classes <= kToyMaxClasses,
            "make_toy_sample: num_classes must lie in 1.." + std::to_string(kToyMaxClasses));
    const int label = static_cast<int>(index % num_classes);
    Rng rng(detail::splitmix64(seed ^ detail::splitmix64(static_cast<uint64_t>(index) + 1)));

    const int S = kToyImageSize;
    Tensor4<T> img = Tensor4<T>::zeros({1, 3, S, S});

    const double background = rng.uniform(0.05, 0.20);
    const double foreground = rng.uniform(0.80, 0.95);
    const double cx = rng.uniform(13.0, 19.0);
    const double cy = rng.uniform(13.0, 19.0);
    double channel_tint[3];
    for (double& t : channel_tint) t = rng.uniform(0.85, 1.0);

    std::vector<bool> mask(static_cast<size_t>(S * S), false);
    if (label == 0) {
        const double radius = rng.uniform(6.0, 9.0);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double dx = x - cx, dy = y - cy;
                if (dx * dx + dy * dy <= radius * radius) mask[static_cast<size_t>(y * S + x)] = true;
            }
    } else if (label == 1) {
        const double hw = rng.uniform(5.0, 8.0);
        const double hh = rng.uniform(5.0, 8.0);
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x)
                if (std::abs(x - cx) <= hw && std::abs(y - cy) <= hh)
                    mask[static_cast<size_t>(y * S + x)] = true;
    } else {
        const double arm = rng.uniform(7.0, 10.0);
        const double thick = 1.6;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const bool horiz = std::abs(y - cy) <= thick && std::abs(x - cx) <= arm;
                const bool vert = std::abs(x - cx) <= thick && std::abs(y - cy) <= arm;
                if (horiz || vert) mask[static_cast<size_t>(y * S + x)] = true;
            }
    }

    const double noise_sigma = 0.05;
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double base = mask[static_cast<size_t>(y * S + x)]
                                        ? foreground * channel_tint[c]
                                        : background;
                double v = base + noise_sigma * rng.normal();
                v = std::min(std::max(v, 0.0), 1.0);
                // standardize to the inference-time convention (mean .5, std .5)
                img.at(0, c, y, x) = static_cast<T>((v - 0.5) / 0.5);
            }

    return {std::move(img), label};
}

// Batch of consecutive samples starting at `first`, stacked along the batch axis.
template <typename T>
std::pair<Tensor4<T>, std::vector<int>> make_toy_batch(uint64_t seed, int64_t first, int count,
                                                       int num_classes) {
    const int S = kToyImageSize;
    Tensor4<T> batch = Tensor4<T>::zeros({count, 3, S, S});
    std::vector<int> labels(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
        ToySample<T> sample = make_toy_sample<T>(seed, first + i, num_classes);
        labels[static_cast<size_t>(i)] = sample.label;
        const int64_t plane = static_cast<int64_t>(3) * S * S;
        for (int64_t j = 0; j < plane; ++j) batch.data()[i * plane + j] = sample.image.data()[j];
    }
    return {std::move(batch), std::move(labels)};
}

}  // namespace lwplg
