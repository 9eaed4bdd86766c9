#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "lwplg/train.hpp"

using namespace lwplg;

TEST_CASE("toy samples are pure functions of seed and index") {
    auto a = make_toy_sample<float>(7, 123, 3);
    auto b = make_toy_sample<float>(7, 123, 3);
    CHECK(a.label == b.label);
    CHECK(same_values(a.image, b.image));

    auto c = make_toy_sample<float>(8, 123, 3);
    CHECK_FALSE(same_values(a.image, c.image));
}

TEST_CASE("toy labels cycle, balancing any aligned index range") {
    int counts[3] = {0, 0, 0};
    for (int64_t i = 30; i < 60; ++i) {
        auto s = make_toy_sample<float>(1, i, 3);
        CHECK(s.label == static_cast<int>(i % 3));
        counts[s.label]++;
    }
    CHECK(counts[0] == 10);
    CHECK(counts[1] == 10);
    CHECK(counts[2] == 10);
}

TEST_CASE("toy images are standardized and in-range") {
    auto s = make_toy_sample<float>(3, 5, 3);
    CHECK(s.image.shape == Shape4{1, 3, 32, 32});
    for (int64_t i = 0; i < s.image.numel(); ++i) {
        CHECK(s.image.data()[i] >= -1.0f);
        CHECK(s.image.data()[i] <= 1.0f);
    }
    CHECK_THROWS_AS(make_toy_sample<float>(0, 0, 4), std::invalid_argument);
}

TEST_CASE("single-class training is trivially accurate") {
    ToyTrainOptions opt;
    opt.num_classes = 1;
    opt.max_steps = 1;
    auto result = train_toy<float>(opt);
    CHECK(result.final_accuracy == 1.0);
}

TEST_CASE("short training runs are deterministic and reduce the loss") {
    ToyTrainOptions opt;
    opt.num_classes = 3;
    opt.max_steps = 60;
    opt.seed = 0;
    opt.target_accuracy = 2.0;  // disable early stop for the comparison
    auto r1 = train_toy<float>(opt);
    auto r2 = train_toy<float>(opt);
    REQUIRE(r1.losses.size() == r2.losses.size());
    for (size_t i = 0; i < r1.losses.size(); ++i) CHECK(r1.losses[i] == r2.losses[i]);
    CHECK_FALSE(r1.diverged);

    double head = 0, tail = 0;
    for (int i = 0; i < 15; ++i) head += r1.losses[static_cast<size_t>(i)];
    for (size_t i = r1.losses.size() - 15; i < r1.losses.size(); ++i) tail += r1.losses[i];
    INFO("head mean=", head / 15.0, " tail mean=", tail / 15.0);
    CHECK(tail < head);
}
