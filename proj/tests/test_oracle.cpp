#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "lwplg/oracle.hpp"

using namespace lwplg;

TEST_CASE("naive_attention on a single token returns the value row") {
    std::vector<double> q = {0.3, -0.7};
    std::vector<double> k = {1.1, 0.2};
    std::vector<double> v = {4.0, -2.5};
    auto out = oracle::naive_attention(q, k, v, 1, 2);
    CHECK(out[0] == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(out[1] == doctest::Approx(-2.5).epsilon(1e-12));
}

TEST_CASE("naive_attention with zero queries averages the value rows") {
    std::vector<double> q(6, 0.0);
    std::vector<double> k = {1.0, 0.0, 0.0, 1.0, -1.0, 2.0};
    std::vector<double> v = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    auto out = oracle::naive_attention(q, k, v, 3, 2);
    for (int i = 0; i < 3; ++i) {
        CHECK(out[static_cast<size_t>(i * 2)] == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(out[static_cast<size_t>(i * 2 + 1)] == doctest::Approx(4.0).epsilon(1e-12));
    }
}

TEST_CASE("naive_attention agrees with a manual expansion of a 3-token case") {
    // q2 row chosen asymmetric so the weights are all distinct
    std::vector<double> q = {1.0, 0.0, 0.0, 1.0, 2.0, 1.0};
    std::vector<double> k = {1.0, 0.0, 0.0, 1.0, 1.0, 1.0};
    std::vector<double> v = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
    auto out = oracle::naive_attention(q, k, v, 3, 2);

    const double s = 1.0 / std::sqrt(2.0);
    // hand-expanded row 2: scores q2.k0=2, q2.k1=1, q2.k2=3, all scaled by 1/sqrt(2)
    const double e0 = std::exp(2.0 * s), e1 = std::exp(1.0 * s), e2 = std::exp(3.0 * s);
    const double z = e0 + e1 + e2;
    const double ex = (e0 * 1.0 + e1 * 3.0 + e2 * 5.0) / z;
    const double ey = (e0 * 2.0 + e1 * 4.0 + e2 * 6.0) / z;
    CHECK(out[4] == doctest::Approx(ex).epsilon(1e-12));
    CHECK(out[5] == doctest::Approx(ey).epsilon(1e-12));
}

TEST_CASE("naive_adaptive_pool basics") {
    Rng rng(3);
    auto x = Tensor4<double>::zeros({1, 2, 4, 4});
    fill_uniform(x, rng, -1.0, 1.0);
    CHECK(oracle::max_abs_diff(oracle::naive_adaptive_pool(x, 4, 4, oracle::PoolMode::Max), x) ==
          0.0);

    std::vector<double> vals(16);
    for (int i = 0; i < 16; ++i) vals[static_cast<size_t>(i)] = i;
    auto seq = Tensor4<double>::from({1, 1, 4, 4}, std::move(vals));
    auto pooled = oracle::naive_adaptive_pool(seq, 2, 2, oracle::PoolMode::Max);
    CHECK(pooled.data()[0] == 5.0);
    CHECK(pooled.data()[1] == 7.0);
    CHECK(pooled.data()[2] == 13.0);
    CHECK(pooled.data()[3] == 15.0);

    auto c = Tensor4<double>::full({1, 3, 5, 5}, 0.25);
    auto mean = oracle::naive_adaptive_pool(c, 2, 3, oracle::PoolMode::Mean);
    for (int64_t i = 0; i < mean.numel(); ++i)
        CHECK(mean.data()[i] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("naive_bilinear basics") {
    Rng rng(5);
    auto x = Tensor4<double>::zeros({1, 2, 3, 4});
    fill_uniform(x, rng, -1.0, 1.0);
    CHECK(oracle::max_abs_diff(oracle::naive_bilinear(x, 3, 4), x) < 1e-12);

    auto c = Tensor4<double>::full({1, 1, 2, 5}, -3.5);
    auto up = oracle::naive_bilinear(c, 6, 3);
    for (int64_t i = 0; i < up.numel(); ++i)
        CHECK(up.data()[i] == doctest::Approx(-3.5).epsilon(1e-12));
}

TEST_CASE("finite_diff_grad reproduces simple closed forms") {
    auto x = Tensor4<double>::from({1, 1, 2, 2}, {1.0, -0.5, 2.0, 0.25});

    auto sum_f = [](const Tensor4<double>& t) {
        double acc = 0;
        for (int64_t i = 0; i < t.numel(); ++i) acc += t.data()[i];
        return acc;
    };
    auto g1 = oracle::finite_diff_grad<double>(sum_f, x, 1e-4);
    for (int64_t i = 0; i < 4; ++i) CHECK(g1.data()[i] == doctest::Approx(1.0).epsilon(1e-8));

    auto sqnorm_f = [](const Tensor4<double>& t) {
        double acc = 0;
        for (int64_t i = 0; i < t.numel(); ++i) acc += 0.5 * t.data()[i] * t.data()[i];
        return acc;
    };
    auto g2 = oracle::finite_diff_grad<double>(sqnorm_f, x, 1e-4);
    for (int64_t i = 0; i < 4; ++i)
        CHECK(g2.data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-8));
}

TEST_CASE("gradient error metric uses the absolute floor below 1e-8") {
    CHECK(oracle::grad_err(0.0, 0.0) == 0.0);
    CHECK(oracle::grad_err(5e-9, 0.0) == 0.0);
    CHECK(oracle::grad_err(1.0, 1.0) == 0.0);
    CHECK(oracle::grad_err(1.0 + 1e-6, 1.0) > 0.0);
    CHECK(oracle::grad_err(1.0, 0.0) > 1e-5);
}
