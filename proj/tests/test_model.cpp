#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>

#include "lwplg/analysis.hpp"
#include "lwplg/model.hpp"
#include "lwplg/report.hpp"

using namespace lwplg;

namespace {

std::string temp_path(const std::string& name) {
    return std::string("lwplg_test_") + name;
}

}  // namespace

TEST_CASE("variant configurations carry the published stage settings") {
    auto a = variant_config("A");
    CHECK(a.stem_channels == 64);
    CHECK(a.expansion_channels == 576);
    REQUIRE(a.stages.size() == 4);
    const int a_channels[4] = {64, 96, 128, 192};
    const int a_repeats[4] = {3, 4, 12, 4};
    const int a_lsa[4][2] = {{7, 1}, {7, 1}, {7, 2}, {7, 3}};
    const int a_gsa[4][2] = {{7, 1}, {14, 2}, {14, 2}, {7, 3}};
    for (int i = 0; i < 4; ++i) {
        CHECK(a.stages[i].channels == a_channels[i]);
        CHECK(a.stages[i].repeats == a_repeats[i]);
        CHECK(a.stages[i].lsa.window == a_lsa[i][0]);
        CHECK(a.stages[i].lsa.heads == a_lsa[i][1]);
        CHECK(a.stages[i].gsa.present);
        CHECK(a.stages[i].gsa.window == a_gsa[i][0]);
        CHECK(a.stages[i].gsa.heads == a_gsa[i][1]);
        CHECK(a.stages[i].head_dim() == 32);
        CHECK(a.stages[i].downsample_in == (i > 0));
    }

    auto r = variant_config("R");
    CHECK(r.stem_channels == 48);
    CHECK(r.expansion_channels == 960);
    const int r_channels[4] = {48, 96, 240, 384};
    const int r_repeats[4] = {1, 1, 3, 1};
    const int r_lsa[4][2] = {{7, 1}, {7, 1}, {7, 2}, {7, 4}};
    for (int i = 0; i < 4; ++i) {
        CHECK(r.stages[i].channels == r_channels[i]);
        CHECK(r.stages[i].repeats == r_repeats[i]);
        CHECK(r.stages[i].lsa.window == r_lsa[i][0]);
        CHECK(r.stages[i].lsa.heads == r_lsa[i][1]);
        CHECK(r.stages[i].head_dim() == 48);
    }
    CHECK_FALSE(r.stages[0].gsa.present);
    CHECK(r.stages[1].gsa.window == 14);
    CHECK(r.stages[1].gsa.heads == 1);
    CHECK(r.stages[2].gsa.window == 14);
    CHECK(r.stages[2].gsa.heads == 3);
    CHECK(r.stages[3].gsa.window == 7);
    CHECK(r.stages[3].gsa.heads == 4);

    CHECK_THROWS_AS(variant_config("Q"), std::invalid_argument);
}

TEST_CASE("head weight shape follows the class count") {
    auto cfg = variant_config("A");
    cfg.num_classes = 10;
    auto net = build_model<float>(cfg, 3, false);
    CHECK(net.store->get("head/weight").shape == Shape4{10, 576, 1, 1});
    CHECK(net.store->get("head/bias").shape == Shape4{10, 1, 1, 1});
}

TEST_CASE("identical seeds build bit-identical weight stores") {
    auto cfg = micro_config(3);
    auto n1 = build_model<float>(cfg, 42, false);
    auto n2 = build_model<float>(cfg, 42, false);
    REQUIRE(n1.store->size() == n2.store->size());
    auto it1 = n1.store->begin();
    auto it2 = n2.store->begin();
    for (; it1 != n1.store->end(); ++it1, ++it2) {
        CHECK(it1->first == it2->first);
        CHECK(same_values(it1->second, it2->second));
    }
    auto n3 = build_model<float>(cfg, 43, false);
    bool any_diff = false;
    auto it3 = n3.store->begin();
    for (it1 = n1.store->begin(); it1 != n1.store->end(); ++it1, ++it3)
        if (!same_values(it1->second, it3->second)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("micro forward produces finite logits and exact batch equivariance") {
    auto net = build_model<float>(micro_config(3), 7, false);
    Rng rng(9);
    auto img = Tensor4<float>::zeros({1, 3, 32, 32});
    fill_uniform(img, rng, -1.0, 1.0);

    // duplicated batch entries yield bit-identical logits
    auto batch = Tensor4<float>::zeros({2, 3, 32, 32});
    for (int64_t i = 0; i < img.numel(); ++i) {
        batch.data()[i] = img.data()[i];
        batch.data()[img.numel() + i] = img.data()[i];
    }
    auto logits = net.forward(batch);
    CHECK(logits.shape == Shape4{2, 3, 1, 1});
    for (int64_t k = 0; k < 3; ++k) {
        CHECK(std::isfinite(logits.at(0, k, 0, 0)));
        CHECK(logits.at(0, k, 0, 0) == logits.at(1, k, 0, 0));
    }

    // permuting the batch permutes the logits bit-exactly
    auto img2 = Tensor4<float>::zeros({1, 3, 32, 32});
    fill_uniform(img2, rng, -1.0, 1.0);
    auto pair = Tensor4<float>::zeros({2, 3, 32, 32});
    auto swapped = Tensor4<float>::zeros({2, 3, 32, 32});
    for (int64_t i = 0; i < img.numel(); ++i) {
        pair.data()[i] = img.data()[i];
        pair.data()[img.numel() + i] = img2.data()[i];
        swapped.data()[i] = img2.data()[i];
        swapped.data()[img.numel() + i] = img.data()[i];
    }
    auto lp = net.forward(pair);
    auto ls = net.forward(swapped);
    for (int64_t k = 0; k < 3; ++k) {
        CHECK(lp.at(0, k, 0, 0) == ls.at(1, k, 0, 0));
        CHECK(lp.at(1, k, 0, 0) == ls.at(0, k, 0, 0));
    }

    // forward is deterministic across calls
    auto again = net.forward(batch);
    CHECK(same_values(again, logits));

    // input contract errors
    auto small = Tensor4<float>::zeros({1, 3, 16, 16});
    CHECK_THROWS_AS(net.forward(small), std::invalid_argument);
    auto wrong = Tensor4<float>::zeros({1, 4, 32, 32});
    CHECK_THROWS_AS(net.forward(wrong), std::invalid_argument);
}

TEST_CASE("non-square inputs flow through variant R") {
    auto cfg = variant_config("R");
    cfg.num_classes = 5;
    auto net = build_model<float>(cfg, 1, false);
    Rng rng(2);
    auto x = Tensor4<float>::zeros({2, 3, 96, 64});  // divisibility handled by padding
    fill_uniform(x, rng, -1.0, 1.0);
    std::vector<Shape4> trace;
    auto y = net.forward(x, &trace);
    CHECK(y.shape == Shape4{2, 5, 1, 1});
    CHECK(trace[0] == Shape4{2, 48, 24, 16});
    CHECK(trace[1] == Shape4{2, 48, 24, 16});
    CHECK(trace[2] == Shape4{2, 96, 12, 8});
    CHECK(trace[3] == Shape4{2, 240, 6, 4});
    CHECK(trace[4] == Shape4{2, 384, 3, 2});
    CHECK(trace[5] == Shape4{2, 960, 3, 2});
}

TEST_CASE("weight store save/load round trip is bit-exact") {
    auto net = build_model<float>(micro_config(2), 11, false);
    const std::string path = temp_path("roundtrip.lwpv");
    net.save(path);
    auto loaded = load_weights<float>(path);
    REQUIRE(loaded.size() == net.store->size());
    for (const auto& [name, t] : *net.store) CHECK(same_values(loaded.get(name), t));

    // loading into a differently-seeded clone reproduces forward outputs bit-exactly
    auto other = build_model<float>(micro_config(2), 999, false);
    Rng rng(5);
    auto x = Tensor4<float>::zeros({1, 3, 32, 32});
    fill_uniform(x, rng, -1.0, 1.0);
    auto y_src = net.forward(x);
    other.load(path);
    auto y_dst = other.forward(x);
    CHECK(same_values(y_src, y_dst));
    std::remove(path.c_str());
}

TEST_CASE("weights file format edge cases") {
    const std::string path = temp_path("empty.lwpv");
    WeightStore<float> empty;
    save_weights(empty, path);
    auto loaded = load_weights<float>(path);
    CHECK(loaded.size() == 0);

    // corrupted magic is rejected
    {
        std::ofstream os(path, std::ios::binary);
        os << "XXXX";
        const uint32_t v = 1, n = 0;
        os.write(reinterpret_cast<const char*>(&v), 4);
        os.write(reinterpret_cast<const char*>(&n), 4);
    }
    CHECK_THROWS_AS(load_weights<float>(path), std::invalid_argument);

    // truncated payload is rejected
    {
        WeightStore<float> store;
        store.add("w", Tensor4<float>::full({4, 4, 1, 1}, 1.0f));
        save_weights(store, path);
        std::ifstream is(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        std::ofstream os(path, std::ios::binary);
        os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 8));
    }
    CHECK_THROWS_AS(load_weights<float>(path), std::invalid_argument);

    // dtype mismatch is rejected
    {
        WeightStore<double> store;
        store.add("w", Tensor4<double>::full({2, 1, 1, 1}, 1.0));
        save_weights(store, path);
    }
    CHECK_THROWS_AS(load_weights<float>(path), std::invalid_argument);

    // duplicate names are rejected at store level
    WeightStore<float> dup;
    dup.add("a", Tensor4<float>::zeros({1, 1, 1, 1}));
    CHECK_THROWS_AS(dup.add("a", Tensor4<float>::zeros({1, 1, 1, 1})), std::invalid_argument);

    // entries with rank below four load with trailing unit dimensions
    {
        std::ofstream os(path, std::ios::binary);
        os << "LWPV";
        auto u32 = [&](uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); };
        auto u8 = [&](uint8_t v) { os.write(reinterpret_cast<const char*>(&v), 1); };
        u32(1);  // version
        u32(1);  // one entry
        u32(3);
        os << "vec";
        u8(0);  // f32
        u8(1);  // rank 1
        u32(4);
        const float vals[4] = {1.5f, -2.0f, 0.0f, 8.0f};
        os.write(reinterpret_cast<const char*>(vals), sizeof(vals));
    }
    auto low_rank = load_weights<float>(path);
    CHECK(low_rank.get("vec").shape == Shape4{4, 1, 1, 1});
    CHECK(low_rank.get("vec").data()[3] == 8.0f);
    std::remove(path.c_str());
}

TEST_CASE("cross entropy validates its labels") {
    auto logits = Tensor4<float>::zeros({2, 3, 1, 1});
    CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, 3}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(logits, std::vector<int>{0, -1}), std::invalid_argument);
}

TEST_CASE("model config json round trip rejects unknown keys") {
    auto cfg = variant_config("A");
    cfg.num_classes = 10;
    auto j = config_to_json(cfg);
    auto back = config_from_json(j);
    CHECK(back.name == cfg.name);
    CHECK(back.stem_channels == cfg.stem_channels);
    CHECK(back.num_classes == 10);
    CHECK(back.stages.size() == 4);
    CHECK(back.stages[2].gsa.heads == 2);

    j["surprise"] = 1;
    CHECK_THROWS_AS(config_from_json(j), std::invalid_argument);

    auto j2 = config_to_json(cfg);
    j2["stages"][0]["window_size"] = 7;
    CHECK_THROWS_AS(config_from_json(j2), std::invalid_argument);
}

TEST_CASE("every learned tensor lives in the store exactly once") {
    auto net = build_model<double>(micro_config(3), 0, true);
    // dual-path parameter count
    CHECK(count_params(net).total == analytic_param_count(net.cfg));
    CHECK(net.store->total_elements() == analytic_param_count(net.cfg));
    // mutating a store entry mutates the block view (shared buffers)
    auto& w = net.store->get("stem/conv1/weight");
    w.data()[0] = 1234.5;
    CHECK(net.stem.conv1.weight.data()[0] == 1234.5);
}
