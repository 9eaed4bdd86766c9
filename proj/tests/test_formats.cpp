#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "lwplg/image.hpp"
#include "lwplg/model.hpp"
#include "lwplg/report.hpp"

using namespace lwplg;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE(is.good());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// golden files live next to the test sources
const std::string kGoldenDir = GOLDEN_DIR;

}  // namespace

TEST_CASE("sweep csv matches the golden file byte for byte") {
    auto rows = resolution_sweep(variant_config("A"), {224, 448});
    CHECK(sweep_to_csv(rows) == read_file(kGoldenDir + "/sweep_a.csv"));
}

TEST_CASE("params json matches the golden file") {
    auto cfg = variant_config("A");
    auto net = build_model<float>(cfg, 0, false);
    auto report = count_params(net);
    CHECK(params_json(cfg, report).dump(2) + "\n" == read_file(kGoldenDir + "/params_a.json"));
}

TEST_CASE("describe text matches the golden files") {
    CHECK(describe_text(variant_config("A")) == read_file(kGoldenDir + "/describe_a.txt"));
    CHECK(describe_text(variant_config("R")) == read_file(kGoldenDir + "/describe_r.txt"));
}

TEST_CASE("describe text carries the derived split facts") {
    auto a = describe_text(variant_config("A"));
    CHECK(a.find("blocks=12, C=128, lsa 7/2, gsa 14/2, r=1/2, head_dim=32") != std::string::npos);
    auto r = describe_text(variant_config("R"));
    CHECK(r.find("gsa: absent, r=1") != std::string::npos);
    CHECK(r.find("r=2/5") != std::string::npos);
}

TEST_CASE("params csv is schema-stable") {
    auto cfg = micro_config(2);
    auto net = build_model<float>(cfg, 0, false);
    auto csv = params_csv(count_params(net));
    CHECK(csv.rfind("path,shape,params\n", 0) == 0);
    CHECK(csv.find("stem/conv1/weight,8x3x3x3,216\n") != std::string::npos);
    CHECK(csv.find("\ntotal,,") != std::string::npos);
    // three columns per row, no stray separators
    std::istringstream lines(csv);
    std::string line;
    while (std::getline(lines, line))
        CHECK(std::count(line.begin(), line.end(), ',') == 2);
}

TEST_CASE("pnm loading: P6, P5 with comments, malformed input") {
    Image rgb = load_pnm(kGoldenDir + "/gray.ppm");
    CHECK(rgb.width == 16);
    CHECK(rgb.height == 16);
    CHECK(rgb.channels == 3);
    CHECK(rgb.data[0] == doctest::Approx(128.0f / 255.0f));

    Image gray = load_pnm(kGoldenDir + "/ramp.pgm");  // header carries a comment
    CHECK(gray.width == 8);
    CHECK(gray.height == 8);
    CHECK(gray.channels == 1);
    CHECK(gray.data[1] == doctest::Approx(32.0f / 255.0f));

    auto t = image_to_tensor(gray);
    CHECK(t.shape == Shape4{1, 3, 8, 8});
    CHECK(t.at(0, 0, 0, 1) == t.at(0, 2, 0, 1));  // replicated channels

    const std::string bad = "lwplg_test_bad.pnm";
    {
        std::ofstream os(bad, std::ios::binary);
        os << "P3\n2 2\n255\n0 0 0 0 0 0 0 0 0 0 0 0\n";  // ASCII PPM unsupported
    }
    CHECK_THROWS_AS(load_pnm(bad), std::invalid_argument);
    {
        std::ofstream os(bad, std::ios::binary);
        os << "P6\n4 4\n255\nxx";  // truncated pixels
    }
    CHECK_THROWS_AS(load_pnm(bad), std::invalid_argument);
    std::remove(bad.c_str());
}

TEST_CASE("image to logits path is deterministic") {
    Image img = load_pnm(kGoldenDir + "/gray.ppm");
    auto t = image_to_tensor(img);
    t = bilinear_resize(t, 32, 32);
    t = scale(add_scalar(t, -0.5f), 2.0f);
    auto net = build_model<float>(micro_config(3), 0, false);
    auto p1 = softmax(net.forward(t), 1);
    auto p2 = softmax(net.forward(t), 1);
    CHECK(same_values(p1, p2));
    float sum = 0;
    for (int64_t k = 0; k < 3; ++k) {
        CHECK(p1.at(0, k, 0, 0) >= 0.0f);
        sum += p1.at(0, k, 0, 0);
    }
    CHECK(sum == doctest::Approx(1.0f).epsilon(1e-5));
}

TEST_CASE("flops json carries the convention tag and bucket totals") {
    auto cfg = variant_config("R");
    auto rep = count_flops(cfg, 224, 224);
    auto j = flops_json(cfg, rep);
    CHECK(j.at("total_macs").get<uint64_t>() == 767098944ull);
    CHECK(j.at("convention").get<std::string>().find("1 MAC = 1 FLOP") != std::string::npos);
    CHECK(j.at("conv_macs").get<uint64_t>() + j.at("local_attn_macs").get<uint64_t>() +
              j.at("global_attn_macs").get<uint64_t>() ==
          j.at("total_macs").get<uint64_t>());
}
