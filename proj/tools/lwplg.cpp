// Command-line surface for the LW PLG-ViT implementation: configuration
// inspection, parameter/FLOP analysis, resolution sweeps, gradient
// verification, toy training and single-image inference.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "lwplg/analysis.hpp"
#include "lwplg/gradcheck.hpp"
#include "lwplg/image.hpp"
#include "lwplg/model.hpp"
#include "lwplg/report.hpp"
#include "lwplg/train.hpp"

namespace {

using namespace lwplg;

constexpr int kExitOk = 0;
constexpr int kExitVerificationFailure = 1;
constexpr int kExitUsage = 2;

ModelConfig resolve_config(const std::string& variant, const std::string& config_path,
                           int num_classes) {
    ModelConfig cfg;
    if (!config_path.empty())
        cfg = load_config(config_path);
    else if (variant == "micro")
        cfg = micro_config(num_classes > 0 ? num_classes : 3);
    else
        cfg = variant_config(variant);
    if (num_classes > 0) cfg.num_classes = num_classes;
    return cfg;
}

std::vector<int> parse_sizes(const std::string& csv) {
    std::vector<int> sizes;
    size_t at = 0;
    while (at < csv.size()) {
        size_t comma = csv.find(',', at);
        if (comma == std::string::npos) comma = csv.size();
        sizes.push_back(std::stoi(csv.substr(at, comma - at)));
        at = comma + 1;
    }
    require(!sizes.empty(), "expected a comma-separated list of sizes");
    return sizes;
}

std::pair<int, int> parse_size(const std::string& text) {
    const size_t x = text.find('x');
    if (x == std::string::npos) {
        const int s = std::stoi(text);
        return {s, s};
    }
    return {std::stoi(text.substr(0, x)), std::stoi(text.substr(x + 1))};
}

CheckScope parse_scope(const std::string& scope) {
    if (scope == "op") return CheckScope::Ops;
    if (scope == "block") return CheckScope::Blocks;
    if (scope == "model") return CheckScope::Model;
    if (scope == "all") return CheckScope::All;
    fail("unknown gradcheck scope '" + scope + "' (expected op|block|model|all)");
}

int cmd_describe(const std::string& variant, const std::string& config_path) {
    std::cout << describe_text(resolve_config(variant, config_path, 0));
    return kExitOk;
}

int cmd_params(const std::string& variant, const std::string& config_path, int classes,
               bool as_json, bool as_csv) {
    ModelConfig cfg = resolve_config(variant, config_path, classes);
    auto net = build_model<float>(cfg, 0, false);
    auto report = count_params(net);
    require(report.total == analytic_param_count(cfg),
            "parameter accounting mismatch between the built network and the analytic model");
    if (as_json) {
        std::cout << params_json(cfg, report).dump(2) << "\n";
    } else if (as_csv) {
        std::cout << params_csv(report);
    } else {
        std::cout << "variant " << cfg.name << ", " << cfg.num_classes << " classes\n";
        for (const auto& [group, count] : report.group_totals)
            std::printf("%-12s %10lld\n", group.c_str(), static_cast<long long>(count));
        std::cout << params_summary_line(report.total) << "\n";
    }
    return kExitOk;
}

int cmd_flops(const std::string& variant, const std::string& config_path,
              const std::string& size_text, bool as_json) {
    ModelConfig cfg = resolve_config(variant, config_path, 0);
    auto [h, w] = parse_size(size_text);
    auto report = count_flops(cfg, h, w);
    if (as_json)
        std::cout << flops_json(cfg, report).dump(2) << "\n";
    else
        std::cout << flops_text(cfg, report);
    return kExitOk;
}

int cmd_sweep(const std::string& variant, const std::string& config_path,
              const std::string& sizes_text, const std::string& out_path, bool naive_global) {
    ModelConfig cfg = resolve_config(variant, config_path, 0);
    FlopOptions opts;
    opts.naive_global = naive_global;
    auto rows = resolution_sweep(cfg, parse_sizes(sizes_text), opts);
    const std::string csv = sweep_to_csv(rows);
    if (out_path.empty() || out_path == "-") {
        std::cout << csv;
    } else {
        std::ofstream os(out_path);
        require(os.good(), "cannot open '" + out_path + "' for writing");
        os << csv;
        std::cout << "wrote " << rows.size() << " rows to " << out_path << "\n";
    }
    return kExitOk;
}

int cmd_gradcheck(const std::string& scope_text, uint64_t seed, bool self_test) {
    if (self_test) {
        const bool caught = gradcheck_selftest(seed);
        std::cout << (caught ? "self-test: injected gradient error detected\n"
                             : "self-test: injected gradient error was NOT detected\n");
        return caught ? kExitOk : kExitVerificationFailure;
    }
    auto results = run_gradchecks(parse_scope(scope_text), seed);
    int failures = 0;
    for (const auto& r : results) {
        std::printf("%-52s max rel err %.3e  %s\n", r.name.c_str(), r.max_err,
                    r.pass ? "pass" : "FAIL");
        if (!r.pass) ++failures;
    }
    std::printf("%zu checks, %d failed\n", results.size(), failures);
    return failures == 0 ? kExitOk : kExitVerificationFailure;
}

int cmd_train_toy(int classes, int steps, double lr, uint64_t seed, const std::string& out_path) {
    ToyTrainOptions opt;
    opt.num_classes = classes;
    opt.max_steps = steps;
    opt.lr = lr;
    opt.seed = seed;
    Network<float> net;
    auto result = train_toy<float>(opt, &net);
    for (int s = 0; s < result.steps_run; s += 25)
        std::printf("step %4d  loss %.4f\n", s, result.losses[static_cast<size_t>(s)]);
    std::printf("steps run: %d\n", result.steps_run);
    std::printf("final train accuracy: %.4f\n", result.final_accuracy);
    if (result.diverged) {
        std::cout << "training diverged (loss exceeded 10x the initial value)\n";
        return kExitVerificationFailure;
    }
    if (!out_path.empty()) {
        net.save(out_path);
        std::cout << "saved weights to " << out_path << "\n";
    }
    return kExitOk;
}

int cmd_infer(const std::string& weights_path, uint64_t seed, const std::string& variant,
              int classes, const std::string& image_path, int size, int topk) {
    ModelConfig cfg = resolve_config(variant, "", classes);
    auto net = build_model<float>(cfg, seed, false);
    if (!weights_path.empty()) net.load(weights_path);

    Image img = load_pnm(image_path);
    Tensor4<float> t = image_to_tensor(img);
    if (t.shape.h != size || t.shape.w != size) t = bilinear_resize(t, size, size);
    t = scale(add_scalar(t, -0.5f), 2.0f);  // mean 0.5, std 0.5 per channel

    auto logits = net.forward(t);
    auto probs = softmax(logits, 1);
    std::vector<std::pair<float, int>> ranked;
    for (int64_t k = 0; k < cfg.num_classes; ++k)
        ranked.emplace_back(probs.at(0, k, 0, 0), static_cast<int>(k));
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    const int show = std::min<int>(topk, cfg.num_classes);
    for (int i = 0; i < show; ++i)
        std::printf("class %4d  score %.6f\n", ranked[static_cast<size_t>(i)].second,
                    static_cast<double>(ranked[static_cast<size_t>(i)].first));
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"LW PLG-ViT: light-weight parallel local-global vision transformer"};
    app.require_subcommand(1);

    std::string variant = "A", config_path, size_text = "224", sizes_text = "224,448,896";
    std::string out_path, scope_text = "all", weights_path, image_path;
    int classes = 1000, steps = 500, topk = 5, infer_size = 224;
    double lr = 3e-3;
    uint64_t seed = 0;
    bool as_json = false, as_csv = false, naive_global = false, self_test = false;

    auto* describe = app.add_subcommand("describe", "print a variant's stage table");
    describe->add_option("--variant", variant, "A, R or micro");
    describe->add_option("--config", config_path, "JSON model config file");

    auto* params = app.add_subcommand("params", "exact parameter counts");
    params->add_option("--variant", variant, "A, R or micro");
    params->add_option("--config", config_path, "JSON model config file");
    params->add_option("--classes", classes, "classifier width");
    auto* pj = params->add_flag("--json", as_json, "emit JSON");
    params->add_flag("--csv", as_csv, "emit per-tensor CSV")->excludes(pj);

    auto* flops = app.add_subcommand("flops", "analytic FLOP count at one input size");
    flops->add_option("--variant", variant, "A, R or micro");
    flops->add_option("--config", config_path, "JSON model config file");
    flops->add_option("--size", size_text, "input size, H or HxW");
    flops->add_flag("--json", as_json, "emit JSON");

    auto* sweep = app.add_subcommand("sweep", "FLOP totals across input sizes (CSV)");
    sweep->add_option("--variant", variant, "A, R or micro");
    sweep->add_option("--config", config_path, "JSON model config file");
    sweep->add_option("--sizes", sizes_text, "comma-separated square sizes");
    sweep->add_option("--out", out_path, "output CSV path ('-' for stdout)");
    sweep->add_flag("--naive-global", naive_global,
                    "reference curve: global attention over all tokens, no pooling");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    gradcheck->add_option("--scope", scope_text, "op|block|model|all");
    gradcheck->add_option("--seed", seed, "rng seed");
    gradcheck->add_flag("--self-test", self_test,
                        "verify the harness flags a corrupted gradient");

    auto* train = app.add_subcommand("train-toy", "train the micro model on synthetic shapes");
    train->add_option("--classes", classes, "number of shape classes (1..3)")->default_val(3);
    train->add_option("--steps", steps, "maximum SGD steps");
    train->add_option("--lr", lr, "learning rate");
    train->add_option("--seed", seed, "rng seed");
    train->add_option("--out", out_path, "write final weights here");

    auto* infer = app.add_subcommand("infer", "classify a PPM/PGM image");
    infer->add_option("--weights", weights_path, "weights file (LWPV format)");
    infer->add_option("--seed", seed, "seed for a fresh model when no weights are given");
    infer->add_option("--variant", variant, "A, R or micro");
    infer->add_option("--classes", classes, "classifier width");
    infer->add_option("--image", image_path, "input image (binary PPM or PGM)")->required();
    infer->add_option("--size", infer_size, "resize target");
    infer->add_option("--topk", topk, "entries to print");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);  // --help
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (app.got_subcommand(describe)) return cmd_describe(variant, config_path);
        if (app.got_subcommand(params))
            return cmd_params(variant, config_path, classes, as_json, as_csv);
        if (app.got_subcommand(flops)) return cmd_flops(variant, config_path, size_text, as_json);
        if (app.got_subcommand(sweep))
            return cmd_sweep(variant, config_path, sizes_text, out_path, naive_global);
        if (app.got_subcommand(gradcheck)) return cmd_gradcheck(scope_text, seed, self_test);
        if (app.got_subcommand(train)) return cmd_train_toy(classes, steps, lr, seed, out_path);
        if (app.got_subcommand(infer))
            return cmd_infer(weights_path, seed, variant, classes, image_path, infer_size, topk);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitVerificationFailure;
    }
    return kExitUsage;
}
