#pragma once

#include <algorithm>
#include <vector>

#include "lwplg/model.hpp"
#include "lwplg/toy.hpp"

namespace lwplg {

// Plain stochastic gradient descent over every parameter in the store.
template <typename T>
void sgd_step(WeightStore<T>& store, double lr) {
    for (auto& [name, t] : store) {
        if (!t.requires_grad()) continue;
        T* p = t.data();
        const T* g = t.grad();
        for (int64_t i = 0; i < t.numel(); ++i) p[i] -= static_cast<T>(lr) * g[i];
        t.zero_grad();
    }
}

template <typename T>
double toy_accuracy(const Network<T>& net, uint64_t seed, int64_t first, int count,
                    int num_classes) {
    int correct = 0;
    const int batch_size = 16;
    for (int64_t at = first; at < first + count; at += batch_size) {
        const int take = static_cast<int>(std::min<int64_t>(batch_size, first + count - at));
        auto [batch, labels] = make_toy_batch<T>(seed, at, take, num_classes);
        Tensor4<T> logits = net.forward(batch);
        for (int i = 0; i < take; ++i) {
            int best = 0;
            for (int k = 1; k < num_classes; ++k)
                if (logits.at(i, k, 0, 0) > logits.at(i, best, 0, 0)) best = k;
            if (best == labels[static_cast<size_t>(i)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(count);
}

struct ToyTrainOptions {
    int num_classes = 3;
    int max_steps = 500;
    double lr = 3e-3;
    uint64_t seed = 0;
    int batch_size = 16;
    int pool_size = 480;  // fixed training set, revisited cyclically
    int eval_every = 20;
    int eval_count = 96;
    double target_accuracy = 0.97;  // early-stop threshold, above the acceptance bar
};

struct ToyTrainResult {
    std::vector<float> losses;  // one entry per executed step
    int steps_run = 0;
    double final_accuracy = 0.0;
    bool diverged = false;
};

// Trains the micro configuration on the synthetic shape task. Deterministic
// for a fixed seed: the batch at step t is the index range [t*batch, (t+1)*batch).
template <typename T>
ToyTrainResult train_toy(Network<T>& net, const ToyTrainOptions& opt) {
    ToyTrainResult result;
    double initial_loss = 0.0;
    for (int step = 0; step < opt.max_steps; ++step) {
        const int64_t first =
            (static_cast<int64_t>(step) * opt.batch_size) % static_cast<int64_t>(opt.pool_size);
        auto [batch, labels] = make_toy_batch<T>(opt.seed, first, opt.batch_size, opt.num_classes);
        GradTape<T> tape;
        T loss_value;
        {
            typename GradTape<T>::Scope rec(tape);
            Tensor4<T> loss = cross_entropy(net.forward(batch), labels);
            loss_value = loss.data()[0];
            tape.backward(loss);
        }
        sgd_step(*net.store, opt.lr);
        result.losses.push_back(static_cast<float>(loss_value));
        result.steps_run = step + 1;
        if (step == 0) initial_loss = static_cast<double>(loss_value);
        if (static_cast<double>(loss_value) > 10.0 * initial_loss && step > 0) {
            result.diverged = true;
            break;
        }
        if ((step + 1) % opt.eval_every == 0) {
            const double acc = toy_accuracy(net, opt.seed, 0, opt.eval_count, opt.num_classes);
            if (acc >= opt.target_accuracy) break;
        }
    }
    result.final_accuracy = toy_accuracy(net, opt.seed, 0, opt.eval_count, opt.num_classes);
    return result;
}

template <typename T>
ToyTrainResult train_toy(const ToyTrainOptions& opt, Network<T>* out_net = nullptr) {
    Network<T> net = build_model<T>(micro_config(opt.num_classes), opt.seed, true);
    ToyTrainResult result = train_toy(net, opt);
    if (out_net) *out_net = net;
    return result;
}

}  // namespace lwplg
