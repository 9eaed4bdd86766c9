#pragma once

#include <functional>
#include <vector>

#include "lwplg/tensor.hpp"

namespace lwplg {

// Reverse-mode gradient tape. Operations executed while a tape is recording
// append one node each, so the node list is already a topological order of
// the computation. backward() zeroes the adjoints of every recorded output,
// seeds the loss with one and replays the nodes in reverse; leaf tensors
// (parameters, inputs) are never zeroed, so repeated backward calls
// accumulate into their gradients.
template <typename T>
class GradTape {
public:
    GradTape() = default;
    GradTape(const GradTape&) = delete;
    GradTape& operator=(const GradTape&) = delete;

    static GradTape*& current() {
        thread_local GradTape* active = nullptr;
        return active;
    }

    // RAII recording scope; confines the tape to the constructing thread.
    class Scope {
    public:
        explicit Scope(GradTape& tape) : prev_(current()) { current() = &tape; }
        ~Scope() { current() = prev_; }
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        GradTape* prev_;
    };

    void record(const Tensor4<T>& out, std::function<void()> backward_fn) {
        nodes_.push_back(Node{out.gbuf, std::move(backward_fn)});
    }

    size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    void backward(const Tensor4<T>& loss) {
        require(loss.numel() == 1,
                "backward: loss must be scalar, got shape " + loss.shape.str());
        for (auto& node : nodes_) {
            if (node.out_grad)
                for (auto& g : *node.out_grad) g = T(0);
        }
        if (!loss.requires_grad()) return;  // detached loss: nothing flows
        (*loss.gbuf)[0] += T(1);
        for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->fn();
    }

private:
    struct Node {
        std::shared_ptr<std::vector<T>> out_grad;
        std::function<void()> fn;
    };
    std::vector<Node> nodes_;
};

}  // namespace lwplg
