#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

#include "tfab/tensor.hpp"

namespace tfab::ad {

template <class S>
class Tape;

/// Handle to a tensor-valued node on a Tape.
template <class S>
struct Var {
    Tape<S>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<S>& value() const { return tape->value(id); }
    const Shape& shape() const { return tape->value(id).shape(); }
    bool requires_grad() const { return tape->requires_grad(id); }
    const Tensor<S>& grad() const { return tape->grad(id); }
};

/// Append-only record of a forward computation. Nodes only reference
/// earlier nodes, so a reverse sweep over ids is a valid topological order.
/// A Tape is built once per forward pass and is not thread-safe.
template <class S>
class Tape {
public:
    using BackwardFn = std::function<void()>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var<S> leaf(Tensor<S> value, bool requires_grad = false) {
        nodes_.push_back(Node{std::move(value), {}, requires_grad, {}});
        return Var<S>{this, nodes_.size() - 1};
    }

    Var<S> constant(Tensor<S> value) { return leaf(std::move(value), false); }

    /// Records an op result. The backward closure is kept only when some
    /// input needs a gradient.
    Var<S> record(Tensor<S> value, std::initializer_list<Var<S>> inputs, BackwardFn backward) {
        bool needs = false;
        for (const auto& v : inputs) {
            needs = needs || requires_grad(v.id);
        }
        nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
        return Var<S>{this, nodes_.size() - 1};
    }

    Var<S> record(Tensor<S> value, std::span<const Var<S>> inputs, BackwardFn backward) {
        bool needs = false;
        for (const auto& v : inputs) {
            needs = needs || requires_grad(v.id);
        }
        nodes_.push_back(Node{std::move(value), {}, needs, needs ? std::move(backward) : BackwardFn{}});
        return Var<S>{this, nodes_.size() - 1};
    }

    const Tensor<S>& value(std::size_t id) const { return nodes_.at(id).value; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
    std::size_t size() const noexcept { return nodes_.size(); }

    /// Gradient of the last backward root with respect to node `id`.
    /// Nodes the root does not depend on report zeros.
    const Tensor<S>& grad(std::size_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty()) n.grad = Tensor<S>(n.value.shape());
        return n.grad;
    }

    /// Mutable gradient slot, allocated on first use. Only valid inside a
    /// backward closure.
    Tensor<S>& grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad = Tensor<S>(n.value.shape());
        return n.grad;
    }

    void accumulate(std::size_t id, const Tensor<S>& g) {
        if (!requires_grad(id)) return;
        grad_slot(id) += g;
    }

    void backward(Var<S> root) {
        if (root.tape != this) throw UsageError("backward: root belongs to another tape");
        if (value(root.id).size() != 1) {
            throw UsageError("backward: root must be scalar, got shape " + shape_str(value(root.id).shape()));
        }
        for (auto& n : nodes_) n.grad = Tensor<S>();
        grad_slot(root.id).fill(S(1));
        for (std::size_t id = root.id + 1; id-- > 0;) {
            Node& n = nodes_[id];
            if (n.backward && !n.grad.empty()) n.backward();
        }
    }

private:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;
        bool requires_grad = false;
        BackwardFn backward;
    };

    std::vector<Node> nodes_;
};

}  // namespace tfab::ad
