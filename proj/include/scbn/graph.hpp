#pragma once

#include "scbn/tensor.hpp"

#include <functional>
#include <utility>
#include <vector>

namespace scbn {

// Handle into a Graph's tape.
using Var = int;

// Reverse-mode tape over Tensor<S>. Ops append nodes in topological order;
// backward() walks the tape once in reverse.
template <class S>
class Graph {
public:
    struct Node {
        Tensor<S> value;
        Tensor<S> grad;  // allocated on first backward
        bool requires_grad = false;
        bool grad_live = false;
        std::vector<Var> parents;
        std::function<void(Graph&, Var)> backward;  // empty for leaves; receives own id
    };

    Var leaf(Tensor<S> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var(nodes_.size() - 1);
    }

    Var constant(Tensor<S> value) { return leaf(std::move(value), false); }

    Var emplace(Tensor<S> value, std::vector<Var> parents,
                std::function<void(Graph&, Var)> backward) {
        Node n;
        n.value = std::move(value);
        for (Var p : parents)
            if (nodes_[p].requires_grad) n.requires_grad = true;
        n.parents = std::move(parents);
        if (n.requires_grad) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return Var(nodes_.size() - 1);
    }

    const Tensor<S>& value(Var id) const { return nodes_[id].value; }
    Tensor<S>& value(Var id) { return nodes_[id].value; }

    // Gradient accumulator; allocates zeros on first touch.
    Tensor<S>& grad(Var id) {
        Node& n = nodes_[id];
        if (!n.grad_live) {
            n.grad = Tensor<S>::zeros(n.value.shape);
            n.grad_live = true;
        }
        return n.grad;
    }
    bool has_grad(Var id) const { return nodes_[id].grad_live; }
    bool requires_grad(Var id) const { return nodes_[id].requires_grad; }

    // Seeds d(root)/d(root) = 1 and propagates to every leaf. root must be scalar.
    void backward(Var root) {
        require(nodes_[root].value.size() == 1, "backward root must be scalar");
        for (Node& n : nodes_) n.grad_live = false;
        grad(root).data[0] = S(1);
        for (Var id = root; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.backward && n.grad_live) n.backward(*this, id);
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

}  // namespace scbn
