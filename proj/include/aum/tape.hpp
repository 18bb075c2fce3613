#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "aum/array.hpp"

namespace aum {

template <class T>
class Tape;

// Lightweight handle to a tape node.
template <class T>
struct Val {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Array<T>& v() const { return tape->value(id); }
    const Array<T>& g() const { return tape->grad(id); }
};

// Ordered record of primitive applications. The reverse pass walks nodes in
// strict reverse order of creation, which is a valid reverse topological
// order because parents always precede children. Gradients are additive:
// running backward twice without zero_grad doubles every gradient.
template <class T>
class Tape {
public:
    using BackFn = std::function<void(Tape&, const Array<T>& upstream, std::size_t self)>;

    Val<T> leaf(Array<T> value, bool requires_grad = false) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }
    Val<T> constant(Array<T> value) { return leaf(std::move(value), false); }

    Val<T> make_node(Array<T> value, std::vector<std::size_t> parents, BackFn back) {
        Node n;
        n.value = std::move(value);
        debug_check_finite(n.value, "tape primitive");
        for (std::size_t p : parents)
            if (nodes_[p].needs_grad) n.needs_grad = true;
        n.parents = std::move(parents);
        if (n.needs_grad) n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return {this, nodes_.size() - 1};
    }

    const Array<T>& value(std::size_t id) const { return nodes_[id].value; }

    bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

    // Lazily allocated accumulation buffer (zeros until touched).
    Array<T>& grad_buf(std::size_t id) {
        Node& n = nodes_[id];
        if (!n.touched) {
            n.grad = Array<T>::zeros(n.value.shape);
            n.touched = true;
        }
        return n.grad;
    }

    const Array<T>& grad(std::size_t id) const {
        const Node& n = nodes_[id];
        if (!n.touched) {
            zero_view_ = Array<T>::zeros(n.value.shape);
            return zero_view_;
        }
        return n.grad;
    }

    void backward(Val<T> out) {
        if (out.tape != this) throw StateError("backward: value from another tape");
        Node& o = nodes_[out.id];
        if (o.value.numel() != 1)
            throw ShapeError("backward requires a scalar output, got shape " +
                             o.value.shape_str());
        // stash grads accumulated by earlier passes so each pass propagates
        // only its own contribution; totals are restored additively below
        std::vector<std::pair<std::size_t, Array<T>>> saved;
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            if (nodes_[i].touched) {
                saved.emplace_back(i, std::move(nodes_[i].grad));
                nodes_[i].touched = false;
                nodes_[i].grad = Array<T>();
            }
        }
        grad_buf(out.id).data[0] += T(1);
        for (std::size_t i = out.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.touched && n.back) n.back(*this, n.grad, i);
        }
        for (auto& [i, g] : saved) {
            Array<T>& buf = grad_buf(i);
            for (std::size_t j = 0; j < g.numel(); ++j) buf[j] += g[j];
        }
    }

    void zero_grad() {
        for (Node& n : nodes_) {
            n.touched = false;
            n.grad = Array<T>();
        }
    }

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Array<T> value;
        Array<T> grad;
        std::vector<std::size_t> parents;
        BackFn back;
        bool needs_grad = false;
        bool touched = false;
    };
    std::vector<Node> nodes_;
    mutable Array<T> zero_view_;
};

}  // namespace aum
