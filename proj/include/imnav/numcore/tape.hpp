#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "imnav/errors.hpp"
#include "imnav/numcore/tensor.hpp"

namespace imnav::nc {

template <typename T>
class BasicTape;

// Handle to a node recorded on a tape. Cheap to copy; valid while the tape lives.
template <typename T>
struct BasicVar {
    BasicTape<T>* tape = nullptr;
    int id = -1;

    bool valid() const { return tape != nullptr && id >= 0; }
    int rows() const { return tape->node(id).rows; }
    int cols() const { return tape->node(id).cols; }
    int size() const { return rows() * cols(); }
    const T* data() const { return tape->node(id).data(); }
    std::vector<T> values() const { return std::vector<T>(data(), data() + size()); }
    T at(int r, int c) const { return data()[r * cols() + c]; }
    T item() const {
        if (size() != 1) throw ContractError("item() on a non-scalar");
        return data()[0];
    }
};

// Reverse-mode tape over scalar type T (float in production, double for
// finite-difference checks). Nodes are appended in execution order and
// replayed backwards; a tape and its nodes belong to one thread. Parameter
// tensors are always float; a double tape widens them on entry.
template <typename T>
class BasicTape {
public:
    using Var = BasicVar<T>;
    using Backward = std::function<void(BasicTape&, int)>;

    struct Node {
        int rows = 0;
        int cols = 0;
        std::vector<T> own;
        const T* ext = nullptr;
        std::vector<T> grad;
        Tensor* leaf = nullptr;
        bool needs_grad = false;
        Backward backward;
        // Op-specific saved state (attention probabilities, dropout masks).
        std::vector<T> saved;

        const T* data() const { return ext ? ext : own.data(); }
        int size() const { return rows * cols; }
    };

    explicit BasicTape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    BasicTape(const BasicTape&) = delete;
    BasicTape& operator=(const BasicTape&) = delete;

    bool grad_enabled() const { return grad_enabled_; }

    // Branch decisions of piecewise-linear ops, kept only when enabled. Finite
    // difference checks compare traces to detect steps that cross a kink.
    void enable_branch_trace() { trace_branches_ = true; }
    bool tracing_branches() const { return trace_branches_; }
    std::vector<std::uint8_t>& branch_trace() { return branch_trace_; }

    Var constant(int rows, int cols, std::vector<T> values) {
        if (static_cast<int>(values.size()) != rows * cols) throw ShapeError("constant: values do not match shape");
        return push(rows, cols, std::move(values), false, nullptr);
    }

    Var constant(const Tensor& t) {
        return constant(t.rows(), t.cols(), std::vector<T>(t.values().begin(), t.values().end()));
    }

    // Leaf bound to a parameter tensor. Recorded once per tensor per tape.
    Var param(Tensor& t) {
        auto it = leaves_.find(&t);
        if (it != leaves_.end()) return Var{this, it->second};
        Node n;
        n.rows = t.rows();
        n.cols = t.cols();
        if constexpr (std::is_same_v<T, float>) {
            n.ext = t.values().data();
        } else {
            n.own.assign(t.values().begin(), t.values().end());
        }
        n.leaf = &t;
        n.needs_grad = grad_enabled_ && t.requires_grad;
        nodes_.push_back(std::move(n));
        const int id = static_cast<int>(nodes_.size() - 1);
        leaves_[&t] = id;
        return Var{this, id};
    }

    // Populates grads of all requires_grad leaves; repeated calls accumulate
    // into the bound tensors.
    void backward(Var loss) {
        if (loss.tape != this) throw ContractError("backward: loss recorded on a different tape");
        if (node(loss.id).size() != 1) throw ContractError("backward: loss must be a scalar");
        for (auto& n : nodes_) n.grad.clear();
        if (!node(loss.id).needs_grad) return;
        grad_of(loss.id)[0] = T(1);
        for (int i = loss.id; i >= 0; --i) {
            Node& n = node(i);
            if (!n.needs_grad || n.grad.empty()) continue;
            if (n.backward) n.backward(*this, i);
        }
        for (auto& n : nodes_) {
            if (!n.leaf || !n.needs_grad || n.grad.empty()) continue;
            n.leaf->ensure_grad();
            auto& g = n.leaf->grad();
            for (std::size_t j = 0; j < g.size(); ++j) g[j] += static_cast<float>(n.grad[j]);
        }
    }

    // Gradient of the most recent backward() with respect to a node.
    const std::vector<T>& grad(Var v) const { return node(v.id).grad; }

    Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    std::size_t size() const { return nodes_.size(); }

    // Used by op implementations.
    Var push(int rows, int cols, std::vector<T> value, bool needs_grad, Backward fn) {
        Node n;
        n.rows = rows;
        n.cols = cols;
        n.own = std::move(value);
        n.needs_grad = needs_grad && grad_enabled_;
        if (n.needs_grad) n.backward = std::move(fn);
        nodes_.push_back(std::move(n));
        return Var{this, static_cast<int>(nodes_.size() - 1)};
    }

    bool any_needs_grad(std::initializer_list<Var> inputs) const {
        if (!grad_enabled_) return false;
        return std::any_of(inputs.begin(), inputs.end(), [this](Var v) { return node(v.id).needs_grad; });
    }

    T* grad_of(int id) {
        Node& n = node(id);
        if (n.grad.size() != static_cast<std::size_t>(n.size())) n.grad.assign(n.size(), T(0));
        return n.grad.data();
    }

private:
    bool grad_enabled_;
    bool trace_branches_ = false;
    std::vector<std::uint8_t> branch_trace_;
    std::vector<Node> nodes_;
    std::unordered_map<const Tensor*, int> leaves_;
};

using Tape = BasicTape<float>;
using Var = BasicVar<float>;

}  // namespace imnav::nc
