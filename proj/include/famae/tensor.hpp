#pragma once

// Dense row-major tensors with reverse-mode differentiation.
//
// A Tensor is a shared handle to a graph node. Operations (see ops.hpp and
// spectral_ops.hpp) create new nodes that remember their parents and a
// backward closure whenever any input requires a gradient and gradient
// recording is enabled.
//
// Gradient convention for complex tensors: the stored gradient of a complex
// element z is dL/d(Re z) + i dL/d(Im z). With that convention the adjoint
// of a complex-linear map A is A^H, and the gradient of an elementwise
// product a*b with respect to a is conj(b) * g.

#include <algorithm>
#include <complex>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace famae {

using cdouble = std::complex<double>;
using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

namespace detail {

inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

struct NodeBase {
    virtual ~NodeBase() = default;

    std::vector<std::shared_ptr<NodeBase>> parents;
    bool requires_grad = false;
    bool is_leaf = true;
    bool consumed = false;

    virtual void run_backward() = 0;
    virtual bool has_backward() const = 0;
    virtual void release() = 0;
    virtual void drop_grad() = 0;
};

template <class T>
struct Node final : NodeBase {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T{});
    }

    void run_backward() override {
        if (backward_fn && !grad.empty()) backward_fn(*this);
    }
    bool has_backward() const override { return static_cast<bool>(backward_fn); }
    void release() override {
        backward_fn = nullptr;
        parents.clear();
    }
    void drop_grad() override { std::vector<T>().swap(grad); }
};

} // namespace detail

/// RAII guard that disables graph recording on this thread.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <class T>
class Tensor {
public:
    using value_type = T;
    using NodeT = detail::Node<T>;

    Tensor() : Tensor(Shape{0}) {}

    explicit Tensor(Shape shape) : node_(std::make_shared<NodeT>()) {
        node_->data.assign(numel_of(shape), T{});
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) : node_(std::make_shared<NodeT>()) {
        if (numel_of(shape) != data.size()) {
            throw ShapeError("Tensor: shape " + shape_str(shape) + " does not match " +
                             std::to_string(data.size()) + " elements");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        Tensor t(std::move(shape));
        t.set_requires_grad(requires_grad);
        return t;
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        const std::size_t n = numel_of(shape);
        return Tensor(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor scalar(T value, bool requires_grad = false) { return Tensor(Shape{}, {value}, requires_grad); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const {
        if (axis >= rank()) throw ShapeError("Tensor::dim: axis out of range");
        return node_->shape[axis];
    }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// In-place access for optimizers and initializers; never use on values
    /// captured by a live graph.
    std::span<T> mutable_data() { return node_->data; }
    const std::vector<T>& values() const { return node_->data; }

    T item() const {
        if (numel() != 1) throw ShapeError("Tensor::item: tensor has " + std::to_string(numel()) + " elements");
        return node_->data[0];
    }
    T operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }

    bool has_grad() const { return node_->grad.size() == node_->data.size() && !node_->data.empty(); }
    std::span<const T> grad() const {
        if (!has_grad()) throw GraphError("Tensor::grad: no gradient has been accumulated");
        return node_->grad;
    }
    std::span<T> mutable_grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    void zero_grad() { node_->drop_grad(); }

    /// Copy of the values with no graph history.
    Tensor detach() const { return Tensor(shape(), node_->data, false); }

    const std::shared_ptr<NodeT>& node() const { return node_; }
    bool same_node(const Tensor& other) const { return node_ == other.node_; }

private:
    template <class U>
    friend class Tensor;
    explicit Tensor(std::shared_ptr<NodeT> node) : node_(std::move(node)) {}

public:
    static Tensor from_node(std::shared_ptr<NodeT> node) { return Tensor(std::move(node)); }

private:
    std::shared_ptr<NodeT> node_;
};

using TensorF = Tensor<double>;
using TensorC = Tensor<cdouble>;

namespace detail {

/// Builds the result node of an operation. The backward closure is attached
/// only when recording is enabled and some parent requires a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::vector<std::shared_ptr<NodeBase>> parents,
                      std::function<void(Node<T>&)> backward_fn) {
    auto node = std::make_shared<Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    if (numel_of(node->shape) != node->data.size()) {
        throw ShapeError("internal: result shape " + shape_str(node->shape) + " does not match data size");
    }
    bool needs = false;
    for (const auto& p : parents) needs = needs || (p && p->requires_grad);
    if (needs && grad_mode()) {
        node->requires_grad = true;
        node->is_leaf = false;
        node->parents = std::move(parents);
        node->backward_fn = std::move(backward_fn);
    }
    return Tensor<T>::from_node(std::move(node));
}

} // namespace detail

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// leaf that requires one; the intermediate graph is released afterwards,
/// so a second call on the same loss throws.
inline void backward(const TensorF& loss) {
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    auto root = loss.node();
    if (root->consumed) throw GraphError("backward: graph already consumed");
    if (!root->requires_grad) throw GraphError("backward: loss does not depend on any tensor requiring grad");

    // Iterative post-order DFS for a topological order.
    std::vector<detail::NodeBase*> order;
    std::unordered_set<detail::NodeBase*> visited;
    std::vector<std::pair<detail::NodeBase*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            detail::NodeBase* parent = node->parents[next++].get();
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) (*it)->run_backward();

    for (detail::NodeBase* node : order) {
        if (!node->is_leaf) {
            node->release();
            node->drop_grad();
            node->consumed = true;
        }
    }
}

} // namespace famae
