#include "toivsf/tensor.hpp"

#include <sstream>
#include <unordered_set>

#include "toivsf/errors.hpp"

namespace toivsf {

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) n *= extent;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << ", ";
        out << shape[i];
    }
    out << ')';
    return out.str();
}

namespace detail {

std::vector<real>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(values.size(), real(0));
    return grad;
}

}  // namespace detail

namespace {
thread_local bool t_grad_enabled = true;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool NoGradGuard::grad_enabled() { return t_grad_enabled; }

Tensor::Tensor() = default;

Tensor::Tensor(Shape shape, std::vector<real> values, bool requires_grad) {
    for (std::size_t extent : shape) {
        if (extent == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("buffer of length " + std::to_string(values.size()) +
                             " does not fill shape " + shape_str(shape));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->values = std::move(values);
    node_->requires_grad = requires_grad;
    if (requires_grad) node_->grad.assign(node_->values.size(), real(0));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(shape, std::vector<real>(shape_numel(shape), real(0)), requires_grad);
}

Tensor Tensor::full(const Shape& shape, real value, bool requires_grad) {
    return Tensor(shape, std::vector<real>(shape_numel(shape), value), requires_grad);
}

Tensor Tensor::scalar(real value, bool requires_grad) {
    return Tensor(Shape{1}, std::vector<real>{value}, requires_grad);
}

Tensor Tensor::from_node(std::shared_ptr<detail::Node> node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
}

const Shape& Tensor::shape() const { return node_->shape; }
std::size_t Tensor::numel() const { return node_->values.size(); }
std::span<const real> Tensor::values() const { return node_->values; }
std::span<real> Tensor::mutable_values() { return node_->values; }

real Tensor::item() const {
    if (numel() != 1) throw DimensionError("item() on tensor of shape " + shape_str(shape()));
    return node_->values[0];
}

real Tensor::at(std::initializer_list<std::size_t> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw DimensionError("index rank mismatch for " + shape_str(s));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= s[axis]) throw DimensionError("index out of range for " + shape_str(s));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return node_->values[flat];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }
bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }
std::span<const real> Tensor::grad() const { return node_->grad; }
std::span<real> Tensor::mutable_grad() { return node_->grad_buffer(); }

void Tensor::zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->values.size(), real(0));
}

Tensor Tensor::detach() const { return Tensor(node_->shape, node_->values, false); }

Tensor Tensor::clone() const { return Tensor(node_->shape, node_->values, node_->requires_grad); }

const char* Tensor::op_name() const { return node_->op; }

std::vector<detail::Node*> build_tape(const Tensor& root) {
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    // Iterative post-order DFS; each node is appended after all its inputs.
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            detail::Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw StaleTapeError("backward on an undefined tensor");
    if (loss.numel() != 1) throw DimensionError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    detail::Node& root = *loss.node();
    if (root.consumed) throw StaleTapeError("tape already consumed; re-run the forward pass before backward");
    if (!root.requires_grad) return;

    std::vector<detail::Node*> tape = build_tape(loss);
    root.grad_buffer()[0] += real(1);
    for (auto it = tape.rbegin(); it != tape.rend(); ++it) {
        detail::Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
    // Release interior nodes: closures, inputs and intermediate gradients.
    for (detail::Node* node : tape) {
        if (node->backward) {
            node->backward = nullptr;
            node->inputs.clear();
            node->grad.clear();
            node->grad.shrink_to_fit();
            node->consumed = true;
        }
    }
}

}  // namespace toivsf
