#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace toivsf {

#ifdef TOIVSF_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
    Shape shape;
    std::vector<real> values;
    std::vector<real> grad;  // empty until a gradient flows in
    bool requires_grad = false;
    bool consumed = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    std::vector<real>& grad_buffer();
};

}  // namespace detail

// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

    static bool grad_enabled();

private:
    bool previous_;
};

// Dense row-major array with shared ownership of its graph node. Copies are
// cheap handles; use clone() for a deep copy.
class Tensor {
public:
    Tensor();
    Tensor(Shape shape, std::vector<real> values, bool requires_grad = false);

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, real value, bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t dim() const { return shape().size(); }
    std::size_t size(std::size_t axis) const { return shape().at(axis); }
    std::size_t numel() const;

    std::span<const real> values() const;
    std::span<real> mutable_values();
    real item() const;
    real at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    bool has_grad() const;
    std::span<const real> grad() const;
    std::span<real> mutable_grad();
    void zero_grad();

    Tensor detach() const;
    Tensor clone() const;
    const char* op_name() const;

    // Internal; used by op implementations.
    const std::shared_ptr<detail::Node>& node() const { return node_; }
    static Tensor from_node(std::shared_ptr<detail::Node> node);

private:
    std::shared_ptr<detail::Node> node_;
};

// Reverse-mode pass from a scalar loss. Accumulates into leaf grads and
// consumes the recorded tape; a second call on the same graph throws
// StaleTapeError.
void backward(const Tensor& loss);

// Topologically ordered nodes reachable from `root` that participate in
// gradient flow. Exposed for tests of the tape ordering invariant.
std::vector<detail::Node*> build_tape(const Tensor& root);

}  // namespace toivsf
