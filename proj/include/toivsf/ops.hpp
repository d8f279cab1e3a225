#pragma once

#include <string>
#include <vector>

#include "toivsf/tensor.hpp"

namespace toivsf {

// Elementwise a + b. `b` may also be a suffix of a's shape (bias broadcast).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
// Elementwise a * b with the same suffix broadcast rule as add.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, real factor);

// Matrix product over the last two axes. Leading (batch) axes broadcast
// numpy-style; a 1-D operand is not accepted.
Tensor matmul(const Tensor& a, const Tensor& b);
// x (..., in) times weight (in, out) plus bias (out).
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor reshape(const Tensor& a, const Shape& shape);
Tensor permute(const Tensor& a, const std::vector<std::size_t>& order);
Tensor transpose(const Tensor& a, std::size_t axis0, std::size_t axis1);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);
// Normalizes over the last axis; gamma and beta have the last-axis extent.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps);

Tensor relu(const Tensor& x);
// Exact form x * Phi(x).
Tensor gelu(const Tensor& x);

// x (..., c_in, time), kernel (c_out, c_in, K), bias (c_out). Left zero
// padding of (K-1)*dilation keeps the time extent; output at t reads only
// inputs at t, t-d, ..., t-(K-1)d.
Tensor causal_dilated_conv1d(const Tensor& x, const Tensor& kernel, const Tensor& bias,
                             std::size_t dilation);

// Mean of |a - b| over every element; subgradient 0 at ties.
Tensor mean_abs(const Tensor& a, const Tensor& b);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

namespace testing {

// Scales the input gradients produced by the named op's backward rule by
// 1.5 on every thread until cleared. Used to prove the gradient checker
// catches a broken rule.
void set_gradient_fault(const std::string& op);
void clear_gradient_fault();

}  // namespace testing

}  // namespace toivsf
