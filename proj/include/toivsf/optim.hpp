#pragma once

#include <string>
#include <vector>

#include "toivsf/rng.hpp"
#include "toivsf/tensor.hpp"

namespace toivsf {

struct Parameter {
    std::string name;
    Tensor tensor;
};

// Ordered, name-unique collection of trainable tensors.
class ParameterStore {
public:
    // Registers a zero-initialized parameter; throws ConfigError on a duplicate name.
    Tensor add(const std::string& name, const Shape& shape);
    // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))
    Tensor add_uniform(const std::string& name, const Shape& shape, std::size_t fan_in, Rng& rng);
    Tensor add_constant(const std::string& name, const Shape& shape, real value);

    const Tensor& get(const std::string& name) const;
    Tensor& get(const std::string& name);
    bool contains(const std::string& name) const;

    std::vector<Parameter>& items() { return items_; }
    const std::vector<Parameter>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();
    // Deep copy; the copy's tensors are independent leaves.
    ParameterStore clone() const;
    // Copies values from `other`, which must hold identical names and shapes.
    void assign(const ParameterStore& other);

private:
    std::vector<Parameter> items_;
};

struct AdamConfig {
    real lr = real(1e-3);
    real beta1 = real(0.9);
    real beta2 = real(0.999);
    real eps = real(1e-8);
};

struct AdamSlot {
    std::vector<real> m;
    std::vector<real> v;
};

struct AdamState {
    std::size_t step = 0;
    std::vector<AdamSlot> slots;
};

// One bias-corrected Adam update over `params` using their current grads.
void adam_step(std::vector<Parameter*>& params, AdamState& state, const AdamConfig& cfg);

class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig cfg);

    void step();
    void zero_grad();
    const AdamState& state() const { return state_; }
    std::vector<Parameter*>& params() { return params_; }

private:
    std::vector<Parameter*> params_;
    AdamConfig cfg_;
    AdamState state_;
};

real global_grad_norm(const std::vector<Parameter*>& params);
// Rescales grads so their global L2 norm is at most max_norm. Returns the pre-clip norm.
real clip_grad_norm(std::vector<Parameter*>& params, real max_norm);

std::vector<Parameter*> collect(std::initializer_list<ParameterStore*> stores);

}  // namespace toivsf
