#include "toivsf/optim.hpp"

#include <cmath>

#include "toivsf/errors.hpp"

namespace toivsf {

Tensor ParameterStore::add(const std::string& name, const Shape& shape) {
    if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    items_.push_back(Parameter{name, Tensor::zeros(shape, true)});
    return items_.back().tensor;
}

Tensor ParameterStore::add_uniform(const std::string& name, const Shape& shape, std::size_t fan_in, Rng& rng) {
    Tensor t = add(name, shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (real& v : t.mutable_values()) v = static_cast<real>(rng.uniform(-bound, bound));
    return t;
}

Tensor ParameterStore::add_constant(const std::string& name, const Shape& shape, real value) {
    Tensor t = add(name, shape);
    for (real& v : t.mutable_values()) v = value;
    return t;
}

const Tensor& ParameterStore::get(const std::string& name) const {
    for (const Parameter& p : items_) {
        if (p.name == name) return p.tensor;
    }
    throw ConfigError("unknown parameter '" + name + "'");
}

Tensor& ParameterStore::get(const std::string& name) {
    return const_cast<Tensor&>(static_cast<const ParameterStore&>(*this).get(name));
}

bool ParameterStore::contains(const std::string& name) const {
    for (const Parameter& p : items_) {
        if (p.name == name) return true;
    }
    return false;
}

std::size_t ParameterStore::scalar_count() const {
    std::size_t n = 0;
    for (const Parameter& p : items_) n += p.tensor.numel();
    return n;
}

void ParameterStore::zero_grad() {
    for (Parameter& p : items_) p.tensor.zero_grad();
}

ParameterStore ParameterStore::clone() const {
    ParameterStore copy;
    for (const Parameter& p : items_) copy.items_.push_back(Parameter{p.name, Tensor(p.tensor.shape(), std::vector<real>(p.tensor.values().begin(), p.tensor.values().end()), true)});
    return copy;
}

void ParameterStore::assign(const ParameterStore& other) {
    if (other.items_.size() != items_.size()) throw ConfigError("parameter store size mismatch");
    for (std::size_t i = 0; i < items_.size(); ++i) {
        const Parameter& src = other.items_[i];
        Parameter& dst = items_[i];
        if (src.name != dst.name || src.tensor.shape() != dst.tensor.shape()) {
            throw ConfigError("parameter mismatch at '" + dst.name + "'");
        }
        auto sv = src.tensor.values();
        std::copy(sv.begin(), sv.end(), dst.tensor.mutable_values().begin());
    }
}

void adam_step(std::vector<Parameter*>& params, AdamState& state, const AdamConfig& cfg) {
    if (state.slots.size() != params.size()) {
        state.slots.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::size_t n = params[i]->tensor.numel();
            state.slots[i].m.assign(n, real(0));
            state.slots[i].v.assign(n, real(0));
        }
    }
    ++state.step;
    const real t = static_cast<real>(state.step);
    const real correction1 = real(1) - std::pow(cfg.beta1, t);
    const real correction2 = real(1) - std::pow(cfg.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = params[i]->tensor;
        if (!w.has_grad()) continue;
        auto g = w.grad();
        auto values = w.mutable_values();
        AdamSlot& slot = state.slots[i];
        for (std::size_t j = 0; j < values.size(); ++j) {
            slot.m[j] = cfg.beta1 * slot.m[j] + (real(1) - cfg.beta1) * g[j];
            slot.v[j] = cfg.beta2 * slot.v[j] + (real(1) - cfg.beta2) * g[j] * g[j];
            const real m_hat = slot.m[j] / correction1;
            const real v_hat = slot.v[j] / correction2;
            values[j] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
        }
    }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    if (!(cfg_.lr > 0)) throw ConfigError("Adam learning rate must be positive");
}

void Adam::step() { adam_step(params_, state_, cfg_); }

void Adam::zero_grad() {
    for (Parameter* p : params_) p->tensor.zero_grad();
}

real global_grad_norm(const std::vector<Parameter*>& params) {
    real total = 0;
    for (const Parameter* p : params) {
        if (!p->tensor.has_grad()) continue;
        for (real g : p->tensor.grad()) total += g * g;
    }
    return std::sqrt(total);
}

real clip_grad_norm(std::vector<Parameter*>& params, real max_norm) {
    const real norm = global_grad_norm(params);
    if (norm > max_norm && norm > 0) {
        const real factor = max_norm / norm;
        for (Parameter* p : params) {
            if (!p->tensor.has_grad()) continue;
            for (real& g : p->tensor.mutable_grad()) g *= factor;
        }
    }
    return norm;
}

std::vector<Parameter*> collect(std::initializer_list<ParameterStore*> stores) {
    std::vector<Parameter*> out;
    for (ParameterStore* s : stores) {
        for (Parameter& p : s->items()) out.push_back(&p);
    }
    return out;
}

}  // namespace toivsf
