#pragma once

#include <memory>
#include <string>
#include <vector>

#include "core/tensor.hpp"

namespace avdit {

// A named model parameter. `grad` is empty until a backward pass reaches it.
template <class T>
struct Parameter {
    std::string name;
    bool trainable = true;
    Array<T> value;
    std::vector<T> grad;

    bool has_grad() const { return !grad.empty(); }

    void zero_grad() { grad.clear(); }

    void accumulate_grad(const T* g, int64_t n) {
        if (grad.empty()) grad.assign(static_cast<size_t>(value.numel()), T(0));
        for (int64_t i = 0; i < n; ++i) grad[static_cast<size_t>(i)] += g[i];
    }
};

// Parameter tree with a frozen/trainable partition. Pointers stay stable for
// the life of the registry.
template <class T>
class ParamRegistry {
public:
    Parameter<T>* add(std::string name, Shape shape, bool trainable) {
        for (const auto& p : params_)
            check_contract(p->name != name, "duplicate parameter name: " + name);
        auto p = std::make_unique<Parameter<T>>();
        p->name = std::move(name);
        p->trainable = trainable;
        p->value = Array<T>(std::move(shape));
        params_.push_back(std::move(p));
        return params_.back().get();
    }

    Parameter<T>* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    size_t size() const { return params_.size(); }
    Parameter<T>& operator[](size_t i) { return *params_[i]; }
    const Parameter<T>& operator[](size_t i) const { return *params_[i]; }

    template <class F>
    void for_each(F&& f) {
        for (auto& p : params_) f(*p);
    }
    template <class F>
    void for_each(F&& f) const {
        for (const auto& p : params_) f(*p);
    }

    int64_t count_trainable() const {
        int64_t n = 0;
        for (const auto& p : params_)
            if (p->trainable) n += p->value.numel();
        return n;
    }
    int64_t count_total() const {
        int64_t n = 0;
        for (const auto& p : params_) n += p->value.numel();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p->zero_grad();
    }

private:
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

}  // namespace avdit
