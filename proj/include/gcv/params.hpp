#pragma once

#include <string>
#include <vector>

#include "gcv/autodiff.hpp"
#include "gcv/rng.hpp"
#include "gcv/tensor.hpp"

namespace gcv {

// Named leaf tensors in stable registration order. Handles are indices so
// forward code never does string lookups.
template <class T>
struct ParamSet {
    struct Entry {
        std::string name;
        Tensor<T> value;
    };
    std::vector<Entry> entries;

    int add(std::string name, Tensor<T> value) {
        for (const auto& e : entries) {
            if (e.name == name) {
                throw ConfigError("duplicate parameter name: " + name);
            }
        }
        entries.push_back({std::move(name), std::move(value)});
        return static_cast<int>(entries.size()) - 1;
    }

    Tensor<T>& operator[](int handle) { return entries[static_cast<std::size_t>(handle)].value; }
    const Tensor<T>& operator[](int handle) const {
        return entries[static_cast<std::size_t>(handle)].value;
    }

    int find(const std::string& name) const {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (entries[i].name == name) {
                return static_cast<int>(i);
            }
        }
        return -1;
    }

    std::int64_t total_values() const {
        std::int64_t n = 0;
        for (const auto& e : entries) {
            n += e.value.numel();
        }
        return n;
    }

    std::uint64_t checksum() const {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const auto& e : entries) {
            h = fnv1a(e.name.data(), e.name.size(), h);
            h = fnv1a(e.value.data.data(), e.value.data.size() * sizeof(T), h);
        }
        return h;
    }
};

// Per-graph leaf bindings aligned with a ParamSet.
template <class T>
struct Bound {
    std::vector<ad::Var<T>> leaves;

    const ad::Var<T>& operator[](int handle) const {
        return leaves[static_cast<std::size_t>(handle)];
    }
};

template <class T>
Bound<T> bind_params(const ParamSet<T>& params, bool requires_grad) {
    Bound<T> b;
    b.leaves.reserve(params.entries.size());
    for (const auto& e : params.entries) {
        b.leaves.push_back(ad::leaf<T>(e.value, requires_grad, e.name.c_str()));
    }
    return b;
}

// Same binding, but one slot is backed by a caller-supplied variable (used
// by gradient checks that differentiate with respect to a single parameter).
template <class T>
Bound<T> bind_params_with(const ParamSet<T>& params, bool requires_grad, int handle,
                          const ad::Var<T>& replacement) {
    if (!replacement->value.same_shape(params[handle])) {
        throw ShapeError("bind_params_with: replacement shape differs from the parameter");
    }
    Bound<T> b = bind_params(params, requires_grad);
    b.leaves[static_cast<std::size_t>(handle)] = replacement;
    return b;
}

// Seeded fan-in scaled normal init.
template <class T>
Tensor<T> init_normal(std::vector<std::int64_t> shape, double stddev, Rng& rng) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.data) {
        v = static_cast<T>(rng.normal(0.0, stddev));
    }
    return t;
}

}  // namespace gcv
