#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "deblur/autograd.hpp"
#include "deblur/rng.hpp"
#include "deblur/tensor.hpp"

namespace deblur {

// Named parameter registry backing a network. Lookup by name is used for
// checkpoint round-trips; iteration order is creation order.
template <typename T>
struct ParamSet {
    std::vector<ParamT<T>> params;
    std::unordered_map<std::string, std::size_t> index;

    ParamT<T>& add(const std::string& name, TensorT<T> v) {
        if (index.count(name)) throw UsageError("duplicate parameter name: " + name);
        index[name] = params.size();
        params.emplace_back(name, std::move(v));
        return params.back();
    }

    bool has(const std::string& name) const { return index.count(name) != 0; }

    ParamT<T>& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw UsageError("unknown parameter: " + name);
        return params[it->second];
    }
    const ParamT<T>& at(const std::string& name) const {
        auto it = index.find(name);
        if (it == index.end()) throw UsageError("unknown parameter: " + name);
        return params[it->second];
    }

    std::vector<ParamT<T>*> all() {
        std::vector<ParamT<T>*> out;
        out.reserve(params.size());
        for (auto& p : params) out.push_back(&p);
        return out;
    }

    void zero_grad() {
        for (auto& p : params) p.zero_grad();
    }

    std::size_t count_values() const {
        std::size_t n = 0;
        for (const auto& p : params) n += p.value.numel();
        return n;
    }
};

// He fan-in initialization for ReLU stacks; biases start at zero.
template <typename T>
TensorT<T> he_conv_weight(Rng& rng, int f, int c, int kh, int kw) {
    TensorT<T> w({f, c, kh, kw});
    const double s = std::sqrt(2.0 / double(std::size_t(c) * kh * kw));
    for (auto& v : w.data) v = T(rng.normal() * s);
    return w;
}

template <typename T>
TensorT<T> he_linear_weight(Rng& rng, int dout, int din) {
    TensorT<T> w({dout, din});
    const double s = std::sqrt(2.0 / double(din));
    for (auto& v : w.data) v = T(rng.normal() * s);
    return w;
}

template <typename T>
void add_conv(ParamSet<T>& set, Rng& rng, const std::string& name, int f, int c, int k,
              bool zero_init = false) {
    set.add(name + ".w", zero_init ? TensorT<T>::zeros({f, c, k, k})
                                   : he_conv_weight<T>(rng, f, c, k, k));
    set.add(name + ".b", TensorT<T>::zeros({f}));
}

template <typename T>
void add_linear(ParamSet<T>& set, Rng& rng, const std::string& name, int dout, int din,
                bool zero_init = false) {
    set.add(name + ".w",
            zero_init ? TensorT<T>::zeros({dout, din}) : he_linear_weight<T>(rng, dout, din));
    set.add(name + ".b", TensorT<T>::zeros({dout}));
}

template <typename T>
int conv_named(ParamSet<T>& ps, TapeT<T>& t, int x, const std::string& name, int pad) {
    return conv2d(t, x, t.param(ps.at(name + ".w")), t.param(ps.at(name + ".b")), 1, pad);
}

template <typename T>
int linear_named(ParamSet<T>& ps, TapeT<T>& t, int x, const std::string& name) {
    return linear(t, x, t.param(ps.at(name + ".w")), t.param(ps.at(name + ".b")));
}

} // namespace deblur
