#pragma once

#include <cmath>
#include <cstddef>
#include <string>

#include "tfab/tensor.hpp"

namespace tfab::ad {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Moment estimates for one optimized tensor.
template <class S>
struct AdamState {
    std::size_t step = 0;
    Tensor<S> m;
    Tensor<S> v;
    AdamHyper hyper;

    AdamState() = default;
    explicit AdamState(const Shape& shape, AdamHyper h = {}) : m(shape), v(shape), hyper(h) {}
};

namespace detail {

template <class S>
void require_finite(const Tensor<S>& grad, const std::string& name) {
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) {
            throw NumericError("non-finite gradient for '" + name + "' at flat index " + std::to_string(i));
        }
    }
}

}  // namespace detail

/// Advances the moments by one step and returns the bias-corrected Adam
/// direction m_hat / (sqrt(v_hat) + eps), without applying it.
template <class S>
Tensor<S> adam_direction(const Tensor<S>& grad, AdamState<S>& state, const std::string& name = "param") {
    if (state.m.empty()) state = AdamState<S>(grad.shape(), state.hyper);
    grad.require_same_shape(state.m, "adam");
    detail::require_finite(grad, name);
    state.step += 1;
    const double b1 = state.hyper.beta1, b2 = state.hyper.beta2;
    const double c1 = 1.0 - std::pow(b1, double(state.step));
    const double c2 = 1.0 - std::pow(b2, double(state.step));
    Tensor<S> dir(grad.shape());
    for (std::size_t i = 0; i < grad.size(); ++i) {
        const double g = grad[i];
        const double m = b1 * double(state.m[i]) + (1.0 - b1) * g;
        const double v = b2 * double(state.v[i]) + (1.0 - b2) * g * g;
        state.m[i] = S(m);
        state.v[i] = S(v);
        dir[i] = S((m / c1) / (std::sqrt(v / c2) + state.hyper.eps));
    }
    return dir;
}

/// param <- param - lr * adam_direction(grad)
template <class S>
void adam_update(Tensor<S>& param, const Tensor<S>& grad, AdamState<S>& state, double lr,
                 const std::string& name = "param") {
    param.require_same_shape(grad, "adam_update");
    const Tensor<S> dir = adam_direction(grad, state, name);
    for (std::size_t i = 0; i < param.size(); ++i) param[i] = S(double(param[i]) - lr * double(dir[i]));
}

template <class S>
void sgd_update(Tensor<S>& param, const Tensor<S>& grad, double lr, const std::string& name = "param") {
    param.require_same_shape(grad, "sgd_update");
    detail::require_finite(grad, name);
    for (std::size_t i = 0; i < param.size(); ++i) param[i] = S(double(param[i]) - lr * double(grad[i]));
}

}  // namespace tfab::ad
