#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>

#include "tfab/ops.hpp"
#include "tfab/tape.hpp"
#include "tfab/tensor.hpp"

namespace tfab::test {

using ScalarFn = std::function<ad::Var<double>(ad::Tape<double>&, ad::Var<double>)>;

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    Tensor<double> t(shape);
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

template <class S>
Tensor<S> random_as(const Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    return random_tensor(shape, rng, lo, hi).template cast<S>();
}

/// Reduces any tensor-valued node to a scalar through fixed random weights,
/// so every output element contributes to the checked gradient.
inline ad::Var<double> weighted_sum(ad::Tape<double>& tape, ad::Var<double> y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto w = tape.constant(random_tensor(y.shape(), rng));
    return ad::sum<double>(ad::mul<double>(y, w));
}

inline Tensor<double> tape_gradient(const ScalarFn& f, const Tensor<double>& x) {
    ad::Tape<double> tape;
    auto xv = tape.leaf(x, true);
    auto loss = f(tape, xv);
    tape.backward(loss);
    return xv.grad();
}

inline double scalar_value(const ScalarFn& f, const Tensor<double>& x) {
    ad::Tape<double> tape;
    return f(tape, tape.constant(x)).value()[0];
}

/// Central differences, step h, one coordinate at a time.
inline Tensor<double> numeric_gradient(const ScalarFn& f, const Tensor<double>& x, double h = 1e-5) {
    Tensor<double> g(x.shape());
    Tensor<double> xp = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = xp[i];
        xp[i] = orig + h;
        const double up = scalar_value(f, xp);
        xp[i] = orig - h;
        const double down = scalar_value(f, xp);
        xp[i] = orig;
        g[i] = (up - down) / (2 * h);
    }
    return g;
}

/// ||a - b|| / max(||a||, ||b||), zero when both vanish.
inline double relative_error(const Tensor<double>& a, const Tensor<double>& b) {
    const double na = std::sqrt(squared_norm(a)), nb = std::sqrt(squared_norm(b));
    const double scale = std::max(na, nb);
    if (scale == 0.0) return 0.0;
    Tensor<double> d = a - b;
    return std::sqrt(squared_norm(d)) / scale;
}

inline double gradient_error(const ScalarFn& f, const Tensor<double>& x, double h = 1e-5) {
    return relative_error(tape_gradient(f, x), numeric_gradient(f, x, h));
}

}  // namespace tfab::test
