#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "tfab/tape.hpp"
#include "tfab/tensor.hpp"

namespace tfab::ad {

namespace detail {

template <class S>
void require_rank(const Var<S>& v, std::size_t rank, const char* op, const char* arg) {
    if (v.shape().size() != rank) {
        throw DimensionError(std::string(op) + ": " + arg + " must have rank " + std::to_string(rank) +
                             ", got shape " + shape_str(v.shape()));
    }
}

template <class S>
void require_same(const Var<S>& a, const Var<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and structural ops

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
    detail::require_same(a, b, "add");
    Tape<S>* t = a.tape;
    Tensor<S> out = a.value() + b.value();
    return t->record(std::move(out), {a, b}, [t, a, b, id = t->size()] {
        const Tensor<S>& g = t->grad_slot(id);
        t->accumulate(a.id, g);
        t->accumulate(b.id, g);
    });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
    detail::require_same(a, b, "sub");
    Tape<S>* t = a.tape;
    Tensor<S> out = a.value() - b.value();
    return t->record(std::move(out), {a, b}, [t, a, b, id = t->size()] {
        const Tensor<S>& g = t->grad_slot(id);
        t->accumulate(a.id, g);
        if (t->requires_grad(b.id)) t->accumulate(b.id, g * S(-1));
    });
}

template <class S>
Var<S> scale(Var<S> a, S k) {
    Tape<S>* t = a.tape;
    Tensor<S> out = a.value() * k;
    return t->record(std::move(out), {a}, [t, a, k, id = t->size()] { t->accumulate(a.id, t->grad_slot(id) * k); });
}

template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
    detail::require_same(a, b, "mul");
    Tape<S>* t = a.tape;
    Tensor<S> out = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return t->record(std::move(out), {a, b}, [t, a, b, id = t->size()] {
        const Tensor<S>& g = t->grad_slot(id);
        if (t->requires_grad(a.id)) {
            Tensor<S> ga = g;
            const auto& bv = t->value(b.id);
            for (std::size_t i = 0; i < ga.size(); ++i) ga[i] *= bv[i];
            t->accumulate(a.id, ga);
        }
        if (t->requires_grad(b.id)) {
            Tensor<S> gb = g;
            const auto& av = t->value(a.id);
            for (std::size_t i = 0; i < gb.size(); ++i) gb[i] *= av[i];
            t->accumulate(b.id, gb);
        }
    });
}

template <class S>
Var<S> sum(Var<S> a) {
    Tape<S>* t = a.tape;
    S acc = 0;
    for (S v : a.value().data()) acc += v;
    return t->record(Tensor<S>({1}, std::vector<S>{acc}), {a}, [t, a, id = t->size()] {
        const S g = t->grad_slot(id)[0];
        t->accumulate(a.id, Tensor<S>(t->value(a.id).shape(), g));
    });
}

template <class S>
Var<S> sum_squares(Var<S> a) {
    Tape<S>* t = a.tape;
    S acc = 0;
    for (S v : a.value().data()) acc += v * v;
    return t->record(Tensor<S>({1}, std::vector<S>{acc}), {a}, [t, a, id = t->size()] {
        const S g = t->grad_slot(id)[0];
        Tensor<S> ga = t->value(a.id) * (S(2) * g);
        t->accumulate(a.id, ga);
    });
}

template <class S>
Var<S> reshape(Var<S> a, Shape shape) {
    Tape<S>* t = a.tape;
    Tensor<S> out = a.value().reshaped(std::move(shape));
    return t->record(std::move(out), {a}, [t, a, id = t->size()] {
        t->accumulate(a.id, t->grad_slot(id).reshaped(t->value(a.id).shape()));
    });
}

/// [N, ...] -> [N, prod(...)]
template <class S>
Var<S> flatten(Var<S> a) {
    const Shape& s = a.shape();
    if (s.empty()) throw DimensionError("flatten: rank-0 input");
    return reshape(a, Shape{s[0], a.value().size() / s[0]});
}

/// Inverted dropout; identity when rate == 0.
template <class S, class Rng>
Var<S> dropout(Var<S> a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must lie in [0,1)");
    if (rate == 0.0) return a;
    Tape<S>* t = a.tape;
    std::bernoulli_distribution keep(1.0 - rate);
    const S k = S(1.0 / (1.0 - rate));
    Tensor<S> mask(a.shape());
    for (auto& m : mask.data()) m = keep(rng) ? k : S(0);
    Tensor<S> out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return t->record(std::move(out), {a}, [t, a, mask = std::move(mask), id = t->size()] {
        Tensor<S> g = t->grad_slot(id);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= mask[i];
        t->accumulate(a.id, g);
    });
}

// ---------------------------------------------------------------------------
// Convolution

struct Conv2dOptions {
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pad_h = 0, pad_w = 0;
    std::size_t groups = 1;
};

struct Conv2dGeometry {
    std::size_t n, cin, h, w;
    std::size_t cout, cin_g, kh, kw;
    std::size_t oh, ow;
    Conv2dOptions opt;
};

inline Conv2dGeometry conv2d_geometry(const Shape& in, const Shape& k, const Conv2dOptions& opt) {
    if (in.size() != 4) throw DimensionError("conv2d: input must be [N,Cin,H,W], got " + shape_str(in));
    if (k.size() != 4) throw DimensionError("conv2d: kernel must be [Cout,Cin/groups,kh,kw], got " + shape_str(k));
    if (opt.groups == 0) throw ConfigError("conv2d: groups must be >= 1");
    if (opt.stride_h == 0 || opt.stride_w == 0) throw ConfigError("conv2d: stride must be >= 1");
    if (in[1] % opt.groups != 0) {
        throw ConfigError("conv2d: groups=" + std::to_string(opt.groups) + " does not divide Cin=" +
                          std::to_string(in[1]));
    }
    if (k[0] % opt.groups != 0) {
        throw ConfigError("conv2d: groups=" + std::to_string(opt.groups) + " does not divide Cout=" +
                          std::to_string(k[0]));
    }
    if (k[1] * opt.groups != in[1]) {
        throw DimensionError("conv2d: kernel axis 1 (" + std::to_string(k[1]) + ") x groups (" +
                             std::to_string(opt.groups) + ") != input axis 1 (" + std::to_string(in[1]) + ")");
    }
    if (in[2] + 2 * opt.pad_h < k[2]) {
        throw DimensionError("conv2d: kernel axis 2 (" + std::to_string(k[2]) + ") exceeds padded input axis 2 (" +
                             std::to_string(in[2] + 2 * opt.pad_h) + ")");
    }
    if (in[3] + 2 * opt.pad_w < k[3]) {
        throw DimensionError("conv2d: kernel axis 3 (" + std::to_string(k[3]) + ") exceeds padded input axis 3 (" +
                             std::to_string(in[3] + 2 * opt.pad_w) + ")");
    }
    Conv2dGeometry g{in[0], in[1], in[2], in[3], k[0], k[1], k[2], k[3], 0, 0, opt};
    g.oh = (g.h + 2 * opt.pad_h - g.kh) / opt.stride_h + 1;
    g.ow = (g.w + 2 * opt.pad_w - g.kw) / opt.stride_w + 1;
    return g;
}

namespace detail {

// Visits every (output row, input row, column span) triple that a kernel tap
// (i, j) touches. `fn(out_row_offset, in_row_offset, ow_begin, ow_end, iw_shift)`
// is called with iw = ow * stride_w + iw_shift.
template <class Fn>
inline void conv_rows(const Conv2dGeometry& g, std::size_t i, std::size_t j, Fn&& fn) {
    const auto sh = std::ptrdiff_t(g.opt.stride_h), sw = std::ptrdiff_t(g.opt.stride_w);
    const auto ph = std::ptrdiff_t(g.opt.pad_h), pw = std::ptrdiff_t(g.opt.pad_w);
    const std::ptrdiff_t shift = std::ptrdiff_t(j) - pw;
    // ow range with 0 <= ow*sw + shift < W
    std::ptrdiff_t lo = shift >= 0 ? 0 : (-shift + sw - 1) / sw;
    std::ptrdiff_t hi_excl = (std::ptrdiff_t(g.w) - 1 - shift) < 0 ? 0 : (std::ptrdiff_t(g.w) - 1 - shift) / sw + 1;
    hi_excl = std::min<std::ptrdiff_t>(hi_excl, std::ptrdiff_t(g.ow));
    if (lo >= hi_excl) return;
    for (std::size_t oh = 0; oh < g.oh; ++oh) {
        const std::ptrdiff_t ih = std::ptrdiff_t(oh) * sh - ph + std::ptrdiff_t(i);
        if (ih < 0 || ih >= std::ptrdiff_t(g.h)) continue;
        fn(oh * g.ow, std::size_t(ih) * g.w, std::size_t(lo), std::size_t(hi_excl), shift);
    }
}

template <class S>
void conv2d_forward(const Conv2dGeometry& g, const S* in, const S* k, const S* bias, S* out) {
    const std::size_t cout_g = g.cout / g.opt.groups;
    const std::size_t sw = g.opt.stride_w;
    const std::size_t plane_in = g.h * g.w, plane_out = g.oh * g.ow;
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.cout; ++co) {
            S* o = out + (n * g.cout + co) * plane_out;
            std::fill(o, o + plane_out, bias ? bias[co] : S(0));
            const std::size_t grp = co / cout_g;
            for (std::size_t cg = 0; cg < g.cin_g; ++cg) {
                const std::size_t ci = grp * g.cin_g + cg;
                const S* x = in + (n * g.cin + ci) * plane_in;
                for (std::size_t i = 0; i < g.kh; ++i) {
                    for (std::size_t j = 0; j < g.kw; ++j) {
                        const S w = k[((co * g.cin_g + cg) * g.kh + i) * g.kw + j];
                        conv_rows(g, i, j, [&](std::size_t orow, std::size_t irow, std::size_t b, std::size_t e,
                                               std::ptrdiff_t shift) {
                            S* op = o + orow;
                            const S* xp = x + irow;
                            if (sw == 1) {
                                const S* xs = xp + shift;
                                for (std::size_t ow = b; ow < e; ++ow) op[ow] += w * xs[ow];
                            } else {
                                for (std::size_t ow = b; ow < e; ++ow) op[ow] += w * xp[std::ptrdiff_t(ow * sw) + shift];
                            }
                        });
                    }
                }
            }
        }
    }
}

template <class S>
void conv2d_backward(const Conv2dGeometry& g, const S* in, const S* k, const S* gout, S* gin, S* gk, S* gbias) {
    const std::size_t cout_g = g.cout / g.opt.groups;
    const std::size_t sw = g.opt.stride_w;
    const std::size_t plane_in = g.h * g.w, plane_out = g.oh * g.ow;
    for (std::size_t n = 0; n < g.n; ++n) {
        for (std::size_t co = 0; co < g.cout; ++co) {
            const S* go = gout + (n * g.cout + co) * plane_out;
            if (gbias) {
                S acc = 0;
                for (std::size_t p = 0; p < plane_out; ++p) acc += go[p];
                gbias[co] += acc;
            }
            const std::size_t grp = co / cout_g;
            for (std::size_t cg = 0; cg < g.cin_g; ++cg) {
                const std::size_t ci = grp * g.cin_g + cg;
                const S* x = in + (n * g.cin + ci) * plane_in;
                S* gx = gin ? gin + (n * g.cin + ci) * plane_in : nullptr;
                for (std::size_t i = 0; i < g.kh; ++i) {
                    for (std::size_t j = 0; j < g.kw; ++j) {
                        const std::size_t kidx = ((co * g.cin_g + cg) * g.kh + i) * g.kw + j;
                        const S w = k[kidx];
                        S wacc = 0;
                        conv_rows(g, i, j, [&](std::size_t orow, std::size_t irow, std::size_t b, std::size_t e,
                                               std::ptrdiff_t shift) {
                            const S* gop = go + orow;
                            if (sw == 1) {
                                if (gx) {
                                    S* gxs = gx + irow + shift;
                                    for (std::size_t ow = b; ow < e; ++ow) gxs[ow] += w * gop[ow];
                                }
                                if (gk) {
                                    const S* xs = x + irow + shift;
                                    S acc = 0;
                                    for (std::size_t ow = b; ow < e; ++ow) acc += gop[ow] * xs[ow];
                                    wacc += acc;
                                }
                            } else {
                                for (std::size_t ow = b; ow < e; ++ow) {
                                    const std::ptrdiff_t iw = std::ptrdiff_t(ow * sw) + shift;
                                    if (gx) gx[irow + std::size_t(iw)] += w * gop[ow];
                                    if (gk) wacc += gop[ow] * x[irow + std::size_t(iw)];
                                }
                            }
                        });
                        if (gk) gk[kidx] += wacc;
                    }
                }
            }
        }
    }
}

}  // namespace detail

/// 2D cross-correlation over [N,Cin,H,W] with grouped kernels [Cout,Cin/groups,kh,kw].
template <class S>
Var<S> conv2d(Var<S> x, Var<S> kernel, std::optional<Var<S>> bias = std::nullopt, Conv2dOptions opt = {}) {
    const Conv2dGeometry g = conv2d_geometry(x.shape(), kernel.shape(), opt);
    if (bias && bias->shape() != Shape{g.cout}) {
        throw DimensionError("conv2d: bias must be [" + std::to_string(g.cout) + "], got " + shape_str(bias->shape()));
    }
    Tape<S>* t = x.tape;
    Tensor<S> out({g.n, g.cout, g.oh, g.ow});
    detail::conv2d_forward(g, x.value().raw(), kernel.value().raw(), bias ? bias->value().raw() : nullptr, out.raw());
    std::vector<Var<S>> inputs{x, kernel};
    if (bias) inputs.push_back(*bias);
    const std::size_t id = t->size();
    return t->record(std::move(out), std::span<const Var<S>>(inputs), [t, x, kernel, bias, g, id] {
        const bool gx = t->requires_grad(x.id), gk = t->requires_grad(kernel.id);
        const bool gb = bias && t->requires_grad(bias->id);
        detail::conv2d_backward(g, t->value(x.id).raw(), t->value(kernel.id).raw(), t->grad_slot(id).raw(),
                                gx ? t->grad_slot(x.id).raw() : nullptr, gk ? t->grad_slot(kernel.id).raw() : nullptr,
                                gb ? t->grad_slot(bias->id).raw() : nullptr);
    });
}

/// Depthwise conv (groups == Cin) followed by a 1x1 pointwise conv.
template <class S>
Var<S> depthwise_pointwise(Var<S> x, Var<S> depth_kernel, Var<S> point_kernel, Conv2dOptions depth_opt = {}) {
    detail::require_rank(x, 4, "depthwise_pointwise", "input");
    detail::require_rank(depth_kernel, 4, "depthwise_pointwise", "depth_kernel");
    detail::require_rank(point_kernel, 4, "depthwise_pointwise", "point_kernel");
    if (depth_kernel.shape()[1] != 1) {
        throw DimensionError("depthwise_pointwise: depth kernel axis 1 must be 1 (groups == Cin), got " +
                             std::to_string(depth_kernel.shape()[1]));
    }
    if (point_kernel.shape()[2] != 1 || point_kernel.shape()[3] != 1) {
        throw DimensionError("depthwise_pointwise: point kernel must be 1x1 spatially, got " +
                             shape_str(point_kernel.shape()));
    }
    depth_opt.groups = x.shape()[1];
    Var<S> depth = conv2d<S>(x, depth_kernel, std::nullopt, depth_opt);
    return conv2d<S>(depth, point_kernel, std::nullopt, Conv2dOptions{});
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { elu, relu, square, log_clamped };

inline constexpr double kLogClamp = 1e-6;

template <class S>
Var<S> activation(Var<S> x, Activation kind) {
    Tape<S>* t = x.tape;
    Tensor<S> out = x.value();
    for (auto& v : out.data()) {
        switch (kind) {
            case Activation::elu: v = v > S(0) ? v : std::expm1(v); break;
            case Activation::relu: v = v > S(0) ? v : S(0); break;
            case Activation::square: v = v * v; break;
            case Activation::log_clamped: v = std::log(std::max(v, S(kLogClamp))); break;
        }
    }
    const std::size_t id = t->size();
    return t->record(std::move(out), {x}, [t, x, kind, id] {
        Tensor<S> g = t->grad_slot(id);
        const auto& xv = t->value(x.id);
        const auto& yv = t->value(id);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const S xi = xv[i];
            S d = 0;
            switch (kind) {
                case Activation::elu: d = xi > S(0) ? S(1) : yv[i] + S(1); break;
                case Activation::relu: d = xi > S(0) ? S(1) : S(0); break;
                case Activation::square: d = S(2) * xi; break;
                case Activation::log_clamped: d = xi > S(kLogClamp) ? S(1) / xi : S(0); break;
            }
            g[i] *= d;
        }
        t->accumulate(x.id, g);
    });
}

// ---------------------------------------------------------------------------
// Pooling

enum class PoolKind { avg, max };

struct PoolOptions {
    std::size_t window_h = 1, window_w = 1;
    std::size_t stride_h = 1, stride_w = 1;
};

template <class S>
Var<S> pool(Var<S> x, PoolKind kind, PoolOptions opt) {
    detail::require_rank(x, 4, "pool", "input");
    const Shape& s = x.shape();
    if (opt.window_h == 0 || opt.window_w == 0 || opt.stride_h == 0 || opt.stride_w == 0) {
        throw ConfigError("pool: window and stride must be >= 1");
    }
    if (opt.window_h > s[2]) {
        throw DimensionError("pool: window axis 2 (" + std::to_string(opt.window_h) + ") larger than input axis 2 (" +
                             std::to_string(s[2]) + ")");
    }
    if (opt.window_w > s[3]) {
        throw DimensionError("pool: window axis 3 (" + std::to_string(opt.window_w) + ") larger than input axis 3 (" +
                             std::to_string(s[3]) + ")");
    }
    const std::size_t planes = s[0] * s[1], H = s[2], W = s[3];
    const std::size_t OH = (H - opt.window_h) / opt.stride_h + 1;
    const std::size_t OW = (W - opt.window_w) / opt.stride_w + 1;
    Tensor<S> out({s[0], s[1], OH, OW});
    std::vector<std::size_t> arg;
    if (kind == PoolKind::max) arg.resize(out.size());
    const S inv = S(1) / S(opt.window_h * opt.window_w);
    const S* in = x.value().raw();
    for (std::size_t p = 0; p < planes; ++p) {
        for (std::size_t oh = 0; oh < OH; ++oh) {
            for (std::size_t ow = 0; ow < OW; ++ow) {
                const std::size_t o = (p * OH + oh) * OW + ow;
                const std::size_t h0 = oh * opt.stride_h, w0 = ow * opt.stride_w;
                if (kind == PoolKind::avg) {
                    S acc = 0;
                    for (std::size_t i = 0; i < opt.window_h; ++i) {
                        const S* row = in + (p * H + h0 + i) * W + w0;
                        for (std::size_t j = 0; j < opt.window_w; ++j) acc += row[j];
                    }
                    out[o] = acc * inv;
                } else {
                    std::size_t best = (p * H + h0) * W + w0;
                    for (std::size_t i = 0; i < opt.window_h; ++i) {
                        for (std::size_t j = 0; j < opt.window_w; ++j) {
                            const std::size_t idx = (p * H + h0 + i) * W + w0 + j;
                            if (in[idx] > in[best]) best = idx;
                        }
                    }
                    out[o] = in[best];
                    arg[o] = best;
                }
            }
        }
    }
    Tape<S>* t = x.tape;
    const std::size_t id = t->size();
    return t->record(std::move(out), {x}, [t, x, kind, opt, arg = std::move(arg), planes, H, W, OH, OW, inv, id] {
        const Tensor<S>& g = t->grad_slot(id);
        Tensor<S>& gx = t->grad_slot(x.id);
        if (kind == PoolKind::max) {
            for (std::size_t o = 0; o < g.size(); ++o) gx[arg[o]] += g[o];
            return;
        }
        for (std::size_t p = 0; p < planes; ++p) {
            for (std::size_t oh = 0; oh < OH; ++oh) {
                for (std::size_t ow = 0; ow < OW; ++ow) {
                    const S v = g[(p * OH + oh) * OW + ow] * inv;
                    const std::size_t h0 = oh * opt.stride_h, w0 = ow * opt.stride_w;
                    for (std::size_t i = 0; i < opt.window_h; ++i) {
                        S* row = gx.raw() + (p * H + h0 + i) * W + w0;
                        for (std::size_t j = 0; j < opt.window_w; ++j) row[j] += v;
                    }
                }
            }
        }
    });
}

// ---------------------------------------------------------------------------
// Batch normalization (per channel of [N,C,H,W])

template <class S>
struct BatchNormStats {
    Tensor<S> mean;
    Tensor<S> var;
};

enum class BatchNormMode { train, eval };

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// In train mode normalizes with batch statistics and, if `batch_out` is
/// given, stores the batch mean and unbiased variance there so the caller
/// can fold them into running statistics.
template <class S>
Var<S> batch_norm(Var<S> x, Var<S> gamma, Var<S> beta, const BatchNormStats<S>& running, BatchNormMode mode,
                  BatchNormStats<S>* batch_out = nullptr) {
    detail::require_rank(x, 4, "batch_norm", "input");
    const Shape& s = x.shape();
    const std::size_t N = s[0], C = s[1], P = s[2] * s[3];
    if (gamma.shape() != Shape{C} || beta.shape() != Shape{C}) {
        throw DimensionError("batch_norm: gamma/beta must be [" + std::to_string(C) + "], got " +
                             shape_str(gamma.shape()) + " / " + shape_str(beta.shape()));
    }
    if (mode == BatchNormMode::eval && (running.mean.shape() != Shape{C} || running.var.shape() != Shape{C})) {
        throw DimensionError("batch_norm: running stats must be [" + std::to_string(C) + "]");
    }
    if (mode == BatchNormMode::train && N < 2) {
        throw ConfigError("batch_norm: train mode needs batch size >= 2, got " + std::to_string(N));
    }
    const double M = double(N * P);
    std::vector<S> mean(C), invstd(C);
    if (mode == BatchNormMode::train) {
        if (batch_out) {
            batch_out->mean = Tensor<S>({C});
            batch_out->var = Tensor<S>({C});
        }
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const S* p = x.value().raw() + (n * C + c) * P;
                for (std::size_t k = 0; k < P; ++k) acc += p[k];
            }
            const double mu = acc / M;
            double sq = 0;
            for (std::size_t n = 0; n < N; ++n) {
                const S* p = x.value().raw() + (n * C + c) * P;
                for (std::size_t k = 0; k < P; ++k) sq += (p[k] - mu) * (p[k] - mu);
            }
            const double var = sq / M;
            mean[c] = S(mu);
            invstd[c] = S(1.0 / std::sqrt(var + kBatchNormEps));
            if (batch_out) {
                batch_out->mean[c] = S(mu);
                batch_out->var[c] = S(M > 1 ? sq / (M - 1) : var);
            }
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = running.mean[c];
            invstd[c] = S(1.0 / std::sqrt(double(running.var[c]) + kBatchNormEps));
        }
    }
    Tensor<S> xhat(s);
    Tensor<S> out(s);
    const S* xv = x.value().raw();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t off = (n * C + c) * P;
            const S gm = gamma.value()[c], bt = beta.value()[c];
            for (std::size_t k = 0; k < P; ++k) {
                const S h = (xv[off + k] - mean[c]) * invstd[c];
                xhat[off + k] = h;
                out[off + k] = gm * h + bt;
            }
        }
    }
    Tape<S>* t = x.tape;
    const std::size_t id = t->size();
    return t->record(std::move(out), {x, gamma, beta},
                     [t, x, gamma, beta, mode, xhat = std::move(xhat), invstd = std::move(invstd), N, C, P, M, id] {
                         const Tensor<S>& g = t->grad_slot(id);
                         std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
                         for (std::size_t n = 0; n < N; ++n) {
                             for (std::size_t c = 0; c < C; ++c) {
                                 const std::size_t off = (n * C + c) * P;
                                 for (std::size_t k = 0; k < P; ++k) {
                                     sum_g[c] += g[off + k];
                                     sum_gx[c] += double(g[off + k]) * xhat[off + k];
                                 }
                             }
                         }
                         if (t->requires_grad(gamma.id)) {
                             Tensor<S>& gg = t->grad_slot(gamma.id);
                             for (std::size_t c = 0; c < C; ++c) gg[c] += S(sum_gx[c]);
                         }
                         if (t->requires_grad(beta.id)) {
                             Tensor<S>& gb = t->grad_slot(beta.id);
                             for (std::size_t c = 0; c < C; ++c) gb[c] += S(sum_g[c]);
                         }
                         if (!t->requires_grad(x.id)) return;
                         Tensor<S>& gx = t->grad_slot(x.id);
                         const auto& gm = t->value(gamma.id);
                         for (std::size_t n = 0; n < N; ++n) {
                             for (std::size_t c = 0; c < C; ++c) {
                                 const std::size_t off = (n * C + c) * P;
                                 const double k = double(gm[c]) * invstd[c];
                                 if (mode == BatchNormMode::eval) {
                                     for (std::size_t p = 0; p < P; ++p) gx[off + p] += S(k * g[off + p]);
                                 } else {
                                     const double mg = sum_g[c] / M, mgx = sum_gx[c] / M;
                                     for (std::size_t p = 0; p < P; ++p) {
                                         gx[off + p] += S(k * (g[off + p] - mg - xhat[off + p] * mgx));
                                     }
                                 }
                             }
                         }
                     });
}

/// running <- (1 - momentum) * running + momentum * batch
template <class S>
void update_running_stats(BatchNormStats<S>& running, const BatchNormStats<S>& batch,
                          double momentum = kBatchNormMomentum) {
    for (std::size_t c = 0; c < running.mean.size(); ++c) {
        running.mean[c] = S((1.0 - momentum) * running.mean[c] + momentum * batch.mean[c]);
        running.var[c] = S((1.0 - momentum) * running.var[c] + momentum * batch.var[c]);
    }
}

// ---------------------------------------------------------------------------
// Dense and losses

template <class S>
Var<S> dense(Var<S> x, Var<S> weight, Var<S> bias) {
    detail::require_rank(x, 2, "dense", "input");
    detail::require_rank(weight, 2, "dense", "weight");
    const std::size_t N = x.shape()[0], F = x.shape()[1], K = weight.shape()[0];
    if (weight.shape()[1] != F) {
        throw DimensionError("dense: weight axis 1 (" + std::to_string(weight.shape()[1]) + ") != input axis 1 (" +
                             std::to_string(F) + ")");
    }
    if (bias.shape() != Shape{K}) {
        throw DimensionError("dense: bias must be [" + std::to_string(K) + "], got " + shape_str(bias.shape()));
    }
    Tensor<S> out({N, K});
    const S* xv = x.value().raw();
    const S* wv = weight.value().raw();
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t k = 0; k < K; ++k) {
            S acc = bias.value()[k];
            for (std::size_t f = 0; f < F; ++f) acc += xv[n * F + f] * wv[k * F + f];
            out[n * K + k] = acc;
        }
    }
    Tape<S>* t = x.tape;
    const std::size_t id = t->size();
    return t->record(std::move(out), {x, weight, bias}, [t, x, weight, bias, N, F, K, id] {
        const Tensor<S>& g = t->grad_slot(id);
        const S* xv = t->value(x.id).raw();
        const S* wv = t->value(weight.id).raw();
        if (t->requires_grad(x.id)) {
            S* gx = t->grad_slot(x.id).raw();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < K; ++k) {
                    const S gk = g[n * K + k];
                    for (std::size_t f = 0; f < F; ++f) gx[n * F + f] += gk * wv[k * F + f];
                }
        }
        if (t->requires_grad(weight.id)) {
            S* gw = t->grad_slot(weight.id).raw();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < K; ++k) {
                    const S gk = g[n * K + k];
                    for (std::size_t f = 0; f < F; ++f) gw[k * F + f] += gk * xv[n * F + f];
                }
        }
        if (t->requires_grad(bias.id)) {
            Tensor<S>& gb = t->grad_slot(bias.id);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t k = 0; k < K; ++k) gb[k] += g[n * K + k];
        }
    });
}

namespace detail {

template <class S>
void check_labels(const Var<S>& logits, std::span<const int> labels, const char* op) {
    require_rank(logits, 2, op, "logits");
    if (labels.size() != logits.shape()[0]) {
        throw DimensionError(std::string(op) + ": " + std::to_string(labels.size()) + " labels for batch of " +
                             std::to_string(logits.shape()[0]));
    }
    const int K = int(logits.shape()[1]);
    for (std::size_t n = 0; n < labels.size(); ++n) {
        if (labels[n] < 0 || labels[n] >= K) {
            throw InputError(std::string(op) + ": label " + std::to_string(labels[n]) + " at index " +
                             std::to_string(n) + " outside [0," + std::to_string(K) + ")");
        }
    }
}

}  // namespace detail

/// Mean over the batch of -log softmax(logits)[label].
template <class S>
Var<S> softmax_cross_entropy(Var<S> logits, std::span<const int> labels) {
    detail::check_labels(logits, labels, "softmax_cross_entropy");
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    Tensor<S> probs({N, K});
    double loss = 0;
    const S* z = logits.value().raw();
    for (std::size_t n = 0; n < N; ++n) {
        const S* zn = z + n * K;
        const S mx = *std::max_element(zn, zn + K);
        double denom = 0;
        for (std::size_t k = 0; k < K; ++k) denom += std::exp(double(zn[k] - mx));
        const double lse = std::log(denom) + double(mx);
        for (std::size_t k = 0; k < K; ++k) probs[n * K + k] = S(std::exp(double(zn[k]) - lse));
        loss += lse - double(zn[labels[n]]);
    }
    loss /= double(N);
    std::vector<int> lab(labels.begin(), labels.end());
    Tape<S>* t = logits.tape;
    const std::size_t id = t->size();
    return t->record(Tensor<S>({1}, std::vector<S>{S(loss)}), {logits},
                     [t, logits, probs = std::move(probs), lab = std::move(lab), N, K, id] {
                         const S g = t->grad_slot(id)[0] / S(N);
                         Tensor<S>& gz = t->grad_slot(logits.id);
                         for (std::size_t n = 0; n < N; ++n) {
                             for (std::size_t k = 0; k < K; ++k) {
                                 const S onehot = int(k) == lab[n] ? S(1) : S(0);
                                 gz[n * K + k] += g * (probs[n * K + k] - onehot);
                             }
                         }
                     });
}

/// Mean over the batch of max(Z_y - max_{i != y} Z_i, 0). At margin <= 0
/// the zero branch is taken, so the subgradient vanishes once the sample is
/// misclassified or tied.
template <class S>
Var<S> margin_loss(Var<S> logits, std::span<const int> labels) {
    detail::require_rank(logits, 2, "margin_loss", "logits");
    if (logits.shape()[1] < 2) throw ConfigError("margin_loss: needs at least 2 classes");
    detail::check_labels(logits, labels, "margin_loss");
    const std::size_t N = logits.shape()[0], K = logits.shape()[1];
    std::vector<std::ptrdiff_t> rival(N, -1);
    double loss = 0;
    const S* z = logits.value().raw();
    for (std::size_t n = 0; n < N; ++n) {
        const std::size_t y = std::size_t(labels[n]);
        std::size_t best = y == 0 ? 1 : 0;
        for (std::size_t k = 0; k < K; ++k) {
            if (k != y && z[n * K + k] > z[n * K + best]) best = k;
        }
        const double m = double(z[n * K + y]) - double(z[n * K + best]);
        if (m > 0) {
            loss += m;
            rival[n] = std::ptrdiff_t(best);
        }
    }
    loss /= double(N);
    std::vector<int> lab(labels.begin(), labels.end());
    Tape<S>* t = logits.tape;
    const std::size_t id = t->size();
    return t->record(Tensor<S>({1}, std::vector<S>{S(loss)}), {logits},
                     [t, logits, rival = std::move(rival), lab = std::move(lab), N, K, id] {
                         const S g = t->grad_slot(id)[0] / S(N);
                         Tensor<S>& gz = t->grad_slot(logits.id);
                         for (std::size_t n = 0; n < N; ++n) {
                             if (rival[n] < 0) continue;
                             gz[n * K + std::size_t(lab[n])] += g;
                             gz[n * K + std::size_t(rival[n])] -= g;
                         }
                     });
}

}  // namespace tfab::ad
