#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "tfab/tape.hpp"
#include "tfab/tensor.hpp"

// Single-level 2D orthonormal wavelet transform over the last two axes of a
// tensor (channel rows x time columns). Leading axes are treated as a batch
// of independent planes, so both [C,T] and [N,1,C,T] inputs work.
namespace tfab::wavelet {

/// Two-tap orthonormal filter pair, given as convolution taps. Analysis of
/// an input pair (x0, x1) evaluates the convolution at the odd position:
/// low = low[1]*x0 + low[0]*x1, high = high[1]*x0 + high[0]*x1.
class WaveletFilters {
public:
    WaveletFilters(std::array<double, 2> low, std::array<double, 2> high) : low_(low), high_(high) {
        const double nl = low[0] * low[0] + low[1] * low[1];
        const double nh = high[0] * high[0] + high[1] * high[1];
        const double lh = low[0] * high[0] + low[1] * high[1];
        if (std::abs(nl - 1.0) > 1e-12 || std::abs(nh - 1.0) > 1e-12 || std::abs(lh) > 1e-12) {
            throw ConfigError("wavelet filters are not orthonormal (|L|^2=" + std::to_string(nl) +
                              ", |H|^2=" + std::to_string(nh) + ", L.H=" + std::to_string(lh) + ")");
        }
    }

    static WaveletFilters haar() {
        const double r = 1.0 / std::sqrt(2.0);
        return WaveletFilters({r, r}, {r, -r});
    }

    const std::array<double, 2>& low() const noexcept { return low_; }
    const std::array<double, 2>& high() const noexcept { return high_; }

    /// Analysis row applied to an input pair, i.e. the convolution taps reversed.
    std::array<double, 2> low_analysis() const noexcept { return {low_[1], low_[0]}; }
    std::array<double, 2> high_analysis() const noexcept { return {high_[1], high_[0]}; }

private:
    std::array<double, 2> low_;
    std::array<double, 2> high_;
};

/// The four components of one decomposition. `rows`/`cols` record the
/// unpadded size of the source plane so synthesis can crop.
template <class S>
struct Subbands {
    Tensor<S> ll, lh, hl, hh;
    std::size_t rows = 0, cols = 0;

    const Tensor<S>& band(std::size_t b) const { return b == 0 ? ll : b == 1 ? lh : b == 2 ? hl : hh; }
    Tensor<S>& band(std::size_t b) { return b == 0 ? ll : b == 1 ? lh : b == 2 ? hl : hh; }
};

template <class S>
struct SubbandVars {
    ad::Var<S> ll, lh, hl, hh;
    std::size_t rows = 0, cols = 0;

    ad::Var<S> band(std::size_t b) const { return b == 0 ? ll : b == 1 ? lh : b == 2 ? hl : hh; }
};

namespace detail {

struct PlaneGeometry {
    std::size_t planes = 1;
    std::size_t rows = 0, cols = 0;          // source
    std::size_t prow = 0, pcol = 0;          // padded (even)
    Shape lead;                              // leading axes
    Shape band_shape() const {
        Shape s = lead;
        s.push_back(prow / 2);
        s.push_back(pcol / 2);
        return s;
    }
    Shape source_shape() const {
        Shape s = lead;
        s.push_back(rows);
        s.push_back(cols);
        return s;
    }
    Shape padded_shape() const {
        Shape s = lead;
        s.push_back(prow);
        s.push_back(pcol);
        return s;
    }
};

inline PlaneGeometry geometry(const Shape& shape, bool pad_odd) {
    if (shape.size() < 2) throw DimensionError("dwt2: input needs at least 2 axes, got " + shape_str(shape));
    PlaneGeometry g;
    g.lead.assign(shape.begin(), shape.end() - 2);
    g.planes = shape_size(g.lead);
    g.rows = shape[shape.size() - 2];
    g.cols = shape[shape.size() - 1];
    if (!pad_odd && (g.rows % 2 || g.cols % 2)) {
        throw DimensionError("dwt2: axes (" + std::to_string(g.rows) + "," + std::to_string(g.cols) +
                             ") must be even when padding is disabled");
    }
    g.prow = g.rows + g.rows % 2;
    g.pcol = g.cols + g.cols % 2;
    return g;
}

// Row/column filters for each band: ll=(L,L), lh=(H,L), hl=(L,H), hh=(H,H),
// first along rows (channels), second along columns (time).
inline std::array<std::array<std::array<double, 2>, 2>, 4> band_filters(const WaveletFilters& f) {
    const auto lo = f.low_analysis(), hi = f.high_analysis();
    return {{{lo, lo}, {hi, lo}, {lo, hi}, {hi, hi}}};
}

// Analysis on an already even grid `x` of shape planes x prow x pcol.
template <class S>
void analyze(const S* x, const PlaneGeometry& g, const WaveletFilters& f, std::array<S*, 4> out) {
    const auto bf = band_filters(f);
    const std::size_t br = g.prow / 2, bc = g.pcol / 2;
    for (std::size_t p = 0; p < g.planes; ++p) {
        const S* xp = x + p * g.prow * g.pcol;
        for (std::size_t i = 0; i < br; ++i) {
            const S* r0 = xp + (2 * i) * g.pcol;
            const S* r1 = r0 + g.pcol;
            for (std::size_t j = 0; j < bc; ++j) {
                const double a = r0[2 * j], b = r0[2 * j + 1], c = r1[2 * j], d = r1[2 * j + 1];
                for (std::size_t k = 0; k < 4; ++k) {
                    const auto& fr = bf[k][0];
                    const auto& fc = bf[k][1];
                    out[k][(p * br + i) * bc + j] =
                        S(fr[0] * (fc[0] * a + fc[1] * b) + fr[1] * (fc[0] * c + fc[1] * d));
                }
            }
        }
    }
}

// Synthesis (transpose of analysis) onto an even grid.
template <class S>
void synthesize(std::array<const S*, 4> bands, const PlaneGeometry& g, const WaveletFilters& f, S* x) {
    const auto bf = band_filters(f);
    const std::size_t br = g.prow / 2, bc = g.pcol / 2;
    for (std::size_t p = 0; p < g.planes; ++p) {
        S* xp = x + p * g.prow * g.pcol;
        for (std::size_t i = 0; i < br; ++i) {
            S* r0 = xp + (2 * i) * g.pcol;
            S* r1 = r0 + g.pcol;
            for (std::size_t j = 0; j < bc; ++j) {
                double a = 0, b = 0, c = 0, d = 0;
                for (std::size_t k = 0; k < 4; ++k) {
                    const double v = bands[k][(p * br + i) * bc + j];
                    const auto& fr = bf[k][0];
                    const auto& fc = bf[k][1];
                    a += fr[0] * fc[0] * v;
                    b += fr[0] * fc[1] * v;
                    c += fr[1] * fc[0] * v;
                    d += fr[1] * fc[1] * v;
                }
                r0[2 * j] = S(a);
                r0[2 * j + 1] = S(b);
                r1[2 * j] = S(c);
                r1[2 * j + 1] = S(d);
            }
        }
    }
}

// Symmetric pad by one: an odd axis gets its last row/column repeated.
template <class S>
std::vector<S> pad(const S* x, const PlaneGeometry& g) {
    std::vector<S> out(g.planes * g.prow * g.pcol);
    for (std::size_t p = 0; p < g.planes; ++p) {
        for (std::size_t i = 0; i < g.prow; ++i) {
            const std::size_t si = std::min(i, g.rows - 1);
            for (std::size_t j = 0; j < g.pcol; ++j) {
                const std::size_t sj = std::min(j, g.cols - 1);
                out[(p * g.prow + i) * g.pcol + j] = x[(p * g.rows + si) * g.cols + sj];
            }
        }
    }
    return out;
}

// Adjoint of pad: padded entries fold back onto the row/column they copied.
template <class S>
void pad_adjoint(const S* padded, const PlaneGeometry& g, S* x) {
    for (std::size_t p = 0; p < g.planes; ++p) {
        for (std::size_t i = 0; i < g.prow; ++i) {
            const std::size_t si = std::min(i, g.rows - 1);
            for (std::size_t j = 0; j < g.pcol; ++j) {
                const std::size_t sj = std::min(j, g.cols - 1);
                x[(p * g.rows + si) * g.cols + sj] += padded[(p * g.prow + i) * g.pcol + j];
            }
        }
    }
}

template <class S>
std::vector<S> crop(const S* padded, const PlaneGeometry& g) {
    std::vector<S> out(g.planes * g.rows * g.cols);
    for (std::size_t p = 0; p < g.planes; ++p)
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j)
                out[(p * g.rows + i) * g.cols + j] = padded[(p * g.prow + i) * g.pcol + j];
    return out;
}

// Adjoint of crop: zero extension.
template <class S>
std::vector<S> uncrop(const S* x, const PlaneGeometry& g) {
    std::vector<S> out(g.planes * g.prow * g.pcol, S(0));
    for (std::size_t p = 0; p < g.planes; ++p)
        for (std::size_t i = 0; i < g.rows; ++i)
            for (std::size_t j = 0; j < g.cols; ++j)
                out[(p * g.prow + i) * g.pcol + j] = x[(p * g.rows + i) * g.cols + j];
    return out;
}

template <class S>
PlaneGeometry subband_geometry(const Subbands<S>& sub) {
    const Shape& s = sub.ll.shape();
    for (std::size_t b = 1; b < 4; ++b) {
        if (sub.band(b).shape() != s) {
            throw DimensionError("idwt2: subband shapes differ: " + shape_str(s) + " vs " +
                                 shape_str(sub.band(b).shape()));
        }
    }
    if (s.size() < 2) throw DimensionError("idwt2: subbands need at least 2 axes");
    PlaneGeometry g;
    g.lead.assign(s.begin(), s.end() - 2);
    g.planes = shape_size(g.lead);
    g.prow = 2 * s[s.size() - 2];
    g.pcol = 2 * s[s.size() - 1];
    g.rows = sub.rows ? sub.rows : g.prow;
    g.cols = sub.cols ? sub.cols : g.pcol;
    if (g.rows + 1 < g.prow || g.rows > g.prow || g.cols + 1 < g.pcol || g.cols > g.pcol) {
        throw DimensionError("idwt2: recorded source size (" + std::to_string(g.rows) + "," + std::to_string(g.cols) +
                             ") incompatible with subband shape " + shape_str(s));
    }
    return g;
}

}  // namespace detail

/// Forward transform. Odd axes are padded by repeating the last row/column
/// unless `pad_odd` is false, in which case they are rejected.
template <class S>
Subbands<S> dwt2(const Tensor<S>& x, const WaveletFilters& f = WaveletFilters::haar(), bool pad_odd = true) {
    const auto g = detail::geometry(x.shape(), pad_odd);
    Subbands<S> out;
    out.rows = g.rows;
    out.cols = g.cols;
    for (std::size_t b = 0; b < 4; ++b) out.band(b) = Tensor<S>(g.band_shape());
    const std::array<S*, 4> ptrs{out.ll.raw(), out.lh.raw(), out.hl.raw(), out.hh.raw()};
    if (g.prow == g.rows && g.pcol == g.cols) {
        detail::analyze(x.raw(), g, f, ptrs);
    } else {
        const auto padded = detail::pad(x.raw(), g);
        detail::analyze(padded.data(), g, f, ptrs);
    }
    return out;
}

/// Inverse transform, cropped back to the recorded source size.
template <class S>
Tensor<S> idwt2(const Subbands<S>& sub, const WaveletFilters& f = WaveletFilters::haar()) {
    const auto g = detail::subband_geometry(sub);
    const std::array<const S*, 4> ptrs{sub.ll.raw(), sub.lh.raw(), sub.hl.raw(), sub.hh.raw()};
    if (g.prow == g.rows && g.pcol == g.cols) {
        Tensor<S> x(g.source_shape());
        detail::synthesize(ptrs, g, f, x.raw());
        return x;
    }
    std::vector<S> padded(g.planes * g.prow * g.pcol);
    detail::synthesize(ptrs, g, f, padded.data());
    return Tensor<S>(g.source_shape(), detail::crop(padded.data(), g));
}

/// Inverse on the padded grid (no crop); the exact inverse of the padded analysis.
template <class S>
Tensor<S> idwt2_padded(const Subbands<S>& sub, const WaveletFilters& f = WaveletFilters::haar()) {
    const auto g = detail::subband_geometry(sub);
    Tensor<S> x(g.padded_shape());
    detail::synthesize<S>({sub.ll.raw(), sub.lh.raw(), sub.hl.raw(), sub.hh.raw()}, g, f, x.raw());
    return x;
}

/// Differentiable forward transform: four tape nodes, one per band.
template <class S>
SubbandVars<S> dwt2(ad::Var<S> x, const WaveletFilters& f = WaveletFilters::haar(), bool pad_odd = true) {
    const auto g = detail::geometry(x.shape(), pad_odd);
    Subbands<S> sub = dwt2(x.value(), f, pad_odd);
    ad::Tape<S>* t = x.tape;
    std::array<ad::Var<S>, 4> vars;
    for (std::size_t b = 0; b < 4; ++b) {
        const std::size_t id = t->size();
        vars[b] = t->record(std::move(sub.band(b)), {x}, [t, x, g, f, b, id] {
            const S* gb = t->grad_slot(id).raw();
            std::vector<S> zeros(t->value(id).size(), S(0));
            std::array<const S*, 4> ptrs{zeros.data(), zeros.data(), zeros.data(), zeros.data()};
            ptrs[b] = gb;
            std::vector<S> padded(g.planes * g.prow * g.pcol);
            detail::synthesize(ptrs, g, f, padded.data());
            detail::pad_adjoint(padded.data(), g, t->grad_slot(x.id).raw());
        });
    }
    return SubbandVars<S>{vars[0], vars[1], vars[2], vars[3], g.rows, g.cols};
}

/// Differentiable inverse transform.
template <class S>
ad::Var<S> idwt2(const SubbandVars<S>& sv, const WaveletFilters& f = WaveletFilters::haar()) {
    Subbands<S> sub{sv.ll.value(), sv.lh.value(), sv.hl.value(), sv.hh.value(), sv.rows, sv.cols};
    const auto g = detail::subband_geometry(sub);
    Tensor<S> x = idwt2(sub, f);
    ad::Tape<S>* t = sv.ll.tape;
    const std::size_t id = t->size();
    return t->record(std::move(x), {sv.ll, sv.lh, sv.hl, sv.hh}, [t, sv, g, f, id] {
        const Tensor<S>& gx = t->grad_slot(id);
        const auto ext = detail::uncrop(gx.raw(), g);
        std::array<std::vector<S>, 4> bands;
        std::array<S*, 4> ptrs;
        for (std::size_t b = 0; b < 4; ++b) {
            bands[b].assign(shape_size(g.band_shape()), S(0));
            ptrs[b] = bands[b].data();
        }
        detail::analyze(ext.data(), g, f, ptrs);
        for (std::size_t b = 0; b < 4; ++b) {
            const ad::Var<S> v = sv.band(b);
            if (t->requires_grad(v.id)) t->accumulate(v.id, Tensor<S>(g.band_shape(), std::move(bands[b])));
        }
    });
}

template <class S>
double inner(const Subbands<S>& a, const Subbands<S>& b) {
    double acc = 0;
    for (std::size_t k = 0; k < 4; ++k) acc += dot(a.band(k), b.band(k));
    return acc;
}

template <class S>
double squared_norm(const Subbands<S>& a) {
    return inner(a, a);
}

/// |<dwt2 x, y> - <x, idwt2 y>| / (|x| |y|); zero when either side is zero.
template <class S>
double adjoint_check(const Tensor<S>& x, const Subbands<S>& y, const WaveletFilters& f = WaveletFilters::haar()) {
    const double nx = std::sqrt(tfab::squared_norm(x));
    const double ny = std::sqrt(squared_norm(y));
    if (nx == 0.0 || ny == 0.0) return 0.0;
    Subbands<S> yy = y;
    if (!yy.rows) {
        yy.rows = x.shape()[x.rank() - 2];
        yy.cols = x.shape()[x.rank() - 1];
    }
    const double lhs = inner(dwt2(x, f), yy);
    const double rhs = dot(x, idwt2(yy, f));
    return std::abs(lhs - rhs) / (nx * ny);
}

}  // namespace tfab::wavelet
