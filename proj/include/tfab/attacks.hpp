#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tfab/data.hpp"
#include "tfab/metrics.hpp"
#include "tfab/models.hpp"
#include "tfab/optim.hpp"
#include "tfab/parallel.hpp"
#include "tfab/wavelet.hpp"

namespace tfab::attacks {

enum class Method { fgsm, bim, pgd, cw, tattack, fattack, tfattack };
enum class LossKind { cross_entropy, margin };
enum class StepRule { adam, plain };

inline constexpr Method kAllMethods[] = {Method::fgsm,    Method::bim,     Method::pgd,     Method::cw,
                                         Method::tattack, Method::fattack, Method::tfattack};

inline const char* method_name(Method m) {
    switch (m) {
        case Method::fgsm: return "fgsm";
        case Method::bim: return "bim";
        case Method::pgd: return "pgd";
        case Method::cw: return "cw";
        case Method::tattack: return "tattack";
        case Method::fattack: return "fattack";
        case Method::tfattack: return "tfattack";
    }
    return "?";
}

inline Method parse_method(const std::string& s) {
    for (Method m : kAllMethods)
        if (s == method_name(m)) return m;
    throw ConfigError("unknown attack method '" + s + "'");
}

inline const char* loss_name(LossKind k) { return k == LossKind::margin ? "margin" : "cross_entropy"; }

inline LossKind parse_loss(const std::string& s) {
    if (s == "margin") return LossKind::margin;
    if (s == "cross_entropy") return LossKind::cross_entropy;
    throw ConfigError("unknown attack loss '" + s + "'");
}

inline bool is_budgeted(Method m) { return m == Method::fgsm || m == Method::bim || m == Method::pgd; }

struct AttackConfig {
    Method method = Method::tfattack;
    double epsilon = 0.1;    // L-infinity budget, FGSM/BIM/PGD
    double step_size = 0.02;
    int max_iters = 100;
    LossKind loss = LossKind::margin;
    double cw_tradeoff = 1.0;
    bool random_start = false;
    std::uint64_t seed = 0;
    bool early_stop = true;
    StepRule step_rule = StepRule::adam;
    std::optional<std::pair<double, double>> value_range;

    static AttackConfig defaults(Method m) {
        AttackConfig c;
        c.method = m;
        switch (m) {
            case Method::fgsm:
                c.loss = LossKind::cross_entropy;
                c.max_iters = 1;
                c.early_stop = false;
                break;
            case Method::bim:
            case Method::pgd:
                c.loss = LossKind::cross_entropy;
                c.max_iters = 10;
                c.step_size = c.epsilon / 4;
                c.random_start = m == Method::pgd;
                c.early_stop = false;
                break;
            case Method::cw:
                c.max_iters = 100;
                c.early_stop = false;
                break;
            default: break;
        }
        return c;
    }

    void validate() const {
        const std::string who = std::string("attack ") + method_name(method) + ": ";
        if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError(who + "epsilon must be finite and >= 0");
        if (!(step_size >= 0.0) || !std::isfinite(step_size)) throw ConfigError(who + "step_size must be finite and >= 0");
        if (max_iters < 1) throw ConfigError(who + "max_iters must be >= 1");
        if ((method == Method::bim || method == Method::pgd) && step_size > epsilon) {
            throw ConfigError(who + "step_size must not exceed epsilon");
        }
        if (method == Method::tfattack && max_iters % 2 != 0) {
            throw ConfigError(who + "max_iters must be even (time and frequency steps alternate)");
        }
        if (!is_budgeted(method) && loss != LossKind::margin) throw ConfigError(who + "requires the margin loss");
        if (!(cw_tradeoff >= 0.0) || !std::isfinite(cw_tradeoff)) throw ConfigError(who + "cw_tradeoff must be >= 0");
        if (value_range && !(value_range->first < value_range->second)) throw ConfigError(who + "empty value range");
    }
};

template <class S>
struct AttackResult {
    Tensor<S> x_adv, x_benign;
    Tensor<S> delta;  // perturbation as accumulated by the attack
    int y_gt = 0;
    int pred_benign = 0, pred_adv = 0;
    bool success = false;
    int iters_used = 0;
    double l2 = 0, cosine = 1, dtw = 0;
};

namespace detail {

struct Probe {
    double loss = 0;
    int pred = 0;
};

template <class S>
ad::Var<S> attack_loss(ad::Var<S> logits, int y, LossKind kind) {
    const int labels[1] = {y};
    return kind == LossKind::margin ? ad::margin_loss<S>(logits, labels) : ad::softmax_cross_entropy<S>(logits, labels);
}

template <class S>
Probe finish(ad::Tape<S>& tape, ad::Var<S> logits, int y, LossKind kind, ad::Var<S>* extra = nullptr) {
    Probe p;
    p.pred = int(argmax<S>(logits.value().data()));
    ad::Var<S> loss = attack_loss(logits, y, kind);
    if (extra) loss = ad::add(loss, *extra);
    p.loss = loss.value()[0];
    if (!std::isfinite(p.loss)) throw NumericError("attack: non-finite loss");
    tape.backward(loss);
    return p;
}

/// Loss, prediction and input gradient at a [C,T] sample.
template <class S>
Probe time_grad(const models::Model<S>& model, const Tensor<S>& x, int y, LossKind kind, Tensor<S>& grad) {
    ad::Tape<S> tape;
    auto xv = tape.leaf(x, true);
    auto z = model.forward(tape, ad::reshape<S>(xv, {1, 1, x.dim(0), x.dim(1)}));
    const Probe p = finish(tape, z, y, kind);
    grad = xv.grad();
    return p;
}

/// Same probe with the sample re-expressed through its subbands:
/// f(idwt2(s)) differentiated with respect to s = dwt2(x).
template <class S>
Probe subband_grad(const models::Model<S>& model, const Tensor<S>& x, int y, LossKind kind,
                   wavelet::Subbands<S>& grad) {
    ad::Tape<S> tape;
    auto s = wavelet::dwt2(x);
    wavelet::SubbandVars<S> sv{tape.leaf(s.ll, true), tape.leaf(s.lh, true), tape.leaf(s.hl, true),
                               tape.leaf(s.hh, true), s.rows, s.cols};
    auto xr = wavelet::idwt2(sv);
    auto z = model.forward(tape, ad::reshape<S>(xr, {1, 1, x.dim(0), x.dim(1)}));
    const Probe p = finish(tape, z, y, kind);
    grad = wavelet::Subbands<S>{sv.ll.grad(), sv.lh.grad(), sv.hl.grad(), sv.hh.grad(), s.rows, s.cols};
    return p;
}

template <class S>
S sign(S v) {
    return v > S(0) ? S(1) : v < S(0) ? S(-1) : S(0);
}

template <class S>
Tensor<S> apply(const Tensor<S>& x_benign, Tensor<S>& delta, const AttackConfig& cfg) {
    Tensor<S> x = x_benign + delta;
    if (cfg.value_range) {
        const S lo = S(cfg.value_range->first), hi = S(cfg.value_range->second);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = std::clamp(x[i], lo, hi);
            delta[i] = x[i] - x_benign[i];
        }
    }
    return x;
}

template <class S>
AttackResult<S> finalize(const models::Model<S>& model, const Tensor<S>& x_benign, int y, int pred_benign,
                         Tensor<S> x_adv, Tensor<S> delta, int iters) {
    AttackResult<S> r;
    r.pred_adv = model.predict(x_adv);
    r.success = r.pred_adv != y;
    r.y_gt = y;
    r.pred_benign = pred_benign;
    r.iters_used = iters;
    r.l2 = metrics::l2_dist(x_adv, x_benign);
    r.cosine = metrics::cosine_similarity(x_adv, x_benign);
    r.dtw = metrics::dtw_multichannel(x_adv, x_benign);
    r.x_adv = std::move(x_adv);
    r.x_benign = x_benign;
    r.delta = std::move(delta);
    return r;
}

template <class S>
Tensor<S> step_direction(const Tensor<S>& grad, StepRule rule, ad::AdamState<S>& state, const char* name) {
    return rule == StepRule::adam ? ad::adam_direction(grad, state, name) : grad;
}

template <class S>
void require_sample(const models::Model<S>& model, const Tensor<S>& x, int y) {
    const auto& s = model.spec();
    if (x.rank() != 2 || x.dim(0) != std::size_t(s.n_channels) || x.dim(1) != std::size_t(s.n_timepoints)) {
        throw DimensionError("attack: sample shape " + shape_str(x.shape()) + " does not match model input [" +
                             std::to_string(s.n_channels) + "," + std::to_string(s.n_timepoints) + "]");
    }
    if (y < 0 || y >= s.n_classes) throw InputError("attack: label " + std::to_string(y) + " out of range");
}

}  // namespace detail

/// L-infinity family: FGSM (one full-budget sign step), BIM (iterated,
/// clipped), PGD (BIM from a seeded uniform start in the ball).
template <class S>
AttackResult<S> sign_attack(const models::Model<S>& model, const Tensor<S>& x, int y, const AttackConfig& cfg) {
    detail::require_sample(model, x, y);
    const int pred0 = model.predict(x);
    const S eps = S(cfg.epsilon);
    // Ascend cross-entropy; the margin hinge is descended.
    const S dir_sign = cfg.loss == LossKind::margin ? S(-1) : S(1);
    Tensor<S> delta(x.shape());
    Tensor<S> grad;
    if (cfg.method == Method::fgsm) {
        detail::time_grad(model, x, y, cfg.loss, grad);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = dir_sign * eps * detail::sign(grad[i]);
        Tensor<S> xa = detail::apply(x, delta, cfg);
        return detail::finalize(model, x, y, pred0, std::move(xa), std::move(delta), 1);
    }
    if (cfg.method == Method::pgd && cfg.random_start) {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
        for (auto& d : delta.data()) d = std::clamp(S(u(rng)), -eps, eps);
    }
    Tensor<S> xa = detail::apply(x, delta, cfg);
    const S alpha = S(cfg.step_size);
    int iters = 0;
    for (; iters < cfg.max_iters; ++iters) {
        const auto p = detail::time_grad(model, xa, y, cfg.loss, grad);
        if (cfg.early_stop && p.pred != y) break;
        for (std::size_t i = 0; i < delta.size(); ++i) {
            delta[i] = std::clamp(S(delta[i] + dir_sign * alpha * detail::sign(grad[i])), -eps, eps);
        }
        xa = detail::apply(x, delta, cfg);
    }
    return detail::finalize(model, x, y, pred0, std::move(xa), std::move(delta), iters);
}

/// Fixed trade-off C&W: Adam on delta minimizing |delta|^2 + c * margin.
/// Returns the lowest-L2 successful iterate, else the last one.
template <class S>
AttackResult<S> cw(const models::Model<S>& model, const Tensor<S>& x, int y, const AttackConfig& cfg) {
    detail::require_sample(model, x, y);
    const int pred0 = model.predict(x);
    Tensor<S> delta(x.shape());
    ad::AdamState<S> adam;
    std::optional<Tensor<S>> best;
    double best_l2 = std::numeric_limits<double>::infinity();
    int best_iters = 0;
    auto consider = [&](int pred, int iters) {
        if (pred == y) return;
        const double n2 = squared_norm(delta);
        if (n2 < best_l2) {
            best_l2 = n2;
            best = delta;
            best_iters = iters;
        }
    };
    int iters = 0;
    for (; iters < cfg.max_iters; ++iters) {
        ad::Tape<S> tape;
        auto xb = tape.constant(x);
        auto dv = tape.leaf(delta, true);
        auto xv = ad::add<S>(xb, dv);
        auto z = model.forward(tape, ad::reshape<S>(xv, {1, 1, x.dim(0), x.dim(1)}));
        const int pred = int(argmax<S>(z.value().data()));
        auto loss = ad::add<S>(ad::sum_squares<S>(dv),
                               ad::scale<S>(detail::attack_loss(z, y, LossKind::margin), S(cfg.cw_tradeoff)));
        if (!std::isfinite(double(loss.value()[0]))) throw NumericError("cw: non-finite loss");
        consider(pred, iters);
        if (cfg.early_stop && pred != y) break;
        tape.backward(loss);
        const Tensor<S> dir = ad::adam_direction(dv.grad(), adam, "delta");
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = S(delta[i] - S(cfg.step_size) * dir[i]);
        detail::apply(x, delta, cfg);
    }
    Tensor<S> xa = detail::apply(x, delta, cfg);
    consider(model.predict(xa), iters);
    if (best) {
        delta = *best;
        iters = best_iters;
        xa = detail::apply(x, delta, cfg);
    }
    return detail::finalize(model, x, y, pred0, std::move(xa), std::move(delta), iters);
}

/// Time-domain (TAttack), subband (FAttack) and alternating (TFAttack)
/// margin descent. The frequency step updates the subbands of the current
/// iterate and maps them back, which is tracked as
/// delta -= step * idwt2(direction).
template <class S>
AttackResult<S> tf_family(const models::Model<S>& model, const Tensor<S>& x, int y, const AttackConfig& cfg) {
    detail::require_sample(model, x, y);
    const int pred0 = model.predict(x);
    Tensor<S> delta(x.shape());
    Tensor<S> xa = x;
    ad::AdamState<S> adam_time;
    std::array<ad::AdamState<S>, 4> adam_band;
    const S alpha = S(cfg.step_size);
    Tensor<S> grad;
    wavelet::Subbands<S> band_grad;
    int iters = 0;
    for (; iters < cfg.max_iters; ++iters) {
        const bool freq = cfg.method == Method::fattack || (cfg.method == Method::tfattack && iters % 2 == 1);
        Tensor<S> step;
        if (!freq) {
            const auto p = detail::time_grad(model, xa, y, LossKind::margin, grad);
            if (cfg.early_stop && p.pred != y) break;
            step = detail::step_direction(grad, cfg.step_rule, adam_time, "x");
        } else {
            const auto p = detail::subband_grad(model, xa, y, LossKind::margin, band_grad);
            if (cfg.early_stop && p.pred != y) break;
            wavelet::Subbands<S> dir = band_grad;
            static constexpr const char* names[4] = {"ll", "lh", "hl", "hh"};
            for (std::size_t b = 0; b < 4; ++b) {
                dir.band(b) = detail::step_direction(band_grad.band(b), cfg.step_rule, adam_band[b], names[b]);
            }
            step = wavelet::idwt2(dir);
        }
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = S(delta[i] - alpha * step[i]);
        xa = detail::apply(x, delta, cfg);
    }
    return detail::finalize(model, x, y, pred0, std::move(xa), std::move(delta), iters);
}

template <class S>
AttackResult<S> run_attack(const models::Model<S>& model, const Tensor<S>& x, int y, const AttackConfig& cfg) {
    cfg.validate();
    switch (cfg.method) {
        case Method::fgsm:
        case Method::bim:
        case Method::pgd: return sign_attack(model, x, y, cfg);
        case Method::cw: return cw(model, x, y, cfg);
        default: return tf_family(model, x, y, cfg);
    }
}

template <class S>
AttackResult<S> fgsm(const models::Model<S>& m, const Tensor<S>& x, int y, AttackConfig c) {
    c.method = Method::fgsm;
    return run_attack(m, x, y, c);
}
template <class S>
AttackResult<S> bim(const models::Model<S>& m, const Tensor<S>& x, int y, AttackConfig c) {
    c.method = Method::bim;
    return run_attack(m, x, y, c);
}
template <class S>
AttackResult<S> pgd(const models::Model<S>& m, const Tensor<S>& x, int y, AttackConfig c) {
    c.method = Method::pgd;
    return run_attack(m, x, y, c);
}
template <class S>
AttackResult<S> tattack(const models::Model<S>& m, const Tensor<S>& x, int y, AttackConfig c) {
    c.method = Method::tattack;
    return run_attack(m, x, y, c);
}
template <class S>
AttackResult<S> fattack(const models::Model<S>& m, const Tensor<S>& x, int y, AttackConfig c) {
    c.method = Method::fattack;
    return run_attack(m, x, y, c);
}
template <class S>
AttackResult<S> tfattack(const models::Model<S>& m, const Tensor<S>& x, int y, AttackConfig c) {
    c.method = Method::tfattack;
    return run_attack(m, x, y, c);
}

// ---------------------------------------------------------------------------
// Batch evaluation

struct Summary {
    std::size_t n_selected = 0;
    std::size_t n_attackable = 0;
    std::optional<double> asr;  // nullopt: no attackable samples
    double mean_l2 = 0, mean_dtw = 0, mean_cosine = 0;
};

template <class S>
struct Outcome {
    std::size_t sample_id = 0;
    AttackResult<S> result;
};

struct SampleFailure {
    std::size_t sample_id = 0;
    std::string message;
};

template <class S>
struct Evaluation {
    std::vector<Outcome<S>> outcomes;  // attackable samples, in selection order
    Summary summary;
    std::optional<SampleFailure> failure;

    void require_ok() const {
        if (failure) throw NumericError("sample " + std::to_string(failure->sample_id) + ": " + failure->message);
    }
};

template <class S>
Summary summarize(const std::vector<Outcome<S>>& outcomes, std::size_t n_selected) {
    Summary s;
    s.n_selected = n_selected;
    s.n_attackable = outcomes.size();
    const auto hits = std::make_unique<bool[]>(outcomes.size());
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
        const auto& r = outcomes[i].result;
        hits[i] = r.success;
        s.mean_l2 += r.l2;
        s.mean_dtw += r.dtw;
        s.mean_cosine += r.cosine;
    }
    s.asr = metrics::asr(std::span<const bool>(hits.get(), outcomes.size()));
    if (!outcomes.empty()) {
        const double n = double(outcomes.size());
        s.mean_l2 /= n;
        s.mean_dtw /= n;
        s.mean_cosine /= n;
    }
    return s;
}

/// Benign predictions for the given samples, evaluated in parallel.
template <class S>
std::vector<int> predict_samples(const models::Model<S>& model, const data::Dataset& ds,
                                 std::span<const std::size_t> ids, unsigned threads) {
    std::vector<int> pred(ids.size(), -1);
    auto errs = parallel_for(ids.size(), threads, [&](std::size_t i) {
        pred[i] = model.predict(ds.samples.at(ids[i]).signal.template cast<S>());
    });
    for (std::size_t i = 0; i < errs.size(); ++i) {
        if (errs[i]) throw InputError("sample " + std::to_string(ids[i]) + ": " + exception_message(errs[i]));
    }
    return pred;
}

/// Attacks every selected sample the model classifies correctly. The
/// per-sample seed is derived from cfg.seed and the sample id so results do
/// not depend on scheduling.
template <class S>
Evaluation<S> evaluate_attack(const models::Model<S>& model, const data::Dataset& ds, std::span<const std::size_t> ids,
                              const AttackConfig& cfg, unsigned threads = 1) {
    cfg.validate();
    const auto pred = predict_samples(model, ds, ids, threads);
    std::vector<std::size_t> attackable;
    for (std::size_t i = 0; i < ids.size(); ++i)
        if (pred[i] == ds.samples[ids[i]].subject) attackable.push_back(i);
    std::vector<std::optional<AttackResult<S>>> slots(attackable.size());
    auto errs = parallel_for(attackable.size(), threads, [&](std::size_t j) {
        const std::size_t id = ids[attackable[j]];
        AttackConfig c = cfg;
        c.seed = data::detail::mix(cfg.seed, 0xa7, std::uint64_t(id));
        const auto& smp = ds.samples[id];
        slots[j] = run_attack(model, smp.signal.template cast<S>(), smp.subject, c);
    });
    Evaluation<S> ev;
    for (std::size_t j = 0; j < attackable.size(); ++j) {
        if (errs[j]) {
            if (!ev.failure) ev.failure = SampleFailure{ids[attackable[j]], exception_message(errs[j])};
            continue;
        }
        ev.outcomes.push_back(Outcome<S>{ids[attackable[j]], std::move(*slots[j])});
    }
    ev.summary = summarize(ev.outcomes, ids.size());
    return ev;
}

/// Number of distinct values in a tensor.
template <class S>
std::size_t distinct_values(const Tensor<S>& t) {
    std::vector<S> v(t.data().begin(), t.data().end());
    std::sort(v.begin(), v.end());
    return std::size_t(std::unique(v.begin(), v.end()) - v.begin());
}

template <class S>
double linf(const Tensor<S>& t) {
    double m = 0;
    for (S v : t.data()) m = std::max(m, std::abs(double(v)));
    return m;
}

}  // namespace tfab::attacks
