#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "tfab/data.hpp"
#include "tfab/io.hpp"
#include "tfab/ops.hpp"
#include "tfab/optim.hpp"
#include "tfab/tape.hpp"

namespace tfab::models {

enum class Family { eegnet, deepconvnet, shallowconvnet };

inline const char* family_name(Family f) {
    switch (f) {
        case Family::eegnet: return "eegnet";
        case Family::deepconvnet: return "deepconvnet";
        case Family::shallowconvnet: return "shallowconvnet";
    }
    return "?";
}

inline Family parse_family(const std::string& s) {
    if (s == "eegnet") return Family::eegnet;
    if (s == "deepconvnet") return Family::deepconvnet;
    if (s == "shallowconvnet") return Family::shallowconvnet;
    throw ConfigError("unknown model family '" + s + "'");
}

struct ArchSpec {
    Family family = Family::eegnet;
    int n_channels = 8;
    int n_timepoints = 256;
    int n_classes = 5;
    double width_scale = 1.0;  // multiplies every filter count
    int temporal_kernel = 63;
    double dropout_rate = 0.25;

    bool operator==(const ArchSpec&) const = default;

    /// Desk-scale configuration used by the benchmark.
    static ArchSpec small(Family f, int C, int T, int K) {
        ArchSpec s;
        s.family = f;
        s.n_channels = C;
        s.n_timepoints = T;
        s.n_classes = K;
        switch (f) {
            case Family::eegnet: s.width_scale = 0.5; s.temporal_kernel = 31; break;
            case Family::deepconvnet: s.width_scale = 0.2; s.temporal_kernel = 9; break;
            case Family::shallowconvnet: s.width_scale = 0.25; s.temporal_kernel = 25; break;
        }
        return s;
    }
};

inline io::json to_json(const ArchSpec& s) {
    return io::json{{"family", family_name(s.family)}, {"n_channels", s.n_channels},
                    {"n_timepoints", s.n_timepoints},  {"n_classes", s.n_classes},
                    {"width_scale", s.width_scale},    {"temporal_kernel", s.temporal_kernel},
                    {"dropout_rate", s.dropout_rate}};
}

inline ArchSpec arch_from_json(const io::json& j) {
    ArchSpec s;
    s.family = parse_family(j.at("family").get<std::string>());
    s.n_channels = j.value("n_channels", s.n_channels);
    s.n_timepoints = j.value("n_timepoints", s.n_timepoints);
    s.n_classes = j.value("n_classes", s.n_classes);
    s.width_scale = j.value("width_scale", s.width_scale);
    s.temporal_kernel = j.value("temporal_kernel", s.temporal_kernel);
    s.dropout_rate = j.value("dropout_rate", s.dropout_rate);
    return s;
}

// ---------------------------------------------------------------------------
// Layer program

namespace layer {
struct Conv { std::string name; Shape kernel; ad::Conv2dOptions opt; };
struct SepConv { std::string name; Shape depth, point; ad::Conv2dOptions depth_opt; };
struct BatchNorm { std::string name; std::size_t channels; };
struct Act { ad::Activation kind; };
struct Pool { std::string name; ad::PoolKind kind; ad::PoolOptions opt; };
struct Dropout {};
struct Flatten {};
struct Dense { std::string name; std::size_t in, out; };
}  // namespace layer

using Layer = std::variant<layer::Conv, layer::SepConv, layer::BatchNorm, layer::Act, layer::Pool, layer::Dropout,
                           layer::Flatten, layer::Dense>;

struct TrainConfig {
    int epochs = 30;
    int batch_size = 16;
    double lr = 3e-3;
    std::uint64_t seed = 0;
    enum class Optimizer { adam, sgd } optimizer = Optimizer::adam;

    void validate() const {
        if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
        if (batch_size < 2) throw ConfigError("train: batch_size must be >= 2 (batch norm)");
        if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    }
};

struct EpochStats {
    int epoch = 0;
    double loss = 0;
    double train_acc = 0;
    std::optional<double> test_acc;
};

using History = std::vector<EpochStats>;

namespace detail {

inline int scaled(double base, double ws) { return std::max(1, int(std::lround(base * ws))); }

inline std::vector<Layer> layer_program(const ArchSpec& s) {
    using namespace layer;
    const std::size_t C = std::size_t(s.n_channels);
    const std::size_t k = std::size_t(s.temporal_kernel);
    const ad::Conv2dOptions same{1, 1, 0, k / 2, 1};
    std::vector<Layer> L;
    switch (s.family) {
        case Family::eegnet: {
            const std::size_t f1 = std::size_t(scaled(8, s.width_scale)), d = 2, f2 = f1 * d;
            const std::size_t k3 = std::max<std::size_t>(3, (k / 4) | 1);
            L.push_back(Conv{"conv_temporal", {f1, 1, 1, k}, same});
            L.push_back(BatchNorm{"bn1", f1});
            L.push_back(Conv{"conv_depthwise", {f1 * d, 1, C, 1}, ad::Conv2dOptions{1, 1, 0, 0, f1}});
            L.push_back(BatchNorm{"bn2", f2});
            L.push_back(Act{ad::Activation::elu});
            L.push_back(Pool{"pool1", ad::PoolKind::avg, {1, 4, 1, 4}});
            L.push_back(Dropout{});
            L.push_back(SepConv{"conv_separable", {f2, 1, 1, k3}, {f2, f2, 1, 1}, ad::Conv2dOptions{1, 1, 0, k3 / 2, 1}});
            L.push_back(BatchNorm{"bn3", f2});
            L.push_back(Act{ad::Activation::elu});
            L.push_back(Pool{"pool2", ad::PoolKind::avg, {1, 8, 1, 8}});
            L.push_back(Dropout{});
            break;
        }
        case Family::shallowconvnet: {
            const std::size_t f = std::size_t(scaled(40, s.width_scale));
            L.push_back(Conv{"conv_temporal", {f, 1, 1, k}, same});
            L.push_back(Conv{"conv_spatial", {f, f, C, 1}, {}});
            L.push_back(BatchNorm{"bn1", f});
            L.push_back(Act{ad::Activation::square});
            L.push_back(Pool{"pool1", ad::PoolKind::avg, {1, 32, 1, 16}});
            L.push_back(Act{ad::Activation::log_clamped});
            L.push_back(Dropout{});
            break;
        }
        case Family::deepconvnet: {
            const std::size_t widths[4] = {std::size_t(scaled(25, s.width_scale)), std::size_t(scaled(50, s.width_scale)),
                                           std::size_t(scaled(100, s.width_scale)),
                                           std::size_t(scaled(200, s.width_scale))};
            L.push_back(Conv{"conv_temporal", {widths[0], 1, 1, k}, same});
            L.push_back(Conv{"conv_spatial", {widths[0], widths[0], C, 1}, {}});
            L.push_back(BatchNorm{"bn1", widths[0]});
            L.push_back(Act{ad::Activation::elu});
            L.push_back(Pool{"pool1", ad::PoolKind::max, {1, 2, 1, 2}});
            L.push_back(Dropout{});
            for (int b = 1; b < 4; ++b) {
                const std::string n = std::to_string(b + 1);
                L.push_back(Conv{"conv" + n, {widths[b], widths[b - 1], 1, k}, same});
                L.push_back(BatchNorm{"bn" + n, widths[b]});
                L.push_back(Act{ad::Activation::elu});
                L.push_back(Pool{"pool" + n, ad::PoolKind::max, {1, 2, 1, 2}});
                L.push_back(Dropout{});
            }
            break;
        }
    }
    L.push_back(Flatten{});
    L.push_back(Dense{"classifier", 0, std::size_t(s.n_classes)});
    return L;
}

}  // namespace detail

/// Forward-pass switches. Train mode uses batch statistics and dropout;
/// eval mode is a pure function of parameters, running stats and input.
template <class S>
struct ForwardOptions {
    ad::BatchNormMode mode = ad::BatchNormMode::eval;
    bool param_grads = false;
    std::mt19937_64* dropout_rng = nullptr;
    std::vector<ad::Var<S>>* param_vars = nullptr;                    // out: one per parameter
    std::vector<ad::BatchNormStats<S>>* batch_stats = nullptr;       // out: one per BN layer (train)
};

template <class S>
class Model {
public:
    struct Param {
        std::string name;
        Tensor<S> value;
    };
    struct Buffer {
        std::string name;
        ad::BatchNormStats<S> stats;
    };

    Model() = default;

    /// Builds the layer stack, validates every stage shape and initializes
    /// weights with fan-in scaled uniform draws from `seed`.
    static Model build(const ArchSpec& spec, std::uint64_t seed) {
        validate_spec(spec);
        Model m;
        m.spec_ = spec;
        m.layers_ = detail::layer_program(spec);
        std::mt19937_64 rng(seed);
        Shape shape{1, 1, std::size_t(spec.n_channels), std::size_t(spec.n_timepoints)};
        auto kaiming = [&](const std::string& name, const Shape& ks, std::size_t fan_in) {
            Tensor<S> w(ks);
            const double bound = std::sqrt(6.0 / double(fan_in));
            std::uniform_real_distribution<double> u(-bound, bound);
            for (auto& v : w.data()) v = S(u(rng));
            m.add_param(name, std::move(w));
        };
        auto stage_error = [](const std::string& stage, const Shape& in, const std::string& why) {
            return ConfigError("model stage '" + stage + "' cannot accept input " + shape_str(in) + ": " + why);
        };
        for (auto& l : m.layers_) {
            std::visit(
                [&](auto& ly) {
                    using T = std::decay_t<decltype(ly)>;
                    if constexpr (std::is_same_v<T, layer::Conv>) {
                        try {
                            const auto g = ad::conv2d_geometry(shape, ly.kernel, ly.opt);
                            shape = {1, g.cout, g.oh, g.ow};
                        } catch (const Error& e) {
                            throw stage_error(ly.name, shape, e.what());
                        }
                        kaiming(ly.name + ".weight", ly.kernel, ly.kernel[1] * ly.kernel[2] * ly.kernel[3]);
                    } else if constexpr (std::is_same_v<T, layer::SepConv>) {
                        try {
                            auto o = ly.depth_opt;
                            o.groups = shape[1];
                            const auto g1 = ad::conv2d_geometry(shape, ly.depth, o);
                            const auto g2 = ad::conv2d_geometry({1, g1.cout, g1.oh, g1.ow}, ly.point, {});
                            shape = {1, g2.cout, g2.oh, g2.ow};
                        } catch (const Error& e) {
                            throw stage_error(ly.name, shape, e.what());
                        }
                        kaiming(ly.name + ".depth", ly.depth, ly.depth[2] * ly.depth[3]);
                        kaiming(ly.name + ".point", ly.point, ly.point[1]);
                    } else if constexpr (std::is_same_v<T, layer::BatchNorm>) {
                        m.add_param(ly.name + ".gamma", Tensor<S>({ly.channels}, S(1)));
                        m.add_param(ly.name + ".beta", Tensor<S>({ly.channels}, S(0)));
                        m.buffers_.push_back(
                            Buffer{ly.name, {Tensor<S>({ly.channels}, S(0)), Tensor<S>({ly.channels}, S(1))}});
                    } else if constexpr (std::is_same_v<T, layer::Pool>) {
                        if (ly.opt.window_h > shape[2] || ly.opt.window_w > shape[3]) {
                            throw stage_error(ly.name, shape,
                                              "pool window (" + std::to_string(ly.opt.window_h) + "," +
                                                  std::to_string(ly.opt.window_w) + ") exhausts the feature map");
                        }
                        shape = {1, shape[1], (shape[2] - ly.opt.window_h) / ly.opt.stride_h + 1,
                                 (shape[3] - ly.opt.window_w) / ly.opt.stride_w + 1};
                    } else if constexpr (std::is_same_v<T, layer::Flatten>) {
                        shape = {1, shape_size(shape)};
                    } else if constexpr (std::is_same_v<T, layer::Dense>) {
                        ly.in = shape[1];
                        kaiming(ly.name + ".weight", {ly.out, ly.in}, ly.in);
                        m.add_param(ly.name + ".bias", Tensor<S>({ly.out}, S(0)));
                        shape = {1, ly.out};
                    }
                },
                l);
        }
        return m;
    }

    const ArchSpec& spec() const noexcept { return spec_; }
    const std::vector<Layer>& layers() const noexcept { return layers_; }
    std::vector<Param>& params() noexcept { return params_; }
    const std::vector<Param>& params() const noexcept { return params_; }
    std::vector<Buffer>& buffers() noexcept { return buffers_; }
    const std::vector<Buffer>& buffers() const noexcept { return buffers_; }

    Tensor<S>& param(const std::string& name) { return params_.at(index_.at(name)).value; }
    const Tensor<S>& param(const std::string& name) const { return params_.at(index_.at(name)).value; }

    /// Logits [N,K] for a batch [N,1,C,T]. No softmax.
    ad::Var<S> forward(ad::Tape<S>& tape, ad::Var<S> batch, const ForwardOptions<S>& opt = {}) const {
        const Shape& in = batch.shape();
        const Shape want{0, 1, std::size_t(spec_.n_channels), std::size_t(spec_.n_timepoints)};
        if (in.size() != 4 || in[1] != 1 || in[2] != want[2] || in[3] != want[3]) {
            throw DimensionError("model forward: expected [N,1," + std::to_string(want[2]) + "," +
                                 std::to_string(want[3]) + "], got " + shape_str(in));
        }
        const bool train = opt.mode == ad::BatchNormMode::train;
        std::vector<ad::Var<S>> pv;
        pv.reserve(params_.size());
        for (const auto& p : params_) pv.push_back(tape.leaf(p.value, opt.param_grads));
        auto P = [&](const std::string& name) { return pv[index_.at(name)]; };
        if (opt.batch_stats) opt.batch_stats->clear();
        std::size_t bn_index = 0;
        ad::Var<S> x = batch;
        for (const auto& l : layers_) {
            std::visit(
                [&](const auto& ly) {
                    using T = std::decay_t<decltype(ly)>;
                    if constexpr (std::is_same_v<T, layer::Conv>) {
                        x = ad::conv2d<S>(x, P(ly.name + ".weight"), std::nullopt, ly.opt);
                    } else if constexpr (std::is_same_v<T, layer::SepConv>) {
                        x = ad::depthwise_pointwise<S>(x, P(ly.name + ".depth"), P(ly.name + ".point"), ly.depth_opt);
                    } else if constexpr (std::is_same_v<T, layer::BatchNorm>) {
                        ad::BatchNormStats<S> batch_stats;
                        x = ad::batch_norm<S>(x, P(ly.name + ".gamma"), P(ly.name + ".beta"),
                                              buffers_[bn_index].stats, opt.mode, train ? &batch_stats : nullptr);
                        if (train && opt.batch_stats) opt.batch_stats->push_back(std::move(batch_stats));
                        ++bn_index;
                    } else if constexpr (std::is_same_v<T, layer::Act>) {
                        x = ad::activation<S>(x, ly.kind);
                    } else if constexpr (std::is_same_v<T, layer::Pool>) {
                        x = ad::pool<S>(x, ly.kind, ly.opt);
                    } else if constexpr (std::is_same_v<T, layer::Dropout>) {
                        if (train && opt.dropout_rng) x = ad::dropout<S>(x, spec_.dropout_rate, *opt.dropout_rng);
                    } else if constexpr (std::is_same_v<T, layer::Flatten>) {
                        x = ad::flatten<S>(x);
                    } else if constexpr (std::is_same_v<T, layer::Dense>) {
                        x = ad::dense<S>(x, P(ly.name + ".weight"), P(ly.name + ".bias"));
                    }
                },
                l);
        }
        if (opt.param_vars) *opt.param_vars = std::move(pv);
        return x;
    }

    /// Eval-mode logits without gradient bookkeeping.
    Tensor<S> logits(const Tensor<S>& batch) const {
        ad::Tape<S> tape;
        return forward(tape, tape.constant(batch)).value();
    }

    /// Predicted class of one [C,T] sample (first maximal logit).
    int predict(const Tensor<S>& sample) const {
        const Tensor<S> z = logits(sample.reshaped({1, 1, sample.dim(0), sample.dim(1)}));
        return int(argmax<S>(z.data()));
    }

    bool same_parameters(const Model& other) const {
        if (params_.size() != other.params_.size() || buffers_.size() != other.buffers_.size()) return false;
        for (std::size_t i = 0; i < params_.size(); ++i)
            if (params_[i].name != other.params_[i].name || !(params_[i].value == other.params_[i].value)) return false;
        for (std::size_t i = 0; i < buffers_.size(); ++i)
            if (!(buffers_[i].stats.mean == other.buffers_[i].stats.mean) ||
                !(buffers_[i].stats.var == other.buffers_[i].stats.var))
                return false;
        return true;
    }

    template <class U>
    Model<U> cast() const {
        Model<U> out = Model<U>::build(spec_, 0);
        for (std::size_t i = 0; i < params_.size(); ++i) out.params()[i].value = params_[i].value.template cast<U>();
        for (std::size_t i = 0; i < buffers_.size(); ++i) {
            out.buffers()[i].stats.mean = buffers_[i].stats.mean.template cast<U>();
            out.buffers()[i].stats.var = buffers_[i].stats.var.template cast<U>();
        }
        return out;
    }

    static void validate_spec(const ArchSpec& s) {
        if (s.n_channels < 1 || s.n_timepoints < 1) throw ConfigError("model: n_channels and n_timepoints must be >= 1");
        if (s.n_classes < 2) throw ConfigError("model: n_classes must be >= 2");
        if (!(s.width_scale > 0.0)) throw ConfigError("model: width_scale must be > 0");
        if (s.temporal_kernel < 1) throw ConfigError("model: temporal_kernel must be >= 1");
        if (!(s.dropout_rate >= 0.0 && s.dropout_rate < 1.0)) throw ConfigError("model: dropout_rate must lie in [0,1)");
    }

private:
    void add_param(const std::string& name, Tensor<S> value) {
        if (index_.count(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        index_[name] = params_.size();
        params_.push_back(Param{name, std::move(value)});
    }

    ArchSpec spec_;
    std::vector<Layer> layers_;
    std::vector<Param> params_;
    std::map<std::string, std::size_t> index_;
    std::vector<Buffer> buffers_;
};

template <class S>
Model<S> build_model(const ArchSpec& spec, std::uint64_t seed) {
    return Model<S>::build(spec, seed);
}

// ---------------------------------------------------------------------------
// Batching and training

template <class S>
Tensor<S> make_batch(const data::Dataset& ds, std::span<const std::size_t> idx) {
    const std::size_t C = ds.n_channels, T = ds.n_timepoints;
    Tensor<S> b({idx.size(), 1, C, T});
    for (std::size_t n = 0; n < idx.size(); ++n) {
        const auto& sig = ds.samples.at(idx[n]).signal;
        std::copy(sig.data().begin(), sig.data().end(), b.raw() + n * C * T);
    }
    return b;
}

template <class S>
double accuracy(const Model<S>& model, const data::Dataset& ds, std::span<const std::size_t> idx,
                std::size_t chunk = 64) {
    if (idx.empty()) return 0.0;
    std::size_t hits = 0;
    const std::size_t K = std::size_t(model.spec().n_classes);
    for (std::size_t start = 0; start < idx.size(); start += chunk) {
        const auto part = idx.subspan(start, std::min(chunk, idx.size() - start));
        const Tensor<S> z = model.logits(make_batch<S>(ds, part));
        for (std::size_t n = 0; n < part.size(); ++n) {
            const auto pred = argmax<S>(std::span<const S>(z.raw() + n * K, K));
            if (int(pred) == ds.samples[part[n]].subject) ++hits;
        }
    }
    return double(hits) / double(idx.size());
}

/// Mini-batch training on the train split; test accuracy is recorded per
/// epoch when the dataset has a test split. Batches smaller than 2 (batch
/// norm) are dropped.
template <class S>
History train(Model<S>& model, const data::Dataset& ds, const TrainConfig& cfg) {
    cfg.validate();
    auto train_idx = ds.indices(data::Split::train);
    const auto test_idx = ds.indices(data::Split::test);
    if (train_idx.empty()) throw InputError("train: dataset has no training samples");
    for (auto i : train_idx) {
        const int y = ds.samples[i].subject;
        if (y < 0 || y >= model.spec().n_classes) {
            throw InputError("train: label " + std::to_string(y) + " of sample " + std::to_string(i) + " out of range");
        }
    }
    std::mt19937_64 rng(cfg.seed);
    std::mt19937_64 drop_rng(data::detail::mix(cfg.seed, 0xd0));
    std::vector<ad::AdamState<S>> adam(model.params().size());
    const std::size_t bs = std::size_t(cfg.batch_size);
    History history;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(train_idx.begin(), train_idx.end(), rng);
        double loss_sum = 0;
        std::size_t n_batches = 0;
        for (std::size_t start = 0; start + 2 <= train_idx.size(); start += bs) {
            const std::span<const std::size_t> part(train_idx.data() + start, std::min(bs, train_idx.size() - start));
            if (part.size() < 2) break;
            std::vector<int> labels;
            for (auto i : part) labels.push_back(ds.samples[i].subject);
            ad::Tape<S> tape;
            std::vector<ad::Var<S>> pv;
            std::vector<ad::BatchNormStats<S>> bstats;
            ForwardOptions<S> fo{ad::BatchNormMode::train, true, &drop_rng, &pv, &bstats};
            auto z = model.forward(tape, tape.constant(make_batch<S>(ds, part)), fo);
            auto loss = ad::softmax_cross_entropy<S>(z, labels);
            tape.backward(loss);
            const double lv = loss.value()[0];
            if (!std::isfinite(lv)) throw NumericError("train: non-finite loss at epoch " + std::to_string(epoch));
            loss_sum += lv;
            ++n_batches;
            for (std::size_t p = 0; p < pv.size(); ++p) {
                auto& param = model.params()[p];
                if (cfg.optimizer == TrainConfig::Optimizer::adam) {
                    ad::adam_update(param.value, pv[p].grad(), adam[p], cfg.lr, param.name);
                } else {
                    ad::sgd_update(param.value, pv[p].grad(), cfg.lr, param.name);
                }
            }
            for (std::size_t b = 0; b < bstats.size(); ++b) ad::update_running_stats(model.buffers()[b].stats, bstats[b]);
        }
        EpochStats st;
        st.epoch = epoch + 1;
        st.loss = n_batches ? loss_sum / double(n_batches) : 0.0;
        st.train_acc = accuracy(model, ds, std::span<const std::size_t>(train_idx));
        if (!test_idx.empty()) st.test_acc = accuracy(model, ds, std::span<const std::size_t>(test_idx));
        history.push_back(st);
    }
    return history;
}

// ---------------------------------------------------------------------------
// Weight file "TFAB-W1"

inline constexpr const char* kWeightsMagic = "TFAB-W1";
inline constexpr int kWeightsVersion = 1;

template <class S>
void save_weights(const Model<S>& model, const std::string& path) {
    io::json header;
    header["format_version"] = kWeightsVersion;
    header["spec"] = to_json(model.spec());
    io::json manifest = io::json::array();
    std::vector<char> payload;
    auto put = [&](const std::string& name, const Tensor<S>& t) {
        manifest.push_back({{"name", name}, {"shape", t.shape()}, {"offset", payload.size()}});
        for (S v : t.data()) io::append_f32_le(payload, float(v));
    };
    for (const auto& p : model.params()) put(p.name, p.value);
    for (const auto& b : model.buffers()) {
        put(b.name + ".running_mean", b.stats.mean);
        put(b.name + ".running_var", b.stats.var);
    }
    header["tensors"] = std::move(manifest);
    io::write_container(path, kWeightsMagic, header, payload);
}

/// Loads weights for `spec`; any mismatch between the file and `spec` is
/// a FormatError and no model is returned.
template <class S>
Model<S> load_weights(const ArchSpec& spec, const std::string& path) {
    const io::Container c = io::read_container(path, kWeightsMagic);
    const std::string what = "weights '" + path + "'";
    try {
        const int version = io::header_field<int>(c.header, "format_version", what);
        if (version != kWeightsVersion) {
            throw FormatError(what + ": format version mismatch: expected " + std::to_string(kWeightsVersion) +
                              ", found " + std::to_string(version));
        }
        const ArchSpec found = arch_from_json(c.header.at("spec"));
        if (!(found == spec)) {
            throw FormatError(what + ": spec mismatch: expected " + to_json(spec).dump() + ", found " +
                              to_json(found).dump());
        }
        Model<S> model = Model<S>::build(spec, 0);
        std::map<std::string, io::json> manifest;
        for (const auto& t : c.header.at("tensors")) manifest[t.at("name").get<std::string>()] = t;
        std::size_t expected_bytes = 0;
        auto fill = [&](const std::string& name, Tensor<S>& dst) {
            const auto it = manifest.find(name);
            if (it == manifest.end()) throw FormatError(what + ": missing tensor '" + name + "'");
            const Shape shape = it->second.at("shape").get<Shape>();
            if (shape != dst.shape()) {
                throw FormatError(what + ": tensor '" + name + "' expected shape " + shape_str(dst.shape()) +
                                  ", found " + shape_str(shape));
            }
            const auto block = io::read_block(c, it->second.at("offset").get<std::uint64_t>(), dst.size(), what);
            for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = S(block[i]);
            expected_bytes += dst.size() * 4;
        };
        for (auto& p : model.params()) fill(p.name, p.value);
        for (auto& b : model.buffers()) {
            fill(b.name + ".running_mean", b.stats.mean);
            fill(b.name + ".running_var", b.stats.var);
        }
        if (manifest.size() != model.params().size() + 2 * model.buffers().size() ||
            expected_bytes != c.payload.size()) {
            throw FormatError(what + ": file has extra tensors or trailing bytes");
        }
        return model;
    } catch (const io::json::exception& e) {
        throw FormatError(what + ": malformed header: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(what + ": " + e.what());
    }
}

}  // namespace tfab::models
