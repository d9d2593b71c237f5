#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tfab/io.hpp"
#include "tfab/tensor.hpp"

namespace tfab::data {

enum class Split { train, test };

inline const char* split_name(Split s) { return s == Split::train ? "train" : "test"; }

struct Sample {
    Tensor<float> signal;  // [C, T]
    int subject = 0;
    int session = 0;
    Split split = Split::train;
};

/// Generator parameters for the synthetic per-subject benchmark.
struct SyntheticSpec {
    int n_subjects = 5;
    int n_channels = 8;
    int n_timepoints = 256;
    int samples_per_subject = 100;
    int holdout_per_subject = 0;  // extra test samples per subject, session 1
    double sample_rate = 128.0;   // metadata; sets the oscillator time base
    double noise_level = 0.3;
    std::uint64_t seed = 42;

    void validate() const {
        if (n_subjects < 2) throw ConfigError("synthetic: n_subjects must be >= 2, got " + std::to_string(n_subjects));
        if (n_channels < 1 || n_timepoints < 2) throw ConfigError("synthetic: need n_channels >= 1 and n_timepoints >= 2");
        if (samples_per_subject < 2) {
            throw ConfigError("synthetic: samples_per_subject must be >= 2 so every subject appears in both splits");
        }
        if (holdout_per_subject < 0) throw ConfigError("synthetic: holdout_per_subject must be >= 0");
        if (!(sample_rate > 4.5)) throw ConfigError("synthetic: sample_rate must exceed 4.5 Hz");
        if (!(noise_level >= 0.0) || !std::isfinite(noise_level)) throw ConfigError("synthetic: noise_level must be >= 0");
    }

    int oscillators() const { return std::max(2, (n_channels + 1) / 2); }
};

inline io::json to_json(const SyntheticSpec& s) {
    return io::json{{"n_subjects", s.n_subjects},
                    {"n_channels", s.n_channels},
                    {"n_timepoints", s.n_timepoints},
                    {"samples_per_subject", s.samples_per_subject},
                    {"holdout_per_subject", s.holdout_per_subject},
                    {"sample_rate", s.sample_rate},
                    {"noise_level", s.noise_level},
                    {"seed", s.seed}};
}

inline SyntheticSpec synthetic_from_json(const io::json& j) {
    SyntheticSpec s;
    s.n_subjects = j.value("n_subjects", s.n_subjects);
    s.n_channels = j.value("n_channels", s.n_channels);
    s.n_timepoints = j.value("n_timepoints", s.n_timepoints);
    s.samples_per_subject = j.value("samples_per_subject", s.samples_per_subject);
    s.holdout_per_subject = j.value("holdout_per_subject", s.holdout_per_subject);
    s.sample_rate = j.value("sample_rate", s.sample_rate);
    s.noise_level = j.value("noise_level", s.noise_level);
    s.seed = j.value("seed", s.seed);
    return s;
}

/// Spectral identity of one subject: oscillator frequencies, a [C, 2*n_osc]
/// mixing matrix (cosine and sine weight per oscillator) and AR(2) noise
/// coefficients.
struct SubjectSignature {
    std::vector<double> freqs;
    std::vector<double> mixing;  // row-major [C][2*n_osc]
    double ar1 = 0, ar2 = 0;
};

struct Normalization {
    std::vector<double> mean;
    std::vector<double> std;
};

struct Dataset {
    std::string name = "synthetic";
    std::size_t n_channels = 0;
    std::size_t n_timepoints = 0;
    int n_classes = 0;
    std::vector<Sample> samples;
    std::optional<Normalization> norm;
    std::optional<std::pair<double, double>> value_range;  // physical clip range, if any
    std::optional<SyntheticSpec> spec;

    std::vector<std::size_t> indices(Split s) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].split == s) out.push_back(i);
        return out;
    }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0) {
    return splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b) ^ c);
}

inline std::size_t matrix_rank(std::vector<double> m, std::size_t rows, std::size_t cols, double tol = 1e-9) {
    std::size_t rank = 0;
    for (std::size_t c = 0; c < cols && rank < rows; ++c) {
        std::size_t piv = rank;
        for (std::size_t r = rank + 1; r < rows; ++r)
            if (std::abs(m[r * cols + c]) > std::abs(m[piv * cols + c])) piv = r;
        if (std::abs(m[piv * cols + c]) < tol) continue;
        for (std::size_t k = 0; k < cols; ++k) std::swap(m[piv * cols + k], m[rank * cols + k]);
        for (std::size_t r = rank + 1; r < rows; ++r) {
            const double f = m[r * cols + c] / m[rank * cols + c];
            for (std::size_t k = c; k < cols; ++k) m[r * cols + k] -= f * m[rank * cols + k];
        }
        ++rank;
    }
    return rank;
}

}  // namespace detail

/// Deterministic per-subject signatures for `spec`.
inline std::vector<SubjectSignature> make_signatures(const SyntheticSpec& spec) {
    spec.validate();
    const int n_osc = spec.oscillators();
    const std::size_t C = std::size_t(spec.n_channels), cols = 2 * std::size_t(n_osc);
    const double f_lo = 2.0, f_hi = std::min(40.0, 0.45 * spec.sample_rate);
    std::vector<SubjectSignature> out;
    for (int k = 0; k < spec.n_subjects; ++k) {
        std::mt19937_64 rng(detail::mix(spec.seed, 0x5167, std::uint64_t(k)));
        std::uniform_real_distribution<double> freq(f_lo, f_hi);
        std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(double(n_osc)));
        std::uniform_real_distribution<double> pole(0.5, 0.95);
        SubjectSignature sig;
        while (int(sig.freqs.size()) < n_osc) {
            const double f = freq(rng);
            const bool spaced = std::all_of(sig.freqs.begin(), sig.freqs.end(),
                                            [&](double g) { return std::abs(f - g) >= 1.0; });
            if (spaced) sig.freqs.push_back(f);
        }
        do {
            sig.mixing.assign(C * cols, 0.0);
            for (auto& v : sig.mixing) v = gauss(rng);
        } while (detail::matrix_rank(sig.mixing, C, cols) < std::min(C, cols));
        const double r1 = pole(rng), r2 = pole(rng);
        sig.ar1 = r1 + r2;
        sig.ar2 = -r1 * r2;
        out.push_back(std::move(sig));
    }
    return out;
}

/// One raw (unnormalized) sample of subject `sig`.
inline Tensor<float> synth_signal(const SyntheticSpec& spec, const SubjectSignature& sig, std::uint64_t stream) {
    const std::size_t C = std::size_t(spec.n_channels), T = std::size_t(spec.n_timepoints);
    const std::size_t n_osc = sig.freqs.size(), cols = 2 * n_osc;
    std::mt19937_64 rng(stream);
    std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
    std::normal_distribution<double> white(0.0, 1.0);
    std::vector<double> phases(n_osc);
    for (auto& p : phases) p = phase(rng);
    Tensor<float> x({C, T});
    std::vector<double> cosv(n_osc * T), sinv(n_osc * T);
    for (std::size_t j = 0; j < n_osc; ++j) {
        const double w = 2.0 * std::numbers::pi * sig.freqs[j] / spec.sample_rate;
        for (std::size_t t = 0; t < T; ++t) {
            cosv[j * T + t] = std::cos(w * double(t) + phases[j]);
            sinv[j * T + t] = std::sin(w * double(t) + phases[j]);
        }
    }
    constexpr std::size_t burn_in = 64;
    std::vector<double> noise(T);
    for (std::size_t c = 0; c < C; ++c) {
        double y1 = 0, y2 = 0;
        for (std::size_t t = 0; t < burn_in + T; ++t) {
            const double y = sig.ar1 * y1 + sig.ar2 * y2 + white(rng);
            y2 = y1;
            y1 = y;
            if (t >= burn_in) noise[t - burn_in] = y;
        }
        double mu = 0, var = 0;
        for (double v : noise) mu += v;
        mu /= double(T);
        for (double v : noise) var += (v - mu) * (v - mu);
        const double sd = std::sqrt(var / double(T));
        const double k = sd > 0 ? spec.noise_level / sd : 0.0;
        for (std::size_t t = 0; t < T; ++t) {
            double v = 0;
            for (std::size_t j = 0; j < n_osc; ++j) {
                v += sig.mixing[c * cols + 2 * j] * cosv[j * T + t] + sig.mixing[c * cols + 2 * j + 1] * sinv[j * T + t];
            }
            x.at(c, t) = float(v + k * (noise[t] - mu));
        }
    }
    return x;
}

/// Class-balanced dataset with an 80/20 train/test split stratified by
/// subject. Samples are ordered by subject, session, index.
inline Dataset generate_synthetic(const SyntheticSpec& spec, const std::vector<SubjectSignature>& sigs) {
    spec.validate();
    if (int(sigs.size()) != spec.n_subjects) throw ConfigError("synthetic: signature count != n_subjects");
    Dataset ds;
    ds.n_channels = std::size_t(spec.n_channels);
    ds.n_timepoints = std::size_t(spec.n_timepoints);
    ds.n_classes = spec.n_subjects;
    ds.spec = spec;
    const int n = spec.samples_per_subject;
    const int n_test = std::clamp(int(std::lround(0.2 * n)), 1, n - 1);
    for (int k = 0; k < spec.n_subjects; ++k) {
        std::vector<int> order(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) order[std::size_t(i)] = i;
        std::mt19937_64 rng(detail::mix(spec.seed, 0x59, std::uint64_t(k)));
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<bool> is_test(std::size_t(n), false);
        for (int i = 0; i < n_test; ++i) is_test[std::size_t(order[std::size_t(i)])] = true;
        for (int i = 0; i < n; ++i) {
            Sample s;
            s.signal = synth_signal(spec, sigs[std::size_t(k)], detail::mix(spec.seed, std::uint64_t(k), 0, std::uint64_t(i)));
            s.subject = k;
            s.session = 0;
            s.split = is_test[std::size_t(i)] ? Split::test : Split::train;
            ds.samples.push_back(std::move(s));
        }
        for (int i = 0; i < spec.holdout_per_subject; ++i) {
            Sample s;
            s.signal = synth_signal(spec, sigs[std::size_t(k)], detail::mix(spec.seed, std::uint64_t(k), 1, std::uint64_t(i)));
            s.subject = k;
            s.session = 1;
            s.split = Split::test;
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

inline Dataset generate_synthetic(const SyntheticSpec& spec) { return generate_synthetic(spec, make_signatures(spec)); }

// ---------------------------------------------------------------------------
// Normalization

/// Per-channel z-scoring with train-split statistics, applied to every
/// split. Stats compose with any earlier normalization so `denormalize`
/// always maps back to the raw signal.
inline void normalize(Dataset& ds) {
    const auto train = ds.indices(Split::train);
    if (train.empty()) throw ConfigError("normalize: train split is empty");
    const std::size_t C = ds.n_channels, T = ds.n_timepoints;
    std::vector<double> mean(C, 0.0), sd(C, 0.0);
    for (std::size_t c = 0; c < C; ++c) {
        double acc = 0;
        for (auto i : train)
            for (std::size_t t = 0; t < T; ++t) acc += ds.samples[i].signal.at(c, t);
        const double mu = acc / double(train.size() * T);
        double sq = 0;
        for (auto i : train)
            for (std::size_t t = 0; t < T; ++t) {
                const double d = ds.samples[i].signal.at(c, t) - mu;
                sq += d * d;
            }
        const double s = std::sqrt(sq / double(train.size() * T));
        if (!(s > 0.0)) throw ConfigError("normalize: channel " + std::to_string(c) + " has zero variance");
        mean[c] = mu;
        sd[c] = s;
    }
    for (auto& smp : ds.samples)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < T; ++t) smp.signal.at(c, t) = float((smp.signal.at(c, t) - mean[c]) / sd[c]);
    if (ds.norm) {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = ds.norm->mean[c] + mean[c] * ds.norm->std[c];
            sd[c] = ds.norm->std[c] * sd[c];
        }
    }
    ds.norm = Normalization{mean, sd};
}

/// Maps a normalized [C,T] signal back to raw units.
inline Tensor<float> denormalize(const Tensor<float>& x, const Normalization& norm) {
    Tensor<float> out = x;
    for (std::size_t c = 0; c < x.dim(0); ++c)
        for (std::size_t t = 0; t < x.dim(1); ++t) out.at(c, t) = float(x.at(c, t) * norm.std[c] + norm.mean[c]);
    return out;
}

// ---------------------------------------------------------------------------
// File format "TFAB-D1"

inline constexpr const char* kDatasetMagic = "TFAB-D1";
inline constexpr int kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, const std::string& path) {
    io::json header;
    header["format_version"] = kDatasetVersion;
    header["name"] = ds.name;
    header["n_channels"] = ds.n_channels;
    header["n_timepoints"] = ds.n_timepoints;
    header["n_classes"] = ds.n_classes;
    header["n_samples"] = ds.samples.size();
    header["spec"] = ds.spec ? to_json(*ds.spec) : io::json(nullptr);
    header["normalization"] =
        ds.norm ? io::json{{"mean", ds.norm->mean}, {"std", ds.norm->std}} : io::json(nullptr);
    header["value_range"] = ds.value_range ? io::json::array({ds.value_range->first, ds.value_range->second})
                                           : io::json(nullptr);
    io::json manifest = io::json::array();
    std::vector<char> payload;
    payload.reserve(ds.samples.size() * ds.n_channels * ds.n_timepoints * 4);
    for (const auto& s : ds.samples) {
        if (s.signal.shape() != Shape{ds.n_channels, ds.n_timepoints}) {
            throw DimensionError("save_dataset: sample shape " + shape_str(s.signal.shape()) + " does not match dataset");
        }
        manifest.push_back({{"subject", s.subject}, {"session", s.session}, {"split", split_name(s.split)},
                            {"offset", payload.size()}});
        for (float v : s.signal.data()) io::append_f32_le(payload, v);
    }
    header["samples"] = std::move(manifest);
    io::write_container(path, kDatasetMagic, header, payload);
}

namespace detail {

inline Dataset parse_dataset(const io::Container& c, const std::string& path);

}  // namespace detail

inline Dataset load_dataset(const std::string& path) {
    const io::Container c = io::read_container(path, kDatasetMagic);
    try {
        return detail::parse_dataset(c, path);
    } catch (const io::json::exception& e) {
        throw FormatError("dataset '" + path + "': malformed header: " + e.what());
    }
}

namespace detail {

inline Dataset parse_dataset(const io::Container& c, const std::string& path) {
    const auto& h = c.header;
    const std::string what = "dataset '" + path + "'";
    const int version = io::header_field<int>(h, "format_version", what);
    if (version != kDatasetVersion) {
        throw FormatError(what + ": format version mismatch: expected " + std::to_string(kDatasetVersion) +
                          ", found " + std::to_string(version));
    }
    Dataset ds;
    ds.name = h.value("name", std::string("dataset"));
    ds.n_channels = io::header_field<std::size_t>(h, "n_channels", what);
    ds.n_timepoints = io::header_field<std::size_t>(h, "n_timepoints", what);
    ds.n_classes = io::header_field<int>(h, "n_classes", what);
    const auto n = io::header_field<std::size_t>(h, "n_samples", what);
    if (h.contains("spec") && !h["spec"].is_null()) ds.spec = synthetic_from_json(h["spec"]);
    if (h.contains("normalization") && !h["normalization"].is_null()) {
        ds.norm = Normalization{h["normalization"].at("mean").get<std::vector<double>>(),
                                h["normalization"].at("std").get<std::vector<double>>()};
    }
    if (h.contains("value_range") && !h["value_range"].is_null()) {
        ds.value_range = std::make_pair(h["value_range"][0].get<double>(), h["value_range"][1].get<double>());
    }
    const auto& manifest = h.at("samples");
    if (!manifest.is_array() || manifest.size() != n) throw FormatError(what + ": sample manifest size != n_samples");
    const std::size_t count = ds.n_channels * ds.n_timepoints;
    if (n > 0 && count == 0) throw FormatError(what + ": zero-sized samples");
    for (std::size_t i = 0; i < n; ++i) {
        const auto& m = manifest[i];
        Sample s;
        s.subject = m.at("subject").get<int>();
        s.session = m.at("session").get<int>();
        const std::string split = m.at("split").get<std::string>();
        if (split != "train" && split != "test") throw FormatError(what + ": bad split '" + split + "'");
        s.split = split == "train" ? Split::train : Split::test;
        if (s.subject < 0 || s.subject >= ds.n_classes) throw FormatError(what + ": subject out of range");
        auto block = io::read_block(c, m.at("offset").get<std::uint64_t>(), count,
                                    what + " sample " + std::to_string(i));
        s.signal = Tensor<float>({ds.n_channels, ds.n_timepoints}, std::move(block));
        ds.samples.push_back(std::move(s));
    }
    if (c.payload.size() != n * count * 4) {
        throw FormatError(what + ": payload is " + std::to_string(c.payload.size()) + " bytes, expected " +
                          std::to_string(n * count * 4));
    }
    return ds;
}

}  // namespace detail

}  // namespace tfab::data
