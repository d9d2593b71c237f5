#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <tuple>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tfab/attacks.hpp"
#include "tfab/data.hpp"
#include "tfab/io.hpp"
#include "tfab/models.hpp"

namespace tfab::harness {

namespace fs = std::filesystem;
using io::json;

inline constexpr int kSchemaVersion = 1;

// ---------------------------------------------------------------------------
// Configuration

struct ModelEntry {
    std::string name;
    models::Family family = models::Family::eegnet;
    std::optional<double> width_scale;
    std::optional<int> temporal_kernel;
    std::optional<double> dropout_rate;

    models::ArchSpec arch(const data::Dataset& ds) const {
        auto s = models::ArchSpec::small(family, int(ds.n_channels), int(ds.n_timepoints), ds.n_classes);
        if (width_scale) s.width_scale = *width_scale;
        if (temporal_kernel) s.temporal_kernel = *temporal_kernel;
        if (dropout_rate) s.dropout_rate = *dropout_rate;
        return s;
    }
};

/// One configured attack. For BIM/PGD a step ratio ties the step size to the
/// budget so that budget tuning keeps the ratio fixed.
struct AttackEntry {
    attacks::AttackConfig cfg;
    std::optional<double> step_ratio;

    attacks::AttackConfig at_epsilon(double eps) const {
        attacks::AttackConfig c = cfg;
        c.epsilon = eps;
        if (step_ratio) c.step_size = eps * *step_ratio;
        return c;
    }
    attacks::AttackConfig resolved() const { return at_epsilon(cfg.epsilon); }
};

struct TuneConfig {
    bool enabled = true;
    std::vector<attacks::Method> methods{attacks::Method::fgsm, attacks::Method::pgd};
    attacks::Method reference = attacks::Method::tfattack;
    double tolerance = 0.05;  // ASR fraction
    double eps_max = 1.0;
    int grid = 20;   // coarse scan points over (0, eps_max]
    int steps = 6;   // refinements: bisection in the passing cell, else around the peak
};

struct SweepConfig {
    std::vector<std::string> models{"eegnet"};
    std::vector<double> fgsm_epsilon{0.0, 0.1, 0.2, 0.3, 0.4, 0.6};
    std::vector<double> pgd_epsilon{0.0, 0.05, 0.1, 0.15, 0.2, 0.3};
    std::vector<int> tfattack_iters{4, 8, 16, 32, 64};
};

struct TransferConfig {
    std::vector<attacks::Method> attacks{attacks::Method::fgsm, attacks::Method::pgd, attacks::Method::tfattack};
};

struct Config {
    std::uint64_t seed = 42;
    int threads = 0;
    std::string out = "out";
    std::string dataset_path;  // empty: <out>/dataset.tfabd
    data::SyntheticSpec synth;
    bool synth_seed_set = false;
    std::vector<ModelEntry> models;
    models::TrainConfig train;
    std::size_t n_eval = 200;
    std::vector<attacks::Method> methods{std::begin(attacks::kAllMethods), std::end(attacks::kAllMethods)};
    std::map<attacks::Method, AttackEntry> attacks;
    TuneConfig tune;
    SweepConfig sweep;
    TransferConfig transfer;

    Config() {
        synth.holdout_per_subject = 40;
        models = {{"eegnet", models::Family::eegnet, {}, {}, {}},
                  {"deepconvnet", models::Family::deepconvnet, {}, {}, {}},
                  {"shallowconvnet", models::Family::shallowconvnet, {}, {}, {}}};
        for (auto m : attacks::kAllMethods) {
            AttackEntry e{attacks::AttackConfig::defaults(m), std::nullopt};
            if (m == attacks::Method::bim || m == attacks::Method::pgd) {
                e.cfg.epsilon = 0.2;
                e.step_ratio = 0.25;
            }
            if (m == attacks::Method::fgsm) e.cfg.epsilon = 0.2;
            attacks[m] = e;
        }
    }

    std::string dataset_file() const { return dataset_path.empty() ? (fs::path(out) / "dataset.tfabd").string() : dataset_path; }
    std::string weights_file(const std::string& model) const {
        return (fs::path(out) / "weights" / (model + ".tfabw")).string();
    }
    const ModelEntry& model(const std::string& name) const {
        for (const auto& m : models)
            if (m.name == name) return m;
        throw ConfigError("unknown model '" + name + "'");
    }
    data::SyntheticSpec synthetic() const {
        data::SyntheticSpec s = synth;
        if (!synth_seed_set) s.seed = seed;
        return s;
    }
};

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
    for (const auto& [k, v] : j.items()) {
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end()) {
            throw ConfigError("config: unknown key '" + k + "' in " + where);
        }
    }
}

inline std::vector<attacks::Method> methods_from(const json& j) {
    std::vector<attacks::Method> out;
    for (const auto& s : j) out.push_back(attacks::parse_method(s.get<std::string>()));
    return out;
}

inline void apply_attack(AttackEntry& e, const json& j, const std::string& where) {
    check_keys(j,
               {"epsilon", "step_size", "step_ratio", "max_iters", "loss", "cw_tradeoff", "random_start", "early_stop",
                "step_rule"},
               where);
    auto& c = e.cfg;
    c.epsilon = j.value("epsilon", c.epsilon);
    c.step_size = j.value("step_size", c.step_size);
    if (j.contains("step_size")) e.step_ratio.reset();
    if (j.contains("step_ratio")) e.step_ratio = j["step_ratio"].get<double>();
    c.max_iters = j.value("max_iters", c.max_iters);
    if (j.contains("loss")) c.loss = attacks::parse_loss(j["loss"].get<std::string>());
    c.cw_tradeoff = j.value("cw_tradeoff", c.cw_tradeoff);
    c.random_start = j.value("random_start", c.random_start);
    c.early_stop = j.value("early_stop", c.early_stop);
    if (j.contains("step_rule")) {
        const auto r = j["step_rule"].get<std::string>();
        if (r == "adam") c.step_rule = attacks::StepRule::adam;
        else if (r == "plain") c.step_rule = attacks::StepRule::plain;
        else throw ConfigError("config: unknown step_rule '" + r + "'");
    }
}

inline void apply_json(Config& cfg, const json& j) {
    check_keys(j,
               {"schema_version", "seed", "threads", "out", "data", "models", "train", "eval", "attack", "attacks", "sweep",
                "transfer"},
               "config");
    if (j.contains("schema_version")) {
        const int v = j["schema_version"].get<int>();
        if (v != kSchemaVersion) {
            throw ConfigError("config: schema_version " + std::to_string(v) + " unsupported (expected " +
                              std::to_string(kSchemaVersion) + ")");
        }
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.threads = j.value("threads", cfg.threads);
    cfg.out = j.value("out", cfg.out);
    if (j.contains("data")) {
        const auto& d = j["data"];
        check_keys(d,
                   {"path", "n_subjects", "n_channels", "n_timepoints", "samples_per_subject", "holdout_per_subject",
                    "sample_rate", "noise_level", "seed"},
                   "data");
        cfg.dataset_path = d.value("path", cfg.dataset_path);
        json merged = data::to_json(cfg.synth);
        for (const auto& [k, v] : d.items())
            if (k != "path") merged[k] = v;
        cfg.synth = data::synthetic_from_json(merged);
        cfg.synth_seed_set = cfg.synth_seed_set || d.contains("seed");
    }
    if (j.contains("models")) {
        cfg.models.clear();
        for (const auto& m : j["models"]) {
            check_keys(m, {"name", "family", "width_scale", "temporal_kernel", "dropout_rate"}, "models[]");
            ModelEntry e;
            e.family = models::parse_family(m.at("family").get<std::string>());
            e.name = m.value("name", std::string(models::family_name(e.family)));
            if (m.contains("width_scale")) e.width_scale = m["width_scale"].get<double>();
            if (m.contains("temporal_kernel")) e.temporal_kernel = m["temporal_kernel"].get<int>();
            if (m.contains("dropout_rate")) e.dropout_rate = m["dropout_rate"].get<double>();
            for (const auto& other : cfg.models)
                if (other.name == e.name) throw ConfigError("config: duplicate model name '" + e.name + "'");
            cfg.models.push_back(e);
        }
    }
    if (j.contains("train")) {
        const auto& t = j["train"];
        check_keys(t, {"epochs", "batch_size", "lr", "optimizer"}, "train");
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.lr = t.value("lr", cfg.train.lr);
        if (t.contains("optimizer")) {
            const auto o = t["optimizer"].get<std::string>();
            if (o == "adam") cfg.train.optimizer = models::TrainConfig::Optimizer::adam;
            else if (o == "sgd") cfg.train.optimizer = models::TrainConfig::Optimizer::sgd;
            else throw ConfigError("config: unknown optimizer '" + o + "'");
        }
    }
    if (j.contains("eval")) {
        check_keys(j["eval"], {"n_samples"}, "eval");
        cfg.n_eval = j["eval"].value("n_samples", cfg.n_eval);
    }
    if (j.contains("attack")) {
        const auto& a = j["attack"];
        check_keys(a, {"methods", "tune"}, "attack");
        if (a.contains("methods")) cfg.methods = methods_from(a["methods"]);
        if (a.contains("tune")) {
            const auto& t = a["tune"];
            check_keys(t, {"enabled", "methods", "reference", "tolerance", "eps_max", "grid", "steps"}, "attack.tune");
            cfg.tune.enabled = t.value("enabled", cfg.tune.enabled);
            if (t.contains("methods")) cfg.tune.methods = methods_from(t["methods"]);
            if (t.contains("reference")) cfg.tune.reference = attacks::parse_method(t["reference"].get<std::string>());
            cfg.tune.tolerance = t.value("tolerance", cfg.tune.tolerance);
            cfg.tune.eps_max = t.value("eps_max", cfg.tune.eps_max);
            cfg.tune.grid = t.value("grid", cfg.tune.grid);
            cfg.tune.steps = t.value("steps", cfg.tune.steps);
        }
    }
    if (j.contains("attacks")) {
        const auto& a = j["attacks"];
        if (!a.is_object()) throw ConfigError("config: 'attacks' must be an object");
        for (const auto& [name, v] : a.items()) apply_attack(cfg.attacks[attacks::parse_method(name)], v, "attacks." + name);
    }
    if (j.contains("sweep")) {
        const auto& s = j["sweep"];
        check_keys(s, {"models", "fgsm_epsilon", "pgd_epsilon", "tfattack_iters"}, "sweep");
        if (s.contains("models")) cfg.sweep.models = s["models"].get<std::vector<std::string>>();
        if (s.contains("fgsm_epsilon")) cfg.sweep.fgsm_epsilon = s["fgsm_epsilon"].get<std::vector<double>>();
        if (s.contains("pgd_epsilon")) cfg.sweep.pgd_epsilon = s["pgd_epsilon"].get<std::vector<double>>();
        if (s.contains("tfattack_iters")) cfg.sweep.tfattack_iters = s["tfattack_iters"].get<std::vector<int>>();
    }
    if (j.contains("transfer")) {
        check_keys(j["transfer"], {"attacks"}, "transfer");
        if (j["transfer"].contains("attacks")) cfg.transfer.attacks = methods_from(j["transfer"]["attacks"]);
    }
}

}  // namespace detail

inline void validate(const Config& cfg) {
    if (cfg.models.empty()) throw ConfigError("config: no models configured");
    cfg.train.validate();
    cfg.synthetic().validate();
    for (const auto& [m, e] : cfg.attacks) e.resolved().validate();
    if (cfg.tune.enabled && !(cfg.tune.tolerance >= 0.0 && cfg.tune.eps_max > 0.0 && cfg.tune.grid >= 1 &&
                              cfg.tune.steps >= 0)) {
        throw ConfigError("config: attack.tune needs tolerance >= 0, eps_max > 0, grid >= 1, steps >= 0");
    }
    if (cfg.threads < 0) throw ConfigError("config: threads must be >= 0");
}

/// Reads a JSON config file, layered on the built-in defaults.
inline Config load_config(const std::optional<std::string>& path) {
    Config cfg;
    if (!path) return cfg;
    std::ifstream f(*path);
    if (!f) throw ConfigError("cannot open config '" + *path + "'");
    try {
        detail::apply_json(cfg, json::parse(f));
    } catch (const json::exception& e) {
        throw ConfigError("config '" + *path + "': " + e.what());
    }
    return cfg;
}

// ---------------------------------------------------------------------------
// Output helpers

inline std::string num(double v) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

inline std::string pct(const std::optional<double>& asr) { return asr ? num(*asr * 100.0) : "NA"; }

inline json pct_json(const std::optional<double>& asr) { return asr ? json(*asr * 100.0) : json(nullptr); }

inline void write_text(const std::string& path, const std::string& text) {
    if (auto parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw InputError("cannot write '" + path + "'");
    f << text;
    if (!f) throw InputError("write failed for '" + path + "'");
}

inline std::string read_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw InputError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline std::uint64_t name_hash(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
    return h;
}

// ---------------------------------------------------------------------------
// Shared pipeline pieces

struct Context {
    Config cfg;
    unsigned threads = 1;
    std::ostream* log = &std::cerr;
};

inline data::Dataset load_data(const Context& cx) { return data::load_dataset(cx.cfg.dataset_file()); }

inline models::Model<float> load_model(const Context& cx, const data::Dataset& ds, const std::string& name) {
    return models::load_weights<float>(cx.cfg.model(name).arch(ds), cx.cfg.weights_file(name));
}

/// Seeded random subset of the test split, returned in ascending order.
inline std::vector<std::size_t> eval_ids(const Context& cx, const data::Dataset& ds) {
    auto ids = ds.indices(data::Split::test);
    if (cx.cfg.n_eval > ids.size()) {
        *cx.log << "warning: n_samples " << cx.cfg.n_eval << " exceeds test split (" << ids.size() << "); using all\n";
        return ids;
    }
    std::mt19937_64 rng(data::detail::mix(cx.cfg.seed, 0xe7));
    std::shuffle(ids.begin(), ids.end(), rng);
    ids.resize(cx.cfg.n_eval);
    std::sort(ids.begin(), ids.end());
    return ids;
}

inline attacks::AttackConfig attack_config(const Context& cx, attacks::Method m, const data::Dataset& ds) {
    attacks::AttackConfig c = cx.cfg.attacks.at(m).resolved();
    c.seed = cx.cfg.seed;
    c.value_range = ds.value_range;
    return c;
}

struct RunResult {
    attacks::AttackConfig cfg;
    attacks::Evaluation<float> eval;
    bool tuned = false;
};

/// Smallest L-infinity budget whose ASR reaches target - tolerance. ASR is
/// not monotone in the budget for single-step attacks (large steps overshoot),
/// so a coarse grid finds the first passing cell and bisection refines inside
/// it. When no grid point passes, the search refines around the highest-ASR
/// point and returns the best budget found.
inline RunResult tune_budget(const Context& cx, const models::Model<float>& model, const data::Dataset& ds,
                             std::span<const std::size_t> ids, attacks::Method m, double target) {
    const auto& t = cx.cfg.tune;
    const AttackEntry& entry = cx.cfg.attacks.at(m);
    auto eval_at = [&](double eps) {
        attacks::AttackConfig c = entry.at_epsilon(eps);
        c.seed = cx.cfg.seed;
        c.value_range = ds.value_range;
        RunResult r{c, attacks::evaluate_attack(model, ds, ids, c, cx.threads), true};
        r.eval.require_ok();
        return r;
    };
    auto asr = [](const RunResult& r) { return r.eval.summary.asr.value_or(0.0); };
    const double floor = target - t.tolerance;
    std::optional<RunResult> best, hi;
    double lo_eps = 0.0;
    for (int k = 1; k <= t.grid && !hi; ++k) {
        RunResult r = eval_at(t.eps_max * k / t.grid);
        if (asr(r) >= floor) {
            hi = std::move(r);
            break;
        }
        lo_eps = r.cfg.epsilon;
        if (!best || asr(r) > asr(*best)) best = std::move(r);
    }
    if (!hi) {
        // Local refinement around the peak, halving the spacing each step.
        double h = t.eps_max / t.grid;
        for (int i = 0; i < t.steps; ++i) {
            h *= 0.5;
            const double centre = best->cfg.epsilon;
            for (double eps : {centre - h, centre + h}) {
                if (eps <= 0.0 || eps > t.eps_max) continue;
                RunResult r = eval_at(eps);
                if (asr(r) > asr(*best)) best = std::move(r);
            }
            if (asr(*best) >= floor) return std::move(*best);
        }
        *cx.log << "warning: " << attacks::method_name(m) << " peaks at " << asr(*best) * 100 << "% ASR (eps "
                << best->cfg.epsilon << "), short of the " << target * 100 << "% target\n";
        return std::move(*best);
    }
    RunResult closest = *hi;
    for (int i = 0; i < t.steps; ++i) {
        const double mid = 0.5 * (lo_eps + hi->cfg.epsilon);
        RunResult r = eval_at(mid);
        if (std::abs(asr(r) - target) < std::abs(asr(closest) - target)) closest = r;
        if (asr(r) >= floor) {
            hi = std::move(r);
        } else {
            lo_eps = mid;
        }
    }
    if (asr(*hi) > target + t.tolerance) return closest;
    return std::move(*hi);
}

/// Runs the configured white-box methods over one evaluation set, tuning
/// the budgeted methods against the reference method when enabled.
inline std::map<attacks::Method, RunResult> white_box(const Context& cx, const models::Model<float>& model,
                                                      const data::Dataset& ds, std::span<const std::size_t> ids,
                                                      const std::vector<attacks::Method>& methods) {
    std::map<attacks::Method, RunResult> out;
    const auto& t = cx.cfg.tune;
    auto wanted = [&](attacks::Method m) { return std::find(methods.begin(), methods.end(), m) != methods.end(); };
    auto tuned = [&](attacks::Method m) {
        return t.enabled && attacks::is_budgeted(m) && std::find(t.methods.begin(), t.methods.end(), m) != t.methods.end();
    };
    auto run_plain = [&](attacks::Method m) {
        const auto c = attack_config(cx, m, ds);
        *cx.log << "  " << attacks::method_name(m) << "\n";
        RunResult r{c, attacks::evaluate_attack(model, ds, ids, c, cx.threads), false};
        out.emplace(m, std::move(r));
    };
    bool any_tuned = false;
    for (auto m : methods) any_tuned = any_tuned || tuned(m);
    if (any_tuned && !wanted(t.reference)) throw ConfigError("attack.tune reference method must be among the run methods");
    if (any_tuned) run_plain(t.reference);
    for (auto m : methods) {
        if (out.count(m)) continue;
        if (tuned(m)) {
            const auto& ref = out.at(t.reference).eval;
            ref.require_ok();
            const double target = ref.summary.asr.value_or(0.0);
            *cx.log << "  " << attacks::method_name(m) << " (tuning to " << target * 100 << "% ASR)\n";
            out.emplace(m, tune_budget(cx, model, ds, ids, m, target));
        } else {
            run_plain(m);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_gen(const Context& cx) {
    const auto spec = cx.cfg.synthetic();
    auto ds = data::generate_synthetic(spec);
    data::normalize(ds);
    const auto path = cx.cfg.dataset_file();
    if (auto p = fs::path(path).parent_path(); !p.empty()) fs::create_directories(p);
    data::save_dataset(ds, path);
    *cx.log << "wrote " << path << " (" << ds.samples.size() << " samples)\n";
}

inline void cmd_train(const Context& cx, const std::vector<std::string>& only, bool resume) {
    const auto ds = load_data(cx);
    for (std::size_t i = 0; i < cx.cfg.models.size(); ++i) {
        const auto& entry = cx.cfg.models[i];
        if (!only.empty() && std::find(only.begin(), only.end(), entry.name) == only.end()) continue;
        const auto arch = entry.arch(ds);
        const auto wpath = cx.cfg.weights_file(entry.name);
        models::Model<float> model = resume ? models::load_weights<float>(arch, wpath)
                                            : models::build_model<float>(arch, data::detail::mix(cx.cfg.seed, 0x1a, name_hash(entry.name)));
        models::TrainConfig tc = cx.cfg.train;
        tc.seed = data::detail::mix(cx.cfg.seed, 0x2b, name_hash(entry.name));
        *cx.log << "training " << entry.name << "\n";
        const auto hist = models::train(model, ds, tc);
        std::string csv = "epoch,loss,train_acc,test_acc\n";
        for (const auto& e : hist) {
            csv += std::to_string(e.epoch) + "," + num(e.loss) + "," + num(e.train_acc) + "," +
                   (e.test_acc ? num(*e.test_acc) : "NA") + "\n";
        }
        fs::create_directories(fs::path(wpath).parent_path());
        models::save_weights(model, wpath);
        write_text((fs::path(cx.cfg.out) / ("train_" + entry.name + "_history.csv")).string(), csv);
        if (!hist.empty()) {
            *cx.log << "  train_acc " << hist.back().train_acc << " test_acc " << hist.back().test_acc.value_or(-1) << "\n";
        }
    }
}

inline std::vector<std::string> selected_models(const Context& cx, const std::vector<std::string>& only) {
    std::vector<std::string> names;
    for (const auto& m : cx.cfg.models)
        if (only.empty() || std::find(only.begin(), only.end(), m.name) != only.end()) names.push_back(m.name);
    for (const auto& o : only) cx.cfg.model(o);
    return names;
}

inline std::string samples_header() {
    return "sample_id,method,y_gt,pred_benign,pred_adv,success,iters_used,l2,dtw,cosine,linf,distinct_values\n";
}

inline json summary_row(const std::string& ds, const std::string& model, attacks::Method m, const RunResult& r) {
    const auto& s = r.eval.summary;
    json row{{"dataset", ds},
             {"model", model},
             {"attack", attacks::method_name(m)},
             {"asr_pct", pct_json(s.asr)},
             {"l2", s.mean_l2},
             {"dtw", s.mean_dtw},
             {"cosine", s.mean_cosine},
             {"n_attackable", s.n_attackable},
             {"n_selected", s.n_selected},
             {"max_iters", r.cfg.max_iters}};
    if (attacks::is_budgeted(m)) {
        row["epsilon"] = r.cfg.epsilon;
        row["step_size"] = r.cfg.step_size;
        row["tuned"] = r.tuned;
    }
    return row;
}

inline void cmd_attack(const Context& cx, const std::vector<std::string>& only) {
    const auto ds = load_data(cx);
    const auto ids = eval_ids(cx, ds);
    for (const auto& name : selected_models(cx, only)) {
        const auto model = load_model(cx, ds, name);
        *cx.log << "attacking " << name << " on " << ids.size() << " samples\n";
        const auto runs = white_box(cx, model, ds, ids, cx.cfg.methods);
        // Rows ordered by sample id, then method name.
        std::vector<std::pair<std::string, const RunResult*>> by_name;
        for (const auto& [m, r] : runs) by_name.emplace_back(attacks::method_name(m), &r);
        std::sort(by_name.begin(), by_name.end());
        std::map<std::size_t, std::vector<std::string>> lines;
        for (const auto& [mname, r] : by_name) {
            for (const auto& o : r->eval.outcomes) {
                const auto& a = o.result;
                lines[o.sample_id].push_back(std::to_string(o.sample_id) + "," + mname + "," + std::to_string(a.y_gt) + "," +
                                             std::to_string(a.pred_benign) + "," + std::to_string(a.pred_adv) + "," +
                                             (a.success ? "1" : "0") + "," + std::to_string(a.iters_used) + "," + num(a.l2) +
                                             "," + num(a.dtw) + "," + num(a.cosine) + "," + num(attacks::linf(a.delta)) +
                                             "," + std::to_string(attacks::distinct_values(a.delta)) + "\n");
            }
        }
        std::string csv = samples_header();
        for (const auto& [id, ls] : lines)
            for (const auto& l : ls) csv += l;
        write_text((fs::path(cx.cfg.out) / ("attack_" + name + "_samples.csv")).string(), csv);
        for (const auto& [m, r] : runs) r.eval.require_ok();
        json summary{{"schema_version", kSchemaVersion}, {"dataset", ds.name}, {"model", name}, {"rows", json::array()}};
        for (const auto& [mname, r] : by_name) {
            summary["rows"].push_back(summary_row(ds.name, name, attacks::parse_method(mname), *r));
        }
        write_text((fs::path(cx.cfg.out) / ("attack_" + name + "_summary.json")).string(), summary.dump(2) + "\n");
    }
}

inline void cmd_sweep(const Context& cx) {
    const auto& sw = cx.cfg.sweep;
    if (sw.fgsm_epsilon.empty() || sw.pgd_epsilon.empty() || sw.tfattack_iters.empty()) {
        throw ConfigError("sweep: every grid (fgsm_epsilon, pgd_epsilon, tfattack_iters) must be non-empty");
    }
    const auto ds = load_data(cx);
    const auto ids = eval_ids(cx, ds);
    for (const auto& name : sw.models) {
        const auto model = load_model(cx, ds, name);
        *cx.log << "sweeping " << name << "\n";
        std::string csv = "method,knob,value,n_attackable,asr_pct,l2,dtw,cosine\n";
        auto row = [&](attacks::Method m, const char* knob, const std::string& value, const attacks::AttackConfig& c) {
            auto ev = attacks::evaluate_attack(model, ds, ids, c, cx.threads);
            ev.require_ok();
            const auto& s = ev.summary;
            csv += std::string(attacks::method_name(m)) + "," + knob + "," + value + "," + std::to_string(s.n_attackable) +
                   "," + pct(s.asr) + "," + num(s.mean_l2) + "," + num(s.mean_dtw) + "," + num(s.mean_cosine) + "\n";
        };
        for (double e : sw.fgsm_epsilon) {
            auto c = cx.cfg.attacks.at(attacks::Method::fgsm).at_epsilon(e);
            c.seed = cx.cfg.seed;
            c.value_range = ds.value_range;
            row(attacks::Method::fgsm, "epsilon", num(e), c);
        }
        for (double e : sw.pgd_epsilon) {
            auto c = cx.cfg.attacks.at(attacks::Method::pgd).at_epsilon(e);
            c.seed = cx.cfg.seed;
            c.value_range = ds.value_range;
            row(attacks::Method::pgd, "epsilon", num(e), c);
        }
        for (int k : sw.tfattack_iters) {
            auto c = attack_config(cx, attacks::Method::tfattack, ds);
            c.max_iters = k;
            row(attacks::Method::tfattack, "max_iters", std::to_string(k), c);
        }
        write_text((fs::path(cx.cfg.out) / ("sweep_" + name + ".csv")).string(), csv);
    }
}

inline void cmd_transfer(const Context& cx) {
    std::vector<std::string> missing;
    for (const auto& m : cx.cfg.models)
        if (!fs::exists(cx.cfg.weights_file(m.name))) missing.push_back(cx.cfg.weights_file(m.name));
    if (!missing.empty()) {
        std::string msg = "transfer: missing model weights:";
        for (const auto& p : missing) msg += " " + p;
        throw InputError(msg);
    }
    const auto ds = load_data(cx);
    const auto ids = eval_ids(cx, ds);
    std::vector<models::Model<float>> nets;
    for (const auto& m : cx.cfg.models) nets.push_back(load_model(cx, ds, m.name));
    std::vector<attacks::Method> run = cx.cfg.transfer.attacks;
    if (cx.cfg.tune.enabled && std::find(run.begin(), run.end(), cx.cfg.tune.reference) == run.end()) {
        run.push_back(cx.cfg.tune.reference);
    }
    struct Cell {
        std::size_t n = 0;
        std::optional<double> asr;
        double dtw = 0;
    };
    std::map<std::tuple<std::size_t, std::size_t, attacks::Method>, Cell> cells;
    for (std::size_t s = 0; s < nets.size(); ++s) {
        *cx.log << "transfer from " << cx.cfg.models[s].name << "\n";
        const auto runs = white_box(cx, nets[s], ds, ids, run);
        for (auto m : cx.cfg.transfer.attacks) {
            const auto& ev = runs.at(m).eval;
            ev.require_ok();
            for (std::size_t t = 0; t < nets.size(); ++t) {
                if (t == s) continue;
                Cell c;
                std::size_t hits = 0;
                for (const auto& o : ev.outcomes) {
                    const auto& r = o.result;
                    if (nets[t].predict(r.x_benign) != r.y_gt) continue;
                    ++c.n;
                    hits += nets[t].predict(r.x_adv) != r.y_gt;
                    c.dtw += r.dtw;
                }
                if (c.n) {
                    c.asr = double(hits) / double(c.n);
                    c.dtw /= double(c.n);
                }
                cells[{s, t, m}] = c;
            }
        }
    }
    std::string csv = "substitute,target,attack,n_transferred,asr_pct,dtw\n";
    for (const auto& [key, c] : cells) {
        const auto& [s, t, m] = key;
        csv += cx.cfg.models[s].name + "," + cx.cfg.models[t].name + "," + attacks::method_name(m) + "," +
               std::to_string(c.n) + "," + pct(c.asr) + "," + num(c.dtw) + "\n";
    }
    std::string md = "| Substitute | Attack |";
    for (const auto& m : cx.cfg.models) md += " " + m.name + " |";
    md += "\n|---|---|";
    for (std::size_t i = 0; i < cx.cfg.models.size(); ++i) md += "---|";
    md += "\n";
    for (std::size_t s = 0; s < nets.size(); ++s) {
        for (auto m : cx.cfg.transfer.attacks) {
            md += "| " + cx.cfg.models[s].name + " | " + attacks::method_name(m) + " |";
            for (std::size_t t = 0; t < nets.size(); ++t) {
                if (t == s) {
                    md += " -/- |";
                } else {
                    const auto& c = cells.at({s, t, m});
                    md += " " + pct(c.asr) + "/" + num(c.dtw) + " |";
                }
            }
            md += "\n";
        }
    }
    write_text((fs::path(cx.cfg.out) / "transfer.csv").string(), csv);
    write_text((fs::path(cx.cfg.out) / "transfer.md").string(), md);
}

inline void cmd_report(const Context& cx, std::vector<std::string> inputs) {
    if (inputs.empty()) {
        if (fs::is_directory(cx.cfg.out)) {
            for (const auto& e : fs::directory_iterator(cx.cfg.out)) {
                const auto f = e.path().filename().string();
                if (f.starts_with("attack_") && f.ends_with("_summary.json")) inputs.push_back(e.path().string());
            }
        }
        std::sort(inputs.begin(), inputs.end());
        if (inputs.empty()) throw InputError("report: no attack summaries found in '" + cx.cfg.out + "'");
    }
    std::map<std::tuple<std::string, std::string, std::string>, json> rows;
    for (const auto& p : inputs) {
        json j;
        try {
            j = json::parse(read_text(p));
            for (const auto& r : j.at("rows")) {
                rows[{r.at("dataset").get<std::string>(), r.at("model").get<std::string>(),
                      r.at("attack").get<std::string>()}] = r;
            }
        } catch (const json::exception& e) {
            throw FormatError("report: malformed summary '" + p + "': " + e.what());
        }
    }
    json out{{"schema_version", kSchemaVersion}, {"rows", json::array()}};
    std::string md = "| Dataset | Model | Attack | ASR (%) | L2 | DTW | Cosine |\n|---|---|---|---|---|---|---|\n";
    for (const auto& [key, r] : rows) {
        out["rows"].push_back(r);
        const auto asr = r.at("asr_pct");
        md += "| " + std::get<0>(key) + " | " + std::get<1>(key) + " | " + std::get<2>(key) + " | " +
              (asr.is_null() ? std::string("NA") : num(asr.get<double>())) + " | " + num(r.at("l2").get<double>()) + " | " +
              num(r.at("dtw").get<double>()) + " | " + num(r.at("cosine").get<double>()) + " |\n";
    }
    write_text((fs::path(cx.cfg.out) / "report.md").string(), md);
    write_text((fs::path(cx.cfg.out) / "report.json").string(), out.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Entry point

/// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
inline int run_cli(int argc, const char* const* argv, std::ostream& err = std::cerr) {
    CLI::App app{"tfab: time-frequency adversarial attack benchmark"};
    app.require_subcommand(1);
    std::optional<std::string> config_path, out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<int> threads;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--seed", seed, "global seed");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker threads (0 = auto)");

    auto* gen = app.add_subcommand("gen", "generate the synthetic dataset");
    auto* train = app.add_subcommand("train", "train models");
    std::vector<std::string> train_models;
    bool resume = false;
    train->add_option("--model", train_models, "restrict to these models");
    train->add_flag("--resume", resume, "start from existing weights");
    auto* attack = app.add_subcommand("attack", "white-box comparison");
    std::vector<std::string> attack_models;
    attack->add_option("--model", attack_models, "restrict to these models");
    auto* sweep = app.add_subcommand("sweep", "perception sweep");
    auto* transfer = app.add_subcommand("transfer", "grey-box transfer matrix");
    auto* report = app.add_subcommand("report", "merge attack summaries");
    std::vector<std::string> report_inputs;
    report->add_option("inputs", report_inputs, "summary JSON files");
    for (auto* sub : {gen, train, attack, sweep, transfer, report}) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        std::ostringstream out, errs;
        const int code = app.exit(e, out, errs);
        err << out.str() << errs.str();
        return code == 0 ? 0 : 1;
    }
    try {
        Context cx;
        cx.log = &err;
        cx.cfg = load_config(config_path);
        if (seed) cx.cfg.seed = *seed;
        if (out_dir) cx.cfg.out = *out_dir;
        if (threads) {
            cx.cfg.threads = *threads;
        } else if (const char* env = std::getenv("TFAB_THREADS"); env && *env) {
            try {
                cx.cfg.threads = std::stoi(env);
            } catch (const std::exception&) {
                throw ConfigError(std::string("TFAB_THREADS is not an integer: '") + env + "'");
            }
        }
        validate(cx.cfg);
        cx.threads = resolve_threads(cx.cfg.threads);
        if (gen->parsed()) cmd_gen(cx);
        else if (train->parsed()) cmd_train(cx, train_models, resume);
        else if (attack->parsed()) cmd_attack(cx, attack_models);
        else if (sweep->parsed()) cmd_sweep(cx);
        else if (transfer->parsed()) cmd_transfer(cx);
        else if (report->parsed()) cmd_report(cx, report_inputs);
        return 0;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

}  // namespace tfab::harness
