// End-to-end acceptance gate. Runs every criterion and prints one PASS/FAIL
// line each; exits non-zero if any criterion fails.

#include <sys/wait.h>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "grad_cases.hpp"
#include "tfab/harness.hpp"
#include "tfab/metrics.hpp"
#include "tfab/wavelet.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace tfab;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
    void note(const std::string& what) { detail += (detail.empty() ? "" : "; ") + what; }
};

std::string fmt(double v, int prec = 4) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

int run_cli(const std::string& args, const fs::path& log) {
    const std::string cmd = "'" TFAB_CLI_PATH "' " + args + " >> '" + log.string() + "' 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

/// Header-keyed CSV rows.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& p) {
    std::ifstream f(p);
    std::vector<std::map<std::string, std::string>> rows;
    auto split = [](const std::string& line) {
        std::vector<std::string> out;
        std::stringstream ss(line);
        for (std::string c; std::getline(ss, c, ',');) out.push_back(c);
        return out;
    };
    std::string line;
    if (!std::getline(f, line)) return rows;
    const auto header = split(line);
    while (std::getline(f, line)) {
        const auto cells = split(line);
        std::map<std::string, std::string> row;
        for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
        rows.push_back(row);
    }
    return rows;
}

std::optional<double> number(const std::string& s) {
    if (s.empty() || s == "NA") return std::nullopt;
    return std::stod(s);
}

// ---------------------------------------------------------------------------
// 1. Wavelet identities

Verdict wavelet_identities() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(1001);
    std::uniform_int_distribution<std::size_t> half(1, 16);
    double recon64 = 0, recon32 = 0, parseval = 0, adjoint = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const Shape shape{2 * half(rng), 2 * half(rng)};
        const auto x = test::random_tensor(shape, rng);
        const auto sub = wavelet::dwt2(x);
        recon64 = std::max(recon64, max_abs_diff(wavelet::idwt2(sub), x));
        const auto xf = x.cast<float>();
        recon32 = std::max(recon32, double(max_abs_diff(wavelet::idwt2(wavelet::dwt2(xf)), xf)));
        const double e = squared_norm(x);
        parseval = std::max(parseval, std::abs(wavelet::squared_norm(sub) - e) / e);
        const auto y = wavelet::dwt2(test::random_tensor(shape, rng));
        adjoint = std::max(adjoint, wavelet::adjoint_check(x, y));
    }
    const double secs = seconds_since(t0);
    Verdict v;
    v.require(recon64 <= 1e-12, "64-bit reconstruction " + fmt(recon64) + " > 1e-12");
    v.require(recon32 <= 1e-5, "32-bit reconstruction " + fmt(recon32) + " > 1e-5");
    v.require(parseval <= 1e-9, "Parseval " + fmt(parseval) + " > 1e-9");
    v.require(adjoint <= 1e-10, "adjoint " + fmt(adjoint) + " > 1e-10");
    v.require(secs < 10.0, "runtime " + fmt(secs) + " s >= 10 s");
    v.note("max recon64 " + fmt(recon64) + ", recon32 " + fmt(recon32) + ", parseval " + fmt(parseval) + ", adjoint " +
           fmt(adjoint) + ", " + fmt(secs, 3) + " s");
    return v;
}

// ---------------------------------------------------------------------------
// 2. Gradient suite

Verdict gradient_suite() {
    const auto t0 = Clock::now();
    Verdict v;
    const auto cases = test::grad_cases();
    std::size_t checks = 0;
    bool tolerances_pinned = true;
    for (const auto& c : cases) {
        if (!(c.tolerance <= 1e-4)) tolerances_pinned = false;
        double worst = 0;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            worst = std::max(worst, c.error(seed));
            ++checks;
        }
        v.require(worst <= c.tolerance, c.name + " error " + fmt(worst) + " > " + fmt(c.tolerance));
    }
    const double secs = seconds_since(t0);
    v.require(tolerances_pinned, "a case uses a tolerance looser than 1e-4");
    v.require(secs < 120.0, "runtime " + fmt(secs) + " s >= 120 s");
    v.note(std::to_string(cases.size()) + " cases x 20 instances (" + std::to_string(checks) + " checks), " +
           fmt(secs, 3) + " s");
    return v;
}

// ---------------------------------------------------------------------------
// 3. DTW oracle

void path_costs(const std::vector<double>& a, const std::vector<double>& b, std::size_t i, std::size_t j, double acc,
                double& best) {
    acc += (a[i] - b[j]) * (a[i] - b[j]);
    if (acc >= best) return;
    if (i + 1 == a.size() && j + 1 == b.size()) {
        best = acc;
        return;
    }
    if (i + 1 < a.size()) path_costs(a, b, i + 1, j, acc, best);
    if (j + 1 < b.size()) path_costs(a, b, i, j + 1, acc, best);
    if (i + 1 < a.size() && j + 1 < b.size()) path_costs(a, b, i + 1, j + 1, acc, best);
}

Verdict dtw_oracle() {
    std::vector<std::vector<double>> seqs;
    for (std::size_t len = 1; len <= 4; ++len) {
        std::size_t count = 1;
        for (std::size_t k = 0; k < len; ++k) count *= 4;
        for (std::size_t code = 0; code < count; ++code) {
            std::vector<double> s(len);
            std::size_t c = code;
            for (auto& x : s) {
                x = double(c % 4);
                c /= 4;
            }
            seqs.push_back(s);
        }
    }
    std::size_t mismatches = 0, pairs = 0;
    for (const auto& a : seqs) {
        for (const auto& b : seqs) {
            double best = std::numeric_limits<double>::infinity();
            path_costs(a, b, 0, 0, 0.0, best);
            mismatches += metrics::dtw<double, double>(a, b) != best;
            ++pairs;
        }
    }
    std::mt19937_64 rng(1003);
    std::uniform_int_distribution<std::size_t> len(2, 16);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double worst_soft = 0;
    for (int t = 0; t < 100; ++t) {
        std::vector<double> a(len(rng)), b(len(rng));
        for (auto& x : a) x = u(rng);
        for (auto& x : b) x = u(rng);
        worst_soft = std::max(worst_soft, std::abs(metrics::soft_dtw<double>(a, b, 1e-3) - metrics::dtw<double, double>(a, b)));
    }
    Verdict v;
    v.require(mismatches == 0, std::to_string(mismatches) + " exhaustive mismatches");
    v.require(worst_soft <= 1e-2, "soft-DTW gap " + fmt(worst_soft) + " > 1e-2");
    v.note(std::to_string(pairs) + " exhaustive pairs, max soft-DTW gap " + fmt(worst_soft));
    return v;
}

// ---------------------------------------------------------------------------
// Pipeline-driven criteria

const char* kModels[] = {"eegnet", "deepconvnet", "shallowconvnet"};

struct Pipeline {
    fs::path out, log;
    std::string flags;
    std::map<std::string, double> secs;
    std::map<std::string, int> codes;

    bool run(const std::string& sub) {
        std::cout << "  running " << sub << "..." << std::endl;
        const auto t0 = Clock::now();
        codes[sub] = run_cli(flags + " " + sub, log);
        secs[sub] = seconds_since(t0);
        std::cout << "  " << sub << " exit " << codes[sub] << " in " << fmt(secs[sub], 4) << " s" << std::endl;
        return codes[sub] == 0;
    }
    bool ok(const std::string& sub) const { return codes.count(sub) && codes.at(sub) == 0; }
};

Verdict stage_failed(const Pipeline& p, const std::string& sub) {
    Verdict v;
    v.require(false, "'" + sub + "' did not complete (exit " + (p.codes.count(sub) ? std::to_string(p.codes.at(sub)) : "n/a") +
                         ", see " + p.log.string() + ")");
    return v;
}

Verdict trainability(const Pipeline& p, int max_epochs) {
    if (!p.ok("train")) return stage_failed(p, "train");
    Verdict v;
    v.require(max_epochs <= 50, "configured epochs " + std::to_string(max_epochs) + " > 50");
    for (const char* m : kModels) {
        const auto rows = read_csv(p.out / ("train_" + std::string(m) + "_history.csv"));
        if (rows.empty()) {
            v.require(false, std::string(m) + " history missing");
            continue;
        }
        const auto acc = number(rows.back().at("test_acc"));
        v.require(acc && *acc >= 0.95, std::string(m) + " test acc " + (acc ? fmt(*acc) : "NA") + " < 0.95");
        v.note(std::string(m) + " test " + (acc ? fmt(*acc) : "NA"));
    }
    v.require(p.secs.at("train") < 600.0, "train runtime " + fmt(p.secs.at("train")) + " s >= 600 s");
    v.note("train " + fmt(p.secs.at("train"), 4) + " s");
    return v;
}

std::map<std::string, json> summary_rows(const Pipeline& p, const std::string& model) {
    std::map<std::string, json> out;
    const auto j = json::parse(slurp(p.out / ("attack_" + model + "_summary.json")));
    for (const auto& r : j.at("rows")) out[r.at("attack").get<std::string>()] = r;
    return out;
}

Verdict white_box(const Pipeline& p) {
    if (!p.ok("attack")) return stage_failed(p, "attack");
    Verdict v;
    for (const char* m : kModels) {
        const auto rows = summary_rows(p, m);
        const auto& tf = rows.at("tfattack");
        const std::size_t n = tf.at("n_selected").get<std::size_t>();
        v.require(n >= 200, std::string(m) + " only " + std::to_string(n) + " evaluation samples");
        const double tf_asr = tf.at("asr_pct").is_null() ? 0.0 : tf.at("asr_pct").get<double>();
        const double tf_dtw = tf.at("dtw").get<double>(), tf_cos = tf.at("cosine").get<double>();
        v.require(tf_asr >= 90.0, std::string(m) + " tfattack ASR " + fmt(tf_asr) + " < 90");
        std::string line = std::string(m) + ": tfattack " + fmt(tf_asr) + "%/dtw " + fmt(tf_dtw) + "/cos " + fmt(tf_cos);
        for (const char* base : {"pgd", "fgsm"}) {
            const auto& r = rows.at(base);
            const double asr = r.at("asr_pct").is_null() ? 0.0 : r.at("asr_pct").get<double>();
            const double dtw = r.at("dtw").get<double>(), cos = r.at("cosine").get<double>();
            v.require(std::abs(asr - tf_asr) <= 5.0,
                      std::string(m) + " " + base + " ASR " + fmt(asr) + " not within 5 points of " + fmt(tf_asr));
            v.require(tf_dtw < dtw, std::string(m) + " tfattack DTW " + fmt(tf_dtw) + " not below " + base + " " + fmt(dtw));
            v.require(tf_cos > cos, std::string(m) + " tfattack cosine " + fmt(tf_cos) + " not above " + base + " " + fmt(cos));
            line += ", " + std::string(base) + " " + fmt(asr) + "%/dtw " + fmt(dtw) + "/cos " + fmt(cos) + " (eps " +
                    fmt(r.value("epsilon", 0.0)) + ")";
        }
        v.note(line);
    }
    v.require(p.secs.at("attack") < 1200.0, "attack runtime " + fmt(p.secs.at("attack")) + " s >= 1200 s");
    v.note("attack " + fmt(p.secs.at("attack"), 4) + " s");
    return v;
}

Verdict attack_contracts(const Pipeline& p) {
    if (!p.ok("attack")) return stage_failed(p, "attack");
    Verdict v;
    std::size_t budget_rows = 0, budget_bad = 0, fgsm_rows = 0, fgsm_bad = 0, tf_rows = 0, tf_rich = 0;
    for (const char* m : kModels) {
        const auto summary = summary_rows(p, m);
        for (const auto& row : read_csv(p.out / ("attack_" + std::string(m) + "_samples.csv"))) {
            const auto& method = row.at("method");
            const double linf = std::stod(row.at("linf"));
            const long distinct = std::stol(row.at("distinct_values"));
            if (method == "fgsm" || method == "bim" || method == "pgd") {
                ++budget_rows;
                budget_bad += linf > summary.at(method).at("epsilon").get<double>() + 1e-6;
            }
            if (method == "fgsm") {
                ++fgsm_rows;
                fgsm_bad += distinct > 3;
            }
            if (method == "tfattack") {
                ++tf_rows;
                tf_rich += distinct > 100;
            }
        }
    }
    const double rich = tf_rows ? double(tf_rich) / double(tf_rows) : 0.0;
    v.require(budget_rows > 0 && budget_bad == 0, std::to_string(budget_bad) + "/" + std::to_string(budget_rows) +
                                                      " budgeted results exceed epsilon");
    v.require(fgsm_rows > 0 && fgsm_bad == 0,
              std::to_string(fgsm_bad) + "/" + std::to_string(fgsm_rows) + " FGSM perturbations with > 3 values");
    v.require(rich >= 0.95, "only " + fmt(100 * rich) + "% of tfattack perturbations have > 100 values");
    v.note(std::to_string(budget_rows) + " budgeted rows inside the ball, " + std::to_string(fgsm_rows) +
           " FGSM rows with <= 3 values, " + fmt(100 * rich) + "% tfattack rows with > 100 values");
    return v;
}

/// Piecewise-linear interpolation of y(x) over points sorted by x; nullopt
/// outside the sampled range.
std::optional<double> interpolate(std::vector<std::pair<double, double>> pts, double x) {
    std::sort(pts.begin(), pts.end());
    if (pts.empty() || x < pts.front().first || x > pts.back().first) return std::nullopt;
    for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
        const auto [x0, y0] = pts[i];
        const auto [x1, y1] = pts[i + 1];
        if (x >= x0 && x <= x1) return x1 == x0 ? std::max(y0, y1) : y0 + (y1 - y0) * (x - x0) / (x1 - x0);
    }
    return pts.back().second;
}

Verdict perception_sweep(const Pipeline& p, const std::vector<std::string>& sweep_models) {
    if (!p.ok("sweep")) return stage_failed(p, "sweep");
    Verdict v;
    for (const auto& m : sweep_models) {
        std::vector<std::pair<double, double>> fgsm, pgd, tf;  // (knob, asr)
        std::vector<std::pair<double, double>> pgd_l2, tf_l2;  // (l2, asr)
        for (const auto& row : read_csv(p.out / ("sweep_" + m + ".csv"))) {
            const double knob = std::stod(row.at("value"));
            const double asr = number(row.at("asr_pct")).value_or(0.0);
            const double l2 = std::stod(row.at("l2"));
            if (row.at("method") == "fgsm") fgsm.emplace_back(knob, asr);
            if (row.at("method") == "pgd") {
                pgd.emplace_back(knob, asr);
                pgd_l2.emplace_back(l2, asr);
            }
            if (row.at("method") == "tfattack") {
                tf.emplace_back(knob, asr);
                tf_l2.emplace_back(l2, asr);
            }
        }
        std::sort(fgsm.begin(), fgsm.end());
        std::sort(tf.begin(), tf.end());
        int inversions = 0;
        double worst_drop = 0;
        for (std::size_t i = 0; i + 1 < fgsm.size(); ++i) {
            const double drop = fgsm[i].second - fgsm[i + 1].second;
            if (drop > 0) {
                ++inversions;
                worst_drop = std::max(worst_drop, drop);
            }
        }
        v.require(fgsm.size() == 6, m + " FGSM grid has " + std::to_string(fgsm.size()) + " points, expected 6");
        v.require(inversions <= 1 && worst_drop <= 2.0, m + " FGSM ASR has " + std::to_string(inversions) +
                                                            " inversion(s), largest drop " + fmt(worst_drop) + " points");
        std::vector<int> iters;
        for (const auto& [k, a] : tf) iters.push_back(int(k));
        v.require(iters == std::vector<int>{4, 8, 16, 32, 64}, m + " tfattack iteration grid differs from {4,8,16,32,64}");
        for (std::size_t i = 0; i + 1 < tf.size(); ++i)
            v.require(tf[i + 1].second >= tf[i].second, m + " tfattack ASR drops from " + fmt(tf[i].second) + " to " +
                                                            fmt(tf[i + 1].second) + " at max_iters " + fmt(tf[i + 1].first));
        int matched = 0;
        std::string pairs;
        for (const auto& [l2, asr] : tf_l2) {
            const auto ref = interpolate(pgd_l2, l2);
            if (!ref) continue;
            ++matched;
            pairs += " L2 " + fmt(l2, 3) + ": " + fmt(asr, 3) + " vs " + fmt(*ref, 3) + ";";
            v.require(asr >= *ref, m + " at L2 " + fmt(l2) + " tfattack ASR " + fmt(asr) + " < PGD " + fmt(*ref));
        }
        v.require(matched > 0, m + " no tfattack point falls inside the PGD L2 range");
        std::string curve = m + " FGSM ASR";
        for (const auto& [e, a] : fgsm) curve += " " + fmt(a, 3);
        curve += ", tfattack ASR";
        for (const auto& [k, a] : tf) curve += " " + fmt(a, 3);
        v.note(curve + ", matched (tf vs pgd):" + pairs);
    }
    return v;
}

Verdict transferability(const Pipeline& p) {
    if (!p.ok("transfer")) return stage_failed(p, "transfer");
    Verdict v;
    std::map<std::pair<std::string, std::string>, std::map<std::string, std::pair<std::optional<double>, double>>> cells;
    for (const auto& row : read_csv(p.out / "transfer.csv")) {
        cells[{row.at("substitute"), row.at("target")}][row.at("attack")] = {number(row.at("asr_pct")),
                                                                             std::stod(row.at("dtw"))};
    }
    v.require(cells.size() == 6, std::to_string(cells.size()) + " substitute/target pairs, expected 6");
    for (const auto& [pair, byattack] : cells) {
        const auto name = pair.first + "->" + pair.second;
        if (!byattack.count("pgd") || !byattack.count("tfattack")) {
            v.require(false, name + " lacks pgd or tfattack");
            continue;
        }
        const auto& [pa, pd] = byattack.at("pgd");
        const auto& [ta, td] = byattack.at("tfattack");
        v.require(td < pd, name + " tfattack DTW " + fmt(td) + " not below pgd " + fmt(pd));
        v.require(pa && ta && std::abs(*pa - *ta) <= 10.0,
                  name + " ASR gap " + (pa && ta ? fmt(std::abs(*pa - *ta)) : std::string("NA")) + " > 10");
        v.note(name + " tf " + (ta ? fmt(*ta, 3) : "NA") + "%/" + fmt(td) + " pgd " + (pa ? fmt(*pa, 3) : "NA") + "%/" +
               fmt(pd));
    }
    std::size_t zero_pairs = 0;
    for (const auto& [pair, byattack] : cells) {
        const auto pgd = byattack.find("pgd"), tf = byattack.find("tfattack");
        zero_pairs += pgd != byattack.end() && tf != byattack.end() && pgd->second.first == 0.0 && tf->second.first == 0.0;
    }
    if (zero_pairs) v.note(std::to_string(zero_pairs) + " pair(s) where neither attack transfers (both ASR 0)");
    v.require(p.secs.at("transfer") < 900.0, "transfer runtime " + fmt(p.secs.at("transfer")) + " s >= 900 s");
    v.note("transfer " + fmt(p.secs.at("transfer"), 4) + " s");
    return v;
}

// ---------------------------------------------------------------------------
// 9. Determinism

json small_config() {
    return json::parse(R"({
      "schema_version": 1,
      "seed": 9,
      "data": {"n_subjects": 3, "n_channels": 4, "n_timepoints": 64, "samples_per_subject": 20, "holdout_per_subject": 4},
      "models": [
        {"family": "eegnet", "temporal_kernel": 5},
        {"family": "deepconvnet", "temporal_kernel": 5},
        {"family": "shallowconvnet", "temporal_kernel": 9}
      ],
      "train": {"epochs": 4},
      "eval": {"n_samples": 12},
      "attack": {"tune": {"grid": 4, "steps": 2}},
      "attacks": {"tfattack": {"max_iters": 8}, "tattack": {"max_iters": 8}, "fattack": {"max_iters": 8},
                  "cw": {"max_iters": 8}, "pgd": {"max_iters": 4}, "bim": {"max_iters": 4}},
      "sweep": {"fgsm_epsilon": [0.0, 0.3], "pgd_epsilon": [0.0, 0.3], "tfattack_iters": [2, 4]}
    })");
}

std::map<std::string, std::string> tree(const fs::path& dir) {
    std::map<std::string, std::string> out;
    if (!fs::exists(dir)) return out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
    return out;
}

Verdict determinism(const fs::path& work) {
    const auto dir = work / "determinism";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto cfg = dir / "small.json";
    std::ofstream(cfg) << small_config().dump(2);
    const auto log = dir / "log.txt";
    Verdict v;
    const char* subs[] = {"gen", "train", "attack", "sweep", "transfer", "report"};
    for (const char* run : {"a", "b"}) {
        for (const char* sub : subs) {
            const std::string flags = "--config '" + cfg.string() + "' --out '" + (dir / run).string() + "' " + sub;
            const int code = run_cli(flags, log);
            v.require(code == 0, std::string(sub) + " run " + run + " exit " + std::to_string(code));
        }
    }
    const auto a = tree(dir / "a"), b = tree(dir / "b");
    std::size_t differing = 0;
    for (const auto& [name, bytes] : a) {
        const bool same = b.count(name) && b.at(name) == bytes;
        differing += !same;
        v.require(same, name + " differs");
    }
    v.require(a.size() == b.size(), "output file sets differ");
    v.require(!a.empty(), "no outputs");
    v.note(std::to_string(a.size()) + " files compared across " + std::to_string(std::size(subs)) + " subcommands, " +
           std::to_string(differing) + " differ");
    return v;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"tfab acceptance suite"};
    std::string workdir = "acceptance_work";
    std::string config = TFAB_SOURCE_DIR "/configs/default.json";
    app.add_option("--workdir", workdir, "scratch directory for pipeline outputs");
    app.add_option("--config", config, "benchmark config")->check(CLI::ExistingFile);
    CLI11_PARSE(app, argc, argv);

    const fs::path work = fs::absolute(workdir);
    fs::create_directories(work);

    std::vector<std::pair<std::string, Verdict>> results;
    auto record = [&](const std::string& name, Verdict v) {
        std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
        results.emplace_back(name, std::move(v));
    };

    record("[1] wavelet identities", wavelet_identities());
    record("[2] gradient suite", gradient_suite());
    record("[3] DTW oracle", dtw_oracle());

    const auto cfg = harness::load_config(config);
    Pipeline p;
    p.out = work / "benchmark";
    p.log = work / "benchmark.log";
    fs::remove_all(p.out);
    fs::remove(p.log);
    p.flags = "--config '" + config + "' --out '" + p.out.string() + "'";
    for (const char* sub : {"gen", "train", "attack", "sweep", "transfer", "report"})
        if (!p.run(sub)) break;

    record("[4] trainability gate", trainability(p, cfg.train.epochs));
    record("[5] white-box trend", white_box(p));
    record("[6] attack contracts", attack_contracts(p));
    record("[7] perception-sweep trend", perception_sweep(p, cfg.sweep.models));
    record("[8] transferability trend", transferability(p));
    record("[9] determinism", determinism(work));

    std::size_t failed = 0;
    for (const auto& [name, v] : results) failed += !v.pass;
    std::cout << "\n" << results.size() - failed << "/" << results.size() << " criteria passed" << std::endl;
    return failed ? 1 : 0;
}
