// Acceptance run: one PASS/FAIL line per criterion, exit status 0 only if all pass.
// Usage: odonto_acceptance [--cli PATH] [criterion ...]   (no names = all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <set>

#include <fmt/format.h>

#include "fem_fixtures.hpp"
#include "odonto/analysis.hpp"
#include "odonto/harness.hpp"
#include "odonto/quality.hpp"
#include "odonto/synth.hpp"

using namespace odonto;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

struct Criterion {
    std::string key;
    std::function<Outcome()> run;
};

using Clock = std::chrono::steady_clock;
double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string cli_path;

// ------------------------------------------------------------------ family data

struct FamilyData {
    std::vector<harness::ToothKinematics> records;
    std::vector<analysis::BiomarkerRecord> biomarkers;
    std::vector<analysis::ToothFit> fits;
    double seconds = 0.0;
};

const FamilyData& family() {
    static std::optional<FamilyData> cache;
    if (!cache) {
        FamilyData d;
        const auto t0 = Clock::now();
        for (const auto& p : synth::patient_family(synth::default_full_patient(), synth::default_family_rules())) {
            synth::AssemblyInfo info;
            const auto mesh = synth::synth_assembly(p, &info);
            const auto r = harness::run_sweep(fem::build_model(mesh), {}, p.patient_id);
            d.records.insert(d.records.end(), r.begin(), r.end());
            const auto b = analysis::assembly_biomarkers(p.patient_id, mesh, info);
            d.biomarkers.insert(d.biomarkers.end(), b.begin(), b.end());
        }
        d.fits = analysis::fit_kinematics(d.records);
        d.seconds = seconds_since(t0);
        cache = std::move(d);
    }
    return *cache;
}

const std::vector<harness::ToothKinematics>& incisor_sweep() {
    static std::optional<std::vector<harness::ToothKinematics>> cache;
    if (!cache) {
        const auto p = synth::default_single_tooth_patient();
        cache = harness::run_sweep(fem::build_model(synth::synth_assembly(p)), {}, p.patient_id);
    }
    return *cache;
}

// All synthetic load curves: the incisor and the 48 family teeth.
std::map<std::pair<std::string, int>, std::vector<harness::ToothKinematics>> all_curves() {
    std::map<std::pair<std::string, int>, std::vector<harness::ToothKinematics>> out;
    for (const auto* recs : {&incisor_sweep(), &family().records})
        for (const auto& r : *recs) out[{r.patient_id, r.tooth_unn}].push_back(r);
    for (auto& [k, v] : out) std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.load < b.load; });
    return out;
}

// ------------------------------------------------------------------ criteria

Outcome mesh_metrics() {
    using namespace mesh;
    const auto t0 = Clock::now();
    double reg = 0.0;
    for (double edge : {1.0, 0.013, 42.0}) {
        const auto t = testutil::regular_tet(edge);
        reg = std::max({reg, std::abs(volume_edge_ratio(t) - 1.0), std::abs(radius_ratio(t) - 1.0),
                        std::abs(mean_ratio_metric(t) - 1.0), std::abs(radius_edge_ratio(t) - std::sqrt(3.0 / 8.0))});
    }
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-50.0, 50.0);
    double inv = 0.0;
    for (int i = 0; i < 100000; ++i) {
        const auto t = testutil::random_tet(rng);
        const Mat3 Q = testutil::random_rotation(rng);
        const double s = scale(rng);
        const Vec3 c(shift(rng), shift(rng), shift(rng));
        TetPoints moved;
        for (int a = 0; a < 4; ++a) moved[a] = s * (Q * t[a]) + c;
        // Absolute on the [0, 1] metrics, relative once the unbounded radius-edge ratio exceeds 1.
        for (auto m : kAllMetrics) {
            const double a = evaluate(m, t);
            inv = std::max(inv, std::abs(a - evaluate(m, moved)) / std::max(1.0, std::abs(a)));
        }
    }
    const double secs = seconds_since(t0);
    return {reg <= 1e-12 && inv <= 1e-12 && secs < 5.0,
            fmt::format("regular tet max error {:.2e}, invariance max error {:.2e} over 1e5 tets, {:.2f} s", reg, inv,
                        secs)};
}

Outcome patch_test() {
    const auto t0 = Clock::now();
    const auto m = testutil::patch_cube_model();
    const auto s = fem::solve_quasistatic(m, 1).back();
    const double secs = seconds_since(t0);
    const double expected = 1.0 / 1500.0;
    double uz_top = 0.0;
    int n = 0;
    double worst = 0.0;
    for (std::size_t v = 0; v < m.mesh.nodes.size(); ++v)
        if (m.mesh.nodes[v].z() == 1.0) {
            uz_top = -s.u[v].z();
            worst = std::max(worst, std::abs(-s.u[v].z() - expected) / expected);
            ++n;
        }
    return {n > 0 && worst <= 1e-8 && secs < 1.0,
            fmt::format("top-face axial displacement {:.10e} mm (expected {:.10e}), max rel error {:.2e}, {:.3f} s",
                        uz_top, expected, worst, secs)};
}

Outcome hyperelastic() {
    const fem::MooneyRivlin pdl;
    const double J = 1.1;
    const Mat3 F = std::cbrt(J) * Mat3::Identity();
    const double p = fem::neo_hookean_response(F, pdl).sigma.trace() / 3.0;
    const double literal = 0.0199026;
    const double analytic = pdl.k * std::log(J) / J;
    const double consistency = 2.0 * (pdl.c1 + pdl.c2) * 2.0 * 1.45;
    const bool consistent = std::abs(consistency - 0.068875) < 1e-12 && std::abs(consistency / 0.0689 - 1.0) <= 1e-3;
    return {std::abs(p - literal) <= 1e-9 && consistent,
            fmt::format("hydrostatic stress {:.12f} MPa vs stated 0.0199026 (diff {:.2e}); K ln J / J = {:.12f} "
                        "(diff {:.1e}); 2(C1+C2)2(1+nu) = {:.6f}",
                        p, std::abs(p - literal), analytic, std::abs(p - analytic), consistency)};
}

Outcome tangent() {
    const auto t0 = Clock::now();
    std::mt19937_64 rng(99);
    double worst = 0.0;
    int dofs = 0;
    for (auto mode : {fem::PressureMode::Follower, fem::PressureMode::Reference}) {
        const auto m = testutil::stack_model(5e-3, mode);
        dofs = std::max(dofs, fem::rigid_couple(m).n_dofs);
        for (int trial = 0; trial < 3; ++trial)
            worst = std::max(worst, testutil::tangent_fd_error(m, testutil::random_state(m, rng, 0.02)));
    }
    const double secs = seconds_since(t0);
    return {dofs <= 200 && worst <= 1e-6 && secs < 30.0,
            fmt::format("{} DOFs, max relative FD mismatch {:.2e}, {:.2f} s", dofs, worst, secs)};
}

Outcome convergence() {
    const auto t0 = Clock::now();
    harness::ConvergenceOptions o;
    o.max_levels = 4;
    o.min_levels = 4;
    const auto rep = harness::convergence_study(synth::default_single_tooth_patient(), o);
    const double secs = seconds_since(t0);
    std::string levels;
    for (const auto& l : rep.levels) levels += fmt::format(" {}:{:.5f}", l.n_elements, l.max_vm);
    const double last = rep.levels.back().rel_diff;
    return {rep.levels.size() == 4 && last < 0.04 && secs < 600.0,
            fmt::format("max VM by elements{}; final rel diff {:.2f}%, {:.0f} s", levels, 100.0 * last, secs)};
}

Outcome sweep_realism() {
    for (const auto& r : incisor_sweep())
        if (r.load == 0.4)
            return {r.converged && r.t_mag >= 0.01 && r.t_mag <= 0.6,
                    fmt::format("incisor translation at 0.4 N: {:.4f} mm", r.t_mag)};
    return {false, "no 0.4 N level in the sweep"};
}

Outcome fit_quality() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> coef(0.01, 1.0);
    const std::vector<double> loads = harness::SweepSpec{}.loads();
    double exact = 0.0;
    for (int i = 0; i < 100; ++i) {
        const double a = coef(rng), b = coef(rng) - 0.5;
        std::vector<double> y;
        for (double l : loads) y.push_back(a * std::sqrt(l) + b);
        exact = std::max(exact, std::abs(analysis::fit_sqrt(loads, y).r_squared - 1.0));
    }
    double worst = 1.0;
    int n = 0;
    bool complete = true;
    for (const auto& [key, curve] : all_curves()) {
        std::vector<double> l, t, th;
        for (const auto& r : curve) {
            complete = complete && r.converged;
            l.push_back(r.load);
            t.push_back(r.t_mag);
            th.push_back(r.theta_deg);
        }
        if (!complete) break;
        worst = std::min({worst, analysis::fit_sqrt(l, t).r_squared, analysis::fit_sqrt(l, th).r_squared});
        n += 2;
    }
    return {complete && worst >= 0.95 && exact <= 1e-12,
            fmt::format("min R^2 {:.4f} over {} solver curves{}; model-class data |R^2 - 1| <= {:.1e}", worst, n,
                        complete ? "" : " (incomplete sweep)", exact)};
}

Outcome monotonicity() {
    int n = 0, bad_inc = 0, bad_stiff = 0;
    for (const auto& [key, curve] : all_curves()) {
        ++n;
        for (std::size_t i = 1; i < curve.size(); ++i) {
            const auto &a = curve[i - 1], &b = curve[i];
            if (!(b.t_mag > a.t_mag)) ++bad_inc;
            if (!(b.load / b.t_mag >= a.load / a.t_mag)) ++bad_stiff;
        }
    }
    return {bad_inc == 0 && bad_stiff == 0,
            fmt::format("{} teeth: {} non-increasing steps, {} secant-softening steps", n, bad_inc, bad_stiff)};
}

Outcome biomarker() {
    const auto& fam = family();
    std::map<std::pair<std::string, int>, double> b_of;
    for (const auto& b : fam.biomarkers) b_of[{b.patient_id, b.tooth_unn}] = b.b;
    bool pass = fam.seconds < 900.0;
    std::string detail;
    for (auto target : {analysis::Target::Translation, analysis::Target::Rotation}) {
        std::vector<double> bs, as;
        // Argmax over mirror-pooled teeth: a mirror pair shares its biomarker exactly.
        std::map<std::pair<std::string, int>, std::pair<double, double>> pooled;  // (patient, left UNN) -> (b, mean alpha)
        std::map<std::pair<std::string, int>, int> count;
        for (const auto& f : fam.fits) {
            if (f.target != target) continue;
            const double b = b_of.at({f.patient_id, f.tooth_unn});
            bs.push_back(b);
            as.push_back(f.fit.alpha);
            const int left = analysis::right_side(f.tooth_unn) ? analysis::mirror_unn(f.tooth_unn) : f.tooth_unn;
            auto& p = pooled[{f.patient_id, left}];
            p.first = std::max(p.first, b);
            p.second += f.fit.alpha;
            ++count[{f.patient_id, left}];
        }
        for (auto& [k, v] : pooled) v.second /= count[k];
        const auto by_b = std::max_element(pooled.begin(), pooled.end(),
                                           [](const auto& x, const auto& y) { return x.second.first < y.second.first; });
        const auto by_a = std::max_element(pooled.begin(), pooled.end(),
                                           [](const auto& x, const auto& y) { return x.second.second < y.second.second; });
        const double rho = analysis::spearman(bs, as);
        pass = pass && rho > 0.8 && by_a->first == by_b->first;
        detail += fmt::format("{}: Spearman {:.3f}, argmax alpha {}/{} vs argmax b {}/{}; ",
                              analysis::target_name(target), rho, by_a->first.first, by_a->first.second,
                              by_b->first.first, by_b->first.second);
    }
    return {pass, detail + fmt::format("family run {:.0f} s", fam.seconds)};
}

// Leave-one-out: predicted translation of each held-out tooth within 25% of the solver at 0.4 N.
Outcome leave_one_out() {
    const auto& fam = family();
    std::map<std::pair<std::string, int>, double> t04;
    for (const auto& r : fam.records)
        if (r.load == 0.4) t04[{r.patient_id, r.tooth_unn}] = r.t_mag;
    int ok = 0, n = 0;
    double worst = 0.0, sum = 0.0;
    for (const auto& held : fam.biomarkers) {
        std::vector<analysis::BiomarkerRecord> train;
        for (const auto& b : fam.biomarkers)
            if (b.patient_id != held.patient_id || b.tooth_unn != held.tooth_unn) train.push_back(b);
        const auto fit = analysis::fit_biomarkers(train, fam.fits).at("all");
        const double sim = t04.at({held.patient_id, held.tooth_unn});
        const double err = std::abs(analysis::predict_displacement(held.b, 0.4, fit).t_mag - sim) / sim;
        worst = std::max(worst, err);
        sum += err;
        ok += err <= 0.25;
        ++n;
    }
    return {ok == n, fmt::format("{}/{} held-out teeth within 25% at 0.4 N; mean error {:.1f}%, max {:.1f}%", ok, n,
                                 100.0 * sum / n, 100.0 * worst)};
}

Outcome rigid_transform() {
    const auto m = testutil::stack_model();
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(-1.0, 1.0), ang(0.5, 170.0);
    double worst = 0.0;
    for (int i = 0; i < 200; ++i) {
        const Vec3 axis = Vec3(u(rng), u(rng), u(rng)).normalized();
        const double deg = ang(rng);
        const Vec3 t(u(rng), u(rng), u(rng));
        fem::FEState s = fem::initial_state(m);
        const Mat3 R = Eigen::AngleAxisd(deg * std::numbers::pi / 180.0, axis).toRotationMatrix();
        s.body_q[0] = Eigen::Quaterniond(R);
        // Translation of the COM: rotate about the COM, then shift.
        s.body_t[0] = t;
        fem::update_rigid_nodes(m, s);
        const auto tr = fem::extract_rigid_transform(m, s, 24);
        worst = std::max({worst, std::abs(tr.angle_deg - deg), (tr.axis - axis).norm(), (tr.translation - t).norm()});
    }
    return {worst <= 1e-10, fmt::format("200 prescribed motions, max error {:.2e} (deg, axis, mm)", worst)};
}

Outcome mirroring() {
    bool involution = true;
    for (int k = 17; k <= 32; ++k)
        involution = involution && analysis::mirror_unn(k) == 49 - k && analysis::mirror_unn(analysis::mirror_unn(k)) == k;
    const auto& fam = family();
    std::map<std::pair<int, analysis::Target>, double> alpha;
    for (const auto& f : fam.fits)
        if (f.patient_id == "full_base") alpha[{f.tooth_unn, f.target}] = f.fit.alpha;
    double worst = 0.0;
    int pairs = 0;
    for (const auto& [key, a] : alpha)
        if (key.first <= 24) {
            const double b = alpha.at({analysis::mirror_unn(key.first), key.second});
            worst = std::max(worst, std::abs(a - b) / std::max(std::abs(a), std::abs(b)));
            ++pairs;
        }
    return {involution && pairs == 16 && worst <= 0.01,
            fmt::format("involution {}; {} left/right alpha pairs, max rel difference {:.2e}", involution ? "ok" : "broken",
                        pairs, worst)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
    const fs::path root = fs::temp_directory_path() / fmt::format("odonto_accept_{}", ::getpid());
    fs::create_directories(root);
    std::vector<std::string> files;
    bool same = true;
    if (!cli_path.empty()) {
        const fs::path cfg = root / "config.json";
        testutil::write_text(cfg.string(), R"({"family": [{"suffix": "_a", "crown_height_scale": 1.0, "root_scale": 1.0},
            {"suffix": "_b", "crown_height_scale": 1.1, "root_scale": 0.9}], "sweep": {"load_min": 0.3}})");
        for (const char* run : {"a", "b"}) {
            const std::string base = fmt::format("\"{}\" --quiet --seed 7 --config \"{}\" --out \"{}\" ", cli_path,
                                                 cfg.string(), (root / run).string());
            for (const char* cmd : {"sweep", "report"})
                if (std::system((base + cmd).c_str()) != 0) return {false, std::string("CLI ") + cmd + " failed"};
        }
        for (const auto& e : fs::directory_iterator(root / "a"))
            if (e.path().extension() == ".csv") {
                files.push_back(e.path().filename().string());
                same = same && slurp(e.path()) == slurp(root / "b" / e.path().filename());
            }
    } else {
        for (const char* run : {"a", "b"}) {
            const auto p = synth::default_single_tooth_patient();
            synth::AssemblyInfo info;
            const auto mesh = synth::synth_assembly(p, &info);
            fs::create_directories(root / run);
            harness::persist_results(harness::run_sweep(fem::build_model(mesh), {}, p.patient_id),
                                     (root / run / "kinematics.csv").string());
            analysis::write_biomarkers(analysis::assembly_biomarkers(p.patient_id, mesh, info),
                                       (root / run / "biomarkers.csv").string());
        }
        for (const char* f : {"kinematics.csv", "biomarkers.csv"}) {
            files.push_back(f);
            same = same && slurp(root / "a" / f) == slurp(root / "b" / f);
        }
    }
    fs::remove_all(root);
    std::sort(files.begin(), files.end());
    std::string list;
    for (const auto& f : files) list += (list.empty() ? "" : " ") + f;
    return {same && files.size() >= 2, fmt::format("{} two-run comparison of {} CSVs ({}): {}",
                                                   cli_path.empty() ? "library" : "CLI", files.size(), list,
                                                   same ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<std::string> only;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--cli" && i + 1 < argc) cli_path = argv[++i];
        else only.insert(a);
    }
    const std::vector<Criterion> criteria = {
        {"mesh-metrics", mesh_metrics},       {"patch-test", patch_test},
        {"hyperelastic", hyperelastic},       {"tangent", tangent},
        {"convergence", convergence},         {"sweep-realism", sweep_realism},
        {"fit-quality", fit_quality},         {"monotonicity", monotonicity},
        {"biomarker", biomarker},             {"biomarker-loo", leave_one_out},
        {"rigid-transform", rigid_transform}, {"mirroring", mirroring},
        {"determinism", determinism},
    };
    for (const auto& k : only)
        if (std::none_of(criteria.begin(), criteria.end(), [&](const Criterion& c) { return c.key == k; })) {
            std::cerr << "unknown criterion '" << k << "'\n";
            return 2;
        }
    int failed = 0;
    for (const auto& c : criteria) {
        if (!only.empty() && !only.contains(c.key)) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failed += !o.pass;
        std::cout << (o.pass ? "PASS " : "FAIL ") << c.key << ": " << o.detail << std::endl;
    }
    return failed ? 1 : 0;
}
