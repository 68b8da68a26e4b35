#include "odonto/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <set>
#include <thread>
#include <tuple>

#include "json_util.hpp"
#include "odonto/csv.hpp"

namespace odonto::harness {

using jsonutil::check_keys;
using jsonutil::json;
using jsonutil::read;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

ToothKinematics missing(const std::string& patient, int unn, int step, double load, double factor) {
    ToothKinematics r;
    r.patient_id = patient;
    r.tooth_unn = unn;
    r.step = step;
    r.load = load;
    r.load_factor = factor;
    r.converged = false;
    r.translation = Vec3::Constant(kNaN);
    r.t_mag = r.theta_deg = kNaN;
    r.axis = Vec3::Constant(kNaN);
    return r;
}

ToothKinematics record(const fem::FEModel& model, const fem::FEState& s, const std::string& patient, int unn, int step,
                       double load) {
    const auto tr = fem::extract_rigid_transform(model, s, unn);
    ToothKinematics r;
    r.patient_id = patient;
    r.tooth_unn = unn;
    r.step = step;
    r.load = load;
    r.load_factor = s.load_factor;
    r.converged = true;
    r.translation = tr.translation;
    r.t_mag = tr.translation.norm();
    r.theta_deg = tr.angle_deg;
    r.axis = tr.axis;
    return r;
}

// Copy of `model` with only the listed teeth loaded, each with `force` at load factor 1.
fem::FEModel with_loads(const fem::FEModel& model, const std::vector<int>& teeth, double force) {
    fem::FEModel m = model;
    m.loads.clear();
    for (const auto& l : model.loads)
        if (std::find(teeth.begin(), teeth.end(), l.tooth_unn) != teeth.end()) {
            m.loads.push_back(l);
            m.loads.back().force = force;
        }
    m.finalize();
    return m;
}

double clean(double x) { return std::round(x * 1e12) / 1e12; }

int first_loaded_tooth(const mesh::TetMesh& mesh) {
    for (const auto& [name, set] : mesh.boundary_sets)
        if (name.rfind("load_patch_", 0) == 0) return std::stoi(name.substr(11));
    throw InvalidInput("mesh has no load patch");
}

void open_out(std::ofstream& out, const std::string& path) {
    out.open(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
}

}  // namespace

void SweepSpec::validate() const {
    if (!(load_min > 0.0) || !(load_max >= load_min) || !std::isfinite(load_max))
        throw InvalidInput("sweep: need 0 < load_min <= load_max");
    if (!(load_step > 0.0)) throw InvalidInput("sweep: load_step must be positive");
    for (int k : teeth)
        if (k < 17 || k > 32) throw InvalidInput("sweep: tooth " + std::to_string(k) + " outside UNN 17-32");
}

std::vector<double> SweepSpec::loads() const {
    validate();
    const int n = static_cast<int>(std::floor((load_max - load_min) / load_step + 1e-9));
    std::vector<double> out;
    for (int i = 0; i <= n; ++i) out.push_back(clean(load_min + i * load_step));
    return out;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    threads = std::clamp(threads, 1, std::max(1, n));
    std::vector<std::exception_ptr> errors(std::max(n, 0));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                break;
            }
        }
    } else {
        std::atomic<int> next{0};
        std::atomic<bool> failed{false};
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (int i = next++; i < n && !failed; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                        failed = true;
                    }
                }
            });
        for (auto& th : pool) th.join();
    }
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::vector<ToothKinematics> run_sweep(const fem::FEModel& model, const SweepSpec& spec, const std::string& patient_id,
                                       const fem::SolverOptions& solver, int threads) {
    const auto loads = spec.loads();
    std::vector<int> teeth = spec.teeth;
    std::set<int> available;
    for (const auto& l : model.loads)
        if (l.tooth_unn > 0) available.insert(l.tooth_unn);
    if (teeth.empty()) teeth.assign(available.begin(), available.end());
    std::sort(teeth.begin(), teeth.end());
    teeth.erase(std::unique(teeth.begin(), teeth.end()), teeth.end());
    for (int k : teeth)
        if (!available.contains(k)) throw InvalidInput("model has no load on tooth " + std::to_string(k));

    std::vector<double> factors;
    for (double l : loads) factors.push_back(l / spec.load_max);

    auto collect = [&](const fem::FEModel& m, const std::vector<std::optional<fem::FEState>>& states,
                       const std::vector<int>& recorded, std::vector<ToothKinematics>& out) {
        for (int k : recorded)
            for (std::size_t i = 0; i < loads.size(); ++i) {
                const int step = static_cast<int>(i) + 1;
                if (states[i]) out.push_back(record(m, *states[i], patient_id, k, step, loads[i]));
                else out.push_back(missing(patient_id, k, step, loads[i], factors[i]));
            }
    };

    std::vector<ToothKinematics> out;
    if (spec.simultaneous) {
        const fem::FEModel m = with_loads(model, teeth, spec.load_max);
        collect(m, fem::solve_path(m, factors, solver), teeth, out);
        return out;
    }
    std::vector<std::vector<ToothKinematics>> per(teeth.size());
    parallel_for(static_cast<int>(teeth.size()), threads, [&](int i) {
        const fem::FEModel m = with_loads(model, {teeth[i]}, spec.load_max);
        collect(m, fem::solve_path(m, factors, solver), {teeth[i]}, per[i]);
    });
    for (auto& p : per) out.insert(out.end(), p.begin(), p.end());
    return out;
}

double socket_stress_probe(const fem::FEModel& model, const fem::FEState& state, int unn) {
    const auto& mesh = model.mesh;
    std::string name = synth::bone_socket_set(unn);
    if (!mesh.boundary_sets.contains(name)) name = synth::pdl_bone_set(unn);
    if (!mesh.boundary_sets.contains(name)) throw InvalidInput("no socket set for tooth " + std::to_string(unn));
    std::vector<char> on(mesh.nodes.size(), 0);
    for (int v : mesh.set_nodes(name)) on[v] = 1;
    double best = 0.0;
    for (int e : mesh.elements_of_kind(mesh::DomainKind::Bone)) {
        const auto& el = mesh.elements[e];
        if (on[el[0]] || on[el[1]] || on[el[2]] || on[el[3]])
            best = std::max(best, fem::von_mises(fem::element_stress(model, state, e)));
    }
    return best;
}

ConvergenceReport convergence_study(const synth::PatientTemplate& patient, const ConvergenceOptions& opts) {
    if (!(opts.refinement_factor > 1.0)) throw InvalidInput("refinement factor must exceed 1");
    if (!(opts.stress_tol > 0.0)) throw InvalidInput("stress tolerance must be positive");
    if (opts.max_levels < 2 || opts.min_levels > opts.max_levels)
        throw InvalidInput("need 2 <= max_levels and min_levels <= max_levels");
    patient.validate();
    const int unn = opts.tooth ? patient.tooth(opts.tooth).unn : patient.teeth.at(0).unn;

    auto solve_level = [&](int i) {
        synth::PatientTemplate p = patient;
        p.refinement_factor = opts.refinement_factor;
        p.refinement_level = patient.refinement_level + i;
        const auto mesh = synth::synth_assembly(p);
        fem::ModelOptions mo = opts.model;
        mo.loaded = {unn};
        mo.force = opts.load;
        const auto model = fem::build_model(mesh, mo);
        const auto state = fem::solve_quasistatic(model, 1, opts.solver).back();
        ConvergenceLevel lv;
        lv.level = p.refinement_level;
        lv.n_elements = mesh.elements.size();
        lv.max_vm = socket_stress_probe(model, state, unn);
        const auto tr = fem::extract_rigid_transform(model, state, unn);
        lv.t_mag = tr.translation.norm();
        lv.theta_deg = tr.angle_deg;
        return lv;
    };

    ConvergenceReport rep;
    const int first = std::max(opts.min_levels, 1);
    rep.levels.resize(first);
    parallel_for(first, opts.threads, [&](int i) { rep.levels[i] = solve_level(i); });
    auto rel = [&](int i) {
        const double a = rep.levels[i].max_vm, b = rep.levels[i - 1].max_vm;
        return std::abs(a - b) / a;
    };
    rep.levels[0].rel_diff = kNaN;
    for (int i = 1; i < first; ++i) rep.levels[i].rel_diff = rel(i);
    for (int i = first; i < opts.max_levels; ++i) {
        if (i >= 2 && rep.levels[i - 1].rel_diff < opts.stress_tol) break;
        rep.levels.push_back(solve_level(i));
        rep.levels[i].rel_diff = rel(i);
    }
    rep.converged = rep.levels.size() >= 2 && rep.levels.back().rel_diff < opts.stress_tol;
    return rep;
}

double richardson_limit(double coarse, double medium, double fine) {
    const double d1 = medium - coarse, d2 = fine - medium;
    if (d2 == 0.0) return fine;
    const double r = d1 / d2;  // = ratio^p for a converging sequence
    if (!(r > 1.0)) throw InvalidInput("sequence is not contracting; no extrapolated limit");
    return fine + d2 / (r - 1.0);
}

std::vector<ParameterInterval> default_intervals() {
    return {{"pdl_E", 0.044, 0.0938},       {"pdl_nu", 0.45, 0.49},         {"bone_E", 1200.0, 13700.0},
            {"bone_nu", 0.2, 0.4},          {"penalty_factor", 0.25, 1.75}, {"aug_tol", 0.1, 0.2}};
}

namespace {

fem::ModelOptions with_parameter(const fem::ModelOptions& base, const std::string& name, double v) {
    fem::ModelOptions o = base;
    const auto* pdl = std::get_if<fem::MooneyRivlin>(&base.pdl);
    const auto* bone = std::get_if<fem::IsotropicElastic>(&base.bone);
    if (name == "pdl_E" || name == "pdl_nu") {
        if (!pdl) throw InvalidInput("PDL parameters need a Mooney-Rivlin PDL");
        const double mu = 2.0 * (pdl->c1 + pdl->c2), K = pdl->k;
        const double E = pdl->young(), nu = (3.0 * K - 2.0 * mu) / (2.0 * (3.0 * K + mu));
        if (!(v > 0.0) || (name == "pdl_nu" && !(v < 0.5)))
            throw InvalidInput("sensitivity: " + name + " value " + std::to_string(v) + " out of range");
        o.pdl = name == "pdl_E" ? fem::MooneyRivlin::from_young(v, nu) : fem::MooneyRivlin::from_young(E, v);
    } else if (name == "bone_E" || name == "bone_nu") {
        if (!bone) throw InvalidInput("bone parameters need an isotropic elastic bone");
        fem::IsotropicElastic b = *bone;
        (name == "bone_E" ? b.E : b.nu) = v;
        b.validate();
        o.bone = b;
    } else if (name == "penalty_factor") {
        if (!(v > 0.0)) throw InvalidInput("sensitivity: penalty factor must be positive");
        o.penalty_factor = v;
    } else if (name == "aug_tol") {
        if (!(v > 0.0)) throw InvalidInput("sensitivity: augmentation tolerance must be positive");
        o.aug_rel_tol = v;
    } else {
        throw InvalidInput("unknown sensitivity parameter '" + name + "'");
    }
    return o;
}

}  // namespace

std::vector<SensitivityRow> sensitivity_study(const mesh::TetMesh& mesh, const std::vector<ParameterInterval>& intervals,
                                              const SensitivityOptions& opts) {
    const int unn = opts.tooth ? opts.tooth : first_loaded_tooth(mesh);
    fem::ModelOptions base = opts.model;
    base.loaded = {unn};
    base.force = opts.load;

    // Case 0 is the reference; then (lo, hi) per interval. All inputs are checked before solving.
    std::vector<fem::ModelOptions> cases{base};
    for (const auto& iv : intervals) {
        if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi)) throw InvalidInput("sensitivity: non-finite interval");
        cases.push_back(with_parameter(base, iv.name, iv.lo));
        cases.push_back(with_parameter(base, iv.name, iv.hi));
    }
    std::vector<double> vm(cases.size());
    parallel_for(static_cast<int>(cases.size()), opts.threads, [&](int i) {
        const auto model = fem::build_model(mesh, cases[i]);
        const auto state = fem::solve_quasistatic(model, 1, opts.solver).back();
        vm[i] = socket_stress_probe(model, state, unn);
    });

    std::vector<SensitivityRow> rows;
    for (std::size_t k = 0; k < intervals.size(); ++k) {
        SensitivityRow r;
        r.parameter = intervals[k].name;
        r.lo = intervals[k].lo;
        r.hi = intervals[k].hi;
        r.vm_ref = vm[0];
        r.vm_lo = vm[1 + 2 * k];
        r.vm_hi = vm[2 + 2 * k];
        r.rel_diff_pct = 100.0 * std::abs(r.vm_lo - r.vm_hi) / r.vm_ref;
        rows.push_back(r);
    }
    return rows;
}

// --------------------------------------------------------------------- files

void persist_results(std::vector<ToothKinematics> records, const std::string& path) {
    std::stable_sort(records.begin(), records.end(), [](const ToothKinematics& a, const ToothKinematics& b) {
        return std::tie(a.patient_id, a.tooth_unn, a.load, a.step) < std::tie(b.patient_id, b.tooth_unn, b.load, b.step);
    });
    std::ofstream out;
    open_out(out, path);
    out << "patient,step,load_n,load_factor,tooth_unn,tx,ty,tz,t_mag_mm,theta_deg,nx,ny,nz\n";
    using csv::num;
    for (const auto& r : records)
        out << r.patient_id << ',' << r.step << ',' << num(r.load) << ',' << num(r.load_factor) << ',' << r.tooth_unn
            << ',' << num(r.translation.x()) << ',' << num(r.translation.y()) << ',' << num(r.translation.z()) << ','
            << num(r.t_mag) << ',' << num(r.theta_deg) << ',' << num(r.axis.x()) << ',' << num(r.axis.y()) << ','
            << num(r.axis.z()) << '\n';
    if (!out) throw InvalidInput("write failed for '" + path + "'");
}

std::vector<ToothKinematics> read_results(const std::string& path) {
    const auto t = csv::read_file(path);
    const int cp = t.column("patient"), cs = t.column("step"), cl = t.column("load_n");
    const int clf = t.require("load_factor"), ck = t.require("tooth_unn");
    const int c[9] = {t.require("tx"),        t.require("ty"), t.require("tz"), t.require("t_mag_mm"),
                      t.require("theta_deg"), t.require("nx"), t.require("ny"), t.require("nz"), 0};
    std::vector<ToothKinematics> out;
    for (const auto& row : t.rows) {
        ToothKinematics r;
        r.patient_id = cp >= 0 ? row[cp] : "patient";
        r.step = cs >= 0 ? csv::to_int(row[cs]) : 0;
        r.load_factor = csv::to_double(row[clf]);
        r.load = cl >= 0 ? csv::to_double(row[cl]) : r.load_factor;
        r.tooth_unn = csv::to_int(row[ck]);
        r.translation = {csv::to_double(row[c[0]]), csv::to_double(row[c[1]]), csv::to_double(row[c[2]])};
        r.t_mag = csv::to_double(row[c[3]]);
        r.theta_deg = csv::to_double(row[c[4]]);
        r.axis = {csv::to_double(row[c[5]]), csv::to_double(row[c[6]]), csv::to_double(row[c[7]])};
        r.converged = std::isfinite(r.t_mag) && std::isfinite(r.theta_deg);
        out.push_back(r);
    }
    return out;
}

void write_convergence(const ConvergenceReport& report, const std::string& path) {
    std::ofstream out;
    open_out(out, path);
    out << "level,n_elements,max_vm,rel_diff\n";
    for (const auto& l : report.levels)
        out << l.level << ',' << l.n_elements << ',' << csv::num(l.max_vm) << ',' << csv::num(l.rel_diff) << '\n';
    if (!out) throw InvalidInput("write failed for '" + path + "'");
}

void write_sensitivity(const std::vector<SensitivityRow>& rows, const std::string& path) {
    std::ofstream out;
    open_out(out, path);
    out << "parameter,lo,hi,rel_diff_pct\n";
    for (const auto& r : rows)
        out << r.parameter << ',' << csv::num(r.lo) << ',' << csv::num(r.hi) << ',' << csv::num(r.rel_diff_pct) << '\n';
    if (!out) throw InvalidInput("write failed for '" + path + "'");
}

SweepSpec sweep_spec_from_json(const json& j) {
    check_keys(j, {"load_min", "load_max", "load_step", "teeth", "simultaneous"}, "sweep");
    SweepSpec s;
    read(j, "load_min", s.load_min);
    read(j, "load_max", s.load_max);
    read(j, "load_step", s.load_step);
    read(j, "teeth", s.teeth);
    read(j, "simultaneous", s.simultaneous);
    s.validate();
    return s;
}

fem::SolverOptions solver_options_from_json(const json& j) {
    check_keys(j, {"newton_tol", "max_iters", "max_bisections", "refactor_ratio"}, "solver");
    fem::SolverOptions o;
    read(j, "newton_tol", o.newton_tol);
    read(j, "max_iters", o.max_iters);
    read(j, "max_bisections", o.max_bisections);
    read(j, "refactor_ratio", o.refactor_ratio);
    if (!(o.newton_tol > 0.0) || o.max_iters < 1 || o.max_bisections < 0 || !(o.refactor_ratio >= 0.0))
        throw InvalidInput("solver: need newton_tol > 0, max_iters >= 1, max_bisections >= 0, refactor_ratio >= 0");
    return o;
}

ConvergenceOptions convergence_options_from_json(const json& j) {
    check_keys(j, {"refinement_factor", "stress_tol", "max_levels", "min_levels", "tooth", "load"}, "convergence");
    ConvergenceOptions o;
    read(j, "refinement_factor", o.refinement_factor);
    read(j, "stress_tol", o.stress_tol);
    read(j, "max_levels", o.max_levels);
    read(j, "min_levels", o.min_levels);
    read(j, "tooth", o.tooth);
    read(j, "load", o.load);
    if (!(o.refinement_factor > 1.0) || !(o.stress_tol > 0.0) || o.max_levels < 2 || o.min_levels > o.max_levels ||
        !(o.load > 0.0))
        throw InvalidInput("convergence: need refinement_factor > 1, stress_tol > 0, 2 <= max_levels, "
                           "min_levels <= max_levels, load > 0");
    return o;
}

std::vector<ParameterInterval> intervals_from_json(const json& j) {
    if (!j.is_array()) throw InvalidInput("sensitivity.parameters must be an array");
    std::vector<ParameterInterval> out;
    for (const auto& e : j) {
        check_keys(e, {"name", "lo", "hi"}, "sensitivity parameter");
        ParameterInterval p;
        read(e, "name", p.name);
        read(e, "lo", p.lo);
        read(e, "hi", p.hi);
        with_parameter({}, p.name, p.lo);  // validates name and range
        with_parameter({}, p.name, p.hi);
        out.push_back(p);
    }
    return out;
}

}  // namespace odonto::harness
