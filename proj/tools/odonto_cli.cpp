// odonto: synthetic virtual patients, quasi-static tooth-mobility simulations and the
// square-root / biomarker analysis, driven by one JSON config.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "odonto/analysis.hpp"
#include "odonto/csv.hpp"
#include "odonto/fem.hpp"
#include "odonto/harness.hpp"
#include "odonto/mesh_io.hpp"
#include "odonto/quality.hpp"
#include "odonto/synth.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace odonto;

namespace {

struct Globals {
    std::string config_path;
    std::string out = "odonto_out";
    long long seed = 0;
    int threads = 0;
    bool quiet = false;
};

// Parsed and validated configuration; every section is checked before any work starts.
struct Config {
    json raw = json::object();
    fs::path base_dir = ".";
    std::vector<synth::PatientTemplate> patients;
    std::optional<std::string> model_file;
    fem::ModelOptions model;
    fem::SolverOptions solver;
    harness::SweepSpec sweep;
    harness::ConvergenceOptions convergence;
    harness::SensitivityOptions sensitivity;
    std::vector<harness::ParameterInterval> intervals = harness::default_intervals();
    bool sensitivity_tied = true;
    int simulate_steps = 1;
    bool simulate_vtk = false;
    std::optional<std::string> kinematics, biomarkers, audit_node, audit_ele;
    int audit_bins = 20;
    bool per_patient = false;
    bool tooth_frame = true;
};

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InvalidInput(where + " must be a JSON object");
    for (const auto& [k, v] : j.items())
        if (!allowed.contains(k)) throw InvalidInput("unknown key '" + k + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("bad value for '") + key + "': " + e.what());
    }
}

std::string resolve(const Config& c, const std::string& p) {
    const fs::path path(p);
    return (path.is_absolute() ? path : c.base_dir / path).string();
}

Config load_config(const Globals& g) {
    Config c;
    if (!g.config_path.empty()) {
        std::ifstream in(g.config_path);
        if (!in) throw InvalidInput("cannot open config '" + g.config_path + "'");
        try {
            c.raw = json::parse(in);
        } catch (const json::parse_error& e) {
            throw ParseError("config '" + g.config_path + "': " + e.what());
        }
        c.base_dir = fs::path(g.config_path).parent_path();
        if (c.base_dir.empty()) c.base_dir = ".";
    }
    const json& j = c.raw;
    check_keys(j, {"patient", "family", "model_file", "model", "solver", "simulate", "sweep", "convergence",
                   "sensitivity", "analysis", "audit"},
               "config");

    synth::PatientTemplate base = synth::default_single_tooth_patient();
    if (j.contains("patient")) base = synth::patient_from_json(j["patient"]);
    if (j.contains("family")) {
        const auto& f = j["family"];
        if (f.is_boolean()) {
            c.patients = f.get<bool>() ? synth::patient_family(base, synth::default_family_rules())
                                       : std::vector{base};
        } else {
            c.patients = synth::patient_family(base, synth::family_rules_from_json(f));
        }
    } else {
        c.patients = {base};
    }
    std::set<std::string> ids;
    for (const auto& p : c.patients)
        if (!ids.insert(p.patient_id).second) throw InvalidInput("duplicate patient id '" + p.patient_id + "'");

    if (j.contains("model_file")) c.model_file = resolve(c, j["model_file"].get<std::string>());
    if (j.contains("model")) {
        check_keys(j["model"], {"materials", "loads", "ties"}, "model");
        c.model = fem::model_options_from_json(j["model"]);
    }
    if (j.contains("solver")) c.solver = harness::solver_options_from_json(j["solver"]);
    if (j.contains("simulate")) {
        check_keys(j["simulate"], {"steps", "vtk"}, "simulate");
        read(j["simulate"], "steps", c.simulate_steps);
        read(j["simulate"], "vtk", c.simulate_vtk);
        if (c.simulate_steps < 1) throw InvalidInput("simulate.steps must be >= 1");
    }
    if (j.contains("sweep")) c.sweep = harness::sweep_spec_from_json(j["sweep"]);
    if (j.contains("convergence")) c.convergence = harness::convergence_options_from_json(j["convergence"]);
    if (j.contains("sensitivity")) {
        const auto& s = j["sensitivity"];
        check_keys(s, {"tooth", "load", "tied", "parameters"}, "sensitivity");
        read(s, "tooth", c.sensitivity.tooth);
        read(s, "load", c.sensitivity.load);
        read(s, "tied", c.sensitivity_tied);
        if (!(c.sensitivity.load > 0.0)) throw InvalidInput("sensitivity.load must be positive");
        if (s.contains("parameters")) c.intervals = harness::intervals_from_json(s["parameters"]);
    }
    if (j.contains("analysis")) {
        const auto& a = j["analysis"];
        check_keys(a, {"kinematics", "biomarkers", "per_patient", "bbox_frame"}, "analysis");
        if (a.contains("kinematics")) c.kinematics = resolve(c, a["kinematics"].get<std::string>());
        if (a.contains("biomarkers")) c.biomarkers = resolve(c, a["biomarkers"].get<std::string>());
        read(a, "per_patient", c.per_patient);
        std::string frame = "tooth";
        read(a, "bbox_frame", frame);
        if (frame != "tooth" && frame != "global") throw InvalidInput("analysis.bbox_frame must be 'tooth' or 'global'");
        c.tooth_frame = frame == "tooth";
    }
    if (j.contains("audit")) {
        const auto& a = j["audit"];
        check_keys(a, {"node", "ele", "bins"}, "audit");
        if (a.contains("node")) c.audit_node = resolve(c, a["node"].get<std::string>());
        if (a.contains("ele")) c.audit_ele = resolve(c, a["ele"].get<std::string>());
        read(a, "bins", c.audit_bins);
        if (c.audit_bins < 1) throw InvalidInput("audit.bins must be >= 1");
    }
    c.convergence.model = c.model;
    c.convergence.solver = c.solver;
    c.sensitivity.model = c.model;
    c.sensitivity.solver = c.solver;
    return c;
}

class Runner {
public:
    Runner(const Globals& g, Config c) : g_(g), c_(std::move(c)) {
        c_.convergence.threads = c_.sensitivity.threads = g_.threads;
    }

    void log(const std::string& msg) const {
        if (!g_.quiet) std::cerr << msg << '\n';
    }

    fs::path out(const std::string& name) const { return fs::path(g_.out) / name; }

    void ensure_out() const {
        std::error_code ec;
        fs::create_directories(g_.out, ec);
        if (ec || !fs::is_directory(g_.out)) throw InvalidInput("cannot create output directory '" + g_.out + "'");
    }

    void synth() {
        ensure_out();
        for (const auto& p : c_.patients) {
            log("synthesising " + p.patient_id);
            synth::AssemblyInfo info;
            const auto mesh = synth::synth_assembly(p, &info);
            const std::string stem = out(p.patient_id).string();
            mesh::save_tetgen(mesh, stem + ".node", stem + ".ele");
            mesh::save_boundary_sets(mesh, stem + ".sets.json");
            write_json(synth::assembly_info_to_json(info), stem + ".info.json");
            write_json(synth::patient_to_json(p), stem + ".patient.json");
            json model = {{"mesh",
                           {{"node", p.patient_id + ".node"},
                            {"ele", p.patient_id + ".ele"},
                            {"sets", p.patient_id + ".sets.json"}}}};
            write_json(model, stem + ".model.json");
            log(fmt::format("  {} nodes, {} elements", mesh.nodes.size(), mesh.elements.size()));
        }
    }

    void audit(const std::optional<std::string>& node, const std::optional<std::string>& ele, int bins) {
        const auto n = node ? node : c_.audit_node;
        const auto e = ele ? ele : c_.audit_ele;
        if (bins <= 0) bins = c_.audit_bins;
        mesh::TetMesh m;
        if (n || e) {
            if (!n || !e) throw InvalidInput("mesh-audit needs both a .node and an .ele file");
            m = mesh::load_tetgen(*n, *e);
        } else {
            log("auditing synthesised mesh of " + c_.patients.front().patient_id);
            m = synth::synth_assembly(c_.patients.front());
        }
        ensure_out();
        std::vector<mesh::QualityHistogram> hists;
        for (auto metric : mesh::kAllMetrics) hists.push_back(mesh::quality_histogram(m, metric, bins));
        std::ofstream hr(out("quality_histogram.csv"), std::ios::binary), rr(out("quality_report.csv"), std::ios::binary);
        if (!hr || !rr) throw InvalidInput("cannot write quality files in '" + g_.out + "'");
        mesh::write_histogram_csv(hr, hists);
        mesh::write_report_csv(rr, mesh::quality_report(m));
    }

    void simulate(bool vtk) {
        const auto [model, name] = first_model();
        log("solving " + name);
        const auto states = fem::solve_quasistatic(model, c_.simulate_steps, c_.solver);
        ensure_out();
        std::vector<harness::ToothKinematics> recs;
        for (std::size_t i = 0; i < states.size(); ++i)
            for (const auto& b : model.bodies()) {
                const auto tr = fem::extract_rigid_transform(model, states[i], b.unn);
                harness::ToothKinematics r;
                r.patient_id = name;
                r.tooth_unn = b.unn;
                r.step = static_cast<int>(i) + 1;
                r.load_factor = states[i].load_factor;
                r.load = c_.model.force * r.load_factor;
                r.converged = true;
                r.translation = tr.translation;
                r.t_mag = tr.translation.norm();
                r.theta_deg = tr.angle_deg;
                r.axis = tr.axis;
                recs.push_back(r);
            }
        harness::persist_results(recs, out("kinematics.csv").string());

        const auto& s = states.back();
        std::ofstream vm(out("von_mises.csv"), std::ios::binary);
        if (!vm) throw InvalidInput("cannot write von_mises.csv");
        vm << "element,domain,von_mises\n";
        for (std::size_t e = 0; e < model.mesh.elements.size(); ++e) {
            const auto& d = model.mesh.domain_of_element[e];
            if (std::holds_alternative<fem::Rigid>(model.material(d))) continue;
            vm << e << ',' << d.code() << ','
               << csv::num(fem::von_mises(fem::element_stress(model, s, static_cast<int>(e)))) << '\n';
        }
        const Vec3 r = fem::reaction_force(model, s);
        log(fmt::format("reaction at the fixed boundary: ({:.6g}, {:.6g}, {:.6g}) N", r.x(), r.y(), r.z()));
        if (vtk || c_.simulate_vtk) fem::write_vtk(model, s, out("result.vtk").string());
    }

    void sweep() {
        std::vector<harness::ToothKinematics> recs;
        std::vector<analysis::BiomarkerRecord> bios;
        if (c_.model_file) {
            const auto model = fem::model_from_json(load_json(*c_.model_file), fs::path(*c_.model_file).parent_path().string());
            log("sweeping " + *c_.model_file);
            recs = harness::run_sweep(model, c_.sweep, fs::path(*c_.model_file).stem().string(), c_.solver, g_.threads);
        } else {
            const int n = static_cast<int>(c_.patients.size());
            std::vector<std::vector<harness::ToothKinematics>> per(n);
            std::vector<std::vector<analysis::BiomarkerRecord>> pb(n);
            const int outer = std::min(g_.threads, n);
            harness::parallel_for(n, outer, [&](int i) {
                const auto& p = c_.patients[i];
                log("sweeping " + p.patient_id);
                synth::AssemblyInfo info;
                const auto mesh = synth::synth_assembly(p, &info);
                const auto model = fem::build_model(mesh, c_.model);
                per[i] = harness::run_sweep(model, c_.sweep, p.patient_id, c_.solver, std::max(1, g_.threads / outer));
                pb[i] = analysis::assembly_biomarkers(p.patient_id, mesh, info, c_.tooth_frame);
            });
            for (int i = 0; i < n; ++i) {
                recs.insert(recs.end(), per[i].begin(), per[i].end());
                bios.insert(bios.end(), pb[i].begin(), pb[i].end());
            }
        }
        ensure_out();
        harness::persist_results(recs, out("kinematics.csv").string());
        if (!bios.empty()) analysis::write_biomarkers(bios, out("biomarkers.csv").string());
        int missing = 0;
        for (const auto& r : recs) missing += !r.converged;
        if (missing) log(fmt::format("{} load levels did not converge (NaN rows)", missing));
    }

    void converge() {
        const auto& p = c_.patients.front();
        log("convergence study on " + p.patient_id);
        const auto rep = harness::convergence_study(p, c_.convergence);
        ensure_out();
        harness::write_convergence(rep, out("convergence.csv").string());
        for (const auto& l : rep.levels)
            log(fmt::format("  level {}: {} elements, max VM {:.6g} MPa, rel diff {:.4g}", l.level, l.n_elements,
                            l.max_vm, l.rel_diff));
        if (!rep.converged) log("stress did not converge within the configured levels");
    }

    void sensitivity() {
        mesh::TetMesh mesh;
        if (c_.model_file) {
            const json mj = load_json(*c_.model_file);
            mesh = fem::model_from_json(mj, fs::path(*c_.model_file).parent_path().string()).mesh;
        } else {
            auto p = c_.patients.front();
            p.tied_pdl_bone = c_.sensitivity_tied;
            log("sensitivity study on " + p.patient_id);
            mesh = synth::synth_assembly(p);
        }
        const auto rows = harness::sensitivity_study(mesh, c_.intervals, c_.sensitivity);
        ensure_out();
        harness::write_sensitivity(rows, out("sensitivity.csv").string());
    }

    void fit(bool report, const std::optional<std::string>& kin_arg, const std::optional<std::string>& bio_arg) {
        const std::string kin_path = kin_arg ? *kin_arg : c_.kinematics ? *c_.kinematics : out("kinematics.csv").string();
        std::optional<std::string> bio_path = bio_arg ? bio_arg : c_.biomarkers;
        if (!bio_path && fs::exists(out("biomarkers.csv"))) bio_path = out("biomarkers.csv").string();
        if (!fs::exists(kin_path)) throw InvalidInput("kinematics file '" + kin_path + "' not found");

        const auto recs = harness::read_results(kin_path);
        const auto fits = analysis::fit_kinematics(recs);
        std::vector<analysis::BiomarkerRecord> bios;
        std::map<std::string, analysis::BiomarkerFit> bfits;
        if (bio_path) {
            bios = analysis::read_biomarkers(*bio_path);
            fill_root_volumes(bios, fs::path(*bio_path).parent_path());
            // A biomarker line needs two teeth with distinct alphas per group; fewer is not an error here.
            try {
                bfits = analysis::fit_biomarkers(bios, fits, c_.per_patient);
            } catch (const InvalidInput& e) {
                log(std::string("biomarker fit skipped: ") + e.what());
            }
        }
        ensure_out();
        analysis::write_fits(fits, out("fits.csv").string());
        if (!bfits.empty()) analysis::write_biomarker_fit(bfits, out("biomarker_fit.csv").string());
        if (report) analysis::write_plot_data(recs, fits, bios, bfits, g_.out);
    }

private:
    Globals g_;
    Config c_;

    static json load_json(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InvalidInput("cannot open '" + path + "'");
        try {
            return json::parse(in);
        } catch (const json::parse_error& e) {
            throw ParseError("'" + path + "': " + e.what());
        }
    }

    static void write_json(const json& j, const std::string& path) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw InvalidInput("cannot write '" + path + "'");
        out << j.dump(2) << '\n';
    }

    std::pair<fem::FEModel, std::string> first_model() const {
        if (c_.model_file) {
            json mj = load_json(*c_.model_file);
            return {fem::model_from_json(mj, fs::path(*c_.model_file).parent_path().string()),
                    fs::path(*c_.model_file).stem().string()};
        }
        const auto& p = c_.patients.front();
        return {fem::build_model(synth::synth_assembly(p), c_.model), p.patient_id};
    }

    // Root volumes missing from the biomarker CSV come from synthesised meshes next to it.
    void fill_root_volumes(std::vector<analysis::BiomarkerRecord>& bios, const fs::path& dir) const {
        std::map<std::string, std::pair<mesh::TetMesh, synth::AssemblyInfo>> cache;
        for (auto& b : bios) {
            if (b.root_volume > 0.0) continue;
            auto it = cache.find(b.patient_id);
            if (it == cache.end()) {
                const fs::path stem = dir / b.patient_id;
                const auto node = stem.string() + ".node", ele = stem.string() + ".ele", info = stem.string() + ".info.json";
                if (!fs::exists(node) || !fs::exists(ele))
                    throw InvalidInput("no root volume for " + b.patient_id + " and no mesh at '" + stem.string() + ".node'");
                synth::AssemblyInfo ai;
                if (fs::exists(info)) ai = synth::assembly_info_from_json(load_json(info));
                it = cache.emplace(b.patient_id, std::pair{mesh::load_tetgen(node, ele), ai}).first;
            }
            std::optional<synth::Frame> frame;
            if (c_.tooth_frame)
                for (const auto& t : it->second.second.teeth)
                    if (t.unn == b.tooth_unn) frame = t.frame;
            b = analysis::compute_biomarker(b.patient_id, b.tooth_unn, b.crown_height, it->second.first, frame);
        }
    }
};

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (requested < 0) throw InvalidInput("--threads must be positive");
    if (const char* env = std::getenv("ODONTO_THREADS")) {
        try {
            const int t = std::stoi(env);
            if (t > 0) return t;
        } catch (const std::exception&) {
        }
        throw InvalidInput(std::string("ODONTO_THREADS must be a positive integer, got '") + env + "'");
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Tooth-mobility simulation pipeline: virtual patients, FE load sweeps, convergence and "
                 "sensitivity studies, square-root and biomarker fits.\n"
                 "Exit codes: 0 success, 1 solver non-convergence, 2 invalid input or config, 3 internal error."};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config_path, "JSON config file (schema in README)")->check(CLI::ExistingFile);
    app.add_option("--out", g.out, "Output directory")->capture_default_str();
    app.add_option("--seed", g.seed, "Seed; every step is deterministic, the value is validated and accepted")
        ->capture_default_str()
        ->check(CLI::NonNegativeNumber);
    app.add_option("--threads", g.threads, "Worker threads for independent solves (fallback: ODONTO_THREADS, then 1)");
    app.add_flag("--quiet", g.quiet, "Suppress progress messages");

    auto* synth = app.add_subcommand("synth", "Generate virtual-patient meshes (.node/.ele, sets, model JSON)");
    auto* audit = app.add_subcommand("mesh-audit", "Element quality report and 4-metric histograms");
    std::optional<std::string> node, ele;
    int bins = 0;
    audit->add_option("--node", node, "TetGen .node file")->check(CLI::ExistingFile);
    audit->add_option("--ele", ele, "TetGen .ele file")->check(CLI::ExistingFile);
    audit->add_option("--bins", bins, "Histogram bins (default 20)");
    auto* simulate = app.add_subcommand("simulate", "Single quasi-static solve: kinematics, von Mises field");
    bool vtk = false;
    simulate->add_flag("--vtk", vtk, "Also write result.vtk");
    auto* sweep = app.add_subcommand("sweep", "Load sweep per patient (kinematics.csv, biomarkers.csv)");
    auto* converge = app.add_subcommand("converge", "Mesh-convergence study (convergence.csv)");
    auto* sens = app.add_subcommand("sensitivity", "Parameter sensitivity of the bone stress (sensitivity.csv)");
    std::optional<std::string> kin, bio;
    auto* fit = app.add_subcommand("fit", "Square-root and biomarker fits (fits.csv, biomarker_fit.csv)");
    auto* report = app.add_subcommand("report", "Fits plus long-format plot data");
    for (auto* sc : {fit, report}) {
        sc->add_option("--kinematics", kin, "Kinematics CSV (default <out>/kinematics.csv)")->check(CLI::ExistingFile);
        sc->add_option("--biomarkers", bio, "Biomarker CSV (default <out>/biomarkers.csv when present)")
            ->check(CLI::ExistingFile);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        g.threads = resolve_threads(g.threads);
        Runner run(g, load_config(g));
        if (*synth) run.synth();
        else if (*audit) run.audit(node, ele, bins);
        else if (*simulate) run.simulate(vtk);
        else if (*sweep) run.sweep();
        else if (*converge) run.converge();
        else if (*sens) run.sensitivity();
        else if (*fit) run.fit(false, kin, bio);
        else if (*report) run.fit(true, kin, bio);
    } catch (const ConvergenceError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
