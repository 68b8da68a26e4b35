// Python bindings: meshes and quality metrics, virtual patients, load sweeps and the fits.
// Structured options travel as JSON text; the package wrapper converts dicts.

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "odonto/analysis.hpp"
#include "odonto/fem.hpp"
#include "odonto/harness.hpp"
#include "odonto/mesh_io.hpp"
#include "odonto/quality.hpp"
#include "odonto/synth.hpp"

namespace py = pybind11;
using namespace odonto;
using nlohmann::json;

namespace {

using RowMat3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using RowMat4i = Eigen::Matrix<int, Eigen::Dynamic, 4, Eigen::RowMajor>;

json parse(const std::string& s) {
    try {
        return s.empty() ? json::object() : json::parse(s);
    } catch (const json::parse_error& e) {
        throw ParseError(e.what());
    }
}

mesh::TetPoints tet_points(const RowMat3& p) {
    if (p.rows() != 4) throw InvalidInput("a tetrahedron needs 4 points");
    return {p.row(0).transpose(), p.row(1).transpose(), p.row(2).transpose(), p.row(3).transpose()};
}

py::dict kinematics_dict(const harness::ToothKinematics& r) {
    py::dict d;
    d["patient"] = r.patient_id;
    d["tooth_unn"] = r.tooth_unn;
    d["step"] = r.step;
    d["load"] = r.load;
    d["load_factor"] = r.load_factor;
    d["converged"] = r.converged;
    d["translation"] = r.translation;
    d["t_mag"] = r.t_mag;
    d["theta_deg"] = r.theta_deg;
    d["axis"] = r.axis;
    return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Tooth-mobility simulation core";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ParseError>(m, "ParseError", base.ptr());
    py::register_exception<InvalidInput>(m, "InvalidInput", base.ptr());
    py::register_exception<ElementInversion>(m, "ElementInversion", base.ptr());
    py::register_exception<ConvergenceError>(m, "ConvergenceError", base.ptr());

    // ---------------------------------------------------------------- meshes
    py::class_<mesh::TetMesh>(m, "TetMesh")
        .def_property_readonly("nodes",
                               [](const mesh::TetMesh& t) {
                                   RowMat3 out(t.nodes.size(), 3);
                                   for (std::size_t i = 0; i < t.nodes.size(); ++i) out.row(i) = t.nodes[i].transpose();
                                   return out;
                               })
        .def_property_readonly("elements",
                               [](const mesh::TetMesh& t) {
                                   RowMat4i out(t.elements.size(), 4);
                                   for (std::size_t e = 0; e < t.elements.size(); ++e)
                                       for (int a = 0; a < 4; ++a) out(e, a) = t.elements[e][a];
                                   return out;
                               })
        .def_property_readonly("domain_codes",
                               [](const mesh::TetMesh& t) {
                                   std::vector<int> out;
                                   for (const auto& d : t.domain_of_element) out.push_back(d.code());
                                   return out;
                               })
        .def_property_readonly("boundary_sets",
                               [](const mesh::TetMesh& t) {
                                   std::vector<std::string> names;
                                   for (const auto& [k, v] : t.boundary_sets) names.push_back(k);
                                   return names;
                               })
        .def("set_nodes", &mesh::TetMesh::set_nodes)
        .def("quality",
             [](const mesh::TetMesh& t, const std::string& metric) {
                 return mesh::metric_values(t, mesh::metric_from_name(metric), {});
             })
        .def("validate", &mesh::TetMesh::validate)
        .def("__len__", [](const mesh::TetMesh& t) { return t.elements.size(); });

    m.def("load_tetgen", &mesh::load_tetgen, py::arg("node"), py::arg("ele"));
    m.def("save_tetgen", &mesh::save_tetgen, py::arg("mesh"), py::arg("node"), py::arg("ele"));
    m.def("metric_names", [] {
        std::vector<std::string> out;
        for (auto q : mesh::kAllMetrics) out.push_back(mesh::metric_name(q));
        return out;
    });
    m.def(
        "tet_quality",
        [](const RowMat3& p, const std::string& metric) {
            return mesh::evaluate(mesh::metric_from_name(metric), tet_points(p));
        },
        py::arg("points"), py::arg("metric"));

    // -------------------------------------------------------------- patients
    m.def("default_patient", [](const std::string& kind) {
        if (kind == "single") return synth::patient_to_json(synth::default_single_tooth_patient()).dump();
        if (kind == "full") return synth::patient_to_json(synth::default_full_patient()).dump();
        throw InvalidInput("unknown patient preset '" + kind + "' (single, full)");
    });
    m.def(
        "patient_family",
        [](const std::string& patient, const std::string& rules) {
            const auto p = synth::patient_from_json(parse(patient));
            const auto r = rules.empty() ? synth::default_family_rules() : synth::family_rules_from_json(parse(rules));
            std::vector<std::string> out;
            for (const auto& q : synth::patient_family(p, r)) out.push_back(synth::patient_to_json(q).dump());
            return out;
        },
        py::arg("patient"), py::arg("rules") = "");
    m.def(
        "synth_assembly",
        [](const std::string& patient) {
            synth::AssemblyInfo info;
            auto mesh = synth::synth_assembly(synth::patient_from_json(parse(patient)), &info);
            return py::make_tuple(std::move(mesh), synth::assembly_info_to_json(info).dump());
        },
        py::arg("patient"));
    m.def(
        "biomarkers",
        [](const std::string& patient_id, const mesh::TetMesh& mesh, const std::string& info, bool tooth_frame) {
            py::list out;
            for (const auto& b : analysis::assembly_biomarkers(patient_id, mesh,
                                                                synth::assembly_info_from_json(parse(info)), tooth_frame)) {
                py::dict d;
                d["patient"] = b.patient_id;
                d["tooth_unn"] = b.tooth_unn;
                d["crown_height"] = b.crown_height;
                d["root_volume"] = b.root_volume;
                d["b"] = b.b;
                out.append(d);
            }
            return out;
        },
        py::arg("patient_id"), py::arg("mesh"), py::arg("info"), py::arg("tooth_frame") = true);

    // ------------------------------------------------------------ simulation
    m.def(
        "sweep",
        [](const mesh::TetMesh& mesh, const std::string& patient_id, const std::string& sweep,
           const std::string& model, const std::string& solver, int threads) {
            const auto spec = harness::sweep_spec_from_json(parse(sweep));
            const auto opts = fem::model_options_from_json(parse(model));
            const auto sopts = harness::solver_options_from_json(parse(solver));
            std::vector<harness::ToothKinematics> recs;
            {
                py::gil_scoped_release release;
                recs = harness::run_sweep(fem::build_model(mesh, opts), spec, patient_id, sopts, threads);
            }
            py::list out;
            for (const auto& r : recs) out.append(kinematics_dict(r));
            return out;
        },
        py::arg("mesh"), py::arg("patient_id") = "patient", py::arg("sweep") = "", py::arg("model") = "",
        py::arg("solver") = "", py::arg("threads") = 1);

    // --------------------------------------------------------------- analysis
    m.def(
        "fit_sqrt",
        [](const std::vector<double>& loads, const std::vector<double>& responses) {
            const auto f = analysis::fit_sqrt(loads, responses);
            py::dict d;
            d["alpha"] = f.alpha;
            d["beta"] = f.beta;
            d["r_squared"] = f.r_squared;
            d["n_points"] = f.n_points;
            return d;
        },
        py::arg("loads"), py::arg("responses"));
    m.def(
        "fit_biomarker",
        [](const std::vector<std::pair<double, double>>& b_alpha) {
            const auto l = analysis::fit_biomarker(b_alpha);
            py::dict d;
            d["lambda"] = l.lambda;
            d["gamma"] = l.gamma;
            d["r_squared"] = l.r_squared;
            d["n_points"] = l.n_points;
            return d;
        },
        py::arg("b_alpha"));
    m.def(
        "predict_response",
        [](double b, double load, double lambda, double gamma, double beta, double kappa) {
            analysis::BiomarkerLine l;
            l.lambda = lambda;
            l.gamma = gamma;
            l.beta = beta;
            l.kappa = kappa;
            return analysis::predict_response(b, load, l);
        },
        py::arg("b"), py::arg("load"), py::arg("lambda_"), py::arg("gamma"), py::arg("beta") = 0.0,
        py::arg("kappa") = 0.0);
    m.def("mirror_unn", &analysis::mirror_unn, py::arg("unn"));
    m.def("spearman", &analysis::spearman, py::arg("x"), py::arg("y"));
}
