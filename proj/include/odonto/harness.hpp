#pragma once

#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "odonto/fem.hpp"
#include "odonto/synth.hpp"

namespace odonto::harness {

struct SweepSpec {
    double load_min = 0.3;  // N
    double load_max = 1.0;
    double load_step = 0.1;
    std::vector<int> teeth;   // empty = every tooth with a load patch
    bool simultaneous = true; // false: each tooth loaded alone (one solve per tooth)

    void validate() const;
    std::vector<double> loads() const;
};

/// One (tooth, load) result. Non-converged levels keep their place with NaN values.
struct ToothKinematics {
    std::string patient_id;
    int tooth_unn = 0;
    int step = 0;  // 1-based load level
    double load = 0.0;
    double load_factor = 0.0;
    bool converged = false;
    Vec3 translation = Vec3::Zero();
    double t_mag = 0.0;
    double theta_deg = 0.0;
    Vec3 axis = Vec3::UnitZ();
};

/// Runs `fn(i)` for i in [0, n) on up to `threads` workers; results land by index, so the
/// outcome does not depend on scheduling. The first exception is rethrown after all workers stop.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

/// Per-tooth kinematics over the load levels. Each tooth's load is converted to pressure with its
/// own patch area. A level that fails to converge is reported as missing; the sweep continues.
std::vector<ToothKinematics> run_sweep(const fem::FEModel& model, const SweepSpec& spec,
                                       const std::string& patient_id = "patient",
                                       const fem::SolverOptions& solver = {}, int threads = 1);

/// Max von Mises stress over bone elements touching the socket of tooth `unn`.
double socket_stress_probe(const fem::FEModel& model, const fem::FEState& state, int unn);

struct ConvergenceOptions {
    double refinement_factor = 2.0;  // element count ratio between levels
    double stress_tol = 0.04;
    int max_levels = 4;
    int min_levels = 2;  // solve at least this many levels even if the tolerance is met earlier
    int tooth = 0;       // probed (and loaded) tooth; 0 = first tooth of the patient
    double load = 1.0;   // N
    fem::ModelOptions model;
    fem::SolverOptions solver;
    int threads = 1;
};

struct ConvergenceLevel {
    int level = 0;
    std::size_t n_elements = 0;
    double max_vm = 0.0;
    double rel_diff = 0.0;  // |vm_i - vm_{i-1}| / vm_i; NaN on the first level
    double t_mag = 0.0;
    double theta_deg = 0.0;
};

struct ConvergenceReport {
    std::vector<ConvergenceLevel> levels;
    bool converged = false;
};

ConvergenceReport convergence_study(const synth::PatientTemplate& patient, const ConvergenceOptions& opts = {});

/// Limit of a sequence on meshes refined by a constant ratio, from its last three values.
/// Throws InvalidInput if the sequence is not contracting.
double richardson_limit(double coarse, double medium, double fine);

struct ParameterInterval {
    std::string name;  // pdl_E, pdl_nu, bone_E, bone_nu, penalty_factor, aug_tol
    double lo = 0.0;
    double hi = 0.0;
};

/// The intervals of the sensitivity table.
std::vector<ParameterInterval> default_intervals();

struct SensitivityOptions {
    int tooth = 0;  // 0 = first tooth with a load patch
    double load = 1.0;
    fem::ModelOptions model;
    fem::SolverOptions solver;
    int threads = 1;
};

struct SensitivityRow {
    std::string parameter;
    double lo = 0.0, hi = 0.0;
    double vm_lo = 0.0, vm_hi = 0.0, vm_ref = 0.0;
    double rel_diff_pct = 0.0;  // 100 |vm_lo - vm_hi| / vm_ref
};

std::vector<SensitivityRow> sensitivity_study(const mesh::TetMesh& mesh, const std::vector<ParameterInterval>& intervals,
                                              const SensitivityOptions& opts = {});

// --------------------------------------------------------------------- files

/// Kinematics CSV sorted by (patient, tooth, load); NaN fields for missing levels.
void persist_results(std::vector<ToothKinematics> records, const std::string& path);
std::vector<ToothKinematics> read_results(const std::string& path);
void write_convergence(const ConvergenceReport& report, const std::string& path);
void write_sensitivity(const std::vector<SensitivityRow>& rows, const std::string& path);

SweepSpec sweep_spec_from_json(const nlohmann::json& j);
fem::SolverOptions solver_options_from_json(const nlohmann::json& j);
/// Reads the study keys; model and solver options are left for the caller.
ConvergenceOptions convergence_options_from_json(const nlohmann::json& j);
std::vector<ParameterInterval> intervals_from_json(const nlohmann::json& j);

}  // namespace odonto::harness
