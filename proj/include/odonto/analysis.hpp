#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "odonto/harness.hpp"
#include "odonto/mesh.hpp"
#include "odonto/synth.hpp"

namespace odonto::analysis {

/// response = alpha sqrt(l) + beta.
struct FitResult {
    double alpha = 0.0;
    double beta = 0.0;
    double r_squared = 1.0;  // 1 when the responses are constant
    int n_points = 0;
};

/// Least squares; throws InvalidInput with fewer than 2 distinct loads or a non-positive load.
FitResult fit_sqrt(const std::vector<double>& loads, const std::vector<double>& responses);

/// Left/right partner of a mandibular tooth: 49 - k.
int mirror_unn(int k);
inline bool right_side(int k) { return k >= 25; }

enum class Target { Translation, Rotation };
std::string target_name(Target t);
Target target_from_name(const std::string& s);

struct ToothFit {
    std::string patient_id;
    int tooth_unn = 0;
    Target target = Target::Translation;
    FitResult fit;
};

/// Square-root fits of t_mag and theta for every (patient, tooth) with at least two converged levels,
/// sorted by (patient, tooth, target).
std::vector<ToothFit> fit_kinematics(const std::vector<harness::ToothKinematics>& records);

/// Right-side entries re-keyed by their left partner; both sides kept.
std::map<int, std::vector<ToothFit>> pool_mirrored(const std::vector<ToothFit>& fits);

struct BiomarkerRecord {
    std::string patient_id;
    int tooth_unn = 0;
    double crown_height = 0.0;  // mm
    double root_volume = 0.0;   // mm^3
    double b = 0.0;             // mm^-2
};

/// Volume of the bounding box of `points`, axis-aligned in `frame` (world axes when absent).
double bounding_box_volume(const std::vector<Vec3>& points, const std::optional<synth::Frame>& frame);

/// b = crown height / volume of the PDL's bounding box in the tooth frame.
BiomarkerRecord compute_biomarker(const std::string& patient_id, int unn, double crown_height,
                                  const mesh::TetMesh& mesh, const std::optional<synth::Frame>& frame);

/// Biomarkers for every tooth of a synthetic assembly (tooth frames from `info`, or world axes).
std::vector<BiomarkerRecord> assembly_biomarkers(const std::string& patient_id, const mesh::TetMesh& mesh,
                                                 const synth::AssemblyInfo& info, bool tooth_frame = true);

/// b = lambda sqrt(alpha) + gamma per target. The response intercepts are modelled as
/// beta + kappa alpha over the fitted teeth (kappa = 0 when every alpha is equal).
struct BiomarkerLine {
    double lambda = 0.0;
    double gamma = 0.0;
    double r_squared = 1.0;
    int n_points = 0;
    double beta = 0.0;
    double kappa = 0.0;
};

struct BiomarkerFit {
    BiomarkerLine translation;
    BiomarkerLine rotation;
    const BiomarkerLine& operator[](Target t) const { return t == Target::Translation ? translation : rotation; }
};

/// Least squares of b on sqrt(alpha) over (b, alpha) pairs.
BiomarkerLine fit_biomarker(const std::vector<std::pair<double, double>>& b_alpha);

/// Pairs biomarkers with fitted alphas by (patient, tooth) and fits both targets.
/// With `per_patient` set, the result holds one fit per patient instead of one pooled fit.
std::map<std::string, BiomarkerFit> fit_biomarkers(const std::vector<BiomarkerRecord>& biomarkers,
                                                   const std::vector<ToothFit>& fits, bool per_patient = false);

/// alpha from b by inverting the line, then alpha sqrt(load) + beta + kappa alpha.
/// Throws InvalidInput when b <= gamma or lambda <= 0.
double predict_response(double b, double load, const BiomarkerLine& line);

struct Prediction {
    double t_mag = 0.0;
    double theta_deg = 0.0;
};
Prediction predict_displacement(double b, double load, const BiomarkerFit& fit);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// --------------------------------------------------------------------- files

void write_fits(const std::vector<ToothFit>& fits, const std::string& path);
void write_biomarker_fit(const std::map<std::string, BiomarkerFit>& fits, const std::string& path);
void write_biomarkers(const std::vector<BiomarkerRecord>& records, const std::string& path);
/// Reads `patient,tooth_unn,crown_height_mm[,root_volume_mm3]`; missing volumes are left at 0.
std::vector<BiomarkerRecord> read_biomarkers(const std::string& path);

/// Long-format plot data: simulated and fitted responses per load (load_curves.csv), pooled
/// mirrored curves keyed by left UNN (mirrored_curves.csv) and biomarker vs coefficient
/// (biomarker_curves.csv).
void write_plot_data(const std::vector<harness::ToothKinematics>& records, const std::vector<ToothFit>& fits,
                     const std::vector<BiomarkerRecord>& biomarkers, const std::map<std::string, BiomarkerFit>& bfits,
                     const std::string& dir);

}  // namespace odonto::analysis
