#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include <nlohmann/json.hpp>

#include "json_util.hpp"
#include "odonto/synth.hpp"

namespace odonto::synth {

namespace {

using nlohmann::json;
using jsonutil::check_keys;
using jsonutil::read;
using jsonutil::read_vec;
using jsonutil::vec_json;

// Crown bulge: rises from the CEJ radius to the contour radius at kContourAt, then narrows
// quadratically to kTopScale of the contour radius at the occlusal face. Slope stays bounded.
constexpr double kContourAt = 0.35;
constexpr double kTopScale = 0.85;

double crown_profile(double cej, double contour, double s) {
    s = std::clamp(s, 0.0, 1.0);
    if (s <= kContourAt) return cej + (contour - cej) * std::sin(0.5 * std::numbers::pi * s / kContourAt);
    const double q = (s - kContourAt) / (1.0 - kContourAt);
    return contour - (1.0 - kTopScale) * contour * q * q;
}

double root_md_scale(int n_roots) { return n_roots >= 2 ? 1.25 : 1.0; }
double root_bl_scale(int n_roots) { return n_roots >= 2 ? 0.85 : 1.0; }
double crown_bl_scale(int n_roots) { return n_roots >= 2 ? 0.9 : 1.0; }

struct Row {
    double crown, root, crown_r, r_top, r_bot;
    int roots;
};

// Left-side mandibular teeth, UNN 17 (third molar) .. 24 (central incisor).
constexpr Row kDentition[8] = {
    {6.5, 11.0, 5.0, 3.8, 1.5, 2},  // 17
    {7.0, 13.0, 5.2, 3.9, 1.5, 2},  // 18
    {7.5, 14.0, 5.5, 4.0, 1.6, 2},  // 19
    {8.0, 14.5, 3.6, 3.0, 1.0, 1},  // 20
    {8.5, 14.0, 3.5, 2.9, 0.9, 1},  // 21
    {11.0, 16.0, 3.5, 3.0, 0.9, 1}, // 22
    {9.5, 14.0, 2.9, 2.5, 0.8, 1},  // 23
    {9.0, 12.5, 2.8, 2.4, 0.8, 1},  // 24
};


Frame frame_from_json(const json& j) {
    check_keys(j, {"origin", "mesial", "buccal", "axis"}, "frame");
    Frame f;
    if (j.contains("origin")) f.origin = read_vec(j["origin"]);
    if (j.contains("mesial")) f.mesial = read_vec(j["mesial"]);
    if (j.contains("buccal")) f.buccal = read_vec(j["buccal"]);
    if (j.contains("axis")) f.axis = read_vec(j["axis"]);
    return f;
}

json frame_json(const Frame& f) {
    return {{"origin", vec_json(f.origin)}, {"mesial", vec_json(f.mesial)}, {"buccal", vec_json(f.buccal)},
            {"axis", vec_json(f.axis)}};
}

ToothTemplate tooth_from_json(const json& j) {
    if (j.is_number_integer()) return default_tooth(j.get<int>());
    check_keys(j,
               {"unn", "crown_height", "root_length", "root_radius_top", "root_radius_bottom", "crown_radius",
                "n_roots", "patch_width", "patch_height", "frame"},
               "tooth");
    if (!j.contains("unn")) throw InvalidInput("tooth entry needs 'unn'");
    ToothTemplate t = default_tooth(j["unn"].get<int>());
    read(j, "crown_height", t.crown_height);
    read(j, "root_length", t.root_length);
    read(j, "root_radius_top", t.root_radius_top);
    read(j, "root_radius_bottom", t.root_radius_bottom);
    read(j, "crown_radius", t.crown_radius);
    read(j, "n_roots", t.n_roots);
    read(j, "patch_width", t.patch_width);
    read(j, "patch_height", t.patch_height);
    if (j.contains("frame")) t.frame = frame_from_json(j["frame"]);
    return t;
}

}  // namespace

Frame Frame::standard(int unn) {
    Frame f;
    if (unn >= 25) f.mesial = -Vec3::UnitX();
    return f;
}

// ------------------------------------------------------------- ToothTemplate

void ToothTemplate::validate() const {
    const std::string who = "tooth " + std::to_string(unn) + ": ";
    if (unn < 17 || unn > 32) throw InvalidInput(who + "UNN must be a mandibular tooth (17-32)");
    if (!(crown_height > 0.0)) throw InvalidInput(who + "crown_height must be positive");
    if (!(root_length > 0.0)) throw InvalidInput(who + "root_length must be positive");
    if (!(root_radius_top > 0.0) || !(root_radius_bottom > 0.0)) throw InvalidInput(who + "root radii must be positive");
    if (!(crown_radius > 0.0)) throw InvalidInput(who + "crown_radius must be positive");
    if (n_roots < 1 || n_roots > 2) throw InvalidInput(who + "n_roots must be 1 or 2");
    if (!(patch_width > 0.0) || !(patch_height > 0.0)) throw InvalidInput(who + "patch dimensions must be positive");
    if (patch_height >= 0.8 * crown_height) throw InvalidInput(who + "bracket patch taller than the crown");
    if (patch_width >= 0.8 * std::numbers::pi * crown_md(0.5 * crown_height))
        throw InvalidInput(who + "bracket patch wider than the buccal face");
    if (frame) {
        const Frame& f = *frame;
        const double ortho = std::abs(f.mesial.dot(f.buccal)) + std::abs(f.mesial.dot(f.axis)) + std::abs(f.buccal.dot(f.axis));
        if (ortho > 1e-9 || std::abs(f.mesial.norm() - 1.0) > 1e-9 || std::abs(f.buccal.norm() - 1.0) > 1e-9 ||
            std::abs(f.axis.norm() - 1.0) > 1e-9)
            throw InvalidInput(who + "frame axes must be orthonormal");
    }
}

double ToothTemplate::root_bl(double z) const {
    const double s = std::clamp((z + root_length) / root_length, 0.0, 1.0);
    return root_bl_scale(n_roots) * (root_radius_bottom + (root_radius_top - root_radius_bottom) * s);
}

double ToothTemplate::root_md(double z) const {
    const double s = std::clamp((z + root_length) / root_length, 0.0, 1.0);
    return root_md_scale(n_roots) * (root_radius_bottom + (root_radius_top - root_radius_bottom) * s);
}

double ToothTemplate::crown_md(double z) const { return crown_profile(root_md(0.0), crown_radius, z / crown_height); }

double ToothTemplate::crown_bl(double z) const {
    return crown_profile(root_bl(0.0), crown_bl_scale(n_roots) * crown_radius, z / crown_height);
}

ToothTemplate default_tooth(int unn) {
    if (unn < 17 || unn > 32) throw InvalidInput("no default tooth for UNN " + std::to_string(unn));
    const int left = unn <= 24 ? unn : 49 - unn;
    const Row& r = kDentition[left - 17];
    ToothTemplate t;
    t.unn = unn;
    t.crown_height = r.crown;
    t.root_length = r.root;
    t.crown_radius = r.crown_r;
    t.root_radius_top = r.r_top;
    t.root_radius_bottom = r.r_bot;
    t.n_roots = r.roots;
    return t;
}

// ----------------------------------------------------------- PatientTemplate

void PatientTemplate::validate() const {
    if (patient_id.empty()) throw InvalidInput("patient_id must not be empty");
    if (teeth.empty()) throw InvalidInput("patient '" + patient_id + "' has no teeth");
    std::set<int> seen;
    for (const auto& t : teeth) {
        t.validate();
        if (!seen.insert(t.unn).second) throw InvalidInput("duplicate tooth " + std::to_string(t.unn));
    }
    if (!(pdl_thickness > 0.0)) throw InvalidInput("pdl_thickness must be positive");
    if (!(bone_depth_below_apex > 0.0) || !(bone_wall > 0.0) || !(interproximal_bone > 0.0))
        throw InvalidInput("bone dimensions must be positive");
    if (!(crown_gap >= 0.0)) throw InvalidInput("crown_gap must be non-negative");
    if (!(arch_radius > 0.0)) throw InvalidInput("arch_radius must be positive");
    if (!(sizing.tooth_edge > 0.0) || !(sizing.pdl_edge > 0.0) || !(sizing.bone_edge_near > 0.0) ||
        !(sizing.bone_edge_far >= sizing.bone_edge_near))
        throw InvalidInput("mesh sizes must be positive with bone_edge_far >= bone_edge_near");
    if (!(max_radius_edge > std::sqrt(3.0 / 8.0))) throw InvalidInput("max_radius_edge must exceed sqrt(3/8)");
    if (refinement_level < 0) throw InvalidInput("refinement_level must be >= 0");
    if (!(refinement_factor > 1.0)) throw InvalidInput("refinement_factor must be > 1");
}

const ToothTemplate& PatientTemplate::tooth(int unn) const {
    for (const auto& t : teeth)
        if (t.unn == unn) return t;
    throw InvalidInput("patient '" + patient_id + "' has no tooth " + std::to_string(unn));
}

PatientTemplate default_single_tooth_patient() {
    PatientTemplate p;
    p.patient_id = "single";
    p.teeth.push_back(default_tooth(24));
    return p;
}

PatientTemplate default_full_patient() {
    PatientTemplate p;
    p.patient_id = "full";
    for (int unn = 17; unn <= 32; ++unn) p.teeth.push_back(default_tooth(unn));
    return p;
}

std::string patch_set(int unn) { return "load_patch_" + std::to_string(unn); }
std::string tooth_pdl_set(int unn) { return "tp_" + std::to_string(unn); }
std::string pdl_bone_set(int unn) { return "pb_" + std::to_string(unn); }
std::string bone_socket_set(int unn) { return "socket_" + std::to_string(unn); }

// -------------------------------------------------------------------- family

std::vector<FamilyRule> default_family_rules() {
    return {{"_base", 1.0, 1.0}, {"_long_crown", 1.2, 0.8}, {"_short_crown", 0.8, 1.2}};
}

std::vector<PatientTemplate> patient_family(const PatientTemplate& base, const std::vector<FamilyRule>& rules) {
    std::vector<PatientTemplate> out;
    for (const auto& r : rules) {
        if (!(r.crown_height_scale > 0.0) || !(r.root_scale > 0.0))
            throw InvalidInput("family rule scales must be positive");
        PatientTemplate p = base;
        p.patient_id = base.patient_id + r.suffix;
        for (auto& t : p.teeth) {
            t.crown_height *= r.crown_height_scale;
            t.root_length *= r.root_scale;
            t.root_radius_top *= r.root_scale;
            t.root_radius_bottom *= r.root_scale;
        }
        p.validate();
        out.push_back(std::move(p));
    }
    return out;
}

// ---------------------------------------------------------------------- JSON

PatientTemplate patient_from_json(const json& j) {
    check_keys(j,
               {"patient_id", "teeth", "pdl_thickness", "bone_depth_below_apex", "bone_wall", "interproximal_bone",
                "crown_gap", "arch_radius", "sizing", "max_radius_edge", "refinement_level", "refinement_factor",
                "tied_pdl_bone"},
               "patient template");
    PatientTemplate p;
    read(j, "patient_id", p.patient_id);
    read(j, "pdl_thickness", p.pdl_thickness);
    read(j, "bone_depth_below_apex", p.bone_depth_below_apex);
    read(j, "bone_wall", p.bone_wall);
    read(j, "interproximal_bone", p.interproximal_bone);
    read(j, "crown_gap", p.crown_gap);
    read(j, "arch_radius", p.arch_radius);
    read(j, "max_radius_edge", p.max_radius_edge);
    read(j, "refinement_level", p.refinement_level);
    read(j, "refinement_factor", p.refinement_factor);
    read(j, "tied_pdl_bone", p.tied_pdl_bone);
    if (j.contains("sizing")) {
        const auto& s = j["sizing"];
        if (s.is_string()) {
            if (s.get<std::string>() != "table1") throw InvalidInput("unknown sizing preset '" + s.get<std::string>() + "'");
            p.sizing = MeshSizing::table1();
        } else {
            check_keys(s, {"tooth_edge", "pdl_edge", "bone_edge_near", "bone_edge_far"}, "sizing");
            read(s, "tooth_edge", p.sizing.tooth_edge);
            read(s, "pdl_edge", p.sizing.pdl_edge);
            read(s, "bone_edge_near", p.sizing.bone_edge_near);
            read(s, "bone_edge_far", p.sizing.bone_edge_far);
        }
    }
    if (!j.contains("teeth")) {
        p.teeth.push_back(default_tooth(24));
    } else if (j["teeth"].is_string()) {
        const auto s = j["teeth"].get<std::string>();
        if (s == "full")
            p.teeth = default_full_patient().teeth;
        else if (s == "single")
            p.teeth = default_single_tooth_patient().teeth;
        else
            throw InvalidInput("unknown teeth preset '" + s + "'");
    } else if (j["teeth"].is_array()) {
        for (const auto& t : j["teeth"]) p.teeth.push_back(tooth_from_json(t));
    } else {
        throw InvalidInput("'teeth' must be an array or a preset name");
    }
    p.validate();
    return p;
}

json patient_to_json(const PatientTemplate& p) {
    json teeth = json::array();
    for (const auto& t : p.teeth) {
        json e = {{"unn", t.unn},
                  {"crown_height", t.crown_height},
                  {"root_length", t.root_length},
                  {"root_radius_top", t.root_radius_top},
                  {"root_radius_bottom", t.root_radius_bottom},
                  {"crown_radius", t.crown_radius},
                  {"n_roots", t.n_roots},
                  {"patch_width", t.patch_width},
                  {"patch_height", t.patch_height}};
        if (t.frame) e["frame"] = frame_json(*t.frame);
        teeth.push_back(e);
    }
    return {{"patient_id", p.patient_id},
            {"teeth", teeth},
            {"pdl_thickness", p.pdl_thickness},
            {"bone_depth_below_apex", p.bone_depth_below_apex},
            {"bone_wall", p.bone_wall},
            {"interproximal_bone", p.interproximal_bone},
            {"crown_gap", p.crown_gap},
            {"arch_radius", p.arch_radius},
            {"sizing",
             {{"tooth_edge", p.sizing.tooth_edge},
              {"pdl_edge", p.sizing.pdl_edge},
              {"bone_edge_near", p.sizing.bone_edge_near},
              {"bone_edge_far", p.sizing.bone_edge_far}}},
            {"max_radius_edge", p.max_radius_edge},
            {"refinement_level", p.refinement_level},
            {"refinement_factor", p.refinement_factor},
            {"tied_pdl_bone", p.tied_pdl_bone}};
}

std::vector<FamilyRule> family_rules_from_json(const json& j) {
    if (!j.is_array()) throw InvalidInput("family rules must be an array");
    std::vector<FamilyRule> rules;
    for (const auto& e : j) {
        check_keys(e, {"suffix", "crown_height_scale", "root_scale"}, "family rule");
        FamilyRule r;
        read(e, "suffix", r.suffix);
        read(e, "crown_height_scale", r.crown_height_scale);
        read(e, "root_scale", r.root_scale);
        rules.push_back(r);
    }
    return rules;
}

AssemblyInfo assembly_info_from_json(const json& j) {
    AssemblyInfo info;
    try {
        info.bone_depth = j.at("bone_depth").get<double>();
        for (const auto& e : j.at("teeth")) {
            AssemblyInfo::Tooth t;
            t.unn = e.at("unn").get<int>();
            t.frame = frame_from_json(e.at("frame"));
            t.crown_height = e.at("crown_height").get<double>();
            t.patch_area = e.at("patch_area").get<double>();
            info.teeth.push_back(t);
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("bad assembly sidecar: ") + e.what());
    }
    return info;
}

json assembly_info_to_json(const AssemblyInfo& info) {
    json teeth = json::array();
    for (const auto& t : info.teeth)
        teeth.push_back({{"unn", t.unn},
                         {"frame", frame_json(t.frame)},
                         {"crown_height", t.crown_height},
                         {"patch_area", t.patch_area}});
    return {{"bone_depth", info.bone_depth}, {"teeth", teeth}};
}

}  // namespace odonto::synth
