#include "odonto/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>
#include <tuple>

#include "odonto/csv.hpp"

namespace odonto::analysis {

namespace {

void open_out(std::ofstream& out, const std::string& path) {
    out.open(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
}

void close_out(std::ofstream& out, const std::string& path) {
    out.close();
    if (!out) throw InvalidInput("write failed for '" + path + "'");
}

struct Line {
    double slope = 0.0, intercept = 0.0, r2 = 1.0;
};

// y = slope x + intercept; the centred form keeps exact data exact.
Line least_squares(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
        syy += (y[i] - my) * (y[i] - my);
    }
    Line l;
    l.slope = sxy / sxx;
    l.intercept = my - l.slope * mx;
    double ss_res = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (l.slope * x[i] + l.intercept);
        ss_res += r * r;
    }
    // Constant data leaves syy at rounding level; call it an exact fit.
    const double scale = n * my * my;
    l.r2 = syy > 1e-24 * scale ? 1.0 - ss_res / syy : 1.0;
    return l;
}

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

}  // namespace

FitResult fit_sqrt(const std::vector<double>& loads, const std::vector<double>& responses) {
    if (loads.size() != responses.size()) throw InvalidInput("fit_sqrt: loads and responses differ in length");
    for (double l : loads)
        if (!(l > 0.0) || !std::isfinite(l)) throw InvalidInput("fit_sqrt: loads must be positive");
    for (double y : responses)
        if (!std::isfinite(y)) throw InvalidInput("fit_sqrt: responses must be finite");
    if (std::set<double>(loads.begin(), loads.end()).size() < 2)
        throw InvalidInput("fit_sqrt: need at least two distinct loads");
    std::vector<double> x(loads.size());
    std::transform(loads.begin(), loads.end(), x.begin(), [](double l) { return std::sqrt(l); });
    const Line l = least_squares(x, responses);
    return {l.slope, l.intercept, l.r2, static_cast<int>(loads.size())};
}

int mirror_unn(int k) {
    if (k < 17 || k > 32) throw InvalidInput("UNN " + std::to_string(k) + " outside the mandibular range 17-32");
    return 49 - k;
}

std::string target_name(Target t) { return t == Target::Translation ? "translation" : "rotation"; }

Target target_from_name(const std::string& s) {
    if (s == "translation") return Target::Translation;
    if (s == "rotation") return Target::Rotation;
    throw InvalidInput("unknown target '" + s + "'");
}

std::vector<ToothFit> fit_kinematics(const std::vector<harness::ToothKinematics>& records) {
    std::map<std::pair<std::string, int>, std::vector<const harness::ToothKinematics*>> groups;
    for (const auto& r : records)
        if (r.converged && r.load > 0.0) groups[{r.patient_id, r.tooth_unn}].push_back(&r);
    std::vector<ToothFit> out;
    for (const auto& [key, rs] : groups) {
        std::vector<double> l, t, th;
        for (const auto* r : rs) {
            l.push_back(r->load);
            t.push_back(r->t_mag);
            th.push_back(r->theta_deg);
        }
        if (std::set<double>(l.begin(), l.end()).size() < 2) continue;
        out.push_back({key.first, key.second, Target::Translation, fit_sqrt(l, t)});
        out.push_back({key.first, key.second, Target::Rotation, fit_sqrt(l, th)});
    }
    return out;
}

std::map<int, std::vector<ToothFit>> pool_mirrored(const std::vector<ToothFit>& fits) {
    std::map<int, std::vector<ToothFit>> out;
    for (const auto& f : fits) out[right_side(f.tooth_unn) ? mirror_unn(f.tooth_unn) : f.tooth_unn].push_back(f);
    return out;
}

double bounding_box_volume(const std::vector<Vec3>& points, const std::optional<synth::Frame>& frame) {
    if (points.empty()) throw InvalidInput("bounding box of an empty point set");
    Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const auto& p : points) {
        const Vec3 q = frame ? frame->to_local(p) : p;
        lo = lo.cwiseMin(q);
        hi = hi.cwiseMax(q);
    }
    const Vec3 d = hi - lo;
    return d.x() * d.y() * d.z();
}

BiomarkerRecord compute_biomarker(const std::string& patient_id, int unn, double crown_height,
                                  const mesh::TetMesh& mesh, const std::optional<synth::Frame>& frame) {
    if (!(crown_height > 0.0)) throw InvalidInput("crown height must be positive");
    const auto nodes = mesh.domain_nodes(mesh::Domain::pdl(unn));
    if (nodes.empty()) throw InvalidInput("no PDL elements for tooth " + std::to_string(unn));
    std::vector<Vec3> pts;
    pts.reserve(nodes.size());
    for (int v : nodes) pts.push_back(mesh.nodes[v]);
    const double vol = bounding_box_volume(pts, frame);
    if (!(vol > 0.0)) throw InvalidInput("degenerate PDL bounding box for tooth " + std::to_string(unn));
    return {patient_id, unn, crown_height, vol, crown_height / vol};
}

std::vector<BiomarkerRecord> assembly_biomarkers(const std::string& patient_id, const mesh::TetMesh& mesh,
                                                 const synth::AssemblyInfo& info, bool tooth_frame) {
    std::vector<BiomarkerRecord> out;
    for (const auto& t : info.teeth)
        out.push_back(compute_biomarker(patient_id, t.unn, t.crown_height, mesh,
                                        tooth_frame ? std::optional(t.frame) : std::nullopt));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.tooth_unn < b.tooth_unn; });
    return out;
}

BiomarkerLine fit_biomarker(const std::vector<std::pair<double, double>>& b_alpha) {
    if (b_alpha.size() < 2) throw InvalidInput("biomarker fit needs at least two points");
    std::vector<double> x, y;
    for (const auto& [b, a] : b_alpha) {
        if (!(a >= 0.0) || !std::isfinite(b)) throw InvalidInput("biomarker fit needs alpha >= 0 and finite b");
        x.push_back(std::sqrt(a));
        y.push_back(b);
    }
    if (std::set<double>(x.begin(), x.end()).size() < 2) throw InvalidInput("biomarker fit needs two distinct alphas");
    const Line l = least_squares(x, y);
    BiomarkerLine out;
    out.lambda = l.slope;
    out.gamma = l.intercept;
    out.r_squared = l.r2;
    out.n_points = static_cast<int>(x.size());
    return out;
}

std::map<std::string, BiomarkerFit> fit_biomarkers(const std::vector<BiomarkerRecord>& biomarkers,
                                                   const std::vector<ToothFit>& fits, bool per_patient) {
    std::map<std::pair<std::string, int>, double> b_of;
    for (const auto& r : biomarkers) b_of[{r.patient_id, r.tooth_unn}] = r.b;
    // group -> target -> (b, alpha) and (alpha, beta)
    using Pairs = std::vector<std::pair<double, double>>;
    std::map<std::string, std::map<Target, std::pair<Pairs, Pairs>>> data;
    for (const auto& f : fits) {
        const auto it = b_of.find({f.patient_id, f.tooth_unn});
        if (it == b_of.end()) continue;
        auto& d = data[per_patient ? f.patient_id : "all"][f.target];
        d.first.emplace_back(it->second, f.fit.alpha);
        d.second.emplace_back(f.fit.alpha, f.fit.beta);
    }
    if (data.empty()) throw InvalidInput("no tooth has both a biomarker and a fit");
    std::map<std::string, BiomarkerFit> out;
    for (const auto& [group, targets] : data) {
        BiomarkerFit bf;
        for (Target t : {Target::Translation, Target::Rotation}) {
            const auto it = targets.find(t);
            if (it == targets.end()) throw InvalidInput("missing " + target_name(t) + " fits for " + group);
            BiomarkerLine line = fit_biomarker(it->second.first);
            // Solver curves are stiffer than sqrt(l), so beta tracks alpha rather than vanishing.
            std::vector<double> a, beta;
            for (const auto& [al, be] : it->second.second) {
                a.push_back(al);
                beta.push_back(be);
            }
            if (std::set<double>(a.begin(), a.end()).size() >= 2) {
                const Line l = least_squares(a, beta);
                line.beta = l.intercept;
                line.kappa = l.slope;
            } else {
                line.beta = std::accumulate(beta.begin(), beta.end(), 0.0) / static_cast<double>(beta.size());
            }
            (t == Target::Translation ? bf.translation : bf.rotation) = line;
        }
        out[group] = bf;
    }
    return out;
}

double predict_response(double b, double load, const BiomarkerLine& line) {
    if (!(line.lambda > 0.0) || !(b > line.gamma))
        throw InvalidInput("biomarker outside the fitted model range (need lambda > 0 and b > gamma)");
    if (!(load >= 0.0)) throw InvalidInput("load must be non-negative");
    const double s = (b - line.gamma) / line.lambda;
    const double alpha = s * s;
    return alpha * std::sqrt(load) + line.beta + line.kappa * alpha;
}

Prediction predict_displacement(double b, double load, const BiomarkerFit& fit) {
    return {predict_response(b, load, fit.translation), predict_response(b, load, fit.rotation)};
}

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw InvalidInput("spearman: need two equally long samples (n >= 2)");
    const auto rx = ranks(x), ry = ranks(y);
    const double n = static_cast<double>(x.size());
    const double m = (n + 1.0) / 2.0;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - m) * (ry[i] - m);
        sxx += (rx[i] - m) * (rx[i] - m);
        syy += (ry[i] - m) * (ry[i] - m);
    }
    if (sxx == 0.0 || syy == 0.0) throw InvalidInput("spearman: constant sample");
    return sxy / std::sqrt(sxx * syy);
}

// --------------------------------------------------------------------- files

void write_fits(const std::vector<ToothFit>& fits, const std::string& path) {
    auto sorted = fits;
    std::stable_sort(sorted.begin(), sorted.end(), [](const ToothFit& a, const ToothFit& b) {
        return std::tie(a.patient_id, a.tooth_unn, a.target) < std::tie(b.patient_id, b.tooth_unn, b.target);
    });
    std::ofstream out;
    open_out(out, path);
    out << "patient,tooth_unn,target,alpha,beta,r2\n";
    for (const auto& f : sorted)
        out << f.patient_id << ',' << f.tooth_unn << ',' << target_name(f.target) << ',' << csv::num(f.fit.alpha) << ','
            << csv::num(f.fit.beta) << ',' << csv::num(f.fit.r_squared) << '\n';
    close_out(out, path);
}

void write_biomarker_fit(const std::map<std::string, BiomarkerFit>& fits, const std::string& path) {
    const bool pooled = fits.size() == 1 && fits.begin()->first == "all";
    std::ofstream out;
    open_out(out, path);
    out << (pooled ? "" : "patient,") << "target,lambda,gamma,r2,beta,kappa\n";
    for (const auto& [group, f] : fits)
        for (Target t : {Target::Translation, Target::Rotation}) {
            if (!pooled) out << group << ',';
            out << target_name(t) << ',' << csv::num(f[t].lambda) << ',' << csv::num(f[t].gamma) << ','
                << csv::num(f[t].r_squared) << ',' << csv::num(f[t].beta) << ',' << csv::num(f[t].kappa) << '\n';
        }
    close_out(out, path);
}

void write_biomarkers(const std::vector<BiomarkerRecord>& records, const std::string& path) {
    auto sorted = records;
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        return std::tie(a.patient_id, a.tooth_unn) < std::tie(b.patient_id, b.tooth_unn);
    });
    std::ofstream out;
    open_out(out, path);
    out << "patient,tooth_unn,crown_height_mm,root_volume_mm3,b\n";
    for (const auto& r : sorted)
        out << r.patient_id << ',' << r.tooth_unn << ',' << csv::num(r.crown_height) << ',' << csv::num(r.root_volume)
            << ',' << csv::num(r.b) << '\n';
    close_out(out, path);
}

std::vector<BiomarkerRecord> read_biomarkers(const std::string& path) {
    const auto t = csv::read_file(path);
    const int cp = t.require("patient"), ck = t.require("tooth_unn"), ch = t.require("crown_height_mm");
    const int cv = t.column("root_volume_mm3");
    std::vector<BiomarkerRecord> out;
    for (const auto& row : t.rows) {
        BiomarkerRecord r;
        r.patient_id = row[cp];
        r.tooth_unn = csv::to_int(row[ck]);
        r.crown_height = csv::to_double(row[ch]);
        if (!(r.crown_height > 0.0)) throw InvalidInput("crown height must be positive in '" + path + "'");
        if (cv >= 0 && !row[cv].empty()) {
            r.root_volume = csv::to_double(row[cv]);
            if (!(r.root_volume > 0.0)) throw InvalidInput("root volume must be positive in '" + path + "'");
            r.b = r.crown_height / r.root_volume;
        }
        out.push_back(r);
    }
    return out;
}

void write_plot_data(const std::vector<harness::ToothKinematics>& records, const std::vector<ToothFit>& fits,
                     const std::vector<BiomarkerRecord>& biomarkers, const std::map<std::string, BiomarkerFit>& bfits,
                     const std::string& dir) {
    namespace fs = std::filesystem;
    std::map<std::tuple<std::string, int, Target>, FitResult> fit_of;
    for (const auto& f : fits) fit_of[{f.patient_id, f.tooth_unn, f.target}] = f.fit;
    auto sorted = records;
    std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
        return std::tie(a.patient_id, a.tooth_unn, a.load) < std::tie(b.patient_id, b.tooth_unn, b.load);
    });

    // Simulated vs fitted response per tooth and load.
    {
        const std::string path = (fs::path(dir) / "load_curves.csv").string();
        std::ofstream out;
        open_out(out, path);
        out << "patient,tooth_unn,target,load_n,simulated,fitted\n";
        for (Target t : {Target::Translation, Target::Rotation})
            for (const auto& r : sorted) {
                if (!r.converged) continue;
                const auto it = fit_of.find({r.patient_id, r.tooth_unn, t});
                const double sim = t == Target::Translation ? r.t_mag : r.theta_deg;
                const double fit = it == fit_of.end() ? std::nan("") : it->second.alpha * std::sqrt(r.load) + it->second.beta;
                out << r.patient_id << ',' << r.tooth_unn << ',' << target_name(t) << ',' << csv::num(r.load) << ','
                    << csv::num(sim) << ',' << csv::num(fit) << '\n';
            }
        close_out(out, path);
    }
    // Both sides of the arch on the left-side key.
    {
        const std::string path = (fs::path(dir) / "mirrored_curves.csv").string();
        std::ofstream out;
        open_out(out, path);
        out << "patient,left_unn,side,tooth_unn,target,load_n,value\n";
        std::vector<const harness::ToothKinematics*> rows;
        for (const auto& r : sorted)
            if (r.converged) rows.push_back(&r);
        std::stable_sort(rows.begin(), rows.end(), [](const auto* a, const auto* b) {
            const int ka = right_side(a->tooth_unn) ? 49 - a->tooth_unn : a->tooth_unn;
            const int kb = right_side(b->tooth_unn) ? 49 - b->tooth_unn : b->tooth_unn;
            return std::tie(a->patient_id, ka, a->tooth_unn, a->load) < std::tie(b->patient_id, kb, b->tooth_unn, b->load);
        });
        for (Target t : {Target::Translation, Target::Rotation})
            for (const auto* r : rows) {
                const bool right = right_side(r->tooth_unn);
                out << r->patient_id << ',' << (right ? mirror_unn(r->tooth_unn) : r->tooth_unn) << ','
                    << (right ? "right" : "left") << ',' << r->tooth_unn << ',' << target_name(t) << ','
                    << csv::num(r->load) << ',' << csv::num(t == Target::Translation ? r->t_mag : r->theta_deg) << '\n';
            }
        close_out(out, path);
    }
    // Biomarker against fitted coefficient, with the fitted curve value.
    {
        const std::string path = (fs::path(dir) / "biomarker_curves.csv").string();
        std::ofstream out;
        open_out(out, path);
        out << "patient,tooth_unn,target,b,alpha,b_fitted\n";
        auto bs = biomarkers;
        std::stable_sort(bs.begin(), bs.end(), [](const auto& a, const auto& b) {
            return std::tie(a.patient_id, a.tooth_unn) < std::tie(b.patient_id, b.tooth_unn);
        });
        for (Target t : {Target::Translation, Target::Rotation})
            for (const auto& b : bs) {
                const auto it = fit_of.find({b.patient_id, b.tooth_unn, t});
                if (it == fit_of.end()) continue;
                const BiomarkerFit* bf = nullptr;
                if (auto g = bfits.find("all"); g != bfits.end()) bf = &g->second;
                else if (auto p = bfits.find(b.patient_id); p != bfits.end()) bf = &p->second;
                const double fitted = bf ? (*bf)[t].lambda * std::sqrt(std::max(it->second.alpha, 0.0)) + (*bf)[t].gamma
                                         : std::nan("");
                out << b.patient_id << ',' << b.tooth_unn << ',' << target_name(t) << ',' << csv::num(b.b) << ','
                    << csv::num(it->second.alpha) << ',' << csv::num(fitted) << '\n';
            }
        close_out(out, path);
    }
}

}  // namespace odonto::analysis
