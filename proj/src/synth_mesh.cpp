#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>
#include <unordered_map>

#include "odonto/quality.hpp"
#include "odonto/synth.hpp"

// Every tooth sits in a block of bone. A block is meshed as a structured O-grid: a square core
// and rings that morph into the tooth outline, rings through the PDL, and bone rings blending
// into the block boundary. The 2D grid is extruded through layers (bone bottom .. occlusal face)
// and each prism is cut into three tetrahedra with the minimum-global-index diagonal rule,
// which makes shared quad faces between blocks conforming.

namespace odonto::synth {

using mesh::Domain;
using mesh::SurfaceMesh;
using mesh::Tet;
using mesh::TetMesh;
using mesh::Tri;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kCoreHalf = 0.45;  // half side of the core square in normalised coordinates
constexpr double kGrowth = 1.3;

struct Vec2 {
    double x = 0.0, y = 0.0;
};

int round_up4(double n) { return std::max(16, 4 * static_cast<int>(std::ceil(n / 4.0 - 1e-9))); }

double ellipse_perimeter(double a, double b) {
    const double h = (a - b) * (a - b) / ((a + b) * (a + b));
    return kPi * (a + b) * (1.0 + 3.0 * h / (10.0 + std::sqrt(4.0 - 3.0 * h)));
}

// Cumulative fractions (last = 1) of steps growing geometrically from h0, capped at h1.
std::vector<double> graded_fractions(double length, double h0, double h1) {
    std::vector<double> sizes;
    double sum = 0.0, s = h0;
    while (sum < length) {
        sizes.push_back(s);
        sum += s;
        s = std::min(s * kGrowth, h1);
    }
    if (sizes.size() > 1 && sum - length > 0.5 * sizes.back()) {
        sum -= sizes.back();
        sizes.pop_back();
    }
    std::vector<double> frac;
    double acc = 0.0;
    for (double v : sizes) frac.push_back((acc += v) / sum);
    frac.back() = 1.0;
    return frac;
}

// Arc length of y = -x^2 / (2 rho) from 0 to x and its inverse.
double arch_arc(double x, double rho) {
    const double u = x / rho;
    return 0.5 * x * std::sqrt(1.0 + u * u) + 0.5 * rho * std::asinh(u);
}

double arch_x(double sigma, double rho) {
    double x = sigma;
    for (int it = 0; it < 100; ++it) {
        const double f = arch_arc(x, rho) - sigma;
        const double dx = f / std::sqrt(1.0 + (x / rho) * (x / rho));
        x -= dx;
        if (std::abs(dx) < 1e-15 * (1.0 + std::abs(x))) break;
    }
    return x;
}

struct ArchPoint {
    Vec3 p, tangent, normal;
};

ArchPoint arch_point(double sigma, double rho) {
    const double x = arch_x(sigma, rho);
    ArchPoint a;
    a.p = {x, -x * x / (2.0 * rho), 0.0};
    a.tangent = Vec3(1.0, -x / rho, 0.0).normalized();
    a.normal = Vec3(x / rho, 1.0, 0.0).normalized();
    return a;
}

// Parametric half-angle so that the patch on the crown ellipse spans `width` of arc (averaged
// over the patch height) around the buccal point.
double patch_half_angle(const ToothTemplate& t, double z_lo, double z_hi) {
    auto arc = [&](double z, double phi) {
        const double a = t.crown_md(z), b = t.crown_bl(z);
        const int n = 64;
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            const double u = kPi / 2 + phi * (i + 0.5) / n;
            s += std::hypot(a * std::sin(u), b * std::cos(u));
        }
        return 2.0 * s * phi / n;
    };
    auto mean_width = [&](double phi) {
        const int nz = 32;
        double w = 0.0;
        for (int i = 0; i < nz; ++i) w += arc(z_lo + (z_hi - z_lo) * (i + 0.5) / nz, phi);
        return w / nz;
    };
    double lo = 0.0, hi = 0.5 * kPi;
    for (int it = 0; it < 100; ++it) {
        const double mid = 0.5 * (lo + hi);
        (mean_width(mid) < t.patch_width ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

void split_prism(const std::array<int, 6>& v, std::vector<Tet>& out) {
    static constexpr int kPerm[6][6] = {{0, 1, 2, 3, 4, 5}, {1, 2, 0, 4, 5, 3}, {2, 0, 1, 5, 3, 4},
                                        {3, 5, 4, 0, 2, 1}, {4, 3, 5, 1, 0, 2}, {5, 4, 3, 2, 1, 0}};
    const int imin = static_cast<int>(std::min_element(v.begin(), v.end()) - v.begin());
    int V[6] = {};
    for (const auto& p : kPerm)
        if (p[0] == imin)
            for (int i = 0; i < 6; ++i) V[i] = v[p[i]];
    if (std::min(V[1], V[5]) < std::min(V[2], V[4])) {
        out.push_back({V[0], V[1], V[2], V[5]});
        out.push_back({V[0], V[1], V[5], V[4]});
        out.push_back({V[0], V[4], V[5], V[3]});
    } else {
        out.push_back({V[0], V[1], V[2], V[4]});
        out.push_back({V[0], V[4], V[2], V[5]});
        out.push_back({V[0], V[4], V[5], V[3]});
    }
}

constexpr double kApexWidening = 0.5;  // horizontal per vertical mm below the apex

struct Sizes {
    double tooth, pdl, bone_near, bone_far;
    // First bone step next to the PDL; small enough that bone cells sharing the thin PDL
    // layers stay as shapely as the PDL cells themselves.
    double first_bone() const { return std::min(bone_near, std::max(pdl, 0.5 * bone_near)); }
};

Sizes effective_sizes(const MeshSizing& s, int level, double factor) {
    const double f = std::pow(factor, -static_cast<double>(level) / 3.0);
    return {s.tooth_edge * f, s.pdl_edge * f, s.bone_edge_near * f, s.bone_edge_far * f};
}

// Global mesh under construction.
struct Sink {
    std::vector<Vec3> nodes;
    std::vector<Tet> tets;
    std::vector<Domain> doms;

    int add_node(const Vec3& p) {
        nodes.push_back(p);
        return static_cast<int>(nodes.size()) - 1;
    }
};

enum class Region { Tooth, Pdl, Bone };

// Layer plan for one block (local z, bottom to top).
struct Layers {
    std::vector<double> z;
    int apex_bottom = 0;  // first PDL layer below the apex
    int apex = 0;         // apex layer
    int cej = 0;          // CEJ layer (z = 0), == number of bone layers
    int top() const { return static_cast<int>(z.size()) - 1; }
};

int crown_segments(double len, double h) { return std::max(1, static_cast<int>(std::lround(len / h))); }

struct ToothDiscretisation {
    int n_theta = 16;
    int n_tooth_rings = 1;
    int n_pdl = 1;
    int n_root_layers = 2;
    int n_below_min = 1;
    double z_patch_lo = 0.0, z_patch_hi = 0.0, patch_phi = 0.0;
};

ToothDiscretisation discretise(const ToothTemplate& t, double pdl, double depth_below, const Sizes& h) {
    ToothDiscretisation d;
    const double contour_md = std::max(t.crown_md(t.crown_height * 0.35), t.root_md(0.0));
    const double contour_bl = std::max(t.crown_bl(t.crown_height * 0.35), t.root_bl(0.0));
    d.n_theta = round_up4(ellipse_perimeter(contour_md, contour_bl) / h.tooth);
    const double r_mean = 0.5 * (t.root_md(0.0) + t.root_bl(0.0));
    d.n_tooth_rings = std::max(1, static_cast<int>(std::lround((1.0 - 1.2 * kCoreHalf) * r_mean / h.tooth)));
    d.n_pdl = std::max(1, static_cast<int>(std::lround(pdl / h.pdl)));
    const double rb = t.root_radius_bottom, rt = t.root_radius_top;
    const double stretch = std::abs(rt - rb) < 1e-9 * rt ? 1.0 : rt * std::log(rt / rb) / (rt - rb);
    d.n_root_layers = std::max(2, static_cast<int>(std::lround(stretch * t.root_length / h.tooth)));
    d.n_below_min = static_cast<int>(graded_fractions(depth_below, h.first_bone(), h.bone_far).size());
    const double zc = 0.5 * t.crown_height;
    d.z_patch_lo = zc - 0.5 * t.patch_height;
    d.z_patch_hi = zc + 0.5 * t.patch_height;
    d.patch_phi = patch_half_angle(t, d.z_patch_lo, d.z_patch_hi);
    return d;
}

Layers make_layers(const ToothTemplate& t, const ToothDiscretisation& d, double pdl, double depth, int n_below,
                   const Sizes& h) {
    Layers L;
    const double z_apex = -t.root_length;
    const double z_bottom_pdl = z_apex - pdl;
    const double below = depth - t.root_length - pdl;
    if (n_below > 0) {
        const double gamma =
            n_below > 1 ? std::clamp(std::log(below / h.first_bone()) / std::log(static_cast<double>(n_below)), 1.0, 3.0)
                        : 1.0;
        for (int m = 0; m < n_below; ++m)
            L.z.push_back(z_bottom_pdl - below * std::pow(static_cast<double>(n_below - m) / n_below, gamma));
    }
    L.apex_bottom = static_cast<int>(L.z.size());
    for (int m = 0; m < d.n_pdl; ++m) L.z.push_back(z_bottom_pdl + pdl * m / d.n_pdl);
    L.apex = static_cast<int>(L.z.size());
    // Layer spacing proportional to the local root radius (log-spaced radii).
    const double rb = t.root_radius_bottom, rt = t.root_radius_top;
    for (int m = 0; m < d.n_root_layers; ++m) {
        const double s = static_cast<double>(m) / d.n_root_layers;
        const double frac = std::abs(rt - rb) < 1e-9 * rt ? s : (rb * std::pow(rt / rb, s) - rb) / (rt - rb);
        L.z.push_back(z_apex + t.root_length * frac);
    }
    L.cej = static_cast<int>(L.z.size());
    auto band = [&](double a, double b) {
        const int n = crown_segments(b - a, h.tooth);
        for (int m = 0; m < n; ++m) L.z.push_back(a + (b - a) * m / n);
    };
    band(0.0, d.z_patch_lo);
    band(d.z_patch_lo, d.z_patch_hi);
    band(d.z_patch_hi, t.crown_height);
    L.z.push_back(t.crown_height);
    return L;
}

// One tooth block. Boundary ring nodes (given in world coordinates with their global ids per
// bone layer) are supplied by the caller; an empty boundary means "tooth only".
class BlockBuilder {
public:
    BlockBuilder(const ToothTemplate& tooth, const Frame& frame, const ToothDiscretisation& disc, const Layers& layers,
                 double pdl, const std::vector<Vec3>& boundary_local, int n_bone_rings, std::vector<double> bone_w)
        : t_(tooth), f_(frame), d_(disc), L_(layers), pdl_(pdl), n_br_(n_bone_rings), bone_w_(std::move(bone_w)) {
        n_theta_ = static_cast<int>(boundary_local.size());
        n_c_ = n_theta_ / 4;
        n_tr_ = d_.n_tooth_rings;
        boundary_cej_ = boundary_local;
        n_p_ = d_.n_pdl;
        make_angles(boundary_local);
        make_core();
    }

    int n_rings() const { return n_tr_ + n_p_ + n_br_; }
    int n2d() const { return (n_c_ + 1) * (n_c_ + 1) + n_theta_ * n_rings(); }
    int ring_node(int q, int k) const {
        k = ((k % n_theta_) + n_theta_) % n_theta_;
        if (q == 0) return core_perimeter(k);
        return (n_c_ + 1) * (n_c_ + 1) + (q - 1) * n_theta_ + k;
    }

    /// Emits elements for the requested regions. `boundary_ids[k][m]` holds global ids of the
    /// block boundary ring for bone layers m = 0..cej and `boundary_world[k][m]` their positions.
    void build(Sink& sink, bool with_pdl, bool with_bone, const std::vector<std::vector<int>>* boundary_ids,
               const std::vector<std::vector<Vec3>>* boundary_world) {
        boundary_ids_ = boundary_ids;
        boundary_world_ = boundary_world;
        ids_.assign(static_cast<std::size_t>(n2d()) * L_.z.size(), -1);
        const int n_layers = L_.top();
        const auto cells = make_cells();
        for (int m = 0; m < n_layers; ++m) {
            for (const auto& c : cells) {
                Domain dom;
                if (!element_domain(c.region, m, dom)) continue;
                if (dom.kind == mesh::DomainKind::Pdl && !with_pdl) continue;
                if (dom.kind == mesh::DomainKind::Bone && !with_bone) continue;
                for (const auto& tri : c.tris) {
                    std::array<int, 6> v{};
                    for (int i = 0; i < 3; ++i) {
                        v[i] = node_id(sink, tri[i], m);
                        v[i + 3] = node_id(sink, tri[i], m + 1);
                    }
                    std::vector<Tet> tets;
                    split_prism(v, tets);
                    for (auto tet : tets) {
                        const double vol = mesh::tet_volume(sink.nodes[tet[0]], sink.nodes[tet[1]], sink.nodes[tet[2]],
                                                            sink.nodes[tet[3]]);
                        if (vol < 0.0) std::swap(tet[2], tet[3]);
                        if (std::abs(vol) < 1e-12)
                            throw Error("meshing failure: flat element in block of tooth " + std::to_string(t_.unn));
                        sink.tets.push_back(tet);
                        sink.doms.push_back(dom);
                    }
                }
            }
        }
    }

    /// Local position of the patch reference: normalised angle span and height band.
    double patch_phi() const { return d_.patch_phi; }

private:
    struct Cell {
        Region region;
        std::vector<std::array<int, 3>> tris;
    };

    const ToothTemplate& t_;
    Frame f_;
    ToothDiscretisation d_;
    Layers L_;
    double pdl_;
    int n_br_;
    std::vector<double> bone_w_;
    int n_theta_ = 0, n_c_ = 0, n_tr_ = 0, n_p_ = 0;
    std::vector<double> phi_;
    std::vector<Vec3> boundary_cej_;
    std::vector<Vec2> uv_;  // normalised 2D positions of tooth nodes (core + tooth rings)
    std::vector<int> ids_;
    const std::vector<std::vector<int>>* boundary_ids_ = nullptr;
    const std::vector<std::vector<Vec3>>* boundary_world_ = nullptr;

    int core_node(int i, int j) const { return i + j * (n_c_ + 1); }

    int core_perimeter(int k) const {
        if (k < n_c_) return core_node(k, 0);
        if (k < 2 * n_c_) return core_node(n_c_, k - n_c_);
        if (k < 3 * n_c_) return core_node(3 * n_c_ - k, n_c_);
        return core_node(0, 4 * n_c_ - k);
    }

    // Ring index of a 2D node (0 for core nodes) and its perimeter index.
    std::pair<int, int> ring_of(int n) const {
        const int nc = (n_c_ + 1) * (n_c_ + 1);
        if (n < nc) return {0, -1};
        return {1 + (n - nc) / n_theta_, (n - nc) % n_theta_};
    }

    void make_angles(const std::vector<Vec3>& boundary_local) {
        const double a0 = t_.root_md(0.0), b0 = t_.root_bl(0.0);
        std::vector<double> theta(n_theta_);
        for (int k = 0; k < n_theta_; ++k) {
            theta[k] = std::atan2(boundary_local[k].y() / b0, boundary_local[k].x() / a0);
            if (k > 0)
                while (theta[k] <= theta[k - 1]) theta[k] += 2.0 * kPi;
        }
        phi_.resize(n_theta_);
        for (int k = 0; k < n_theta_; ++k) phi_[k] = 0.5 * theta[k] + 0.5 * (theta[0] + 2.0 * kPi * k / n_theta_);

        // Pin two angular grid lines on the patch edges around the buccal point (pi/2).
        const double lo = 0.5 * kPi - d_.patch_phi, hi = 0.5 * kPi + d_.patch_phi;
        auto nearest = [&](double target) {
            int best = 0;
            for (int k = 1; k < n_theta_; ++k)
                if (std::abs(phi_[k] - target) < std::abs(phi_[best] - target)) best = k;
            return best;
        };
        const int kmid = nearest(0.5 * kPi);
        int k1 = std::min(nearest(lo), kmid - 1), k2 = std::max(nearest(hi), kmid + 1);
        if (k1 <= 0 || k2 >= n_theta_) throw Error("meshing failure: bracket patch straddles the grid seam");
        const double p0 = phi_[0], p1 = phi_[k1], p2 = phi_[k2], p3 = phi_[0] + 2.0 * kPi;
        for (int k = 0; k < n_theta_; ++k) {
            const double p = phi_[k];
            if (k <= k1)
                phi_[k] = p0 + (lo - p0) * (p - p0) / (p1 - p0);
            else if (k <= k2)
                phi_[k] = lo + (hi - lo) * static_cast<double>(k - k1) / (k2 - k1);
            else
                phi_[k] = hi + (p3 - hi) * (p - p2) / (p3 - p2);
        }
    }

    void make_core() {
        uv_.resize((n_c_ + 1) * (n_c_ + 1) + n_theta_ * n_tr_);
        for (int j = 0; j <= n_c_; ++j)
            for (int i = 0; i <= n_c_; ++i)
                uv_[core_node(i, j)] = {kCoreHalf * (-1.0 + 2.0 * i / n_c_), kCoreHalf * (-1.0 + 2.0 * j / n_c_)};
        for (int q = 1; q <= n_tr_; ++q) {
            const double s = static_cast<double>(q) / n_tr_;
            for (int k = 0; k < n_theta_; ++k) {
                const Vec2 sq = uv_[core_perimeter(k)];
                uv_[ring_node(q, k)] = {(1.0 - s) * sq.x + s * std::cos(phi_[k]), (1.0 - s) * sq.y + s * std::sin(phi_[k])};
            }
        }
    }

    std::vector<Cell> make_cells() const {
        std::vector<Cell> cells;
        auto add_quad = [&](Region r, int a, int b, int c, int d) {
            // Split along the shorter diagonal in normalised CEJ coordinates.
            const Vec3 pa = local_pos(a, L_.cej), pb = local_pos(b, L_.cej), pc = local_pos(c, L_.cej),
                       pd = local_pos(d, L_.cej);
            Cell cell{r, {}};
            if ((pa - pc).squaredNorm() <= (pb - pd).squaredNorm())
                cell.tris = {{a, b, c}, {a, c, d}};
            else
                cell.tris = {{a, b, d}, {b, c, d}};
            cells.push_back(std::move(cell));
        };
        for (int j = 0; j < n_c_; ++j)
            for (int i = 0; i < n_c_; ++i)
                add_quad(Region::Tooth, core_node(i, j), core_node(i + 1, j), core_node(i + 1, j + 1), core_node(i, j + 1));
        for (int q = 1; q <= n_rings(); ++q) {
            const Region r = q <= n_tr_ ? Region::Tooth : (q <= n_tr_ + n_p_ ? Region::Pdl : Region::Bone);
            for (int k = 0; k < n_theta_; ++k)
                add_quad(r, ring_node(q - 1, k), ring_node(q, k), ring_node(q, k + 1), ring_node(q - 1, k + 1));
        }
        return cells;
    }

    bool element_domain(Region r, int m, Domain& out) const {
        if (m >= L_.cej) {
            if (r != Region::Tooth) return false;
            out = Domain::tooth(t_.unn);
        } else if (m >= L_.apex) {
            out = r == Region::Tooth ? Domain::tooth(t_.unn) : (r == Region::Pdl ? Domain::pdl(t_.unn) : Domain::bone());
        } else if (m >= L_.apex_bottom) {
            out = r == Region::Bone ? Domain::bone() : Domain::pdl(t_.unn);
        } else {
            out = Domain::bone();
        }
        return true;
    }

    // Root cross-section at layer m (apex section below the apex).
    std::pair<double, double> section(int m) const {
        const double z = L_.z[m];
        if (m > L_.cej) return {t_.crown_md(z), t_.crown_bl(z)};
        return root_section(z);
    }

    // Below the PDL the (bone) core widens gently so that cells keep pace with the growing
    // layer thickness without shearing the thin first layers.
    std::pair<double, double> root_section(double z) const {
        const double zz = std::clamp(z, -t_.root_length, 0.0);
        double a = t_.root_md(zz), b = t_.root_bl(zz);
        const double below = -t_.root_length - pdl_ - z;
        if (below > 0.0) {
            a = std::max(a, std::min(a + kApexWidening * below, 0.7 * t_.root_md(0.0)));
            b = std::max(b, std::min(b + kApexWidening * below, 0.7 * t_.root_bl(0.0)));
        }
        return {a, b};
    }

    // Outward horizontal offset that keeps normal distance `dist` from the root surface.
    Vec3 pdl_point(int k, int m, double dist) const {
        const double z = L_.z[m];
        const auto [a, b] = root_section(z);
        const double da = (t_.root_md(0.0) - t_.root_md(-t_.root_length)) / t_.root_length;
        const double db = (t_.root_bl(0.0) - t_.root_bl(-t_.root_length)) / t_.root_length;
        const double c = std::cos(phi_[k]), s = std::sin(phi_[k]);
        const Vec3 n(b * c, a * s, -a * db * s * s - b * da * c * c);
        const Vec3 nh(b * c, a * s, 0.0);
        double off = dist * n.norm() / nh.norm();
        return Vec3(a * c, b * s, z) + off * nh.normalized();
    }

    Vec3 boundary_local(int k, int m) const {
        if (boundary_world_) return f_.to_local((*boundary_world_)[k][m]);
        return {boundary_cej_[k].x(), boundary_cej_[k].y(), L_.z[m]};
    }

    Vec3 local_pos(int n, int m) const {
        const auto [q, k] = ring_of(n);
        if (q <= n_tr_) {
            const auto [a, b] = section(m);
            return {a * uv_[n].x, b * uv_[n].y, L_.z[m]};
        }
        if (q <= n_tr_ + n_p_) return pdl_point(k, m, pdl_ * (q - n_tr_) / n_p_);
        const Vec3 inner = pdl_point(k, m, pdl_);
        const Vec3 outer = boundary_local(k, m);
        const double w = bone_w_[q - n_tr_ - n_p_ - 1];
        return inner + w * (outer - inner);
    }

    int node_id(Sink& sink, int n, int m) {
        int& id = ids_[static_cast<std::size_t>(n) * L_.z.size() + m];
        if (id >= 0) return id;
        const auto [q, k] = ring_of(n);
        if (q == n_rings()) {
            id = (*boundary_ids_)[k][m];
            return id;
        }
        id = sink.add_node(f_.to_world(local_pos(n, m)));
        return id;
    }
};

std::array<int, 3> sorted_face(Tri f) {
    std::sort(f.begin(), f.end());
    return f;
}

// Tooth-only block with a virtual square boundary; used for surfaces.
TetMesh tooth_solid(const ToothTemplate& t, const Frame& frame, const Sizes& h, double* patch_phi,
                    ToothDiscretisation* disc_out) {
    const double pdl = 0.2;
    ToothDiscretisation d = discretise(t, pdl, 1.0, h);
    const Layers L = make_layers(t, d, pdl, t.root_length + pdl + 1.0, 0, h);
    const double half = 2.0 * std::max(t.crown_radius, t.root_md(0.0));
    const int n_side = d.n_theta / 4;
    std::vector<Vec3> boundary;
    const Vec2 corners[4] = {{-half, -half}, {half, -half}, {half, half}, {-half, half}};
    for (int s = 0; s < 4; ++s)
        for (int i = 0; i < n_side; ++i) {
            const Vec2 a = corners[s], b = corners[(s + 1) % 4];
            const double u = static_cast<double>(i) / n_side;
            boundary.emplace_back(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y), 0.0);
        }
    BlockBuilder block(t, frame, d, L, pdl, boundary, 1, {1.0});
    Sink sink;
    block.build(sink, false, false, nullptr, nullptr);
    if (patch_phi) *patch_phi = block.patch_phi();
    if (disc_out) *disc_out = d;
    TetMesh m;
    m.nodes = std::move(sink.nodes);
    m.elements = std::move(sink.tets);
    m.domain_of_element = std::move(sink.doms);
    return m;
}

bool in_patch(const ToothTemplate& t, const Frame& frame, const ToothDiscretisation& d, double phi_p, const Vec3& c_world) {
    const Vec3 c = frame.to_local(c_world);
    if (c.z() <= d.z_patch_lo || c.z() >= d.z_patch_hi) return false;
    const double ang = std::atan2(c.y() / t.crown_bl(c.z()), c.x() / t.crown_md(c.z()));
    return std::abs(ang - 0.5 * kPi) < phi_p;
}

Vec3 centroid(const std::vector<Vec3>& nodes, const Tri& f) { return (nodes[f[0]] + nodes[f[1]] + nodes[f[2]]) / 3.0; }

}  // namespace

// ---------------------------------------------------------------- arch layout

namespace {

struct BlockLayout {
    std::vector<int> order;     // indices into patient.teeth sorted by UNN
    std::vector<double> sides;  // arc positions of the block sides (n + 1)
    double depth = 0.0;         // bucco-lingual size of every block
};

BlockLayout block_layout(const PatientTemplate& p) {
    BlockLayout b;
    b.order.resize(p.teeth.size());
    std::iota(b.order.begin(), b.order.end(), 0);
    std::sort(b.order.begin(), b.order.end(), [&](int x, int y) { return p.teeth[x].unn < p.teeth[y].unn; });
    std::vector<double> widths;
    double bl = 0.0;
    for (int i : b.order) {
        const auto& t = p.teeth[i];
        const double crown = std::max(t.crown_radius, t.root_md(0.0));
        widths.push_back(std::max(2.0 * crown + p.crown_gap, 2.0 * (t.root_md(0.0) + p.pdl_thickness) + p.interproximal_bone));
        bl = std::max(bl, t.root_bl(0.0));
    }
    b.depth = 2.0 * (bl + p.pdl_thickness + p.bone_wall);
    const double total = std::accumulate(widths.begin(), widths.end(), 0.0);
    double acc = 0.0;
    b.sides.push_back(-0.5 * total);
    for (double w : widths) b.sides.push_back(-0.5 * total + (acc += w));
    return b;
}

}  // namespace

std::vector<Frame> arch_layout(const PatientTemplate& patient) {
    patient.validate();
    const auto b = block_layout(patient);
    std::vector<Frame> frames(patient.teeth.size());
    for (std::size_t i = 0; i < b.order.size(); ++i) {
        const auto& t = patient.teeth[b.order[i]];
        const auto a = arch_point(0.5 * (b.sides[i] + b.sides[i + 1]), patient.arch_radius);
        Frame f;
        f.origin = a.p;
        f.buccal = a.normal;
        f.axis = Vec3::UnitZ();
        f.mesial = t.right_side() ? -a.tangent : a.tangent;
        frames[b.order[i]] = f;
    }
    // Neighbouring crowns must not overlap.
    for (std::size_t i = 0; i + 1 < b.order.size(); ++i) {
        const auto& t0 = patient.teeth[b.order[i]];
        const auto& t1 = patient.teeth[b.order[i + 1]];
        const double r0 = std::max(t0.crown_radius, t0.root_md(0.0)), r1 = std::max(t1.crown_radius, t1.root_md(0.0));
        const double dist = (frames[b.order[i]].origin - frames[b.order[i + 1]].origin).norm();
        if (dist < r0 + r1)
            throw InvalidInput("teeth " + std::to_string(t0.unn) + " and " + std::to_string(t1.unn) + " interpenetrate");
    }
    return frames;
}

// -------------------------------------------------------------- tooth surface

SurfaceMesh synth_tooth(const ToothTemplate& tooth, const MeshSizing& sizing) {
    tooth.validate();
    const Frame frame = tooth.frame.value_or(Frame::standard(tooth.unn));
    const Sizes h = effective_sizes(sizing, 0, 2.0);
    double phi_p = 0.0;
    ToothDiscretisation d;
    const TetMesh solid = tooth_solid(tooth, frame, h, &phi_p, &d);
    std::vector<int> all(solid.elements.size());
    std::iota(all.begin(), all.end(), 0);
    const auto faces = solid.boundary_faces(all);

    SurfaceMesh s;
    std::unordered_map<int, int> remap;
    auto vid = [&](int n) {
        auto [it, inserted] = remap.try_emplace(n, static_cast<int>(s.vertices.size()));
        if (inserted) s.vertices.push_back(solid.nodes[n]);
        return it->second;
    };
    for (const auto& f : faces) {
        s.triangles.push_back({vid(f[0]), vid(f[1]), vid(f[2])});
        const Vec3 c = centroid(solid.nodes, f);
        const double z = frame.to_local(c).z();
        if (in_patch(tooth, frame, d, phi_p, c))
            s.face_labels.emplace_back("load_patch");
        else
            s.face_labels.emplace_back(z > 0.0 ? "crown" : "root");
    }
    return s;
}

// ---------------------------------------------------------------- PDL shell

SurfaceMesh synth_pdl(const SurfaceMesh& tooth, double thickness) {
    if (!(thickness > 0.0)) throw InvalidInput("PDL thickness must be positive");
    if (tooth.face_labels.size() != tooth.triangles.size()) throw InvalidInput("tooth surface has no face labels");
    std::vector<int> root_faces;
    for (std::size_t f = 0; f < tooth.triangles.size(); ++f)
        if (tooth.face_labels[f] == "root") root_faces.push_back(static_cast<int>(f));
    if (root_faces.empty()) throw InvalidInput("tooth surface has no root faces");

    SurfaceMesh out;
    std::map<int, int> inner;  // tooth vertex -> shell vertex
    std::vector<Vec3> normal;
    for (int f : root_faces)
        for (int v : tooth.triangles[f])
            if (inner.try_emplace(v, static_cast<int>(inner.size())).second) normal.push_back(Vec3::Zero());
    out.vertices.resize(2 * inner.size());
    for (const auto& [v, i] : inner) out.vertices[i] = tooth.vertices[v];
    for (int f : root_faces) {
        const Vec3 n = tooth.face_normal(f);  // area weighted
        for (int v : tooth.triangles[f]) normal[inner[v]] += n;
    }
    const int n_in = static_cast<int>(inner.size());
    for (const auto& [v, i] : inner) {
        if (normal[i].norm() == 0.0) throw InvalidInput("degenerate root surface");
        out.vertices[n_in + i] = tooth.vertices[v] + thickness * normal[i].normalized();
    }

    std::map<std::pair<int, int>, int> directed;
    for (int f : root_faces) {
        const auto& t = tooth.triangles[f];
        const int a = inner[t[0]], b = inner[t[1]], c = inner[t[2]];
        out.triangles.push_back({a, c, b});
        out.face_labels.emplace_back("inner");
        out.triangles.push_back({n_in + a, n_in + b, n_in + c});
        out.face_labels.emplace_back("outer");
        for (int e = 0; e < 3; ++e) ++directed[{inner[t[e]], inner[t[(e + 1) % 3]]}];
        // Offset must not fold the face over.
        const Vec3 ni = tooth.face_normal(f);
        const Vec3 no = (out.vertices[n_in + b] - out.vertices[n_in + a]).cross(out.vertices[n_in + c] - out.vertices[n_in + a]);
        if (ni.dot(no) <= 0.0) throw InvalidInput("PDL offset self-intersects (thickness too large for the root)");
    }
    for (const auto& [e, count] : directed) {
        if (directed.contains({e.second, e.first})) continue;  // interior edge
        const int a = e.first, b = e.second;
        out.triangles.push_back({a, b, n_in + b});
        out.triangles.push_back({a, n_in + b, n_in + a});
        out.face_labels.emplace_back("rim");
        out.face_labels.emplace_back("rim");
    }
    return out;
}

// ----------------------------------------------------------------- assembly

TetMesh synth_assembly(const PatientTemplate& patient, AssemblyInfo* info) {
    const auto frames = arch_layout(patient);  // validates
    const auto layout = block_layout(patient);
    const Sizes h = effective_sizes(patient.sizing, patient.refinement_level, patient.refinement_factor);
    const double pdl = patient.pdl_thickness;
    const std::size_t nb = layout.order.size();

    double depth = 0.0;
    for (const auto& t : patient.teeth) depth = std::max(depth, t.root_length + pdl + patient.bone_depth_below_apex);

    std::vector<ToothDiscretisation> disc(nb);
    int n_bone_layers = 0;
    for (std::size_t i = 0; i < nb; ++i) {
        const auto& t = patient.teeth[layout.order[i]];
        disc[i] = discretise(t, pdl, depth - t.root_length - pdl, h);
        n_bone_layers = std::max(n_bone_layers, disc[i].n_below_min + disc[i].n_pdl + disc[i].n_root_layers);
    }

    // Block sides in world coordinates (lingual end, buccal end).
    std::vector<std::pair<Vec3, Vec3>> side_ends(nb + 1);
    for (std::size_t s = 0; s <= nb; ++s) {
        const auto a = arch_point(layout.sides[s], patient.arch_radius);
        side_ends[s] = {a.p - 0.5 * layout.depth * a.normal, a.p + 0.5 * layout.depth * a.normal};
    }

    // Node counts along the radial sides (shared) and the lingual/buccal sides (per block).
    double n_radial_sum = 0.0;
    for (std::size_t i = 0; i < nb; ++i) {
        const double w = layout.sides[i + 1] - layout.sides[i];
        const double theta = 2.0 * std::atan2(0.5 * layout.depth, 0.5 * w);
        n_radial_sum += disc[i].n_theta * theta / (2.0 * kPi);
    }
    const int n_radial = std::max(2, static_cast<int>(std::lround(n_radial_sum / nb)));
    std::vector<int> n_side(nb);
    for (std::size_t i = 0; i < nb; ++i) {
        int ns = std::max(2, static_cast<int>(std::lround(0.5 * (disc[i].n_theta - 2 * n_radial))));
        if ((ns + n_radial) % 2 != 0) ++ns;
        n_side[i] = ns;
        disc[i].n_theta = 2 * (n_radial + ns);
    }

    std::vector<double> Z(n_bone_layers + 1);
    for (int m = 0; m <= n_bone_layers; ++m) Z[m] = -depth + depth * m / n_bone_layers;

    Sink sink;
    // Shared radial side nodes: side_ids[s][r][m], r from lingual (0) to buccal (n_radial).
    std::vector<std::vector<std::vector<int>>> side_ids(nb + 1);
    std::vector<std::vector<std::vector<Vec3>>> side_pos(nb + 1);
    for (std::size_t s = 0; s <= nb; ++s) {
        side_ids[s].assign(n_radial + 1, std::vector<int>(n_bone_layers + 1));
        side_pos[s].assign(n_radial + 1, std::vector<Vec3>(n_bone_layers + 1));
        for (int r = 0; r <= n_radial; ++r)
            for (int m = 0; m <= n_bone_layers; ++m) {
                Vec3 p = side_ends[s].first + (side_ends[s].second - side_ends[s].first) * (static_cast<double>(r) / n_radial);
                p.z() = Z[m];
                side_pos[s][r][m] = p;
                side_ids[s][r][m] = sink.add_node(p);
            }
    }

    AssemblyInfo local_info;
    local_info.bone_depth = depth;
    std::vector<double> patch_phis(nb);
    for (std::size_t i = 0; i < nb; ++i) {
        const auto& t = patient.teeth[layout.order[i]];
        const Frame& f = frames[layout.order[i]];
        const std::size_t mesial_side = t.right_side() ? i : i + 1;
        const std::size_t distal_side = t.right_side() ? i + 1 : i;
        const int nr = n_radial, ns = n_side[i];
        const int n_theta = disc[i].n_theta;
        const int nl = n_bone_layers + 1;

        // Boundary ring, counter-clockwise in local (mesial, buccal): lingual, mesial, buccal, distal.
        std::vector<std::vector<int>> ring_ids(n_theta, std::vector<int>(nl));
        std::vector<std::vector<Vec3>> ring_pos(n_theta, std::vector<Vec3>(nl));
        auto set_from_side = [&](int k, std::size_t s, int r) {
            ring_ids[k] = side_ids[s][r];
            ring_pos[k] = side_pos[s][r];
        };
        for (int k = 0; k < n_theta; ++k) {
            if (k == 0) {
                set_from_side(k, distal_side, 0);
            } else if (k < ns) {
                const Vec3 a = side_pos[distal_side][0][0], b = side_pos[mesial_side][0][0];
                for (int m = 0; m < nl; ++m) {
                    Vec3 p = a + (b - a) * (static_cast<double>(k) / ns);
                    p.z() = Z[m];
                    ring_pos[k][m] = p;
                    ring_ids[k][m] = sink.add_node(p);
                }
            } else if (k <= ns + nr) {
                set_from_side(k, mesial_side, k - ns);
            } else if (k < 2 * ns + nr) {
                const Vec3 a = side_pos[mesial_side][nr][0], b = side_pos[distal_side][nr][0];
                for (int m = 0; m < nl; ++m) {
                    Vec3 p = a + (b - a) * (static_cast<double>(k - ns - nr) / ns);
                    p.z() = Z[m];
                    ring_pos[k][m] = p;
                    ring_ids[k][m] = sink.add_node(p);
                }
            } else {
                set_from_side(k, distal_side, 2 * ns + 2 * nr - k);
            }
        }
        std::vector<Vec3> boundary_local(n_theta);
        for (int k = 0; k < n_theta; ++k) boundary_local[k] = f.to_local(ring_pos[k][n_bone_layers]);

        const int n_below = n_bone_layers - disc[i].n_pdl - disc[i].n_root_layers;
        const Layers L = make_layers(t, disc[i], pdl, depth, n_below, h);

        // Bone rings graded from the PDL to the block boundary.
        double gap = 0.0;
        for (int k = 0; k < n_theta; ++k) {
            const Vec3 b = boundary_local[k];
            const double ph = std::atan2(b.y() / t.root_bl(0.0), b.x() / t.root_md(0.0));
            const Vec3 s(t.root_md(0.0) * std::cos(ph), t.root_bl(0.0) * std::sin(ph), 0.0);
            gap += std::max(0.0, (b - s).norm() - pdl);
        }
        gap /= n_theta;
        const auto bone_w = graded_fractions(gap, h.first_bone(), h.bone_far);

        BlockBuilder block(t, f, disc[i], L, pdl, boundary_local, static_cast<int>(bone_w.size()), bone_w);
        block.build(sink, true, true, &ring_ids, &ring_pos);
        patch_phis[i] = block.patch_phi();
        local_info.teeth.push_back({t.unn, f, t.crown_height, 0.0});
    }

    TetMesh mesh;
    mesh.nodes = std::move(sink.nodes);
    mesh.elements = std::move(sink.tets);
    mesh.domain_of_element = std::move(sink.doms);

    // Interfaces and boundary sets from face adjacency.
    std::map<std::array<int, 3>, std::vector<int>> face_elems;
    for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
        const auto& t = mesh.elements[e];
        static constexpr int kFaces[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
        for (const auto& lf : kFaces) face_elems[sorted_face({t[lf[0]], t[lf[1]], t[lf[2]]})].push_back(static_cast<int>(e));
    }
    auto neighbour = [&](const Tri& f, const Domain& own) -> std::optional<Domain> {
        for (int e : face_elems.at(sorted_face(f)))
            if (mesh.domain_of_element[e] != own) return mesh.domain_of_element[e];
        return std::nullopt;
    };

    for (std::size_t i = 0; i < nb; ++i) {
        const auto& t = patient.teeth[layout.order[i]];
        const Frame& f = frames[layout.order[i]];
        const Domain tooth = Domain::tooth(t.unn), pdl_dom = Domain::pdl(t.unn);
        mesh::BoundarySet patch, tp, pb;
        for (const auto& face : mesh.boundary_faces(mesh.elements_in(tooth))) {
            const auto other = neighbour(face, tooth);
            if (other == pdl_dom)
                tp.faces.push_back(face);
            else if (!other && in_patch(t, f, disc[i], patch_phis[i], centroid(mesh.nodes, face)))
                patch.faces.push_back(face);
        }
        for (const auto& face : mesh.boundary_faces(mesh.elements_in(pdl_dom)))
            if (neighbour(face, pdl_dom) == Domain::bone()) pb.faces.push_back(face);
        double area = 0.0;
        for (const auto& face : patch.faces) area += mesh.face_area(face);
        patch.recorded_area = area;
        local_info.teeth[i].patch_area = area;
        mesh.boundary_sets[patch_set(t.unn)] = std::move(patch);
        mesh.boundary_sets[tooth_pdl_set(t.unn)] = std::move(tp);
        mesh.boundary_sets[pdl_bone_set(t.unn)] = std::move(pb);
    }
    mesh::BoundarySet gamma_d;
    for (const auto& face : mesh.boundary_faces(mesh.elements_of_kind(mesh::DomainKind::Bone))) {
        bool bottom = true;
        for (int n : face) bottom = bottom && std::abs(mesh.nodes[n].z() + depth) < 1e-9;
        if (bottom) gamma_d.faces.push_back(face);
    }
    mesh.boundary_sets[kDirichletSet] = std::move(gamma_d);

    if (patient.tied_pdl_bone) {
        // Separate PDL from bone: PDL elements get their own copies of the interface nodes.
        std::map<int, int> dup;
        for (const auto& t : patient.teeth)
            for (int n : mesh.set_nodes(pdl_bone_set(t.unn)))
                if (!dup.contains(n)) dup[n] = -1;
        for (auto& [n, d] : dup) {
            d = static_cast<int>(mesh.nodes.size());
            mesh.nodes.push_back(mesh.nodes[n]);
        }
        for (std::size_t e = 0; e < mesh.elements.size(); ++e) {
            if (mesh.domain_of_element[e].kind != mesh::DomainKind::Pdl) continue;
            for (int& n : mesh.elements[e])
                if (auto it = dup.find(n); it != dup.end()) n = it->second;
        }
        for (const auto& t : patient.teeth) {
            auto& pb = mesh.boundary_sets[pdl_bone_set(t.unn)];
            mesh::BoundarySet socket;
            for (auto& face : pb.faces) {
                socket.faces.push_back({face[0], face[2], face[1]});
                for (int& n : face) n = dup.at(n);
            }
            mesh.boundary_sets[bone_socket_set(t.unn)] = std::move(socket);
        }
    }

    double worst = 0.0;
    for (std::size_t e = 0; e < mesh.elements.size(); ++e)
        worst = std::max(worst, mesh::radius_edge_ratio(mesh.element_points(e)));
    if (!(worst <= patient.max_radius_edge))
        throw Error("meshing failure: radius-edge ratio " + std::to_string(worst) + " exceeds limit " +
                    std::to_string(patient.max_radius_edge));

    // Sidecar metadata follows the patient's tooth order.
    if (info) {
        info->bone_depth = depth;
        info->teeth.clear();
        for (std::size_t j = 0; j < patient.teeth.size(); ++j)
            for (std::size_t i = 0; i < nb; ++i)
                if (layout.order[i] == static_cast<int>(j)) info->teeth.push_back(local_info.teeth[i]);
    }
    return mesh;
}

}  // namespace odonto::synth
