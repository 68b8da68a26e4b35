#include "odonto/quality.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "odonto/csv.hpp"

namespace odonto::mesh {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kEdges[6][2] = {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}};

double signed_volume(const TetPoints& t) { return tet_volume(t[0], t[1], t[2], t[3]); }

double sum_sq_edges(const TetPoints& t) {
    double s = 0.0;
    for (const auto& e : kEdges) s += (t[e[1]] - t[e[0]]).squaredNorm();
    return s;
}

double min_edge(const TetPoints& t) {
    double m = kInf;
    for (const auto& e : kEdges) m = std::min(m, (t[e[1]] - t[e[0]]).norm());
    return m;
}

double face_area_sum(const TetPoints& t) {
    return triangle_area(t[1], t[2], t[3]) + triangle_area(t[0], t[2], t[3]) + triangle_area(t[0], t[1], t[3]) +
           triangle_area(t[0], t[1], t[2]);
}

// Volumes below this fraction of l_rms^3 are treated as flat.
bool is_degenerate(const TetPoints& t) {
    const double l2 = sum_sq_edges(t) / 6.0;
    if (!(l2 > 0.0)) return true;
    return std::abs(signed_volume(t)) <= 1e-14 * l2 * std::sqrt(l2);
}

}  // namespace

std::string metric_name(QualityMetric m) {
    switch (m) {
        case QualityMetric::VolumeEdgeRatio: return "volume_edge_ratio";
        case QualityMetric::RadiusRatio: return "radius_ratio";
        case QualityMetric::RadiusEdgeRatio: return "radius_edge_ratio";
        case QualityMetric::MeanRatio: return "mean_ratio";
    }
    return "unknown";
}

QualityMetric metric_from_name(const std::string& name) {
    for (auto m : kAllMetrics)
        if (metric_name(m) == name) return m;
    throw InvalidInput("unknown quality metric '" + name + "'");
}

double circumradius(const TetPoints& t) {
    const Vec3 a = t[1] - t[0], b = t[2] - t[0], c = t[3] - t[0];
    const double six_v = a.dot(b.cross(c));
    if (six_v == 0.0) return kInf;
    const Vec3 num = a.squaredNorm() * b.cross(c) + b.squaredNorm() * c.cross(a) + c.squaredNorm() * a.cross(b);
    return num.norm() / (2.0 * std::abs(six_v));
}

double inradius(const TetPoints& t) {
    const double s = face_area_sum(t);
    return s > 0.0 ? 3.0 * std::abs(signed_volume(t)) / s : 0.0;
}

double volume_edge_ratio(const TetPoints& t) {
    if (is_degenerate(t)) return 0.0;
    const double v = signed_volume(t);
    if (v <= 0.0) return 0.0;
    const double l_rms = std::sqrt(sum_sq_edges(t) / 6.0);
    return 6.0 * std::sqrt(2.0) * v / (l_rms * l_rms * l_rms);
}

double radius_edge_ratio(const TetPoints& t) {
    if (is_degenerate(t)) return kInf;
    return circumradius(t) / min_edge(t);
}

double radius_ratio(const TetPoints& t) {
    if (is_degenerate(t) || signed_volume(t) <= 0.0) return 0.0;
    return std::min(1.0, 3.0 * inradius(t) / circumradius(t));
}

double mean_ratio_metric(const TetPoints& t) {
    if (is_degenerate(t)) return 0.0;
    const double v = signed_volume(t);
    if (v <= 0.0) return 0.0;
    return std::min(1.0, 12.0 * std::cbrt(3.0 * v * 3.0 * v) / sum_sq_edges(t));
}

double evaluate(QualityMetric m, const TetPoints& t) {
    switch (m) {
        case QualityMetric::VolumeEdgeRatio: return volume_edge_ratio(t);
        case QualityMetric::RadiusRatio: return radius_ratio(t);
        case QualityMetric::RadiusEdgeRatio: return radius_edge_ratio(t);
        case QualityMetric::MeanRatio: return mean_ratio_metric(t);
    }
    return 0.0;
}

std::size_t QualityHistogram::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

std::vector<double> metric_values(const TetMesh& mesh, QualityMetric m, const std::vector<int>& elements) {
    std::vector<double> out;
    if (elements.empty()) {
        out.reserve(mesh.elements.size());
        for (std::size_t e = 0; e < mesh.elements.size(); ++e) out.push_back(evaluate(m, mesh.element_points(e)));
    } else {
        out.reserve(elements.size());
        for (int e : elements) out.push_back(evaluate(m, mesh.element_points(e)));
    }
    return out;
}

namespace {

std::vector<int> select_elements(const TetMesh& mesh, const std::vector<Domain>& domains) {
    std::vector<int> sel;
    for (std::size_t e = 0; e < mesh.elements.size(); ++e)
        if (domains.empty() ||
            std::find(domains.begin(), domains.end(), mesh.domain_of_element[e]) != domains.end())
            sel.push_back(static_cast<int>(e));
    return sel;
}

}  // namespace

QualityHistogram quality_histogram(const TetMesh& mesh, QualityMetric m, int n_bins,
                                   const std::vector<Domain>& domains) {
    if (n_bins < 1) throw InvalidInput("n_bins must be >= 1");
    const auto sel = select_elements(mesh, domains);
    if (sel.empty()) throw InvalidInput("empty element selection for quality histogram");
    const auto values = metric_values(mesh, m, sel);

    QualityHistogram h;
    h.metric = m;
    h.min = *std::min_element(values.begin(), values.end());
    h.max = *std::max_element(values.begin(), values.end());
    h.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());

    double lo = 0.0, hi = 1.0;
    if (m == QualityMetric::RadiusEdgeRatio) {
        lo = std::sqrt(3.0 / 8.0);
        double max_finite = lo;
        for (double v : values)
            if (std::isfinite(v)) max_finite = std::max(max_finite, v);
        hi = max_finite > lo * (1.0 + 1e-9) ? max_finite : lo + 1.0;
    }
    h.bin_edges.resize(n_bins + 1);
    for (int i = 0; i <= n_bins; ++i) h.bin_edges[i] = lo + (hi - lo) * static_cast<double>(i) / n_bins;
    h.counts.assign(n_bins, 0);
    for (double v : values) {
        int bin = n_bins - 1;
        if (std::isfinite(v)) bin = std::clamp(static_cast<int>(std::floor((v - lo) / (hi - lo) * n_bins)), 0, n_bins - 1);
        ++h.counts[bin];
    }
    return h;
}

std::vector<QualityReportRow> quality_report(const TetMesh& mesh, const std::vector<Domain>& domains) {
    const auto doms = domains.empty() ? mesh.domains() : domains;
    std::vector<QualityReportRow> rows;
    for (const auto& d : doms) {
        const auto elems = mesh.elements_in(d);
        if (elems.empty()) continue;
        for (auto m : kAllMetrics) {
            const auto v = metric_values(mesh, m, elems);
            QualityReportRow r;
            r.domain = d.name();
            r.n_elements = elems.size();
            r.metric = m;
            r.min = *std::min_element(v.begin(), v.end());
            r.max = *std::max_element(v.begin(), v.end());
            r.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            rows.push_back(r);
        }
    }
    return rows;
}

void write_histogram_csv(std::ostream& os, const std::vector<QualityHistogram>& hists) {
    os << "metric,bin_lo,bin_hi,count\n";
    for (const auto& h : hists)
        for (std::size_t i = 0; i < h.counts.size(); ++i)
            os << metric_name(h.metric) << ',' << csv::num(h.bin_edges[i]) << ',' << csv::num(h.bin_edges[i + 1]) << ','
               << h.counts[i] << '\n';
    for (const auto& h : hists)
        os << metric_name(h.metric) << ":summary," << csv::num(h.min) << ',' << csv::num(h.max) << ',' << h.total()
           << '\n';
}

void write_report_csv(std::ostream& os, const std::vector<QualityReportRow>& rows) {
    os << "domain,n_elements,metric,min,mean,max\n";
    for (const auto& r : rows)
        os << r.domain << ',' << r.n_elements << ',' << metric_name(r.metric) << ',' << csv::num(r.min) << ','
           << csv::num(r.mean) << ',' << csv::num(r.max) << '\n';
}

}  // namespace odonto::mesh
