#pragma once

#include <array>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "odonto/mesh.hpp"

namespace odonto::mesh {

enum class QualityMetric { VolumeEdgeRatio, RadiusRatio, RadiusEdgeRatio, MeanRatio };

inline constexpr std::array<QualityMetric, 4> kAllMetrics = {
    QualityMetric::VolumeEdgeRatio, QualityMetric::RadiusRatio, QualityMetric::RadiusEdgeRatio,
    QualityMetric::MeanRatio};

std::string metric_name(QualityMetric m);
QualityMetric metric_from_name(const std::string& name);

using TetPoints = std::array<Vec3, 4>;

/// 6*sqrt(2) V / l_rms^3. Regular tet = 1, degenerate or inverted = 0.
double volume_edge_ratio(const TetPoints& t);
/// Circumradius over shortest edge. Regular tet = sqrt(3/8); degenerate = +inf.
double radius_edge_ratio(const TetPoints& t);
/// 3 r_in / R_circ in [0, 1]. Degenerate = 0.
double radius_ratio(const TetPoints& t);
/// 12 (3V)^(2/3) / sum of squared edge lengths in [0, 1]. Degenerate = 0.
double mean_ratio_metric(const TetPoints& t);

double evaluate(QualityMetric m, const TetPoints& t);

double circumradius(const TetPoints& t);
double inradius(const TetPoints& t);

struct QualityHistogram {
    QualityMetric metric{};
    std::vector<double> bin_edges;
    std::vector<std::size_t> counts;
    double min = 0.0;
    double max = 0.0;
    double mean = 0.0;

    std::size_t total() const;
};

/// Metric value per element of `elements` (all elements when empty), in input order.
std::vector<double> metric_values(const TetMesh& mesh, QualityMetric m, const std::vector<int>& elements);

/// Histogram over the elements of the selected domains (all domains when `domains` is empty).
/// Bounded metrics are binned over [0, 1]; the radius-edge ratio over [sqrt(3/8), max finite].
/// Non-finite values land in the last bin.
QualityHistogram quality_histogram(const TetMesh& mesh, QualityMetric m, int n_bins,
                                   const std::vector<Domain>& domains = {});

struct QualityReportRow {
    std::string domain;
    std::size_t n_elements = 0;
    QualityMetric metric{};
    double min = 0.0, mean = 0.0, max = 0.0;
};

std::vector<QualityReportRow> quality_report(const TetMesh& mesh, const std::vector<Domain>& domains = {});

/// `metric,bin_lo,bin_hi,count` rows followed by one `<metric>:summary,min,max,total` row per histogram.
void write_histogram_csv(std::ostream& os, const std::vector<QualityHistogram>& hists);
/// `domain,n_elements,metric,min,mean,max`.
void write_report_csv(std::ostream& os, const std::vector<QualityReportRow>& rows);

}  // namespace odonto::mesh
