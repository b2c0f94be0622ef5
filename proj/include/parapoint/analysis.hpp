#pragma once

#include "parapoint/networks.hpp"
#include "parapoint/types.hpp"

#include <filesystem>
#include <optional>
#include <vector>

namespace parapoint {

// Points of P whose UV images jump away from their 3D neighborhood.
struct SeamSet {
    std::vector<int> indices;  // seam members, ascending
    std::vector<double> d;     // per-point max UV gap over the 3D neighborhood
    double t_cut = 0.0;
    int k_cut = 0;
};

// d_i = max UV distance to the K_cut nearest 3D neighbors; seam iff d_i > t_cut.
SeamSet extract_seams(const Points3& P, const Points2& Q, int k_cut, double t_cut);

// Unwrap(Cut(.)) on points already normalized with the training transform.
Points2 infer_uv(const SubNetworkSet& net, const Points3& p_dense);

// Mean |3D corner angle - UV corner angle| over all triangle corners, in
// radians. Degenerate 3D triangles are excluded (counted); degenerate UV
// corners contribute the pi cap.
double conformality_metric(const Points3& V, const std::vector<std::array<int, 3>>& F,
                           const Points2& UV, int* degenerate_triangles = nullptr);

// Fraction of points whose nearest UV neighbor lies closer than eps.
double uv_overlap_fraction(const Points2& q, double eps);

// Fraction of triangles whose UV winding disagrees with the majority.
double uv_flip_fraction(const std::vector<std::array<int, 3>>& F, const Points2& UV);

struct MetricReport {
    double conformality = 0.0;            // radians
    std::string conformality_source;      // "mesh" or "jacobian_proxy"
    std::optional<double> flip_fraction;  // mesh inputs only
    double uv_overlap_fraction = 0.0;
    double uv_overlap_eps = 0.0;
    double chamfer = 0.0;  // CD(Stitch(Wrap(Q)), P)
    int n_points = 0;
    int degenerate_triangles = 0;
};

// Full evaluation of a trained net on a (normalized) cloud, optionally with
// mesh connectivity for the angle-based metrics.
MetricReport evaluate_metrics(const SubNetworkSet& net, const Points3& P_normalized,
                              const std::vector<std::array<int, 3>>* faces, double eps_factor);

std::string metric_report_json(const MetricReport& r);

// Wavefront OBJ with per-vertex UVs min-max normalized to [0,1] per axis;
// faces reference v/vt pairs. Cloud-only input writes v + vt lines.
void export_uv_obj(const Points3& V, const std::vector<std::array<int, 3>>* faces,
                   const Points2& Q, const std::filesystem::path& path);

// One circle per point; the UV bounding box maps affinely onto a square
// viewport (v axis flipped, SVG-style).
void export_uv_svg(const Points2& Q, const Points3& colors, const std::filesystem::path& path);

}  // namespace parapoint
