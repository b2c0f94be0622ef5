#include "parapoint/analysis.hpp"

#include "parapoint/geometry.hpp"
#include "parapoint/losses.hpp"
#include "parapoint/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace parapoint {

SeamSet extract_seams(const Points3& P, const Points2& Q, int k_cut, double t_cut) {
    if (P.cols() != Q.cols())
        throw std::invalid_argument("extract_seams: P and Q must correspond row-wise");
    const int n = static_cast<int>(P.cols());
    SeamSet out;
    out.t_cut = t_cut;
    out.k_cut = k_cut;
    out.d.assign(n, 0.0);
    if (n < 2) return out;
    const KdTree tree(P);
    const int k = std::min(k_cut, n - 1);
    for (int i = 0; i < n; ++i) {
        double dmax = 0.0;
        for (int j : tree.knn_point(i, k, true))
            dmax = std::max(dmax, (Q.col(i) - Q.col(j)).norm());
        out.d[i] = dmax;
        if (dmax > t_cut) out.indices.push_back(i);
    }
    return out;
}

Points2 infer_uv(const SubNetworkSet& net, const Points3& p_dense) {
    return net.unwrap_forward(net.cut_forward(p_dense));
}

namespace {

// corner angle at a, guarded; returns -1 when an adjacent edge has zero length
template <typename Vec>
double corner_angle(const Vec& a, const Vec& b, const Vec& c) {
    const Vec e0 = b - a;
    const Vec e1 = c - a;
    const double n0 = e0.norm(), n1 = e1.norm();
    if (n0 <= 0.0 || n1 <= 0.0) return -1.0;
    const double cosang = std::clamp(e0.dot(e1) / (n0 * n1), -1.0, 1.0);
    return std::acos(cosang);
}

}  // namespace

double conformality_metric(const Points3& V, const std::vector<std::array<int, 3>>& F,
                           const Points2& UV, int* degenerate_triangles) {
    if (V.cols() != UV.cols())
        throw std::invalid_argument("conformality_metric: V and UV must correspond");
    double acc = 0.0;
    long count = 0;
    int skipped = 0;
    for (const auto& f : F) {
        double a3[3];
        bool ok = true;
        for (int c = 0; c < 3 && ok; ++c) {
            a3[c] = corner_angle<Eigen::Vector3d>(V.col(f[c]), V.col(f[(c + 1) % 3]),
                                                  V.col(f[(c + 2) % 3]));
            if (a3[c] < 0.0) ok = false;
        }
        if (!ok) {
            ++skipped;
            continue;
        }
        for (int c = 0; c < 3; ++c) {
            const double a2 = corner_angle<Eigen::Vector2d>(UV.col(f[c]), UV.col(f[(c + 1) % 3]),
                                                            UV.col(f[(c + 2) % 3]));
            acc += a2 < 0.0 ? M_PI : std::abs(a3[c] - a2);
            ++count;
        }
    }
    if (degenerate_triangles) *degenerate_triangles = skipped;
    return count > 0 ? acc / static_cast<double>(count) : 0.0;
}

double uv_overlap_fraction(const Points2& q, double eps) {
    if (eps <= 0.0) throw std::invalid_argument("uv_overlap_fraction: eps must be > 0");
    const int n = static_cast<int>(q.cols());
    if (n < 2) return 0.0;
    const KdTree tree(q);
    int overlapping = 0;
    for (int i = 0; i < n; ++i) {
        const int j = tree.knn_point(i, 1, true)[0];
        if ((q.col(i) - q.col(j)).norm() < eps) ++overlapping;
    }
    return static_cast<double>(overlapping) / n;
}

double uv_flip_fraction(const std::vector<std::array<int, 3>>& F, const Points2& UV) {
    if (F.empty()) return 0.0;
    long pos = 0, neg = 0;
    for (const auto& f : F) {
        const Eigen::Vector2d e0 = UV.col(f[1]) - UV.col(f[0]);
        const Eigen::Vector2d e1 = UV.col(f[2]) - UV.col(f[0]);
        const double area2 = e0.x() * e1.y() - e0.y() * e1.x();
        (area2 >= 0.0 ? pos : neg)++;
    }
    return static_cast<double>(std::min(pos, neg)) / static_cast<double>(F.size());
}

MetricReport evaluate_metrics(const SubNetworkSet& net, const Points3& P_normalized,
                              const std::vector<std::array<int, 3>>* faces,
                              double eps_factor) {
    MetricReport r;
    r.n_points = static_cast<int>(P_normalized.cols());
    const Points2 Q = infer_uv(net, P_normalized);

    const Points3 recon = net.stitch_forward(net.wrap_forward(Q));
    r.chamfer = chamfer(recon, P_normalized);

    const double side = std::max(uv_side_length(Q), 1e-6);
    r.uv_overlap_eps = eps_factor * side / std::sqrt(static_cast<double>(Q.cols()));
    r.uv_overlap_fraction = uv_overlap_fraction(Q, r.uv_overlap_eps);

    if (faces && !faces->empty()) {
        r.conformality_source = "mesh";
        r.conformality = conformality_metric(P_normalized, *faces, Q, &r.degenerate_triangles);
        r.flip_fraction = uv_flip_fraction(*faces, Q);
    } else {
        // no connectivity: report the Jacobian anisotropy proxy
        // mean |s1 - s2| / (s1 + s2); not comparable with the mesh metric
        r.conformality_source = "jacobian_proxy";
        const auto jac = compute_branch_jacobians(net, Q, Points2(2, 0));
        double acc = 0.0;
        long cnt = 0;
        for (const auto& j : jac.jf) {
            const auto [s1, s2] = singular_values_3x2(j);
            if (s1 + s2 > 0.0) {
                acc += (s1 - s2) / (s1 + s2);
                ++cnt;
            }
        }
        r.conformality = cnt > 0 ? acc / static_cast<double>(cnt) : 0.0;
    }
    return r;
}

std::string metric_report_json(const MetricReport& r) {
    nlohmann::json j{{"conformality_rad", r.conformality},
                     {"conformality_source", r.conformality_source},
                     {"uv_overlap_fraction", r.uv_overlap_fraction},
                     {"uv_overlap_eps", r.uv_overlap_eps},
                     {"chamfer", r.chamfer},
                     {"n_points", r.n_points},
                     {"degenerate_triangles", r.degenerate_triangles}};
    if (r.flip_fraction) j["flip_fraction"] = *r.flip_fraction;
    else j["flip_fraction"] = nullptr;
    return j.dump(2);
}

void export_uv_obj(const Points3& V, const std::vector<std::array<int, 3>>* faces,
                   const Points2& Q, const std::filesystem::path& path) {
    if (V.cols() != Q.cols())
        throw std::invalid_argument("export_uv_obj: V and Q must correspond");
    std::ofstream os(path);
    if (!os) throw std::runtime_error("export_uv_obj: cannot open " + path.string());
    os.precision(17);

    Eigen::Vector2d lo(0, 0), span(1, 1);
    if (Q.cols() > 0) {
        lo = Q.rowwise().minCoeff();
        const Eigen::Vector2d hi = Q.rowwise().maxCoeff();
        span = (hi - lo).cwiseMax(1e-300);
    }
    for (Eigen::Index i = 0; i < V.cols(); ++i)
        os << "v " << V(0, i) << " " << V(1, i) << " " << V(2, i) << "\n";
    for (Eigen::Index i = 0; i < Q.cols(); ++i)
        os << "vt " << (Q(0, i) - lo.x()) / span.x() << " " << (Q(1, i) - lo.y()) / span.y()
           << "\n";
    if (faces) {
        for (const auto& f : *faces)
            os << "f " << f[0] + 1 << "/" << f[0] + 1 << " " << f[1] + 1 << "/" << f[1] + 1
               << " " << f[2] + 1 << "/" << f[2] + 1 << "\n";
    }
    if (!os) throw std::runtime_error("export_uv_obj: write failure: " + path.string());
}

void export_uv_svg(const Points2& Q, const Points3& colors,
                   const std::filesystem::path& path) {
    if (colors.cols() != Q.cols())
        throw std::invalid_argument("export_uv_svg: need one color per point");
    constexpr double kSide = 1000.0;
    std::ofstream os(path);
    if (!os) throw std::runtime_error("export_uv_svg: cannot open " + path.string());
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " << kSide << " " << kSide
       << "\">\n";
    if (Q.cols() > 0) {
        const Eigen::Vector2d lo = Q.rowwise().minCoeff();
        const Eigen::Vector2d span = (Q.rowwise().maxCoeff() - lo).cwiseMax(1e-300);
        const double radius =
            std::max(1.5, 0.35 * kSide / std::sqrt(static_cast<double>(Q.cols())));
        os.precision(8);
        for (Eigen::Index i = 0; i < Q.cols(); ++i) {
            const double x = (Q(0, i) - lo.x()) / span.x() * kSide;
            const double y = kSide - (Q(1, i) - lo.y()) / span.y() * kSide;
            const int rc = static_cast<int>(std::clamp(colors(0, i), 0.0, 1.0) * 255.0);
            const int gc = static_cast<int>(std::clamp(colors(1, i), 0.0, 1.0) * 255.0);
            const int bc = static_cast<int>(std::clamp(colors(2, i), 0.0, 1.0) * 255.0);
            os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"" << radius
               << "\" fill=\"rgb(" << rc << "," << gc << "," << bc << ")\"/>\n";
        }
    }
    os << "</svg>\n";
    if (!os) throw std::runtime_error("export_uv_svg: write failure: " + path.string());
}

}  // namespace parapoint
