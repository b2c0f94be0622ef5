#include "parapoint/losses.hpp"

#include "parapoint/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace parapoint {

DistortionMode distortion_mode_from_string(const std::string& s) {
    if (s == "conformal") return DistortionMode::Conformal;
    if (s == "isometric") return DistortionMode::Isometric;
    throw std::invalid_argument("unknown distortion mode: " + s);
}

std::string to_string(DistortionMode m) {
    return m == DistortionMode::Conformal ? "conformal" : "isometric";
}

BranchMode branch_mode_from_string(const std::string& s) {
    if (s == "both") return BranchMode::Both;
    if (s == "3d-only") return BranchMode::Only3d;
    if (s == "2d-only") return BranchMode::Only2d;
    throw std::invalid_argument("unknown branch mode: " + s);
}

std::string to_string(BranchMode m) {
    switch (m) {
        case BranchMode::Both: return "both";
        case BranchMode::Only3d: return "3d-only";
        default: return "2d-only";
    }
}

namespace {

// flattened (center, neighbor) index pairs over each point's k nearest
// neighbors, self excluded
void knn_pairs(const Eigen::MatrixXd& pts, int k, const std::vector<uint8_t>* skip,
               std::vector<int>& centers, std::vector<int>& neighbors) {
    centers.clear();
    neighbors.clear();
    const int n = static_cast<int>(pts.cols());
    if (n < 2 || k < 1) return;
    const int kk = std::min(k, n - 1);
    const KdTree tree(pts);
    for (int i = 0; i < n; ++i) {
        if (skip && (*skip)[i]) continue;
        for (int j : tree.knn_point(i, kk, true)) {
            if (skip && (*skip)[j]) continue;
            centers.push_back(i);
            neighbors.push_back(j);
        }
    }
}

}  // namespace

NodeId record_unwrap_loss(Tape& tape, NodeId q, int k_unwrap, double eps, bool normalize) {
    const Eigen::MatrixXd& Q = tape.value(q);
    std::vector<int> centers, neighbors;
    knn_pairs(Q, k_unwrap, nullptr, centers, neighbors);
    if (centers.empty()) return tape.constant(Eigen::MatrixXd::Zero(1, 1));
    const NodeId diff = tape.sub(tape.gather_cols(q, centers), tape.gather_cols(q, neighbors));
    const NodeId dist = tape.colwise_norm(diff);
    const NodeId hinge = tape.relu(tape.axpb(dist, -1.0, eps));
    return normalize ? tape.mean(hinge) : tape.sum(hinge);
}

NodeId record_wrap_loss(Tape& tape, NodeId p_hat, const Points3& P) {
    const Eigen::MatrixXd& Ph = tape.value(p_hat);
    if (Ph.cols() == 0 || P.cols() == 0)
        throw std::invalid_argument("wrap_loss: empty point cloud");
    // frozen nearest-neighbor assignments, squared distances, mean per
    // direction, both directions summed (the Chamfer convention)
    const std::vector<int> to_p = nearest_indices(Ph, P);
    Points3 targets(3, Ph.cols());
    for (Eigen::Index i = 0; i < Ph.cols(); ++i) targets.col(i) = P.col(to_p[i]);
    const NodeId d1 = tape.mean(
        tape.colwise_sqnorm(tape.sub(p_hat, tape.constant(targets))));

    const std::vector<int> to_ph = nearest_indices(P, Ph);
    const NodeId d2 = tape.mean(
        tape.colwise_sqnorm(tape.sub(tape.gather_cols(p_hat, to_ph), tape.constant(P))));
    return tape.add(d1, d2);
}

NodeId record_cycle_loss(Tape& tape, const PipelineState& st, BranchMode mode) {
    NodeId total = -1;
    const auto term = [&](NodeId a, NodeId b) {
        const NodeId t = tape.mean(tape.abs(tape.sub(a, b)));
        total = total < 0 ? t : tape.add(total, t);
    };
    if (mode != BranchMode::Only2d) {
        term(st.P, st.P_cycle);
        term(st.S, st.S_cycle);
    }
    if (mode != BranchMode::Only3d) {
        term(st.Q_hat, st.Q_hat_cycle);
        term(st.S_hat, st.S_hat_cycle);
    }
    return total;
}

NodeId record_distortion_loss(Tape& tape, const PipelineState& st, DistortionMode mode,
                              bool normalize) {
    NodeId acc = -1;
    int count = 0;
    const auto cloud_term = [&](NodeId sigma) {
        if (sigma < 0) return;
        count += static_cast<int>(tape.value(sigma).cols());
        NodeId t;
        if (mode == DistortionMode::Conformal) {
            t = tape.sum(tape.abs(tape.sub(tape.row(sigma, 0), tape.row(sigma, 1))));
        } else {
            t = tape.sum(tape.abs(tape.axpb(sigma, 1.0, -1.0)));
        }
        acc = acc < 0 ? t : tape.add(acc, t);
    };
    cloud_term(st.sigma_f);
    cloud_term(st.sigma_g);
    if (acc < 0 || count == 0) return tape.constant(Eigen::MatrixXd::Zero(1, 1));
    return normalize ? tape.axpb(acc, 1.0 / count, 0.0) : acc;
}

NodeId record_antiflip_loss(Tape& tape, const PipelineState& st, int k, double t_angle,
                            bool normalize, int* clamped_count) {
    NodeId acc = -1;
    int count = 0;
    if (clamped_count) *clamped_count = 0;
    const auto cloud_term = [&](NodeId positions, NodeId normals,
                                const std::vector<uint8_t>& degenerate) {
        if (positions < 0 || normals < 0) return;
        count += static_cast<int>(tape.value(positions).cols());
        std::vector<int> centers, neighbors;
        knn_pairs(tape.value(positions), k, &degenerate, centers, neighbors);
        if (centers.empty()) return;
        const NodeId cosang = tape.colwise_dot(tape.gather_cols(normals, centers),
                                               tape.gather_cols(normals, neighbors));
        int clamped = 0;
        const NodeId angle = tape.acos_clamped(cosang, &clamped);
        if (clamped_count) *clamped_count += clamped;
        const NodeId t = tape.sum(tape.relu(tape.axpb(angle, 1.0, -t_angle)));
        acc = acc < 0 ? t : tape.add(acc, t);
    };
    cloud_term(st.P_cycle, st.n_cycle, st.degenerate_f);
    cloud_term(st.P_hat, st.n_hat, st.degenerate_g);
    if (acc < 0 || count == 0) return tape.constant(Eigen::MatrixXd::Zero(1, 1));
    return normalize ? tape.axpb(acc, 1.0 / count, 0.0) : acc;
}

TotalLossNodes record_total_loss(Tape& tape, const PipelineState& st, const LossConfig& cfg,
                                 const Points3& P_target) {
    const LossWeights& w = cfg.weights;
    if (w.unwrap < 0 || w.wrap < 0 || w.cycle < 0 || w.distortion < 0 || w.aflip < 0)
        throw std::invalid_argument("total_loss: negative loss weight");

    TotalLossNodes out;
    const bool has_3d = st.Q >= 0;
    const bool has_2d = st.Q_hat >= 0;
    const BranchMode mode = has_3d && has_2d ? BranchMode::Both
                            : has_3d         ? BranchMode::Only3d
                                             : BranchMode::Only2d;

    // eps is derived from the current UV spread, not differentiated
    if (has_3d) {
        const Eigen::MatrixXd& Q = tape.value(st.Q);
        const double side = std::max(uv_side_length(Q), 1e-6);
        out.eps = cfg.eps_factor * side / std::sqrt(static_cast<double>(Q.cols()));
        out.unwrap = record_unwrap_loss(tape, st.Q, cfg.k_unwrap, out.eps, cfg.normalize);
    } else {
        out.unwrap = tape.constant(Eigen::MatrixXd::Zero(1, 1));
    }

    if (has_2d) out.wrap = record_wrap_loss(tape, st.P_hat, P_target);
    out.degenerate_normals = static_cast<int>(
        std::count(st.degenerate_f.begin(), st.degenerate_f.end(), uint8_t{1}) +
        std::count(st.degenerate_g.begin(), st.degenerate_g.end(), uint8_t{1}));

    out.cycle = record_cycle_loss(tape, st, mode);
    out.distortion = record_distortion_loss(tape, st, cfg.distortion_mode, cfg.normalize);
    out.aflip = record_antiflip_loss(tape, st, cfg.k_aflip, cfg.t_angle, cfg.normalize,
                                     &out.clamped_cos);

    NodeId total = tape.axpb(out.unwrap, w.unwrap, 0.0);
    if (out.wrap >= 0) total = tape.add(total, tape.axpb(out.wrap, w.wrap, 0.0));
    total = tape.add(total, tape.axpb(out.cycle, w.cycle, 0.0));
    total = tape.add(total, tape.axpb(out.distortion, w.distortion, 0.0));
    total = tape.add(total, tape.axpb(out.aflip, w.aflip, 0.0));
    out.total = total;
    return out;
}

LossReport make_report(const Tape& tape, const TotalLossNodes& nodes, const LossConfig& cfg) {
    LossReport r;
    r.weights = cfg.weights;
    r.unwrap = tape.value(nodes.unwrap)(0, 0);
    r.wrap = nodes.wrap >= 0 ? tape.value(nodes.wrap)(0, 0) : 0.0;
    r.cycle = tape.value(nodes.cycle)(0, 0);
    r.distortion = tape.value(nodes.distortion)(0, 0);
    r.aflip = tape.value(nodes.aflip)(0, 0);
    r.total = tape.value(nodes.total)(0, 0);
    r.degenerate_normals = nodes.degenerate_normals;
    r.clamped_cos = nodes.clamped_cos;
    return r;
}

// ---------------------------------------------------------------------------

double unwrap_loss(const Points2& q, int k_unwrap, double eps, bool normalize) {
    std::vector<int> centers, neighbors;
    knn_pairs(q, k_unwrap, nullptr, centers, neighbors);
    if (centers.empty()) return 0.0;
    double acc = 0.0;
    for (size_t i = 0; i < centers.size(); ++i) {
        const double d = (q.col(centers[i]) - q.col(neighbors[i])).norm();
        acc += std::max(0.0, eps - d);
    }
    return normalize ? acc / static_cast<double>(centers.size()) : acc;
}

double antiflip_loss(const Points3& points, const Points3& normals,
                     const std::vector<uint8_t>& degenerate, int k, double t_angle,
                     bool normalize) {
    std::vector<int> centers, neighbors;
    knn_pairs(points, k, degenerate.empty() ? nullptr : &degenerate, centers, neighbors);
    double acc = 0.0;
    for (size_t i = 0; i < centers.size(); ++i) {
        const double c = std::clamp(normals.col(centers[i]).dot(normals.col(neighbors[i])),
                                    -1.0, 1.0);
        acc += std::max(0.0, std::acos(c) - t_angle);
    }
    return normalize ? acc / static_cast<double>(points.cols()) : acc;
}

double distortion_loss(const std::vector<Jacobian32>& jf, const std::vector<Jacobian32>& jg,
                       DistortionMode mode, bool normalize) {
    double acc = 0.0;
    const auto add_cloud = [&](const std::vector<Jacobian32>& js) {
        for (const auto& j : js) {
            const auto [s1, s2] = singular_values_3x2(j);
            acc += mode == DistortionMode::Conformal
                       ? std::abs(s1 - s2)
                       : std::abs(s1 - 1.0) + std::abs(s2 - 1.0);
        }
    };
    add_cloud(jf);
    add_cloud(jg);
    const size_t n = jf.size() + jg.size();
    if (n == 0) return 0.0;
    return normalize ? acc / static_cast<double>(n) : acc;
}

}  // namespace parapoint
