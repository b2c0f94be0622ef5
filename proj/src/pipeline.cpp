#include "parapoint/pipeline.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace parapoint {

namespace {

void check_finite(const Eigen::MatrixXd& m, const char* where, const char* stage) {
    if (!m.allFinite())
        throw std::runtime_error(std::string(where) + ": non-finite values after " + stage);
}

// tangent ride-along: gates reuse the value pass preactivations
NodeId record_tangent_on(Tape& tape, const NetBinding& bind, int stack_index,
                         const std::vector<NodeId>& preacts, NodeId t,
                         const std::vector<int>* subset) {
    const auto& ws = bind.w[stack_index];
    for (size_t i = 0; i < ws.size(); ++i) {
        t = tape.matmul(ws[i], t);
        if (i + 1 < ws.size()) {
            const NodeId gate = subset ? tape.gather_cols(preacts[i], *subset) : preacts[i];
            t = tape.lrelu_gate(gate, t, kLeakySlope);
        }
    }
    return t;
}

NodeId record_stack_preacts(Tape& tape, const NetBinding& bind, int stack_index, NodeId x,
                            std::vector<NodeId>& preacts) {
    const auto& ws = bind.w[stack_index];
    const auto& bs = bind.b[stack_index];
    preacts.clear();
    NodeId h = x;
    for (size_t i = 0; i < ws.size(); ++i) {
        const NodeId z = tape.affine(ws[i], bs[i], h);
        preacts.push_back(z);
        h = (i + 1 < ws.size()) ? tape.leaky_relu(z, kLeakySlope) : z;
    }
    return h;
}

}  // namespace

Points2 make_grid(int n) {
    if (n < 4) throw std::invalid_argument("make_grid: need at least 4 points");
    const int m = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    Points2 g(2, n);
    int k = 0;
    for (int i = 0; i < m && k < n; ++i) {
        for (int j = 0; j < m && k < n; ++j) {
            g(0, k) = -1.0 + 2.0 * i / (m - 1);
            g(1, k) = -1.0 + 2.0 * j / (m - 1);
            ++k;
        }
    }
    return g;
}

Branch3dResult forward_3d_branch(const SubNetworkSet& net, const Points3& P) {
    Branch3dResult r;
    r.S = net.cut_forward(P);
    check_finite(r.S, "forward_3d_branch", "Cut");
    r.Q = net.unwrap_forward(r.S);
    check_finite(r.Q, "forward_3d_branch", "Unwrap");
    r.S_cycle = net.wrap_forward(r.Q);
    check_finite(r.S_cycle, "forward_3d_branch", "Wrap");
    r.P_cycle = net.stitch_forward(r.S_cycle);
    check_finite(r.P_cycle, "forward_3d_branch", "Stitch");
    return r;
}

Branch2dResult forward_2d_branch(const SubNetworkSet& net, const Points2& G) {
    Branch2dResult r;
    r.Q_hat = net.deform_forward(G);
    check_finite(r.Q_hat, "forward_2d_branch", "Deform");
    r.S_hat = net.wrap_forward(r.Q_hat);
    check_finite(r.S_hat, "forward_2d_branch", "Wrap");
    r.P_hat = net.stitch_forward(r.S_hat);
    check_finite(r.P_hat, "forward_2d_branch", "Stitch");
    r.S_hat_cycle = net.cut_forward(r.P_hat);
    check_finite(r.S_hat_cycle, "forward_2d_branch", "Cut");
    r.Q_hat_cycle = net.unwrap_forward(r.S_hat_cycle);
    check_finite(r.Q_hat_cycle, "forward_2d_branch", "Unwrap");
    return r;
}

BranchJacobians compute_branch_jacobians(const SubNetworkSet& net, const Points2& Q,
                                         const Points2& Q_hat) {
    BranchJacobians out;
    const auto eval = [&](const Points2& uv, std::vector<Jacobian32>& js, Points3& normals,
                          std::vector<uint8_t>& degenerate) {
        const Eigen::Index n = uv.cols();
        js.resize(n);
        normals.resize(3, n);
        degenerate.assign(n, 0);
        if (n == 0) return;
        Eigen::MatrixXd tu = Eigen::MatrixXd::Zero(2, n);
        Eigen::MatrixXd tv = Eigen::MatrixXd::Zero(2, n);
        tu.row(0).setOnes();
        tv.row(1).setOnes();
        Eigen::MatrixXd y, yu, yv;
        net.wrap.forward_tangent(uv, tu, tv, y, yu, yv);
        Eigen::MatrixXd z, zu, zv;
        net.stitch.forward_tangent(y, yu, yv, z, zu, zv);
        for (Eigen::Index i = 0; i < n; ++i) {
            js[i].col(0) = zu.col(i);
            js[i].col(1) = zv.col(i);
            if (auto nrm = normal_from_jacobian(js[i])) {
                normals.col(i) = *nrm;
            } else {
                normals.col(i).setZero();
                degenerate[i] = 1;
            }
        }
    };
    eval(Q, out.jf, out.n_cycle, out.degenerate_f);
    eval(Q_hat, out.jg, out.n_hat, out.degenerate_g);
    return out;
}

void record_jacobian_products(Tape& tape, NodeId ju, NodeId jv, NodeId& sigma,
                              NodeId& normals, std::vector<uint8_t>& degenerate) {
    const NodeId a = tape.colwise_dot(ju, ju);
    const NodeId b = tape.colwise_dot(ju, jv);
    const NodeId c = tape.colwise_dot(jv, jv);
    const NodeId lambda = tape.sym_eig2(a, b, c);
    sigma = tape.sqrt_clamped(lambda, 0.0);
    const NodeId cross = tape.colwise_cross(ju, jv);
    normals = tape.colwise_normalize(cross, kNormalDegeneracyFloor, &degenerate);
}

PipelineState record_pipeline(Tape& tape, const NetBinding& bind, const SubNetworkSet& net,
                              const Points3& P, const Points2& G, BranchMode mode,
                              bool with_jacobians, const std::vector<int>* jacobian_subset_f,
                              const std::vector<int>* jacobian_subset_g) {
    (void)net;
    PipelineState st;
    st.n_points = static_cast<int>(P.cols());
    st.n_grid = static_cast<int>(G.cols());

    const auto seed_tangents = [&](int n, NodeId& tu, NodeId& tv) {
        Eigen::MatrixXd u = Eigen::MatrixXd::Zero(2, n);
        Eigen::MatrixXd v = Eigen::MatrixXd::Zero(2, n);
        u.row(0).setOnes();
        v.row(1).setOnes();
        tu = tape.constant(std::move(u));
        tv = tape.constant(std::move(v));
    };

    if (mode != BranchMode::Only2d) {
        st.P = tape.constant(P);
        st.S = record_cut(tape, bind, st.P);
        st.Q = record_stack(tape, bind, kUnwrap, st.S);

        std::vector<NodeId> wrap_pre, stitch_pre;
        st.S_cycle = record_stack_preacts(tape, bind, kWrap, st.Q, wrap_pre);
        st.P_cycle = record_stack_preacts(tape, bind, kStitch, st.S_cycle, stitch_pre);

        if (with_jacobians) {
            const int nj = jacobian_subset_f ? static_cast<int>(jacobian_subset_f->size())
                                             : st.n_points;
            NodeId tu, tv;
            seed_tangents(nj, tu, tv);
            const NodeId ju1 = record_tangent_on(tape, bind, kWrap, wrap_pre, tu, jacobian_subset_f);
            const NodeId jv1 = record_tangent_on(tape, bind, kWrap, wrap_pre, tv, jacobian_subset_f);
            st.jf_u = record_tangent_on(tape, bind, kStitch, stitch_pre, ju1, jacobian_subset_f);
            st.jf_v = record_tangent_on(tape, bind, kStitch, stitch_pre, jv1, jacobian_subset_f);
            record_jacobian_products(tape, st.jf_u, st.jf_v, st.sigma_f, st.n_cycle,
                                     st.degenerate_f);
        }
    }

    if (mode != BranchMode::Only3d) {
        st.G = tape.constant(G);
        st.Q_hat = record_deform(tape, bind, st.G);

        std::vector<NodeId> wrap_pre, stitch_pre;
        st.S_hat = record_stack_preacts(tape, bind, kWrap, st.Q_hat, wrap_pre);
        st.P_hat = record_stack_preacts(tape, bind, kStitch, st.S_hat, stitch_pre);
        st.S_hat_cycle = record_cut(tape, bind, st.P_hat);
        st.Q_hat_cycle = record_stack(tape, bind, kUnwrap, st.S_hat_cycle);

        if (with_jacobians) {
            const int nj = jacobian_subset_g ? static_cast<int>(jacobian_subset_g->size())
                                             : st.n_grid;
            NodeId tu, tv;
            seed_tangents(nj, tu, tv);
            const NodeId ju1 = record_tangent_on(tape, bind, kWrap, wrap_pre, tu, jacobian_subset_g);
            const NodeId jv1 = record_tangent_on(tape, bind, kWrap, wrap_pre, tv, jacobian_subset_g);
            st.jg_u = record_tangent_on(tape, bind, kStitch, stitch_pre, ju1, jacobian_subset_g);
            st.jg_v = record_tangent_on(tape, bind, kStitch, stitch_pre, jv1, jacobian_subset_g);
            record_jacobian_products(tape, st.jg_u, st.jg_v, st.sigma_g, st.n_hat,
                                     st.degenerate_g);
        }
    }
    return st;
}

}  // namespace parapoint
