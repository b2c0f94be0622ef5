#include "parapoint/pipeline.hpp"

#include "oracles.hpp"
#include "parapoint/geometry.hpp"
#include "stubs.hpp"

#include <doctest.h>

#include <numeric>

using namespace parapoint;

TEST_CASE("make_grid: small lattices") {
    const Points2 g4 = make_grid(4);
    CHECK(g4.col(0) == Eigen::Vector2d(-1, -1));
    CHECK(g4.col(1) == Eigen::Vector2d(-1, 1));
    CHECK(g4.col(2) == Eigen::Vector2d(1, -1));
    CHECK(g4.col(3) == Eigen::Vector2d(1, 1));

    const Points2 g9 = make_grid(9);
    CHECK(g9.cols() == 9);
    CHECK(g9.col(4) == Eigen::Vector2d(0, 0));
    CHECK((g9.col(1) - g9.col(0)).norm() == 1.0);

    const Points2 g100 = make_grid(100);
    CHECK(g100.minCoeff() >= -1.0);
    CHECK(g100.maxCoeff() <= 1.0);

    CHECK_THROWS_AS(make_grid(3), std::invalid_argument);
}

TEST_CASE("forward_3d_branch: identity start and composition oracle") {
    SubNetworkSet net = init_params(4);
    Rng rng(8);
    const Points3 P = oracles::random_cloud3(40, rng);
    const Branch3dResult r = forward_3d_branch(net, P);
    CHECK(r.S == P);  // zero-offset Cut-Net

    CHECK(r.S.cols() == 40);
    CHECK(r.Q.rows() == 2);
    CHECK(r.S_cycle.rows() == 3);
    CHECK(r.P_cycle.rows() == 3);

    // stage-by-stage equality with independently composed calls
    CHECK(r.Q == net.unwrap_forward(net.cut_forward(P)));
    CHECK(r.S_cycle == net.wrap_forward(r.Q));
    CHECK(r.P_cycle == net.stitch_forward(net.wrap_forward(net.unwrap_forward(net.cut_forward(P)))));
}

TEST_CASE("forward_2d_branch: identity start and composition oracle") {
    SubNetworkSet net = init_params(4);
    const Points2 G = make_grid(36);
    const Branch2dResult r = forward_2d_branch(net, G);
    CHECK(r.Q_hat == G);  // zero-offset Deform-Net

    CHECK(r.S_hat == net.wrap_forward(G));
    CHECK(r.P_hat == net.stitch_forward(r.S_hat));
    CHECK(r.S_hat_cycle == net.cut_forward(r.P_hat));
    CHECK(r.Q_hat_cycle == net.unwrap_forward(r.S_hat_cycle));
    CHECK(r.Q_hat_cycle.cols() == 36);
}

TEST_CASE("compute_branch_jacobians: planar stub") {
    SubNetworkSet net = init_params(0);
    stubs::install_planar_stub(net);
    Rng rng(3);
    const Points2 Q = oracles::random_cloud2(25, rng);
    const auto jac = compute_branch_jacobians(net, Q, Q);
    for (const auto& j : jac.jf) {
        CHECK(j.col(0) == Eigen::Vector3d(1, 0, 0));
        CHECK(j.col(1) == Eigen::Vector3d(0, 1, 0));
    }
    for (int i = 0; i < 25; ++i) {
        CHECK(jac.n_cycle.col(i) == Eigen::Vector3d(0, 0, 1));
        CHECK(jac.degenerate_f[i] == 0);
    }
}

TEST_CASE("compute_branch_jacobians: finite-difference oracle") {
    const SubNetworkSet net = init_params(33);
    Rng rng(12);
    const Points2 Q = oracles::random_cloud2(20, rng);
    const auto jac = compute_branch_jacobians(net, Q, Points2(2, 0));
    const double h = 1e-6;
    for (int i = 0; i < 20; ++i) {
        for (int axis = 0; axis < 2; ++axis) {
            Points2 hi = Q.col(i), lo = Q.col(i);
            hi(axis, 0) += h;
            lo(axis, 0) -= h;
            const Eigen::Vector3d fd = (net.stitch_forward(net.wrap_forward(hi)) -
                                        net.stitch_forward(net.wrap_forward(lo))) /
                                       (2.0 * h);
            for (int r = 0; r < 3; ++r)
                CHECK(std::abs(jac.jf[i](r, axis) - fd(r)) <=
                      1e-5 * std::max({1.0, std::abs(fd(r))}));
        }
    }
}

TEST_CASE("compute_branch_jacobians: permutation equivariance") {
    const SubNetworkSet net = init_params(2);
    Rng rng(6);
    const Points2 Q = oracles::random_cloud2(15, rng);
    std::vector<int> perm(15);
    std::iota(perm.begin(), perm.end(), 0);
    std::rotate(perm.begin(), perm.begin() + 7, perm.end());
    const auto a = compute_branch_jacobians(net, Q, Points2(2, 0));
    const auto b = compute_branch_jacobians(net, gather(Q, perm), Points2(2, 0));
    // columns land in different GEMM register blocks, so compare to the ulp
    for (int i = 0; i < 15; ++i)
        CHECK((b.jf[i] - a.jf[perm[i]]).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("record_pipeline: matches the plain forwards bit-exactly") {
    SubNetworkSet net = init_params(55);
    Rng wrng(56);
    net.deform_head = MlpStack::create(kEmbedDim + 2, 2, wrng);
    net.cut_head = MlpStack::create(kEmbedDim + 3, 3, wrng);

    Rng rng(57);
    const Points3 P = oracles::random_cloud3(30, rng);
    const Points2 G = make_grid(30);

    Tape tape;
    const NetBinding bind = bind_network(tape, net);
    const PipelineState st =
        record_pipeline(tape, bind, net, P, G, BranchMode::Both, true);

    const Branch3dResult b3 = forward_3d_branch(net, P);
    const Branch2dResult b2 = forward_2d_branch(net, G);
    CHECK(tape.value(st.S) == b3.S);
    CHECK(tape.value(st.Q) == b3.Q);
    CHECK(tape.value(st.S_cycle) == b3.S_cycle);
    CHECK(tape.value(st.P_cycle) == b3.P_cycle);
    CHECK(tape.value(st.Q_hat) == b2.Q_hat);
    CHECK(tape.value(st.S_hat) == b2.S_hat);
    CHECK(tape.value(st.P_hat) == b2.P_hat);
    CHECK(tape.value(st.S_hat_cycle) == b2.S_hat_cycle);
    CHECK(tape.value(st.Q_hat_cycle) == b2.Q_hat_cycle);

    // tangent streams agree with the per-point dual evaluator
    const auto jac = compute_branch_jacobians(net, b3.Q, b2.Q_hat);
    for (int i = 0; i < 30; ++i) {
        CHECK(tape.value(st.jf_u).col(i) == jac.jf[i].col(0));
        CHECK(tape.value(st.jf_v).col(i) == jac.jf[i].col(1));
        CHECK(tape.value(st.jg_u).col(i) == jac.jg[i].col(0));
        CHECK(tape.value(st.jg_v).col(i) == jac.jg[i].col(1));
    }

    // sigma nodes agree with the closed-form per-point solve
    for (int i = 0; i < 30; ++i) {
        const auto s = singular_values_3x2(jac.jf[i]);
        CHECK(tape.value(st.sigma_f)(0, i) == doctest::Approx(s[0]).epsilon(1e-14));
        CHECK(tape.value(st.sigma_f)(1, i) == doctest::Approx(s[1]).epsilon(1e-14));
    }

    // one parameter node per tensor: both branches share the same binding
    CHECK(tape.params().size() == net.parameters().size());
}

TEST_CASE("record_pipeline: branch ablations omit the other side") {
    SubNetworkSet net = init_params(5);
    Rng rng(58);
    const Points3 P = oracles::random_cloud3(12, rng);
    const Points2 G = make_grid(12);

    Tape t3;
    const NetBinding b3 = bind_network(t3, net);
    const PipelineState s3 = record_pipeline(t3, b3, net, P, G, BranchMode::Only3d, true);
    CHECK(s3.Q >= 0);
    CHECK(s3.Q_hat == -1);
    CHECK(s3.sigma_f >= 0);
    CHECK(s3.sigma_g == -1);

    Tape t2;
    const NetBinding b2 = bind_network(t2, net);
    const PipelineState s2 = record_pipeline(t2, b2, net, P, G, BranchMode::Only2d, true);
    CHECK(s2.Q == -1);
    CHECK(s2.Q_hat >= 0);
    CHECK(s2.sigma_g >= 0);
}

TEST_CASE("record_pipeline: jacobian subsetting gathers the right columns") {
    SubNetworkSet net = init_params(5);
    Rng rng(59);
    const Points3 P = oracles::random_cloud3(20, rng);
    const Points2 G = make_grid(20);
    const std::vector<int> subset{1, 4, 9, 16};

    Tape tape;
    const NetBinding bind = bind_network(tape, net);
    const PipelineState st =
        record_pipeline(tape, bind, net, P, G, BranchMode::Both, true, &subset, &subset);
    CHECK(tape.value(st.jf_u).cols() == 4);

    const Branch3dResult b3 = forward_3d_branch(net, P);
    const auto jac = compute_branch_jacobians(net, b3.Q, Points2(2, 0));
    for (size_t k = 0; k < subset.size(); ++k)
        CHECK((tape.value(st.jf_u).col(k) - jac.jf[subset[k]].col(0)).cwiseAbs().maxCoeff() <
              1e-15);
}
