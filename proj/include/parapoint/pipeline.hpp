#pragma once

#include "parapoint/networks.hpp"
#include "parapoint/types.hpp"

#include <cstdint>
#include <vector>

namespace parapoint {

enum class BranchMode { Both, Only3d, Only2d };

// ceil(sqrt(n)) x ceil(sqrt(n)) lattice over [-1,1]^2 truncated to n points
Points2 make_grid(int n);

// ---------------------------------------------------------------------------
// Plain (inference) forward passes.

struct Branch3dResult {
    Points3 S;        // Cut(P)
    Points2 Q;        // Unwrap(S)
    Points3 S_cycle;  // Wrap(Q)
    Points3 P_cycle;  // Stitch(S_cycle)
};
Branch3dResult forward_3d_branch(const SubNetworkSet& net, const Points3& P);

struct Branch2dResult {
    Points2 Q_hat;        // Deform(G)
    Points3 S_hat;        // Wrap(Q_hat)
    Points3 P_hat;        // Stitch(S_hat)
    Points3 S_hat_cycle;  // Cut(P_hat)
    Points2 Q_hat_cycle;  // Unwrap(S_hat_cycle)
};
Branch2dResult forward_2d_branch(const SubNetworkSet& net, const Points2& G);

// Per-point Jacobians of f = Stitch(Wrap(.)) evaluated at Q and at Q_hat,
// plus the normals they induce. Degenerate flags mark points whose
// cross-product norm sits at or below the degeneracy floor.
struct BranchJacobians {
    std::vector<Jacobian32> jf, jg;
    Points3 n_cycle, n_hat;  // zero columns where degenerate
    std::vector<uint8_t> degenerate_f, degenerate_g;
};
BranchJacobians compute_branch_jacobians(const SubNetworkSet& net, const Points2& Q,
                                         const Points2& Q_hat);

// ---------------------------------------------------------------------------
// Recorded forward pass: one tape holding both branches and everything the
// losses consume. Node ids are -1 for pieces absent under the branch mode.

struct PipelineState {
    int n_points = 0;  // |P|
    int n_grid = 0;    // |G|

    NodeId P = -1, S = -1, Q = -1, S_cycle = -1, P_cycle = -1;
    NodeId G = -1, Q_hat = -1, S_hat = -1, P_hat = -1, S_hat_cycle = -1, Q_hat_cycle = -1;

    // tangent columns of f at Q / at Q_hat (3 x N each)
    NodeId jf_u = -1, jf_v = -1, jg_u = -1, jg_v = -1;
    NodeId sigma_f = -1, sigma_g = -1;  // 2 x N singular values
    NodeId n_cycle = -1, n_hat = -1;    // unit normals, zeroed where degenerate
    std::vector<uint8_t> degenerate_f, degenerate_g;
};

PipelineState record_pipeline(Tape& tape, const NetBinding& bind, const SubNetworkSet& net,
                              const Points3& P, const Points2& G, BranchMode mode,
                              bool with_jacobians,
                              const std::vector<int>* jacobian_subset_f = nullptr,
                              const std::vector<int>* jacobian_subset_g = nullptr);

// Appends sigma/normal nodes for an already-recorded (value, tangent) triple.
void record_jacobian_products(Tape& tape, NodeId ju, NodeId jv, NodeId& sigma,
                              NodeId& normals, std::vector<uint8_t>& degenerate);

}  // namespace parapoint
