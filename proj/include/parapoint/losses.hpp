#pragma once

#include "parapoint/pipeline.hpp"

#include <string>
#include <vector>

namespace parapoint {

enum class DistortionMode { Conformal, Isometric };

DistortionMode distortion_mode_from_string(const std::string& s);
std::string to_string(DistortionMode m);
BranchMode branch_mode_from_string(const std::string& s);
std::string to_string(BranchMode m);

struct LossWeights {
    double unwrap = 0.01;
    double wrap = 1.0;
    double cycle = 0.01;
    double distortion = 0.01;  // drop to 1e-4 for complex shapes
    double aflip = 0.01;
};

struct LossReport {
    double unwrap = 0.0, wrap = 0.0, cycle = 0.0, distortion = 0.0, aflip = 0.0;
    double total = 0.0;
    LossWeights weights;
    int degenerate_normals = 0;  // points excluded from the anti-flip term
    int clamped_cos = 0;         // cosine similarities clipped into [-1, 1]
    int step = -1;
    double wall_ms = 0.0;
};

struct LossConfig {
    LossWeights weights;
    DistortionMode distortion_mode = DistortionMode::Conformal;
    int k_unwrap = 8;
    int k_aflip = 4;
    double t_angle = 1.5707963267948966;  // pi/2
    double eps_factor = 0.1;              // eps = factor * L(Q) / sqrt(N)
    bool normalize = true;                // mean-normalize the sum-form losses
};

// Tape builders. Neighbor assignments are computed from current node
// values and enter the tape as constants, so they are differentiated
// through distances only (piecewise-constant assignment).
NodeId record_unwrap_loss(Tape& tape, NodeId q, int k_unwrap, double eps, bool normalize);
NodeId record_wrap_loss(Tape& tape, NodeId p_hat, const Points3& P);
NodeId record_cycle_loss(Tape& tape, const PipelineState& st, BranchMode mode);
NodeId record_distortion_loss(Tape& tape, const PipelineState& st, DistortionMode mode,
                              bool normalize);
NodeId record_antiflip_loss(Tape& tape, const PipelineState& st, int k, double t_angle,
                            bool normalize, int* clamped_count);

struct TotalLossNodes {
    NodeId unwrap = -1, wrap = -1, cycle = -1, distortion = -1, aflip = -1;
    NodeId total = -1;
    int degenerate_normals = 0;
    int clamped_cos = 0;
    double eps = 0.0;  // the unwrap threshold used this step
};

// Weighted sum per the current branch mode. eps is recomputed from the
// current Q with L(Q) treated as a constant; the wrap term always targets
// the real cloud P_target. Throws on negative weights.
TotalLossNodes record_total_loss(Tape& tape, const PipelineState& st, const LossConfig& cfg,
                                 const Points3& P_target);

LossReport make_report(const Tape& tape, const TotalLossNodes& nodes, const LossConfig& cfg);

// ---------------------------------------------------------------------------
// Plain evaluators (inference-side consumers and oracle comparisons).

double unwrap_loss(const Points2& q, int k_unwrap, double eps, bool normalize = true);
double antiflip_loss(const Points3& points, const Points3& normals,
                     const std::vector<uint8_t>& degenerate, int k, double t_angle,
                     bool normalize = true);
double distortion_loss(const std::vector<Jacobian32>& jf, const std::vector<Jacobian32>& jg,
                       DistortionMode mode, bool normalize = true);

}  // namespace parapoint
