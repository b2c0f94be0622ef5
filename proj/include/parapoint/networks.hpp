#pragma once

#include "parapoint/autodiff.hpp"
#include "parapoint/rng.hpp"
#include "parapoint/types.hpp"

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace parapoint {

constexpr double kLeakySlope = 0.01;
inline const std::vector<int> kHiddenDims{64, 128, 512, 128};
constexpr int kEmbedDim = 64;  // d

// Stack of point-wise shared affine layers with LeakyReLU between them;
// the output layer is purely affine.
struct MlpStack {
    std::vector<Eigen::MatrixXd> weights;  // out_i x in_i
    std::vector<Eigen::MatrixXd> biases;   // out_i x 1

    static MlpStack create(int in_dim, int out_dim, Rng& rng);

    int in_dim() const { return static_cast<int>(weights.front().cols()); }
    int out_dim() const { return static_cast<int>(weights.back().rows()); }
    void zero_last_layer();

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    Dual2 forward(const Dual2& x) const;
    // batched value + two tangent streams, same layout as forward()
    void forward_tangent(const Eigen::MatrixXd& x, const Eigen::MatrixXd& tu,
                         const Eigen::MatrixXd& tv, Eigen::MatrixXd& y,
                         Eigen::MatrixXd& yu, Eigen::MatrixXd& yv) const;
};

// The five sub-networks of the cycle-mapping pipeline. Deform and Cut are
// two stacks each (embedding + offset head around a residual connection);
// Stitch, Wrap and Unwrap are single plain stacks.
struct SubNetworkSet {
    MlpStack deform_embed;  // 2   -> d
    MlpStack deform_head;   // d+2 -> 2
    MlpStack cut_embed;     // 3   -> d
    MlpStack cut_head;      // d+3 -> 3
    MlpStack stitch;        // 3 -> 3
    MlpStack wrap;          // 2 -> 3
    MlpStack unwrap;        // 3 -> 2

    uint64_t seed = 0;
    NormTransform normalization;

    std::vector<MlpStack*> stacks();
    std::vector<const MlpStack*> stacks() const;
    std::vector<Eigen::MatrixXd*> parameters();
    std::vector<const Eigen::MatrixXd*> parameters() const;

    Points2 deform_forward(const Points2& x) const;
    Points3 cut_forward(const Points3& x) const;
    Points3 stitch_forward(const Points3& x) const;
    Points3 wrap_forward(const Points2& x) const;
    Points2 unwrap_forward(const Points3& x) const;
};

// Offset heads start at zero so Deform and Cut begin as exact identities.
SubNetworkSet init_params(uint64_t seed);

// ---------------------------------------------------------------------------
// Tape recording

// Parameter nodes for one network, aligned with SubNetworkSet::parameters().
struct NetBinding {
    std::vector<NodeId> flat;
    // per-stack views, in stacks() order: [stack][layer] -> (W, b)
    std::vector<std::vector<NodeId>> w, b;
};

NetBinding bind_network(Tape& tape, const SubNetworkSet& net);

NodeId record_stack(Tape& tape, const NetBinding& bind, int stack_index, NodeId x);

// stacks() order
enum StackIndex {
    kDeformEmbed = 0, kDeformHead, kCutEmbed, kCutHead, kStitch, kWrap, kUnwrap,
};

NodeId record_deform(Tape& tape, const NetBinding& bind, NodeId x);
NodeId record_cut(Tape& tape, const NetBinding& bind, NodeId x);

// ---------------------------------------------------------------------------
// Checkpoints: magic "PPNT1", little-endian uint32 header length, JSON
// header (architecture, seed, normalization, parameter table, optional
// extra sections), then float64 column-major payload.

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Optional extra payload carried next to the parameters (optimizer state,
// RNG stream, step counter) so a training run can resume bit-exactly.
struct CheckpointExtras {
    nlohmann::json* meta = nullptr;              // in/out, may be null
    std::vector<Eigen::MatrixXd>* buffers = nullptr;  // in/out, may be null
};

void save_checkpoint(const SubNetworkSet& net, const std::filesystem::path& path,
                     const CheckpointExtras& extras = {});
SubNetworkSet load_checkpoint(const std::filesystem::path& path,
                              const CheckpointExtras& extras = {});

}  // namespace parapoint
