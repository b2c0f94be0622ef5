#pragma once

#include "parapoint/types.hpp"

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <vector>

namespace parapoint {

using NodeId = int;

// Reverse-mode tape over matrix-valued nodes. Point sets are stored one
// point per column, so a single node carries a whole cloud and the affine
// primitives turn into level-3 BLAS. Values are computed eagerly at record
// time; backward() then fills adjoints in reverse topological order, which
// is simply reverse id order for an append-only tape.
//
// Forward-mode directional derivatives (the per-point Jacobians of the
// 2D -> 3D composite maps) are expressed as ordinary tape nodes: matmul for
// the linear part and lrelu_gate for the activation masks. Reverse-mode
// through those nodes then yields parameter gradients of Jacobian-derived
// losses. The gate deliberately propagates nothing into the mask input:
// for piecewise-linear networks the Jacobian is piecewise constant in the
// evaluation point, so that adjoint is zero almost everywhere.
class Tape {
public:
    // leaves
    NodeId constant(Eigen::MatrixXd value);
    NodeId param(Eigen::MatrixXd value);

    // network primitives
    NodeId affine(NodeId w, NodeId b, NodeId x);            // W*X + b (b broadcast)
    NodeId matmul(NodeId w, NodeId x);                      // W*X
    NodeId leaky_relu(NodeId x, double slope);              // derivative at 0 is 1
    NodeId lrelu_gate(NodeId preact, NodeId t, double slope);
    NodeId concat_rows(NodeId a, NodeId b);

    // elementwise
    NodeId add(NodeId a, NodeId b);
    NodeId sub(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId axpb(NodeId x, double a, double b);              // a*x + b
    NodeId relu(NodeId x);                                  // max(0, x); derivative at 0 is 0
    NodeId abs(NodeId x);                                   // derivative at 0 is 0
    NodeId sqrt_clamped(NodeId x, double floor);            // sqrt(max(x, floor))
    NodeId acos_clamped(NodeId x, int* clamp_count = nullptr);

    // structural / per-column
    NodeId gather_cols(NodeId x, std::vector<int> idx);
    NodeId row(NodeId x, int r);
    NodeId colwise_dot(NodeId a, NodeId b);                 // 1 x N
    NodeId colwise_cross(NodeId a, NodeId b);               // 3 x N
    // unit columns; columns with norm <= floor are zeroed and flagged
    NodeId colwise_normalize(NodeId x, double floor, std::vector<uint8_t>* degenerate = nullptr);
    NodeId colwise_sqnorm(NodeId x);                        // 1 x N
    NodeId colwise_norm(NodeId x);                          // 1 x N; subgradient 0 at 0
    // eigenvalues of [[a,b],[b,c]] per column, descending rows; guarded
    // discriminant (subgradient 0 at coincident eigenvalues)
    NodeId sym_eig2(NodeId a, NodeId b, NodeId c);          // 2 x N

    // reductions
    NodeId sum(NodeId x);                                   // 1 x 1
    NodeId mean(NodeId x);                                  // 1 x 1

    // Accumulates adjoints of `root` (must be 1x1) into every node.
    void backward(NodeId root);
    // Recomputes every node value from the leaves in record order.
    void replay();

    const Eigen::MatrixXd& value(NodeId id) const { return nodes_[id].val; }
    // Zero-sized matrix when the node was untouched by the last backward.
    const Eigen::MatrixXd& adjoint(NodeId id) const { return nodes_[id].adj; }
    // Adjoint of a parameter node, materializing zeros if untouched.
    Eigen::MatrixXd gradient(NodeId id) const;

    const std::vector<NodeId>& params() const { return params_; }
    int size() const { return static_cast<int>(nodes_.size()); }

private:
    enum class Op : uint8_t {
        Const, Param, Affine, MatMul, LeakyRelu, LreluGate, ConcatRows,
        Add, Sub, Mul, AxPlusB, Relu, Abs, SqrtClamped, AcosClamped,
        GatherCols, Row, ColwiseDot, ColwiseCross, ColwiseNormalize,
        ColwiseSqNorm, ColwiseNorm, SymEig2, Sum, Mean,
    };

    struct Node {
        Op op;
        NodeId a = -1, b = -1, c = -1;
        double s0 = 0.0, s1 = 0.0;
        std::vector<int> idx;
        std::vector<uint8_t> flags;
        Eigen::MatrixXd val;
        Eigen::MatrixXd adj;
    };

    NodeId push(Node n);
    void eval(Node& n) const;
    void propagate(const Node& n);
    Eigen::MatrixXd& adj_of(NodeId id);

    // deque: value/adjoint references stay valid while recording appends
    std::deque<Node> nodes_;
    std::vector<NodeId> params_;
};

// ---------------------------------------------------------------------------
// Per-point forward mode for composite 2D -> 3D maps.

// A value with directional derivatives w.r.t. the two UV inputs.
struct Dual2 {
    Eigen::VectorXd value;
    Eigen::MatrixXd tangent;  // dim x 2, columns d/du and d/dv

    static Dual2 seed(const Eigen::Vector2d& uv) {
        return {uv, Eigen::MatrixXd::Identity(2, 2)};
    }
};

// Exact forward-mode Jacobian of a 2 -> 3 composite map at uv.
Jacobian32 jacobian_2d_to_3d(const std::function<Dual2(const Dual2&)>& map,
                             const Eigen::Vector2d& uv);

// Singular values of a 3x2 Jacobian (square roots of the eigenvalues of
// J^T J), descending. Closed-form 2x2 solve with a clamped discriminant.
std::array<double, 2> singular_values_3x2(const Jacobian32& j);

// Unit normal (f_u x f_v)/|f_u x f_v|, or nullopt when the cross-product
// norm is at or below the degeneracy floor.
constexpr double kNormalDegeneracyFloor = 1e-12;
std::optional<Eigen::Vector3d> normal_from_jacobian(const Jacobian32& j);

}  // namespace parapoint
