#include "parapoint/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace parapoint {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline Eigen::ArrayXXd lrelu_mask(const Eigen::MatrixXd& pre, double slope) {
    return (pre.array() >= 0.0).select(Eigen::ArrayXXd::Ones(pre.rows(), pre.cols()),
                                       Eigen::ArrayXXd::Constant(pre.rows(), pre.cols(), slope));
}

}  // namespace

NodeId Tape::push(Node n) {
    eval(n);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::constant(Eigen::MatrixXd value) {
    Node n;
    n.op = Op::Const;
    n.val = std::move(value);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::param(Eigen::MatrixXd value) {
    Node n;
    n.op = Op::Param;
    n.val = std::move(value);
    nodes_.push_back(std::move(n));
    params_.push_back(static_cast<NodeId>(nodes_.size()) - 1);
    return params_.back();
}

NodeId Tape::affine(NodeId w, NodeId b, NodeId x) {
    require(nodes_[w].val.cols() == nodes_[x].val.rows(), "affine: W/X shape mismatch");
    require(nodes_[b].val.rows() == nodes_[w].val.rows() && nodes_[b].val.cols() == 1,
            "affine: bias shape mismatch");
    Node n;
    n.op = Op::Affine;
    n.a = w;
    n.b = b;
    n.c = x;
    return push(std::move(n));
}

NodeId Tape::matmul(NodeId w, NodeId x) {
    require(nodes_[w].val.cols() == nodes_[x].val.rows(), "matmul: shape mismatch");
    Node n;
    n.op = Op::MatMul;
    n.a = w;
    n.b = x;
    return push(std::move(n));
}

NodeId Tape::leaky_relu(NodeId x, double slope) {
    Node n;
    n.op = Op::LeakyRelu;
    n.a = x;
    n.s0 = slope;
    return push(std::move(n));
}

NodeId Tape::lrelu_gate(NodeId preact, NodeId t, double slope) {
    require(nodes_[preact].val.rows() == nodes_[t].val.rows() &&
                nodes_[preact].val.cols() == nodes_[t].val.cols(),
            "lrelu_gate: shape mismatch");
    Node n;
    n.op = Op::LreluGate;
    n.a = preact;
    n.b = t;
    n.s0 = slope;
    return push(std::move(n));
}

NodeId Tape::concat_rows(NodeId a, NodeId b) {
    require(nodes_[a].val.cols() == nodes_[b].val.cols(), "concat_rows: column mismatch");
    Node n;
    n.op = Op::ConcatRows;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::add(NodeId a, NodeId b) {
    require(nodes_[a].val.rows() == nodes_[b].val.rows() &&
                nodes_[a].val.cols() == nodes_[b].val.cols(),
            "add: shape mismatch");
    Node n;
    n.op = Op::Add;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::sub(NodeId a, NodeId b) {
    require(nodes_[a].val.rows() == nodes_[b].val.rows() &&
                nodes_[a].val.cols() == nodes_[b].val.cols(),
            "sub: shape mismatch");
    Node n;
    n.op = Op::Sub;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::mul(NodeId a, NodeId b) {
    require(nodes_[a].val.rows() == nodes_[b].val.rows() &&
                nodes_[a].val.cols() == nodes_[b].val.cols(),
            "mul: shape mismatch");
    Node n;
    n.op = Op::Mul;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::axpb(NodeId x, double a, double b) {
    Node n;
    n.op = Op::AxPlusB;
    n.a = x;
    n.s0 = a;
    n.s1 = b;
    return push(std::move(n));
}

NodeId Tape::relu(NodeId x) {
    Node n;
    n.op = Op::Relu;
    n.a = x;
    return push(std::move(n));
}

NodeId Tape::abs(NodeId x) {
    Node n;
    n.op = Op::Abs;
    n.a = x;
    return push(std::move(n));
}

NodeId Tape::sqrt_clamped(NodeId x, double floor) {
    Node n;
    n.op = Op::SqrtClamped;
    n.a = x;
    n.s0 = floor;
    return push(std::move(n));
}

NodeId Tape::acos_clamped(NodeId x, int* clamp_count) {
    Node n;
    n.op = Op::AcosClamped;
    n.a = x;
    const NodeId id = push(std::move(n));
    if (clamp_count)
        *clamp_count = static_cast<int>((nodes_[x].val.array().abs() > 1.0).count());
    return id;
}

NodeId Tape::gather_cols(NodeId x, std::vector<int> idx) {
    for (int i : idx)
        require(i >= 0 && i < nodes_[x].val.cols(), "gather_cols: index out of range");
    Node n;
    n.op = Op::GatherCols;
    n.a = x;
    n.idx = std::move(idx);
    return push(std::move(n));
}

NodeId Tape::row(NodeId x, int r) {
    require(r >= 0 && r < nodes_[x].val.rows(), "row: index out of range");
    Node n;
    n.op = Op::Row;
    n.a = x;
    n.s0 = static_cast<double>(r);
    return push(std::move(n));
}

NodeId Tape::colwise_dot(NodeId a, NodeId b) {
    require(nodes_[a].val.rows() == nodes_[b].val.rows() &&
                nodes_[a].val.cols() == nodes_[b].val.cols(),
            "colwise_dot: shape mismatch");
    Node n;
    n.op = Op::ColwiseDot;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::colwise_cross(NodeId a, NodeId b) {
    require(nodes_[a].val.rows() == 3 && nodes_[b].val.rows() == 3 &&
                nodes_[a].val.cols() == nodes_[b].val.cols(),
            "colwise_cross: need matching 3xN inputs");
    Node n;
    n.op = Op::ColwiseCross;
    n.a = a;
    n.b = b;
    return push(std::move(n));
}

NodeId Tape::colwise_normalize(NodeId x, double floor, std::vector<uint8_t>* degenerate) {
    Node n;
    n.op = Op::ColwiseNormalize;
    n.a = x;
    n.s0 = floor;
    const Eigen::MatrixXd& v = nodes_[x].val;
    n.flags.resize(v.cols());
    for (Eigen::Index j = 0; j < v.cols(); ++j)
        n.flags[j] = v.col(j).norm() <= floor ? 1 : 0;
    if (degenerate) *degenerate = n.flags;
    return push(std::move(n));
}

NodeId Tape::colwise_sqnorm(NodeId x) {
    Node n;
    n.op = Op::ColwiseSqNorm;
    n.a = x;
    return push(std::move(n));
}

NodeId Tape::colwise_norm(NodeId x) {
    Node n;
    n.op = Op::ColwiseNorm;
    n.a = x;
    return push(std::move(n));
}

NodeId Tape::sym_eig2(NodeId a, NodeId b, NodeId c) {
    require(nodes_[a].val.rows() == 1 && nodes_[b].val.rows() == 1 && nodes_[c].val.rows() == 1,
            "sym_eig2: inputs must be row vectors");
    require(nodes_[a].val.cols() == nodes_[b].val.cols() &&
                nodes_[a].val.cols() == nodes_[c].val.cols(),
            "sym_eig2: column mismatch");
    Node n;
    n.op = Op::SymEig2;
    n.a = a;
    n.b = b;
    n.c = c;
    return push(std::move(n));
}

NodeId Tape::sum(NodeId x) {
    Node n;
    n.op = Op::Sum;
    n.a = x;
    return push(std::move(n));
}

NodeId Tape::mean(NodeId x) {
    require(nodes_[x].val.size() > 0, "mean: empty node");
    Node n;
    n.op = Op::Mean;
    n.a = x;
    return push(std::move(n));
}

void Tape::eval(Node& n) const {
    const auto V = [&](NodeId id) -> const Eigen::MatrixXd& { return nodes_[id].val; };
    switch (n.op) {
        case Op::Const:
        case Op::Param:
            break;
        case Op::Affine:
            n.val.noalias() = V(n.a) * V(n.c);
            n.val.colwise() += V(n.b).col(0);
            break;
        case Op::MatMul:
            n.val.noalias() = V(n.a) * V(n.b);
            break;
        case Op::LeakyRelu:
            n.val = V(n.a).array().max(n.s0 * V(n.a).array()).matrix();
            break;
        case Op::LreluGate:
            n.val = (lrelu_mask(V(n.a), n.s0) * V(n.b).array()).matrix();
            break;
        case Op::ConcatRows:
            n.val.resize(V(n.a).rows() + V(n.b).rows(), V(n.a).cols());
            n.val.topRows(V(n.a).rows()) = V(n.a);
            n.val.bottomRows(V(n.b).rows()) = V(n.b);
            break;
        case Op::Add:
            n.val = V(n.a) + V(n.b);
            break;
        case Op::Sub:
            n.val = V(n.a) - V(n.b);
            break;
        case Op::Mul:
            n.val = V(n.a).cwiseProduct(V(n.b));
            break;
        case Op::AxPlusB:
            n.val = (n.s0 * V(n.a).array() + n.s1).matrix();
            break;
        case Op::Relu:
            n.val = V(n.a).cwiseMax(0.0);
            break;
        case Op::Abs:
            n.val = V(n.a).cwiseAbs();
            break;
        case Op::SqrtClamped:
            n.val = V(n.a).cwiseMax(n.s0).cwiseSqrt();
            break;
        case Op::AcosClamped:
            n.val = V(n.a).array().min(1.0).max(-1.0).acos().matrix();
            break;
        case Op::GatherCols: {
            n.val.resize(V(n.a).rows(), static_cast<Eigen::Index>(n.idx.size()));
            for (size_t j = 0; j < n.idx.size(); ++j) n.val.col(j) = V(n.a).col(n.idx[j]);
            break;
        }
        case Op::Row:
            n.val = V(n.a).row(static_cast<int>(n.s0));
            break;
        case Op::ColwiseDot:
            n.val = V(n.a).cwiseProduct(V(n.b)).colwise().sum();
            break;
        case Op::ColwiseCross: {
            const auto& A = V(n.a);
            const auto& B = V(n.b);
            n.val.resize(3, A.cols());
            for (Eigen::Index j = 0; j < A.cols(); ++j)
                n.val.col(j) = Eigen::Vector3d(A.col(j)).cross(Eigen::Vector3d(B.col(j)));
            break;
        }
        case Op::ColwiseNormalize: {
            const auto& X = V(n.a);
            n.val.resize(X.rows(), X.cols());
            for (Eigen::Index j = 0; j < X.cols(); ++j)
                n.val.col(j) = n.flags[j] ? Eigen::VectorXd::Zero(X.rows()).eval()
                                          : (X.col(j) / X.col(j).norm()).eval();
            break;
        }
        case Op::ColwiseSqNorm:
            n.val = V(n.a).colwise().squaredNorm();
            break;
        case Op::ColwiseNorm:
            n.val = V(n.a).colwise().norm();
            break;
        case Op::SymEig2: {
            const auto a = V(n.a).row(0).array();
            const auto b = V(n.b).row(0).array();
            const auto c = V(n.c).row(0).array();
            const Eigen::ArrayXXd h = 0.5 * (a + c);
            const Eigen::ArrayXXd d = 0.5 * (a - c);
            const Eigen::ArrayXXd r = (d.square() + b.square()).max(0.0).sqrt();
            n.val.resize(2, a.size());
            n.val.row(0) = (h + r).matrix();
            n.val.row(1) = (h - r).matrix();
            break;
        }
        case Op::Sum:
            n.val.resize(1, 1);
            n.val(0, 0) = V(n.a).sum();
            break;
        case Op::Mean:
            n.val.resize(1, 1);
            n.val(0, 0) = V(n.a).mean();
            break;
    }
}

Eigen::MatrixXd& Tape::adj_of(NodeId id) {
    Eigen::MatrixXd& a = nodes_[id].adj;
    if (a.rows() != nodes_[id].val.rows() || a.cols() != nodes_[id].val.cols())
        a = Eigen::MatrixXd::Zero(nodes_[id].val.rows(), nodes_[id].val.cols());
    return a;
}

void Tape::propagate(const Node& n) {
    const auto V = [&](NodeId id) -> const Eigen::MatrixXd& { return nodes_[id].val; };
    const Eigen::MatrixXd& g = n.adj;
    switch (n.op) {
        case Op::Const:
        case Op::Param:
            break;
        case Op::Affine:
            adj_of(n.a).noalias() += g * V(n.c).transpose();
            adj_of(n.b).col(0) += g.rowwise().sum();
            adj_of(n.c).noalias() += V(n.a).transpose() * g;
            break;
        case Op::MatMul:
            adj_of(n.a).noalias() += g * V(n.b).transpose();
            adj_of(n.b).noalias() += V(n.a).transpose() * g;
            break;
        case Op::LeakyRelu:
            adj_of(n.a).array() += lrelu_mask(V(n.a), n.s0) * g.array();
            break;
        case Op::LreluGate:
            // mask input receives nothing: piecewise-constant dependence
            adj_of(n.b).array() += lrelu_mask(V(n.a), n.s0) * g.array();
            break;
        case Op::ConcatRows:
            adj_of(n.a) += g.topRows(V(n.a).rows());
            adj_of(n.b) += g.bottomRows(V(n.b).rows());
            break;
        case Op::Add:
            adj_of(n.a) += g;
            adj_of(n.b) += g;
            break;
        case Op::Sub:
            adj_of(n.a) += g;
            adj_of(n.b) -= g;
            break;
        case Op::Mul:
            adj_of(n.a) += V(n.b).cwiseProduct(g);
            adj_of(n.b) += V(n.a).cwiseProduct(g);
            break;
        case Op::AxPlusB:
            adj_of(n.a) += n.s0 * g;
            break;
        case Op::Relu:
            adj_of(n.a).array() += (V(n.a).array() > 0.0).cast<double>() * g.array();
            break;
        case Op::Abs:
            adj_of(n.a).array() += V(n.a).array().sign() * g.array();
            break;
        case Op::SqrtClamped:
            adj_of(n.a).array() += (V(n.a).array() > n.s0).cast<double>() * g.array() /
                                   (2.0 * n.val.array()).max(1e-300);
            break;
        case Op::AcosClamped: {
            const Eigen::ArrayXXd x = V(n.a).array();
            const Eigen::ArrayXXd t = 1.0 - x.square();
            const Eigen::ArrayXXd inside = (x.abs() < 1.0 && t > 1e-300).cast<double>();
            adj_of(n.a).array() += inside * (-g.array()) / t.max(1e-300).sqrt();
            break;
        }
        case Op::GatherCols: {
            Eigen::MatrixXd& a = adj_of(n.a);
            for (size_t j = 0; j < n.idx.size(); ++j) a.col(n.idx[j]) += g.col(j);
            break;
        }
        case Op::Row:
            adj_of(n.a).row(static_cast<int>(n.s0)) += g;
            break;
        case Op::ColwiseDot:
            adj_of(n.a).noalias() += V(n.b) * g.row(0).asDiagonal();
            adj_of(n.b).noalias() += V(n.a) * g.row(0).asDiagonal();
            break;
        case Op::ColwiseCross: {
            Eigen::MatrixXd& aa = adj_of(n.a);
            Eigen::MatrixXd& ab = adj_of(n.b);
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                const Eigen::Vector3d av = V(n.a).col(j), bv = V(n.b).col(j), gv = g.col(j);
                aa.col(j) += bv.cross(gv);
                ab.col(j) += gv.cross(av);
            }
            break;
        }
        case Op::ColwiseNormalize: {
            Eigen::MatrixXd& a = adj_of(n.a);
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                if (n.flags[j]) continue;
                const double r = V(n.a).col(j).norm();
                const Eigen::VectorXd y = n.val.col(j);
                a.col(j) += (g.col(j) - y * y.dot(g.col(j))) / r;
            }
            break;
        }
        case Op::ColwiseSqNorm:
            adj_of(n.a).noalias() += 2.0 * (V(n.a) * g.row(0).asDiagonal());
            break;
        case Op::ColwiseNorm: {
            Eigen::MatrixXd& a = adj_of(n.a);
            for (Eigen::Index j = 0; j < g.cols(); ++j) {
                const double r = n.val(0, j);
                if (r > 0.0) a.col(j) += g(0, j) / r * V(n.a).col(j);
            }
            break;
        }
        case Op::SymEig2: {
            const auto a = V(n.a).row(0).array();
            const auto b = V(n.b).row(0).array();
            const auto c = V(n.c).row(0).array();
            const Eigen::ArrayXXd d = 0.5 * (a - c);
            const Eigen::ArrayXXd r = (d.square() + b.square()).max(0.0).sqrt();
            const Eigen::ArrayXXd ok = (r > 0.0).cast<double>();
            const Eigen::ArrayXXd dr = ok * d / r.max(1e-300);  // d(r)/d(d)
            const Eigen::ArrayXXd br = ok * b / r.max(1e-300);  // d(r)/d(b)
            const Eigen::ArrayXXd g1 = g.row(0).array();
            const Eigen::ArrayXXd g2 = g.row(1).array();
            adj_of(n.a).array() += 0.5 * (g1 + g2) + 0.5 * dr * (g1 - g2);
            adj_of(n.c).array() += 0.5 * (g1 + g2) - 0.5 * dr * (g1 - g2);
            adj_of(n.b).array() += br * (g1 - g2);
            break;
        }
        case Op::Sum:
            adj_of(n.a).array() += g(0, 0);
            break;
        case Op::Mean:
            adj_of(n.a).array() += g(0, 0) / static_cast<double>(V(n.a).size());
            break;
    }
}

void Tape::backward(NodeId root) {
    require(root >= 0 && root < size(), "backward: bad root");
    require(nodes_[root].val.rows() == 1 && nodes_[root].val.cols() == 1,
            "backward: root must be scalar");
    for (Node& n : nodes_) n.adj.resize(0, 0);
    adj_of(root)(0, 0) = 1.0;
    for (NodeId id = root; id >= 0; --id) {
        const Node& n = nodes_[id];
        if (n.adj.size() == 0) continue;
        propagate(n);
    }
}

void Tape::replay() {
    for (Node& n : nodes_) eval(n);
}

Eigen::MatrixXd Tape::gradient(NodeId id) const {
    const Node& n = nodes_[id];
    if (n.adj.size() == 0) return Eigen::MatrixXd::Zero(n.val.rows(), n.val.cols());
    return n.adj;
}

Jacobian32 jacobian_2d_to_3d(const std::function<Dual2(const Dual2&)>& map,
                             const Eigen::Vector2d& uv) {
    const Dual2 out = map(Dual2::seed(uv));
    if (out.value.size() != 3)
        throw std::invalid_argument("jacobian_2d_to_3d: map must produce 3D points");
    Jacobian32 j;
    j.col(0) = out.tangent.col(0);
    j.col(1) = out.tangent.col(1);
    return j;
}

std::array<double, 2> singular_values_3x2(const Jacobian32& j) {
    const double a = j.col(0).squaredNorm();
    const double b = j.col(0).dot(j.col(1));
    const double c = j.col(1).squaredNorm();
    const double h = 0.5 * (a + c);
    const double d = 0.5 * (a - c);
    const double r = std::sqrt(std::max(d * d + b * b, 0.0));
    return {std::sqrt(std::max(h + r, 0.0)), std::sqrt(std::max(h - r, 0.0))};
}

std::optional<Eigen::Vector3d> normal_from_jacobian(const Jacobian32& j) {
    const Eigen::Vector3d cr = j.col(0).cross(j.col(1));
    const double len = cr.norm();
    if (len <= kNormalDegeneracyFloor) return std::nullopt;
    return Eigen::Vector3d(cr / len);
}

}  // namespace parapoint
