#include "parapoint/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <stdexcept>

namespace parapoint {

namespace {

constexpr int kLeafSize = 16;

// (squared distance, index) with ties broken toward the smaller index
struct Hit {
    double d2;
    int idx;
    bool operator<(const Hit& o) const {
        return d2 < o.d2 || (d2 == o.d2 && idx < o.idx);
    }
};

}  // namespace

KdTree::KdTree(Eigen::MatrixXd points) : points_(std::move(points)) {
    if (points_.rows() != 2 && points_.rows() != 3)
        throw std::invalid_argument("KdTree: points must be 2xN or 3xN");
    if (points_.cols() == 0) throw std::invalid_argument("KdTree: empty point set");
    order_.resize(points_.cols());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(2 * points_.cols() / kLeafSize + 4);
    root_ = build(0, static_cast<int>(order_.size()));
}

int KdTree::build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    // split on the axis of largest extent
    Eigen::VectorXd lo = points_.col(order_[begin]);
    Eigen::VectorXd hi = lo;
    for (int i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_.col(order_[i]));
        hi = hi.cwiseMax(points_.col(order_[i]));
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         const double pa = points_(axis, a), pb = points_(axis, b);
                         return pa < pb || (pa == pb && a < b);
                     });
    Node n;
    n.axis = axis;
    n.split = points_(axis, order_[mid]);
    nodes_[id] = n;
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    return id;
}

std::vector<int> KdTree::knn(const Eigen::VectorXd& query, int k, int exclude_index) const {
    const int n = size();
    const int available = n - (exclude_index >= 0 ? 1 : 0);
    if (k <= 0 || k > available)
        throw std::invalid_argument("KdTree::knn: k out of range");

    // bounded max-heap of the k best hits
    std::priority_queue<Hit> heap;
    auto worst = [&] {
        return heap.size() < static_cast<size_t>(k)
                   ? Hit{std::numeric_limits<double>::infinity(), std::numeric_limits<int>::max()}
                   : heap.top();
    };

    // iterative traversal, near child first
    struct Frame {
        int node;
        double axis_d2;  // squared distance from query to this subtree's slab
    };
    std::vector<Frame> stack;
    stack.push_back({root_, 0.0});
    while (!stack.empty()) {
        const Frame f = stack.back();
        stack.pop_back();
        if (f.axis_d2 > worst().d2) continue;
        const Node& nd = nodes_[f.node];
        if (nd.axis < 0) {
            for (int i = nd.begin; i < nd.end; ++i) {
                const int idx = order_[i];
                if (idx == exclude_index) continue;
                const double d2 = (points_.col(idx) - query).squaredNorm();
                const Hit h{d2, idx};
                if (h < worst()) {
                    heap.push(h);
                    if (heap.size() > static_cast<size_t>(k)) heap.pop();
                }
            }
            continue;
        }
        const double delta = query(nd.axis) - nd.split;
        const int near = delta < 0 ? nd.left : nd.right;
        const int far = delta < 0 ? nd.right : nd.left;
        stack.push_back({far, delta * delta});
        stack.push_back({near, f.axis_d2});
    }

    std::vector<Hit> hits;
    hits.reserve(heap.size());
    while (!heap.empty()) {
        hits.push_back(heap.top());
        heap.pop();
    }
    std::sort(hits.begin(), hits.end());
    std::vector<int> out(hits.size());
    for (size_t i = 0; i < hits.size(); ++i) out[i] = hits[i].idx;
    return out;
}

std::vector<int> KdTree::knn_point(int i, int k, bool exclude_self) const {
    return knn(points_.col(i), k, exclude_self ? i : -1);
}

std::pair<int, double> KdTree::nearest(const Eigen::VectorXd& query) const {
    const auto idx = knn(query, 1);
    return {idx[0], (points_.col(idx[0]) - query).squaredNorm()};
}

double chamfer(const Points3& a, const Points3& b) {
    if (a.cols() == 0 || b.cols() == 0)
        throw std::invalid_argument("chamfer: empty point cloud");
    const KdTree ta(a), tb(b);
    double ab = 0.0;
    for (Eigen::Index i = 0; i < a.cols(); ++i) ab += tb.nearest(a.col(i)).second;
    double ba = 0.0;
    for (Eigen::Index j = 0; j < b.cols(); ++j) ba += ta.nearest(b.col(j)).second;
    return ab / static_cast<double>(a.cols()) + ba / static_cast<double>(b.cols());
}

std::vector<int> nearest_indices(const Points3& from, const Points3& to) {
    const KdTree t(to);
    std::vector<int> idx(from.cols());
    for (Eigen::Index i = 0; i < from.cols(); ++i) idx[i] = t.nearest(from.col(i)).first;
    return idx;
}

Points3 sample_mesh_surface(const Mesh& mesh, int n, uint64_t seed) {
    Rng rng(seed);
    return sample_mesh_surface(mesh, n, rng);
}

Points3 sample_mesh_surface(const Mesh& mesh, int n, Rng& rng) {
    if (mesh.faces.empty()) throw std::invalid_argument("sample_mesh_surface: no triangles");
    std::vector<double> cum(mesh.faces.size());
    double total = 0.0;
    for (size_t f = 0; f < mesh.faces.size(); ++f) {
        const auto& t = mesh.faces[f];
        const Eigen::Vector3d e0 = mesh.vertices.col(t[1]) - mesh.vertices.col(t[0]);
        const Eigen::Vector3d e1 = mesh.vertices.col(t[2]) - mesh.vertices.col(t[0]);
        total += 0.5 * e0.cross(e1).norm();
        cum[f] = total;
    }
    if (total <= 0.0) throw std::invalid_argument("sample_mesh_surface: zero total area");

    Points3 out(3, n);
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform01() * total;
        const size_t f = std::upper_bound(cum.begin(), cum.end(), u) - cum.begin();
        const auto& t = mesh.faces[std::min(f, mesh.faces.size() - 1)];
        double r1 = rng.uniform01();
        double r2 = rng.uniform01();
        if (r1 + r2 > 1.0) {
            r1 = 1.0 - r1;
            r2 = 1.0 - r2;
        }
        out.col(i) = mesh.vertices.col(t[0]) +
                     r1 * (mesh.vertices.col(t[1]) - mesh.vertices.col(t[0])) +
                     r2 * (mesh.vertices.col(t[2]) - mesh.vertices.col(t[0]));
    }
    return out;
}

Points3 sample_unit_sphere(int n, Rng& rng) {
    Points3 out(3, n);
    for (int i = 0; i < n; ++i) {
        Eigen::Vector3d v;
        do {
            v = {rng.normal(), rng.normal(), rng.normal()};
        } while (v.norm() < 1e-12);
        out.col(i) = v / v.norm();
    }
    return out;
}

double uv_side_length(const Points2& q) {
    if (q.cols() == 0) throw std::invalid_argument("uv_side_length: empty UV set");
    const Eigen::Vector2d ext = q.rowwise().maxCoeff() - q.rowwise().minCoeff();
    return ext.maxCoeff();
}

std::pair<Points3, NormTransform> normalize_cloud(const Points3& p) {
    if (p.cols() == 0) throw std::invalid_argument("normalize_cloud: empty cloud");
    NormTransform t;
    t.center = p.rowwise().mean();
    t.scale = (p.colwise() - t.center).colwise().norm().maxCoeff();
    if (t.scale <= 0.0) throw std::invalid_argument("normalize_cloud: zero-extent cloud");
    return {t.apply(p), t};
}

std::vector<int> farthest_point_indices(const Points3& p, int m) {
    const int n = static_cast<int>(p.cols());
    if (m <= 0 || m > n) throw std::invalid_argument("farthest_point_indices: m out of range");
    const Eigen::Vector3d c = p.rowwise().mean();
    int cur = 0;
    double best = -1.0;
    for (int i = 0; i < n; ++i) {
        const double d = (p.col(i) - c).squaredNorm();
        if (d > best) {
            best = d;
            cur = i;
        }
    }
    std::vector<int> chosen;
    chosen.reserve(m);
    Eigen::VectorXd mind = Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
    for (int s = 0; s < m; ++s) {
        chosen.push_back(cur);
        mind = mind.cwiseMin((p.colwise() - p.col(cur)).colwise().squaredNorm().transpose());
        int next = 0;
        double far = -1.0;
        for (int i = 0; i < n; ++i) {
            if (mind(i) > far) {
                far = mind(i);
                next = i;
            }
        }
        cur = next;
    }
    return chosen;
}

Points3 gather(const Points3& p, const std::vector<int>& idx) {
    Points3 out(3, static_cast<Eigen::Index>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) out.col(i) = p.col(idx[i]);
    return out;
}

Points2 gather(const Points2& p, const std::vector<int>& idx) {
    Points2 out(2, static_cast<Eigen::Index>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) out.col(i) = p.col(idx[i]);
    return out;
}

}  // namespace parapoint
