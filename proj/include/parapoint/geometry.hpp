#pragma once

#include "parapoint/rng.hpp"
#include "parapoint/types.hpp"

#include <utility>
#include <vector>

namespace parapoint {

// Exact k-nearest-neighbor index over a fixed 2D or 3D point set.
// Ties in distance are broken by ascending point index, so query results
// are unique and comparable against a brute-force scan.
class KdTree {
public:
    explicit KdTree(Eigen::MatrixXd points);  // dim x N, dim in {2, 3}

    int size() const { return static_cast<int>(points_.cols()); }
    int dim() const { return static_cast<int>(points_.rows()); }

    // k nearest to an arbitrary query point, ascending (distance, index).
    // exclude_index >= 0 omits that member of the indexed set.
    std::vector<int> knn(const Eigen::VectorXd& query, int k, int exclude_index = -1) const;

    // k nearest to the indexed point i itself.
    std::vector<int> knn_point(int i, int k, bool exclude_self = true) const;

    // nearest member to an arbitrary query; returns (index, squared distance)
    std::pair<int, double> nearest(const Eigen::VectorXd& query) const;

private:
    struct Node {
        int axis = -1;       // -1 marks a leaf
        double split = 0.0;
        int left = -1, right = -1;
        int begin = 0, end = 0;  // leaf range into order_
    };

    int build(int begin, int end);
    Eigen::MatrixXd points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

// Symmetric squared-distance Chamfer: mean-per-direction, both directions
// summed. Throws std::invalid_argument on an empty cloud.
double chamfer(const Points3& a, const Points3& b);

// Per-direction nearest-neighbor assignments used by the differentiable
// wrap loss: for each column of `from`, the index of its nearest column
// of `to`.
std::vector<int> nearest_indices(const Points3& from, const Points3& to);

// n area-weighted surface samples with uniform barycentric coordinates.
// Deterministic for a fixed seed. Throws on zero total area.
Points3 sample_mesh_surface(const Mesh& mesh, int n, uint64_t seed);
Points3 sample_mesh_surface(const Mesh& mesh, int n, Rng& rng);

// n points uniform on the unit sphere (warm-up fallback target).
Points3 sample_unit_sphere(int n, Rng& rng);

// Watertight triangulated convex hull with outward-facing normals.
// Throws std::invalid_argument on degenerate (coplanar/collinear) input.
Mesh convex_hull_3d(const Points3& p);

// Side length of the square bounding box of a UV set: max(width, height).
double uv_side_length(const Points2& q);

// Centers at the centroid and scales the bounding sphere to radius 1.
// Returns the cloud together with the transform that undoes it.
std::pair<Points3, NormTransform> normalize_cloud(const Points3& p);

// Greedy farthest-point subset of m indices, seeded at the point farthest
// from the centroid; fully deterministic.
std::vector<int> farthest_point_indices(const Points3& p, int m);

Points3 gather(const Points3& p, const std::vector<int>& idx);
Points2 gather(const Points2& p, const std::vector<int>& idx);

}  // namespace parapoint
