#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

namespace parapoint {

// Point sets are stored one point per column so that point-wise network
// layers reduce to a single matrix product over the whole set.
using Points3 = Eigen::Matrix3Xd;
using Points2 = Eigen::Matrix2Xd;

// Jacobian of an R^2 -> R^3 map: columns are the partials w.r.t. u and v.
using Jacobian32 = Eigen::Matrix<double, 3, 2>;

struct NormTransform {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    double scale = 1.0;

    Points3 apply(const Points3& p) const {
        return (p.colwise() - center) / scale;
    }
    Points3 invert(const Points3& p) const {
        return (p * scale).colwise() + center;
    }
};

struct Mesh {
    Points3 vertices;                       // 3 x V
    std::vector<std::array<int, 3>> faces;  // triangle soup, 0-based
};

struct PointCloud3 {
    Points3 points;              // 3 x N
    Points3 normals{3, 0};       // 3 x N when present, 3 x 0 otherwise
    bool has_normals() const { return normals.cols() == points.cols() && points.cols() > 0; }
};

}  // namespace parapoint
