#pragma once

#include <Eigen/Core>
#include <span>
#include <vector>

namespace warpfield {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Axis-aligned bounding box of a point set.
struct Bbox {
    Vec3 lo{Vec3::Zero()};
    Vec3 hi{Vec3::Zero()};

    double diagonal() const { return (hi - lo).norm(); }
};

inline Bbox bounding_box(std::span<const Vec3> points) {
    Bbox box;
    if (points.empty()) return box;
    box.lo = box.hi = points[0];
    for (const Vec3& p : points) {
        box.lo = box.lo.cwiseMin(p);
        box.hi = box.hi.cwiseMax(p);
    }
    return box;
}

inline Bbox bounding_box(const std::vector<Vec3>& points) {
    return bounding_box(std::span<const Vec3>(points.data(), points.size()));
}

} // namespace warpfield
