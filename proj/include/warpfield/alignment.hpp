#pragma once

#include <Eigen/Core>
#include <optional>
#include <utility>
#include <vector>

#include "warpfield/geometry.hpp"

namespace warpfield::align {

/// Unordered 3D samples with optional unit normals and optional marker ids
/// (−1 marks an unidentified point in marker mode).
struct PointCloud {
    std::vector<Vec3> positions;
    std::vector<Vec3> normals;
    std::vector<int> marker_ids;

    std::size_t size() const { return positions.size(); }
    bool has_normals() const { return !normals.empty(); }
    bool has_markers() const { return !marker_ids.empty(); }

    /// Checks the structural invariants (lengths, unit normals, unique
    /// non-negative marker ids). Throws config_error on violation.
    void validate() const;
};

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform inverse() const;
};

/// Exact nearest-neighbor index over an immutable point set (kd-tree with
/// bucket leaves). Queries return the same answer as a brute-force scan,
/// with distance ties broken by the lowest point index.
class SpatialIndex {
public:
    explicit SpatialIndex(const std::vector<Vec3>& points);

    /// (point index, squared distance) of the exact minimizer.
    std::pair<int, double> nearest(const Vec3& query) const;

    /// k smallest (squared distance, index) pairs, sorted ascending.
    std::vector<std::pair<double, int>> knn(const Vec3& query, int k) const;

    std::size_t size() const { return points_.size(); }
    const std::vector<Vec3>& points() const { return points_; }

private:
    struct Node {
        int axis = -1;         // -1 marks a leaf
        double split = 0.0;
        int children[2] = {-1, -1};
        int begin = 0, end = 0;  // leaf range into order_
    };

    int build(int begin, int end);
    void search(int node, const Vec3& q, int& best_idx, double& best_d2) const;

    std::vector<Vec3> points_;
    std::vector<int> order_;
    std::vector<Node> nodes_;
    int root_ = -1;
};

/// Symmetric mean of squared nearest distances (both directions).
double chamfer(const PointCloud& a, const PointCloud& b);

/// Confidence-weighted Chamfer: the sim→captured term is weighted per point
/// by `confidence` (aligned with `predicted`, which holds the warped
/// positions p*); the captured→predicted term stays unweighted.
double weighted_chamfer(const std::vector<double>& confidence, const PointCloud& predicted,
                        const PointCloud& captured);

/// Max over both directions of the largest unsquared nearest distance.
double hausdorff(const PointCloud& a, const PointCloud& b);

/// PCA normals over k nearest neighbors, flipped toward the hint.
PointCloud estimate_normals(const PointCloud& cloud, int k, const Vec3& orientation_hint);
/// Per-point hint variant (hints aligned with cloud.positions).
PointCloud estimate_normals(const PointCloud& cloud, int k, const std::vector<Vec3>& hints);

/// Σ over captured points of (1 − n(x)·n(c(x))) with c(x) the closest
/// predicted point; one-way from captured to predicted.
double normal_compatibility(const PointCloud& predicted, const PointCloud& captured);

/// Least-squares rigid transform mapping paired source points onto paired
/// target points (closed-form SVD solution, reflection-guarded).
RigidTransform rigid_align_pairs(const std::vector<Vec3>& source,
                                 const std::vector<Vec3>& target);

struct IcpResult {
    RigidTransform transform;
    std::vector<double> errors;  // mean squared nearest distance after each update
    int iterations = 0;
};

/// Rigid ICP aligning source onto target (closed-form SVD update per
/// iteration; single nearest-neighbor correspondences, no rejection).
IcpResult icp_rigid(const PointCloud& source, const PointCloud& target, int max_iters = 50,
                    double tol = 1e-8,
                    const RigidTransform& initial = RigidTransform{});

/// Deterministic farthest-point subsample: returns `count` indices, seeded
/// from the point farthest from the centroid; ties go to the lowest index.
std::vector<int> farthest_point_indices(const std::vector<Vec3>& points, int count);

PointCloud select(const PointCloud& cloud, const std::vector<int>& indices);

} // namespace warpfield::align
