#include "warpfield/alignment.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "warpfield/errors.hpp"

namespace warpfield::align {

void PointCloud::validate() const {
    if (has_normals() && normals.size() != positions.size())
        throw config_error("PointCloud: normals length does not match positions");
    if (has_markers() && marker_ids.size() != positions.size())
        throw config_error("PointCloud: marker_ids length does not match positions");
    for (const Vec3& n : normals)
        if (std::abs(n.norm() - 1.0) > 1e-6)
            throw config_error("PointCloud: normals must be unit length");
    std::set<int> seen;
    for (int id : marker_ids) {
        if (id < 0) continue;
        if (!seen.insert(id).second)
            throw config_error("PointCloud: duplicate non-negative marker id");
    }
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(rotation.transpose() * translation);
    return inv;
}

namespace {
constexpr int kLeafSize = 8;
}

SpatialIndex::SpatialIndex(const std::vector<Vec3>& points) : points_(points) {
    if (points_.empty()) throw config_error("SpatialIndex: empty cloud");
    order_.resize(points_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    nodes_.reserve(2 * points_.size() / kLeafSize + 4);
    root_ = build(0, static_cast<int>(order_.size()));
}

int SpatialIndex::build(int begin, int end) {
    const int id = static_cast<int>(nodes_.size());
    nodes_.emplace_back();
    if (end - begin <= kLeafSize) {
        nodes_[id].begin = begin;
        nodes_[id].end = end;
        return id;
    }
    Vec3 lo = points_[order_[begin]], hi = lo;
    for (int i = begin + 1; i < end; ++i) {
        lo = lo.cwiseMin(points_[order_[i]]);
        hi = hi.cwiseMax(points_[order_[i]]);
    }
    int axis = 0;
    (hi - lo).maxCoeff(&axis);
    const int mid = begin + (end - begin) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                     [&](int a, int b) {
                         const double ca = points_[a][axis], cb = points_[b][axis];
                         return ca < cb || (ca == cb && a < b);
                     });
    nodes_[id].axis = axis;
    nodes_[id].split = points_[order_[mid]][axis];
    const int left = build(begin, mid);
    const int right = build(mid, end);
    nodes_[id].children[0] = left;
    nodes_[id].children[1] = right;
    return id;
}

void SpatialIndex::search(int node_id, const Vec3& q, int& best_idx, double& best_d2) const {
    const Node& node = nodes_[node_id];
    if (node.axis < 0) {
        for (int i = node.begin; i < node.end; ++i) {
            const int idx = order_[i];
            const double d2 = (points_[idx] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && idx < best_idx)) {
                best_d2 = d2;
                best_idx = idx;
            }
        }
        return;
    }
    const double delta = q[node.axis] - node.split;
    const int near = delta < 0.0 ? 0 : 1;
    search(node.children[near], q, best_idx, best_d2);
    // visit the far side on exact ties so index tie-breaking stays global
    if (delta * delta <= best_d2) search(node.children[1 - near], q, best_idx, best_d2);
}

std::pair<int, double> SpatialIndex::nearest(const Vec3& query) const {
    int best_idx = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(root_, query, best_idx, best_d2);
    return {best_idx, best_d2};
}

std::vector<std::pair<double, int>> SpatialIndex::knn(const Vec3& query, int k) const {
    if (k < 1 || k > static_cast<int>(points_.size()))
        throw config_error("SpatialIndex::knn: k out of range");
    // small k in practice; an ordered vector beats a heap here
    std::vector<std::pair<double, int>> best;
    best.reserve(k + 1);
    auto worst_d2 = [&] {
        return static_cast<int>(best.size()) < k ? std::numeric_limits<double>::infinity()
                                                 : best.back().first;
    };
    auto offer = [&](int idx, double d2) {
        const std::pair<double, int> cand{d2, idx};
        if (static_cast<int>(best.size()) == k && !(cand < best.back())) return;
        best.insert(std::upper_bound(best.begin(), best.end(), cand), cand);
        if (static_cast<int>(best.size()) > k) best.pop_back();
    };
    const std::function<void(int)> visit = [&](int node_id) {
        const Node& node = nodes_[node_id];
        if (node.axis < 0) {
            for (int i = node.begin; i < node.end; ++i)
                offer(order_[i], (points_[order_[i]] - query).squaredNorm());
            return;
        }
        const double delta = query[node.axis] - node.split;
        const int near = delta < 0.0 ? 0 : 1;
        visit(node.children[near]);
        if (delta * delta <= worst_d2()) visit(node.children[1 - near]);
    };
    visit(root_);
    return best;
}

namespace {

void require_nonempty(const PointCloud& cloud, const char* what) {
    if (cloud.positions.empty())
        throw config_error(std::string(what) + ": empty cloud");
}

double mean_sq_nearest(const PointCloud& from, const SpatialIndex& to_index) {
    double total = 0.0;
    for (const Vec3& p : from.positions) total += to_index.nearest(p).second;
    return total / static_cast<double>(from.size());
}

} // namespace

double chamfer(const PointCloud& a, const PointCloud& b) {
    require_nonempty(a, "chamfer");
    require_nonempty(b, "chamfer");
    const SpatialIndex ia(a.positions), ib(b.positions);
    return mean_sq_nearest(a, ib) + mean_sq_nearest(b, ia);
}

double weighted_chamfer(const std::vector<double>& confidence, const PointCloud& predicted,
                        const PointCloud& captured) {
    require_nonempty(predicted, "weighted_chamfer");
    require_nonempty(captured, "weighted_chamfer");
    if (confidence.size() != predicted.size())
        throw config_error("weighted_chamfer: confidence length does not match predicted cloud");
    const SpatialIndex captured_index(captured.positions);
    const SpatialIndex predicted_index(predicted.positions);
    double forward = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        forward += confidence[i] * captured_index.nearest(predicted.positions[i]).second;
    return forward / static_cast<double>(predicted.size()) +
           mean_sq_nearest(captured, predicted_index);
}

double hausdorff(const PointCloud& a, const PointCloud& b) {
    require_nonempty(a, "hausdorff");
    require_nonempty(b, "hausdorff");
    const SpatialIndex ia(a.positions), ib(b.positions);
    double d_ab = 0.0, d_ba = 0.0;
    for (const Vec3& p : a.positions) d_ab = std::max(d_ab, ib.nearest(p).second);
    for (const Vec3& p : b.positions) d_ba = std::max(d_ba, ia.nearest(p).second);
    return std::sqrt(std::max(d_ab, d_ba));
}

namespace {

PointCloud estimate_normals_impl(const PointCloud& cloud, int k,
                                 const std::function<Vec3(std::size_t)>& hint_for) {
    if (k < 3 || k >= static_cast<int>(cloud.size()))
        throw config_error("estimate_normals: require 3 <= k < cloud size");
    const SpatialIndex index(cloud.positions);
    PointCloud out = cloud;
    out.normals.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto neighbors = index.knn(cloud.positions[i], k);
        Vec3 mean = Vec3::Zero();
        for (const auto& [d2, idx] : neighbors) mean += cloud.positions[idx];
        mean /= static_cast<double>(neighbors.size());
        Mat3 cov = Mat3::Zero();
        for (const auto& [d2, idx] : neighbors) {
            const Vec3 d = cloud.positions[idx] - mean;
            cov += d * d.transpose();
        }
        const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
        Vec3 n = eig.eigenvectors().col(0);  // smallest eigenvalue
        const double len = n.norm();
        n = len > 0.0 ? Vec3(n / len) : Vec3(0, 0, 1);
        if (n.dot(hint_for(i)) < 0.0) n = -n;
        out.normals[i] = n;
    }
    return out;
}

} // namespace

PointCloud estimate_normals(const PointCloud& cloud, int k, const Vec3& orientation_hint) {
    return estimate_normals_impl(cloud, k, [&](std::size_t) { return orientation_hint; });
}

PointCloud estimate_normals(const PointCloud& cloud, int k, const std::vector<Vec3>& hints) {
    if (hints.size() != cloud.size())
        throw config_error("estimate_normals: hint count does not match cloud");
    return estimate_normals_impl(cloud, k, [&](std::size_t i) { return hints[i]; });
}

double normal_compatibility(const PointCloud& predicted, const PointCloud& captured) {
    require_nonempty(predicted, "normal_compatibility");
    require_nonempty(captured, "normal_compatibility");
    if (!predicted.has_normals() || !captured.has_normals())
        throw config_error("normal_compatibility: both clouds need normals");
    const SpatialIndex predicted_index(predicted.positions);
    double total = 0.0;
    for (std::size_t i = 0; i < captured.size(); ++i) {
        const int j = predicted_index.nearest(captured.positions[i]).first;
        total += 1.0 - captured.normals[i].dot(predicted.normals[j]);
    }
    return total;
}

RigidTransform rigid_align_pairs(const std::vector<Vec3>& source,
                                 const std::vector<Vec3>& matched) {
    if (source.size() != matched.size() || source.empty())
        throw config_error("rigid_align_pairs: need equally sized non-empty pair lists");
    Vec3 src_mean = Vec3::Zero(), dst_mean = Vec3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i) {
        src_mean += source[i];
        dst_mean += matched[i];
    }
    src_mean /= static_cast<double>(source.size());
    dst_mean /= static_cast<double>(source.size());
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < source.size(); ++i)
        h += (source[i] - src_mean) * (matched[i] - dst_mean).transpose();
    const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 d = Mat3::Identity();
    d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
    RigidTransform result;
    result.rotation = svd.matrixV() * d * svd.matrixU().transpose();
    result.translation = dst_mean - result.rotation * src_mean;
    return result;
}

namespace {

void check_not_degenerate(const PointCloud& source) {
    if (source.size() < 3) throw config_error("icp_rigid: source needs at least 3 points");
    Vec3 mean = Vec3::Zero();
    for (const Vec3& p : source.positions) mean += p;
    mean /= static_cast<double>(source.size());
    Mat3 cov = Mat3::Zero();
    for (const Vec3& p : source.positions) {
        const Vec3 d = p - mean;
        cov += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
    const auto& ev = eig.eigenvalues();  // ascending
    if (ev[2] <= 0.0 || ev[1] <= 1e-12 * ev[2])
        throw config_error("icp_rigid: source points are coincident or collinear");
}

} // namespace

IcpResult icp_rigid(const PointCloud& source, const PointCloud& target, int max_iters,
                    double tol, const RigidTransform& initial) {
    check_not_degenerate(source);
    require_nonempty(target, "icp_rigid");
    if (max_iters < 1) throw config_error("icp_rigid: max_iters must be >= 1");

    const SpatialIndex target_index(target.positions);
    IcpResult result;
    result.transform = initial;

    std::vector<Vec3> matched(source.size());
    double prev_err = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < max_iters; ++iter) {
        for (std::size_t i = 0; i < source.size(); ++i) {
            const Vec3 moved = result.transform.apply(source.positions[i]);
            matched[i] = target.positions[target_index.nearest(moved).first];
        }
        result.transform = rigid_align_pairs(source.positions, matched);
        double err = 0.0;
        for (std::size_t i = 0; i < source.size(); ++i)
            err += target_index.nearest(result.transform.apply(source.positions[i])).second;
        err /= static_cast<double>(source.size());
        result.errors.push_back(err);
        result.iterations = iter + 1;
        if (prev_err - err < tol * std::max(prev_err, 1e-300)) break;
        prev_err = err;
    }
    return result;
}

std::vector<int> farthest_point_indices(const std::vector<Vec3>& points, int count) {
    if (points.empty()) throw config_error("farthest_point_indices: empty input");
    count = std::min<int>(count, static_cast<int>(points.size()));
    Vec3 centroid = Vec3::Zero();
    for (const Vec3& p : points) centroid += p;
    centroid /= static_cast<double>(points.size());

    int seed = 0;
    double best = -1.0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = (points[i] - centroid).squaredNorm();
        if (d > best) {
            best = d;
            seed = static_cast<int>(i);
        }
    }
    std::vector<int> chosen{seed};
    std::vector<double> min_d2(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        min_d2[i] = (points[i] - points[seed]).squaredNorm();
    while (static_cast<int>(chosen.size()) < count) {
        int next = 0;
        double far = -1.0;
        for (std::size_t i = 0; i < points.size(); ++i)
            if (min_d2[i] > far) {
                far = min_d2[i];
                next = static_cast<int>(i);
            }
        chosen.push_back(next);
        for (std::size_t i = 0; i < points.size(); ++i)
            min_d2[i] = std::min(min_d2[i], (points[i] - points[next]).squaredNorm());
    }
    return chosen;
}

PointCloud select(const PointCloud& cloud, const std::vector<int>& indices) {
    PointCloud out;
    out.positions.reserve(indices.size());
    for (int idx : indices) {
        out.positions.push_back(cloud.positions[idx]);
        if (cloud.has_normals()) out.normals.push_back(cloud.normals[idx]);
        if (cloud.has_markers()) out.marker_ids.push_back(cloud.marker_ids[idx]);
    }
    return out;
}

} // namespace warpfield::align
