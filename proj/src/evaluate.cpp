#include "warpfield/evaluate.hpp"

#include <algorithm>
#include <cmath>

#include "warpfield/errors.hpp"

namespace warpfield::eval {

std::vector<double> point_errors(const align::PointCloud& predicted,
                                 const align::SpatialIndex& reference_index) {
    std::vector<double> errors;
    errors.reserve(predicted.size());
    for (const Vec3& p : predicted.positions)
        errors.push_back(std::sqrt(reference_index.nearest(p).second));
    return errors;
}

align::PointCloud reference_surface(const synth::VirtualRobot& robot,
                                    const synth::RealityGap& gap, const Actuation& a,
                                    int reference_count) {
    const auto sim = synth::simulate(robot, a, synth::uv_lattice(reference_count));
    const auto realized = synth::realize(robot, gap, a, sim, 0, /*with_noise=*/false);
    align::PointCloud cloud;
    cloud.positions.reserve(realized.size());
    cloud.normals.reserve(realized.size());
    for (const auto& s : realized) {
        cloud.positions.push_back(s.position);
        cloud.normals.push_back(s.normal);
    }
    return cloud;
}

namespace {

CorrectionStats finalize(CorrectionStats stats) {
    auto mean_max = [](const std::vector<double>& v, double& mean, double& mx) {
        mean = 0.0;
        mx = 0.0;
        for (double e : v) {
            mean += e;
            mx = std::max(mx, e);
        }
        if (!v.empty()) mean /= static_cast<double>(v.size());
    };
    mean_max(stats.errors_uncorrected, stats.mean_uncorrected, stats.max_uncorrected);
    mean_max(stats.errors_corrected, stats.mean_corrected, stats.max_corrected);
    stats.reduction_percent =
        stats.mean_uncorrected > 0.0
            ? 100.0 * (stats.mean_uncorrected - stats.mean_corrected) / stats.mean_uncorrected
            : 0.0;
    return stats;
}

} // namespace

CorrectionStats evaluate_correction(const kin::FkPipeline& pipe,
                                    const synth::VirtualRobot& robot,
                                    const synth::RealityGap& gap,
                                    const std::vector<Actuation>& actuations,
                                    int reference_count) {
    CorrectionStats stats;
    for (const Actuation& a : actuations) {
        const align::PointCloud reference = reference_surface(robot, gap, a, reference_count);
        const align::SpatialIndex index(reference.positions);
        for (double e : point_errors(kin::forward_shape_uncorrected(pipe, a), index))
            stats.errors_uncorrected.push_back(e);
        for (double e : point_errors(kin::forward_shape(pipe, a), index))
            stats.errors_corrected.push_back(e);
    }
    return finalize(std::move(stats));
}

CorrectionStats evaluate_against_clouds(const kin::FkPipeline& pipe,
                                        const std::vector<Actuation>& actuations,
                                        const std::vector<align::PointCloud>& references) {
    if (actuations.size() != references.size())
        throw config_error("evaluate_against_clouds: actuation/reference count mismatch");
    CorrectionStats stats;
    for (std::size_t i = 0; i < actuations.size(); ++i) {
        if (references[i].positions.empty()) continue;
        const align::SpatialIndex index(references[i].positions);
        for (double e : point_errors(kin::forward_shape_uncorrected(pipe, actuations[i]), index))
            stats.errors_uncorrected.push_back(e);
        for (double e : point_errors(kin::forward_shape(pipe, actuations[i]), index))
            stats.errors_corrected.push_back(e);
    }
    return finalize(std::move(stats));
}

std::vector<double> normal_errors(const align::PointCloud& predicted,
                                  const align::PointCloud& reference, double cap) {
    if (!predicted.has_normals() || !reference.has_normals())
        throw config_error("normal_errors: both clouds need normals");
    const align::SpatialIndex index(reference.positions);
    std::vector<double> errors;
    errors.reserve(predicted.size());
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const int j = index.nearest(predicted.positions[i]).first;
        double e = 1.0 - predicted.normals[i].dot(reference.normals[j]);
        if (cap > 0.0) e = std::min(e, cap);
        errors.push_back(e);
    }
    return errors;
}

} // namespace warpfield::eval
