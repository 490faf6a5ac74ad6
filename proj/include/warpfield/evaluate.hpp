#pragma once

#include <vector>

#include "warpfield/kinematics.hpp"
#include "warpfield/synthetic.hpp"

namespace warpfield::eval {

using Actuation = Eigen::VectorXd;

/// Per-point surface errors of a prediction against a reference cloud:
/// distance from each predicted point to its nearest reference point.
std::vector<double> point_errors(const align::PointCloud& predicted,
                                 const align::SpatialIndex& reference_index);

struct CorrectionStats {
    double mean_uncorrected = 0.0;
    double mean_corrected = 0.0;
    double max_uncorrected = 0.0;
    double max_corrected = 0.0;
    double reduction_percent = 0.0;  // of the mean error
    std::vector<double> errors_uncorrected;  // pooled per-point
    std::vector<double> errors_corrected;
};

/// Evaluates the pipeline with and without the warp against noiseless
/// realized reference surfaces of the synthetic testbed.
CorrectionStats evaluate_correction(const kin::FkPipeline& pipe,
                                    const synth::VirtualRobot& robot,
                                    const synth::RealityGap& gap,
                                    const std::vector<Actuation>& actuations,
                                    int reference_count = 4096);

/// Dense noiseless realized surface used as evaluation ground truth.
align::PointCloud reference_surface(const synth::VirtualRobot& robot,
                                    const synth::RealityGap& gap, const Actuation& a,
                                    int reference_count = 4096);

/// Same protocol against captured clouds (fallback when no truth sidecar).
CorrectionStats evaluate_against_clouds(const kin::FkPipeline& pipe,
                                        const std::vector<Actuation>& actuations,
                                        const std::vector<align::PointCloud>& references);

/// Normal errors 1 − n(p)·n(c(p)) of predicted samples against a reference
/// cloud with normals; values optionally capped.
std::vector<double> normal_errors(const align::PointCloud& predicted,
                                  const align::PointCloud& reference, double cap = -1.0);

} // namespace warpfield::eval
