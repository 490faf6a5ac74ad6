#pragma once

#include <Eigen/Core>
#include <vector>

#include "warpfield/alignment.hpp"
#include "warpfield/bspline.hpp"
#include "warpfield/neural.hpp"
#include "warpfield/rbf_warp.hpp"

namespace warpfield::kin {

using Actuation = Eigen::VectorXd;

/// Surrogate simulator: a network predicting control-point offsets about the
/// dataset-mean grid.
struct FkSurrogate {
    nn::MlpModel net;
    bspline::ControlGrid mean_grid;

    bspline::ControlGrid predict(const Actuation& a) const;
};

/// The composed map a → corrected surface samples: surrogate control points,
/// coefficient prediction, B-spline decoding and the warp, evaluated on a
/// fixed UV sample set.
struct FkPipeline {
    FkSurrogate fk;
    nn::MlpModel rbf_net;
    rbf::WarpConfig warp_cfg;
    bspline::BSplineBasis basis;
    std::vector<bspline::UvSample> sample_uv;

    void validate() const;
};

Actuation clamp01(const Actuation& a);

align::PointCloud forward_shape(const FkPipeline& pipe, const Actuation& a);

/// Forward pass that also attaches analytic normals (B-spline tangents pushed
/// through the warp Jacobian); used by evaluation, not by the solver.
align::PointCloud forward_shape_with_normals(const FkPipeline& pipe, const Actuation& a);

/// Uncorrected surface (no warp), for before/after comparisons.
align::PointCloud forward_shape_uncorrected(const FkPipeline& pipe, const Actuation& a);
align::PointCloud forward_shape_uncorrected_with_normals(const FkPipeline& pipe,
                                                         const Actuation& a);

/// The three chain-rule contributions to ∂p*/∂a per sample: through the
/// decoded surface point, directly through the predicted coefficients, and
/// through the kernel centers. Each entry is 3×dofs.
struct JacobianTerms {
    std::vector<Eigen::MatrixXd> through_point;
    std::vector<Eigen::MatrixXd> through_coefficients;
    std::vector<Eigen::MatrixXd> through_kernels;
};

JacobianTerms shape_jacobian_terms(const FkPipeline& pipe, const Actuation& a);
std::vector<Eigen::MatrixXd> shape_jacobian(const FkPipeline& pipe, const Actuation& a);

/// Σ ‖p* − (R·c* + t)‖² with c* the closest target point to p* under the
/// current pose; correspondences are recomputed per call.
double ik_objective(const FkPipeline& pipe, const Actuation& a, const align::PointCloud& target,
                    const align::RigidTransform& pose);

struct IkConfig {
    double lambda = 1e-3;        // relative-decrease termination threshold
    int i_max = 50;
    double ls_initial_step = 1.0;  // on the normalized gradient direction
    double ls_shrink = 0.5;
    int ls_max_trials = 20;
    bool pose_free = true;       // false pins (R,t) = (I,0)

    void validate() const;
};

struct IkTimings {
    double forward_ms = 0.0;   // totals across the solve
    double gradient_ms = 0.0;
    double icp_ms = 0.0;
};

struct IkResult {
    Actuation actuation;
    std::vector<double> objective_trace;
    align::RigidTransform pose;
    int iterations = 0;
    bool stalled = false;
    IkTimings timings;
};

/// Gradient-descent IK with a per-iteration ICP pose refinement and Armijo
/// backtracking line search; actuations are box-projected to [0,1] after
/// every step.
IkResult ik_solve(const FkPipeline& pipe, const align::PointCloud& target, const IkConfig& cfg,
                  const Actuation& a0,
                  const align::RigidTransform& pose0 = align::RigidTransform{});

} // namespace warpfield::kin
