#pragma once

#include <cstdint>
#include <vector>

#include "warpfield/alignment.hpp"
#include "warpfield/bspline.hpp"
#include "warpfield/geometry.hpp"
#include "warpfield/rbf_warp.hpp"

namespace warpfield::synth {

using Actuation = Eigen::VectorXd;

/// Analytic deformable-membrane robot: a square silicone sheet with
/// independently inflated chambers. Heights superpose as compactly supported
/// smooth bumps, so the surface is C² in (u, v, a) and cheap to sample.
struct VirtualRobot {
    int dofs = 9;
    std::vector<bspline::UvSample> chamber_centers;
    // radius/height chosen so a 30×30 cubic control grid reproduces every
    // reachable shape within the dataset builder's fit tolerance
    double bump_radius = 0.6;    // in UV units
    double max_height = 12.0;    // mm at full pressure
    double base_size = 320.0;    // mm side length

    static VirtualRobot membrane(int dofs = 9);

    double height(double u, double v, const Actuation& a) const;
    Vec3 position(const bspline::UvSample& s, const Actuation& a) const;
    /// Analytic outward (+z leaning) unit normal.
    Vec3 normal(const bspline::UvSample& s, const Actuation& a) const;

    /// Diagonal of the reachable volume; the length scale for thresholds.
    double bbox_diagonal() const {
        return Vec3(base_size, base_size, max_height).norm();
    }

    void validate() const;
};

/// One sample on a (simulated or realized) surface, with its UV address and
/// analytic unit normal. Capture operations strip the UV metadata.
struct SurfaceSample {
    bspline::UvSample uv;
    Vec3 position = Vec3::Zero();
    Vec3 normal = Vec3::UnitZ();
};

std::vector<SurfaceSample> simulate(const VirtualRobot& robot, const Actuation& a,
                                    const std::vector<bspline::UvSample>& uv_lattice);

/// Hidden ground-truth sim-to-real discrepancy. The warp kernels sit at
/// fixed UV addresses; with track_surface the centers are re-evaluated on
/// each deformed surface, which keeps the gap inside the family a learner
/// with the same kernel lattice can represent.
struct RealityGap {
    rbf::WarpCoefficients gap_gamma;
    rbf::WarpConfig kernel_cfg;
    rbf::KernelSet rest_kernels;   // centers on the rest (a = 0) surface
    double actuation_coupling = 0.0;
    double noise_sigma = 0.0;      // mm, isotropic, applied before capture
    bool track_surface = true;

    /// Identity gap (reality equals simulation).
    static RealityGap identity(const VirtualRobot& robot, int n_kernels = 100);
};

/// Random smooth gap whose betas satisfy the compatibility sums exactly on
/// the rest-surface kernels, scaled so the mean displacement over the rest
/// surface equals `target_mean_displacement` (mm).
RealityGap make_representable_gap(const VirtualRobot& robot, const rbf::WarpConfig& kernel_cfg,
                                  double target_mean_displacement, std::uint64_t seed);

/// Higher-frequency control: a gap on a denser, narrower kernel lattice that
/// a coarser learner cannot reproduce exactly.
RealityGap make_highfreq_gap(const VirtualRobot& robot, int kernels_per_side,
                             double kernel_width, double target_mean_displacement,
                             std::uint64_t seed);

/// Bisection on the multiplicative gap scale until the mean rest-surface
/// displacement hits the target (relative tolerance 1e-6).
void calibrate_gap_scale(RealityGap& gap, const VirtualRobot& robot,
                         double target_mean_displacement);

double mean_gap_displacement(const RealityGap& gap, const VirtualRobot& robot);

/// Applies the hidden gap to simulated samples: displacements are scaled by
/// (1 + actuation_coupling·mean(a)) and Gaussian position noise is added
/// when with_noise is set. Normals are carried through the warp Jacobian.
std::vector<SurfaceSample> realize(const VirtualRobot& robot, const RealityGap& gap,
                                   const Actuation& a, const std::vector<SurfaceSample>& sim,
                                   std::uint64_t seed, bool with_noise = true);

struct OcclusionPatch {
    bspline::UvSample center;
    double radius = 0.1;       // UV distance
    double probability = 1.0;  // per-point deletion probability inside the patch
};

struct CaptureSpec {
    enum class Mode { Scan, Markers };
    Mode mode = Mode::Scan;
    int sample_count = 1000;
    std::vector<OcclusionPatch> occlusion_patches;
    std::vector<bspline::UvSample> marker_uv;
    double dropout_probability = 0.0;
    std::uint64_t seed = 0;
};

struct ScanResult {
    align::PointCloud cloud;
    double deleted_fraction = 0.0;
};

/// Virtual 3D scan: occlusion deletions, farthest-point subsampling to
/// sample_count, shuffled order. Output carries positions and normals only.
ScanResult scan(const std::vector<SurfaceSample>& realized, const CaptureSpec& spec,
                std::uint64_t frame_seed);

struct MocapResult {
    align::PointCloud cloud;       // present markers only, with marker_ids
    std::vector<int> missing_ids;  // dropped this frame
};

/// Virtual MoCap capture of the realized surface at the marker UV addresses.
MocapResult mocap(const VirtualRobot& robot, const RealityGap& gap, const Actuation& a,
                  const CaptureSpec& spec, std::uint64_t frame_seed);

/// Near-square UV lattice with exactly `count` points (row-major, inset by
/// half a cell).
std::vector<bspline::UvSample> uv_lattice(int count);
std::vector<bspline::UvSample> uv_grid(int rows, int cols);

} // namespace warpfield::synth
