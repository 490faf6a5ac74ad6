#pragma once

#include <Eigen/Core>
#include <vector>

#include "warpfield/bspline.hpp"
#include "warpfield/geometry.hpp"

namespace warpfield::rbf {

/// Static shape of the warp function space: how many Gaussian kernels, their
/// width, and where the kernels live in the UV domain. The UV addresses are
/// shared by every shape; the 3D centers move with the surface.
struct WarpConfig {
    int n_kernels = 100;
    double kernel_width = 3.0e-5;  // c in exp(-c·r²), per squared length unit
    std::vector<bspline::UvSample> kernel_uv;

    /// Near-uniform kernel placement: a √N×√N lattice inset by half a cell,
    /// padded with extra lattice rows when N is not a perfect square.
    static WarpConfig regular(int n_kernels, double kernel_width = 3.0e-5);

    void validate() const;
};

/// Kernel centers evaluated on one simulated surface: q_i = B(u_i, v_i, S).
struct KernelSet {
    std::vector<Vec3> centers;

    static KernelSet on_surface(const WarpConfig& cfg, const bspline::ControlGrid& grid,
                                const bspline::BSplineBasis& basis);
};

/// Coefficients γ = [α₀, α₁, α₂, α₃, β₁ … β_N] of one warp; 3(N+4) scalars.
/// affine holds A = [α₁ | α₂ | α₃] as columns.
struct WarpCoefficients {
    Vec3 alpha0 = Vec3::Zero();
    Mat3 affine = Mat3::Identity();
    std::vector<Vec3> betas;

    static WarpCoefficients identity(int n_kernels);

    Eigen::VectorXd to_vector() const;
    static WarpCoefficients from_vector(const Eigen::VectorXd& v);

    int n_kernels() const { return static_cast<int>(betas.size()); }
};

/// p* = α₀ + A·p + Σ β_i·exp(−c‖p − q_i‖²)
Vec3 warp_point(const WarpCoefficients& gamma, const KernelSet& kernels, const WarpConfig& cfg,
                const Vec3& p);

/// ∂p*/∂p = A + Σ β_i (∂exp(−c‖p−q_i‖²)/∂p)ᵀ
Mat3 jacobian_wrt_point(const WarpCoefficients& gamma, const KernelSet& kernels,
                        const WarpConfig& cfg, const Vec3& p);

/// 3×3N; block i is β_i (∂exp(−c‖p−q_i‖²)/∂q_i)ᵀ
Eigen::MatrixXd jacobian_wrt_kernels(const WarpCoefficients& gamma, const KernelSet& kernels,
                                     const WarpConfig& cfg, const Vec3& p);

/// 3×3(N+4); blocks I, p_x·I, p_y·I, p_z·I, exp(−c‖p−q_i‖²)·I. The warp is
/// linear in γ, so this does not depend on the coefficients.
Eigen::MatrixXd jacobian_wrt_coefficients(const KernelSet& kernels, const WarpConfig& cfg,
                                          const Vec3& p);

/// The four compatibility sums (Σβ_i, Σβ_i·(q_i)_x, Σβ_i·(q_i)_y, Σβ_i·(q_i)_z);
/// a well-behaved warp drives all four to zero.
struct CompatibilityResidual {
    Vec3 sum_beta = Vec3::Zero();
    Vec3 sum_beta_qx = Vec3::Zero();
    Vec3 sum_beta_qy = Vec3::Zero();
    Vec3 sum_beta_qz = Vec3::Zero();

    double squared_norm() const {
        return sum_beta.squaredNorm() + sum_beta_qx.squaredNorm() + sum_beta_qy.squaredNorm() +
               sum_beta_qz.squaredNorm();
    }
};

CompatibilityResidual compatibility_residual(const WarpCoefficients& gamma,
                                             const KernelSet& kernels);

} // namespace warpfield::rbf
