#include "warpfield/rbf_warp.hpp"

#include <cmath>

#include "warpfield/errors.hpp"

namespace warpfield::rbf {

WarpConfig WarpConfig::regular(int n_kernels, double kernel_width) {
    WarpConfig cfg;
    cfg.n_kernels = n_kernels;
    cfg.kernel_width = kernel_width;
    cfg.validate();
    int rows = static_cast<int>(std::floor(std::sqrt(static_cast<double>(n_kernels))));
    rows = std::max(rows, 1);
    int cols = (n_kernels + rows - 1) / rows;
    cfg.kernel_uv.reserve(n_kernels);
    for (int r = 0; r < rows && static_cast<int>(cfg.kernel_uv.size()) < n_kernels; ++r)
        for (int c = 0; c < cols && static_cast<int>(cfg.kernel_uv.size()) < n_kernels; ++c)
            cfg.kernel_uv.push_back({(r + 0.5) / rows, (c + 0.5) / cols});
    return cfg;
}

void WarpConfig::validate() const {
    if (n_kernels < 1) throw config_error("WarpConfig: n_kernels must be >= 1");
    if (!(kernel_width > 0.0)) throw config_error("WarpConfig: kernel_width must be > 0");
    if (!kernel_uv.empty() && static_cast<int>(kernel_uv.size()) != n_kernels)
        throw config_error("WarpConfig: kernel_uv size does not match n_kernels");
}

KernelSet KernelSet::on_surface(const WarpConfig& cfg, const bspline::ControlGrid& grid,
                                const bspline::BSplineBasis& basis) {
    if (static_cast<int>(cfg.kernel_uv.size()) != cfg.n_kernels)
        throw config_error("KernelSet: WarpConfig has no kernel UV addresses");
    KernelSet set;
    set.centers.reserve(cfg.kernel_uv.size());
    for (const auto& uv : cfg.kernel_uv)
        set.centers.push_back(bspline::surface_eval(grid, basis, uv));
    return set;
}

WarpCoefficients WarpCoefficients::identity(int n_kernels) {
    WarpCoefficients gamma;
    gamma.betas.assign(n_kernels, Vec3::Zero());
    return gamma;
}

Eigen::VectorXd WarpCoefficients::to_vector() const {
    Eigen::VectorXd v(3 * (static_cast<Eigen::Index>(betas.size()) + 4));
    v.segment<3>(0) = alpha0;
    for (int k = 0; k < 3; ++k) v.segment<3>(3 * (k + 1)) = affine.col(k);
    for (std::size_t i = 0; i < betas.size(); ++i) v.segment<3>(12 + 3 * i) = betas[i];
    return v;
}

WarpCoefficients WarpCoefficients::from_vector(const Eigen::VectorXd& v) {
    if (v.size() < 12 || v.size() % 3 != 0)
        throw config_error("WarpCoefficients: vector length must be 3(N+4)");
    WarpCoefficients gamma;
    gamma.alpha0 = v.segment<3>(0);
    for (int k = 0; k < 3; ++k) gamma.affine.col(k) = v.segment<3>(3 * (k + 1));
    const Eigen::Index n = v.size() / 3 - 4;
    gamma.betas.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) gamma.betas[i] = v.segment<3>(12 + 3 * i);
    return gamma;
}

namespace {

void check_sizes(const WarpCoefficients& gamma, const KernelSet& kernels, const WarpConfig& cfg) {
    if (static_cast<int>(kernels.centers.size()) != cfg.n_kernels)
        throw config_error("rbf: kernel set size does not match WarpConfig");
    if (gamma.n_kernels() != cfg.n_kernels)
        throw config_error("rbf: coefficient count does not match WarpConfig");
}

} // namespace

Vec3 warp_point(const WarpCoefficients& gamma, const KernelSet& kernels, const WarpConfig& cfg,
                const Vec3& p) {
    check_sizes(gamma, kernels, cfg);
    Vec3 out = gamma.alpha0 + gamma.affine * p;
    for (std::size_t i = 0; i < kernels.centers.size(); ++i)
        out += gamma.betas[i] *
               std::exp(-cfg.kernel_width * (p - kernels.centers[i]).squaredNorm());
    return out;
}

Mat3 jacobian_wrt_point(const WarpCoefficients& gamma, const KernelSet& kernels,
                        const WarpConfig& cfg, const Vec3& p) {
    check_sizes(gamma, kernels, cfg);
    const double c = cfg.kernel_width;
    Mat3 jac = gamma.affine;
    for (std::size_t i = 0; i < kernels.centers.size(); ++i) {
        const Vec3 r = p - kernels.centers[i];
        const double g = std::exp(-c * r.squaredNorm());
        // ∂g/∂p = −2c·g·(p − q_i)
        jac.noalias() += gamma.betas[i] * (-2.0 * c * g * r).transpose();
    }
    return jac;
}

Eigen::MatrixXd jacobian_wrt_kernels(const WarpCoefficients& gamma, const KernelSet& kernels,
                                     const WarpConfig& cfg, const Vec3& p) {
    check_sizes(gamma, kernels, cfg);
    const double c = cfg.kernel_width;
    Eigen::MatrixXd jac(3, 3 * cfg.n_kernels);
    for (int i = 0; i < cfg.n_kernels; ++i) {
        const Vec3 r = p - kernels.centers[i];
        const double g = std::exp(-c * r.squaredNorm());
        // ∂g/∂q_i = +2c·g·(p − q_i)
        jac.block<3, 3>(0, 3 * i).noalias() = gamma.betas[i] * (2.0 * c * g * r).transpose();
    }
    return jac;
}

Eigen::MatrixXd jacobian_wrt_coefficients(const KernelSet& kernels, const WarpConfig& cfg,
                                          const Vec3& p) {
    if (static_cast<int>(kernels.centers.size()) != cfg.n_kernels)
        throw config_error("rbf: kernel set size does not match WarpConfig");
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3, 3 * (cfg.n_kernels + 4));
    jac.block<3, 3>(0, 0) = Mat3::Identity();
    for (int k = 0; k < 3; ++k) jac.block<3, 3>(0, 3 * (k + 1)) = p[k] * Mat3::Identity();
    for (int i = 0; i < cfg.n_kernels; ++i) {
        const double g = std::exp(-cfg.kernel_width * (p - kernels.centers[i]).squaredNorm());
        jac.block<3, 3>(0, 12 + 3 * i) = g * Mat3::Identity();
    }
    return jac;
}

CompatibilityResidual compatibility_residual(const WarpCoefficients& gamma,
                                             const KernelSet& kernels) {
    if (kernels.centers.size() != gamma.betas.size())
        throw config_error("compatibility_residual: size mismatch");
    CompatibilityResidual res;
    for (std::size_t i = 0; i < gamma.betas.size(); ++i) {
        const Vec3& beta = gamma.betas[i];
        const Vec3& q = kernels.centers[i];
        res.sum_beta += beta;
        res.sum_beta_qx += beta * q.x();
        res.sum_beta_qy += beta * q.y();
        res.sum_beta_qz += beta * q.z();
    }
    return res;
}

} // namespace warpfield::rbf
