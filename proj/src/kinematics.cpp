#include "warpfield/kinematics.hpp"

#include <chrono>
#include <cmath>

#include "warpfield/errors.hpp"

namespace warpfield::kin {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

} // namespace

bspline::ControlGrid FkSurrogate::predict(const Actuation& a) const {
    const Eigen::VectorXd offsets = nn::forward(net, a);
    return bspline::ControlGrid::from_vector(mean_grid.m_u, mean_grid.m_v,
                                             mean_grid.to_vector() + offsets);
}

void FkPipeline::validate() const {
    fk.net.validate();
    rbf_net.validate();
    warp_cfg.validate();
    const int grid_dims = 3 * fk.mean_grid.m_u * fk.mean_grid.m_v;
    if (fk.net.output_size() != grid_dims)
        throw config_error("FkPipeline: fk net output does not match grid size");
    if (rbf_net.input_size() != grid_dims)
        throw config_error("FkPipeline: rbf net input does not match grid size");
    if (rbf_net.output_size() != 3 * (warp_cfg.n_kernels + 4))
        throw config_error("FkPipeline: rbf net output does not match 3(N+4)");
    if (sample_uv.empty()) throw config_error("FkPipeline: empty sample UV set");
    if (basis.count(bspline::Axis::U) != fk.mean_grid.m_u ||
        basis.count(bspline::Axis::V) != fk.mean_grid.m_v)
        throw config_error("FkPipeline: basis does not match grid dimensions");
}

Actuation clamp01(const Actuation& a) {
    return a.cwiseMax(0.0).cwiseMin(1.0);
}

namespace {

struct PipelineEval {
    bspline::ControlGrid grid;
    Eigen::VectorXd grid_vec;
    rbf::WarpCoefficients gamma;
    rbf::KernelSet kernels;
};

PipelineEval evaluate_stages(const FkPipeline& pipe, const Actuation& a) {
    PipelineEval ev;
    ev.grid = pipe.fk.predict(a);
    ev.grid_vec = ev.grid.to_vector();
    ev.gamma = rbf::WarpCoefficients::from_vector(nn::forward(pipe.rbf_net, ev.grid_vec));
    ev.kernels = rbf::KernelSet::on_surface(pipe.warp_cfg, ev.grid, pipe.basis);
    return ev;
}

} // namespace

align::PointCloud forward_shape(const FkPipeline& pipe, const Actuation& a) {
    const PipelineEval ev = evaluate_stages(pipe, a);
    align::PointCloud cloud;
    cloud.positions.reserve(pipe.sample_uv.size());
    for (const auto& uv : pipe.sample_uv) {
        const Vec3 p = bspline::surface_eval(ev.grid, pipe.basis, uv);
        cloud.positions.push_back(rbf::warp_point(ev.gamma, ev.kernels, pipe.warp_cfg, p));
    }
    return cloud;
}

align::PointCloud forward_shape_with_normals(const FkPipeline& pipe, const Actuation& a) {
    const PipelineEval ev = evaluate_stages(pipe, a);
    align::PointCloud cloud;
    cloud.positions.reserve(pipe.sample_uv.size());
    cloud.normals.reserve(pipe.sample_uv.size());
    for (const auto& uv : pipe.sample_uv) {
        const bspline::SurfaceFrame frame = bspline::surface_frame(ev.grid, pipe.basis, uv);
        cloud.positions.push_back(
            rbf::warp_point(ev.gamma, ev.kernels, pipe.warp_cfg, frame.position));
        const Mat3 jac =
            rbf::jacobian_wrt_point(ev.gamma, ev.kernels, pipe.warp_cfg, frame.position);
        Vec3 n = (jac * frame.tangent_u).cross(jac * frame.tangent_v);
        const double len = n.norm();
        cloud.normals.push_back(len > 0.0 ? Vec3(n / len) : frame.unit_normal());
    }
    return cloud;
}

align::PointCloud forward_shape_uncorrected(const FkPipeline& pipe, const Actuation& a) {
    const bspline::ControlGrid grid = pipe.fk.predict(a);
    align::PointCloud cloud;
    cloud.positions.reserve(pipe.sample_uv.size());
    for (const auto& uv : pipe.sample_uv)
        cloud.positions.push_back(bspline::surface_eval(grid, pipe.basis, uv));
    return cloud;
}

align::PointCloud forward_shape_uncorrected_with_normals(const FkPipeline& pipe,
                                                         const Actuation& a) {
    const bspline::ControlGrid grid = pipe.fk.predict(a);
    align::PointCloud cloud;
    for (const auto& uv : pipe.sample_uv) {
        const bspline::SurfaceFrame frame = bspline::surface_frame(grid, pipe.basis, uv);
        cloud.positions.push_back(frame.position);
        cloud.normals.push_back(frame.unit_normal());
    }
    return cloud;
}

JacobianTerms shape_jacobian_terms(const FkPipeline& pipe, const Actuation& a) {
    const int dofs = static_cast<int>(a.size());
    const PipelineEval ev = evaluate_stages(pipe, a);
    const int m_v = ev.grid.m_v;

    // ∂S^c/∂a (offsets share the Jacobian with the grid itself)
    const Eigen::MatrixXd grid_dot =
        nn::forward_with_tangents(pipe.fk.net, a, Eigen::MatrixXd::Identity(dofs, dofs)).second;
    // ∂γ/∂a through the coefficient network
    const Eigen::MatrixXd gamma_dot =
        nn::forward_with_tangents(pipe.rbf_net, ev.grid_vec, grid_dot).second;

    const auto gather = [&](const bspline::WeightBlock& block) {
        Eigen::MatrixXd dot = Eigen::MatrixXd::Zero(3, dofs);
        for (int bi = 0; bi < block.w.rows(); ++bi)
            for (int bj = 0; bj < block.w.cols(); ++bj) {
                const Eigen::Index row = 3 * (static_cast<Eigen::Index>(block.i0 + bi) * m_v +
                                              (block.j0 + bj));
                dot += block.w(bi, bj) * grid_dot.middleRows(row, 3);
            }
        return dot;
    };

    const int n_kernels = pipe.warp_cfg.n_kernels;
    std::vector<Eigen::MatrixXd> kernel_dot;
    kernel_dot.reserve(n_kernels);
    for (const auto& uv : pipe.warp_cfg.kernel_uv)
        kernel_dot.push_back(gather(bspline::eval_weights(pipe.basis, uv)));

    const double c = pipe.warp_cfg.kernel_width;
    JacobianTerms terms;
    for (const auto& uv : pipe.sample_uv) {
        const bspline::WeightBlock block = bspline::eval_weights(pipe.basis, uv);
        const Vec3 p = block.apply(ev.grid);
        const Eigen::MatrixXd p_dot = gather(block);

        terms.through_point.push_back(
            rbf::jacobian_wrt_point(ev.gamma, ev.kernels, pipe.warp_cfg, p) * p_dot);

        // direct coefficient path, block by block: I, p_x·I, p_y·I, p_z·I, g_i·I
        Eigen::MatrixXd t_gamma = gamma_dot.middleRows(0, 3);
        for (int k = 0; k < 3; ++k) t_gamma += p[k] * gamma_dot.middleRows(3 * (k + 1), 3);
        Eigen::MatrixXd t_kernels = Eigen::MatrixXd::Zero(3, dofs);
        for (int i = 0; i < n_kernels; ++i) {
            const Vec3 r = p - ev.kernels.centers[i];
            const double g = std::exp(-c * r.squaredNorm());
            t_gamma += g * gamma_dot.middleRows(12 + 3 * i, 3);
            // ∂p*/∂q_i · ∂q_i/∂a = β_i (2c·g·r)ᵀ · kernel_dot[i]
            t_kernels.noalias() +=
                ev.gamma.betas[i] * ((2.0 * c * g * r).transpose() * kernel_dot[i]);
        }
        terms.through_coefficients.push_back(std::move(t_gamma));
        terms.through_kernels.push_back(std::move(t_kernels));
    }
    return terms;
}

std::vector<Eigen::MatrixXd> shape_jacobian(const FkPipeline& pipe, const Actuation& a) {
    JacobianTerms terms = shape_jacobian_terms(pipe, a);
    std::vector<Eigen::MatrixXd> total;
    total.reserve(terms.through_point.size());
    for (std::size_t s = 0; s < terms.through_point.size(); ++s)
        total.push_back(terms.through_point[s] + terms.through_coefficients[s] +
                        terms.through_kernels[s]);
    return total;
}

namespace {

double objective_with_pairs(const align::SpatialIndex& target_index,
                            const align::PointCloud& target, const align::PointCloud& cloud,
                            const align::RigidTransform& pose,
                            std::vector<Vec3>* matched_target) {
    // ‖p − (R·x + t)‖ = ‖Rᵀ(p − t) − x‖, so one fixed index serves any pose
    const Mat3 rt = pose.rotation.transpose();
    double total = 0.0;
    if (matched_target) matched_target->clear();
    for (const Vec3& p : cloud.positions) {
        const auto [idx, d2] = target_index.nearest(rt * (p - pose.translation));
        total += d2;
        if (matched_target) matched_target->push_back(target.positions[idx]);
    }
    return total;
}

} // namespace

double ik_objective(const FkPipeline& pipe, const Actuation& a, const align::PointCloud& target,
                    const align::RigidTransform& pose) {
    if (target.positions.empty()) throw config_error("ik_objective: empty target");
    const align::SpatialIndex index(target.positions);
    const align::PointCloud cloud = forward_shape(pipe, a);
    return objective_with_pairs(index, target, cloud, pose, nullptr);
}

void IkConfig::validate() const {
    if (!(lambda > 0.0)) throw config_error("IkConfig: lambda must be > 0");
    if (i_max < 1) throw config_error("IkConfig: i_max must be >= 1");
    if (!(ls_initial_step > 0.0) || !(ls_shrink > 0.0) || ls_shrink >= 1.0 || ls_max_trials < 1)
        throw config_error("IkConfig: invalid line search parameters");
}

IkResult ik_solve(const FkPipeline& pipe, const align::PointCloud& target, const IkConfig& cfg,
                  const Actuation& a0, const align::RigidTransform& pose0) {
    cfg.validate();
    pipe.validate();
    if (target.positions.empty()) throw config_error("ik_solve: empty target");
    constexpr double kArmijo = 1e-4;

    const align::SpatialIndex target_index(target.positions);
    IkResult result;
    result.pose = cfg.pose_free ? pose0 : align::RigidTransform{};
    Actuation a = clamp01(a0);

    auto t0 = Clock::now();
    align::PointCloud cloud = forward_shape(pipe, a);
    result.timings.forward_ms += ms_since(t0);
    result.objective_trace.push_back(
        objective_with_pairs(target_index, target, cloud, result.pose, nullptr));

    std::vector<Vec3> matched;
    double r = 1.0;
    while (result.iterations < cfg.i_max && r > cfg.lambda) {
        if (cfg.pose_free) {
            t0 = Clock::now();
            objective_with_pairs(target_index, target, cloud, result.pose, &matched);
            result.pose = align::rigid_align_pairs(matched, cloud.positions);
            result.timings.icp_ms += ms_since(t0);
        }

        t0 = Clock::now();
        const double d_pre =
            objective_with_pairs(target_index, target, cloud, result.pose, &matched);
        const std::vector<Eigen::MatrixXd> jac = shape_jacobian(pipe, a);
        Actuation grad = Actuation::Zero(a.size());
        for (std::size_t s = 0; s < cloud.positions.size(); ++s) {
            const Vec3 residual = cloud.positions[s] - result.pose.apply(matched[s]);
            grad += 2.0 * jac[s].transpose() * residual;
        }
        result.timings.gradient_ms += ms_since(t0);

        const double grad_norm = grad.norm();
        if (grad_norm == 0.0) {
            r = 0.0;
            ++result.iterations;
            result.objective_trace.push_back(d_pre);
            break;
        }
        const Actuation direction = -grad / grad_norm;

        double h = cfg.ls_initial_step;
        bool accepted = false;
        double d_post = d_pre;
        for (int trial = 0; trial < cfg.ls_max_trials; ++trial, h *= cfg.ls_shrink) {
            const Actuation a_try = clamp01(a + h * direction);
            const Actuation delta = a_try - a;
            const double descent = grad.dot(delta);
            if (descent >= 0.0) continue;  // projection removed all descent at this step size
            t0 = Clock::now();
            align::PointCloud cloud_try = forward_shape(pipe, a_try);
            const double d_try =
                objective_with_pairs(target_index, target, cloud_try, result.pose, nullptr);
            result.timings.forward_ms += ms_since(t0);
            if (d_try <= d_pre + kArmijo * descent) {
                a = a_try;
                cloud = std::move(cloud_try);
                d_post = d_try;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            result.stalled = true;
            break;
        }
        ++result.iterations;
        result.objective_trace.push_back(d_post);
        r = d_post != 0.0 ? std::abs(d_post - d_pre) / std::abs(d_post) : 0.0;
    }

    result.actuation = a;
    return result;
}

} // namespace warpfield::kin
