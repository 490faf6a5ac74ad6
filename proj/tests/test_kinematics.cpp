#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <random>

#include "test_util.hpp"
#include "warpfield/errors.hpp"
#include "warpfield/kinematics.hpp"
#include "warpfield/synthetic.hpp"

using namespace warpfield;
using namespace warpfield::kin;

namespace {

// Small self-contained pipeline: 4 actuation DoFs, 8×8 grid, 9 kernels.
// The coefficient net starts as a perturbation of the identity warp so the
// composed map stays smooth and well-scaled.
FkPipeline make_test_pipeline(std::uint64_t seed, double warp_scale = 0.02) {
    std::mt19937_64 rng(seed);
    FkPipeline pipe;
    const int m = 8, dofs = 4, kernels = 9;

    pipe.basis = bspline::BSplineBasis::clamped_uniform(m, m);
    pipe.fk.mean_grid = bspline::ControlGrid::zero(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            pipe.fk.mean_grid.at(i, j) =
                Vec3(i * 20.0, j * 20.0, 2.0 * test_util::random_vec3(rng).z());

    pipe.fk.net = nn::MlpModel::create({dofs, 16, 3 * m * m}, nn::OutputActivation::Linear,
                                       seed + 1);
    pipe.fk.net.weights.back() *= 0.4;  // offsets of a few mm

    pipe.warp_cfg = rbf::WarpConfig::regular(kernels, 3.0e-5);
    pipe.rbf_net = nn::MlpModel::create({3 * m * m, 12, 3 * (kernels + 4)},
                                        nn::OutputActivation::Linear, seed + 2);
    pipe.rbf_net.weights.back() *= warp_scale;
    pipe.rbf_net.biases.back() = rbf::WarpCoefficients::identity(kernels).to_vector();
    Eigen::VectorXd mean = Eigen::VectorXd::Constant(3 * m * m, 70.0);
    Eigen::VectorXd scale = Eigen::VectorXd::Constant(3 * m * m, 50.0);
    pipe.rbf_net.set_standardization(mean, scale);

    pipe.sample_uv = synth::uv_lattice(120);
    pipe.validate();
    return pipe;
}

Actuation random_actuation(std::mt19937_64& rng, int dofs, double lo = 0.1, double hi = 0.9) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Actuation a(dofs);
    for (int d = 0; d < dofs; ++d) a[d] = dist(rng);
    return a;
}

} // namespace

TEST_CASE("identity-coefficient net passes the decoded surface through") {
    FkPipeline pipe = make_test_pipeline(1);
    // zero out the coefficient net's variable part: output is exactly γ_id
    for (auto& w : pipe.rbf_net.weights) w.setZero();
    pipe.rbf_net.biases.back() =
        rbf::WarpCoefficients::identity(pipe.warp_cfg.n_kernels).to_vector();

    std::mt19937_64 rng(2);
    const Actuation a = random_actuation(rng, 4);
    const align::PointCloud warped = forward_shape(pipe, a);
    const align::PointCloud raw = forward_shape_uncorrected(pipe, a);
    REQUIRE(warped.size() == raw.size());
    for (std::size_t i = 0; i < warped.size(); ++i)
        CHECK((warped.positions[i] - raw.positions[i]).norm() == 0.0);
}

TEST_CASE("single-sample pipeline equals the explicit composition") {
    FkPipeline pipe = make_test_pipeline(3);
    pipe.sample_uv = {{0.3, 0.7}};
    std::mt19937_64 rng(4);
    const Actuation a = random_actuation(rng, 4);

    const bspline::ControlGrid grid = pipe.fk.predict(a);
    const rbf::WarpCoefficients gamma =
        rbf::WarpCoefficients::from_vector(nn::forward(pipe.rbf_net, grid.to_vector()));
    const rbf::KernelSet kernels = rbf::KernelSet::on_surface(pipe.warp_cfg, grid, pipe.basis);
    const Vec3 p = bspline::surface_eval(grid, pipe.basis, pipe.sample_uv[0]);
    const Vec3 expected = rbf::warp_point(gamma, kernels, pipe.warp_cfg, p);

    const align::PointCloud cloud = forward_shape(pipe, a);
    REQUIRE(cloud.size() == 1);
    CHECK((cloud.positions[0] - expected).norm() == 0.0);
}

TEST_CASE("forward_shape matches the stage-by-stage composition everywhere") {
    FkPipeline pipe = make_test_pipeline(5);
    std::mt19937_64 rng(6);
    const Actuation a = random_actuation(rng, 4);

    const bspline::ControlGrid grid = pipe.fk.predict(a);
    const rbf::WarpCoefficients gamma =
        rbf::WarpCoefficients::from_vector(nn::forward(pipe.rbf_net, grid.to_vector()));
    const rbf::KernelSet kernels = rbf::KernelSet::on_surface(pipe.warp_cfg, grid, pipe.basis);

    const align::PointCloud cloud = forward_shape(pipe, a);
    for (std::size_t s = 0; s < pipe.sample_uv.size(); ++s) {
        const Vec3 p = bspline::surface_eval(grid, pipe.basis, pipe.sample_uv[s]);
        const Vec3 expected = rbf::warp_point(gamma, kernels, pipe.warp_cfg, p);
        CHECK((cloud.positions[s] - expected).norm() < 1e-12);
    }
}

TEST_CASE("forward_shape is bitwise deterministic") {
    FkPipeline pipe = make_test_pipeline(7);
    std::mt19937_64 rng(8);
    const Actuation a = random_actuation(rng, 4);
    const align::PointCloud c1 = forward_shape(pipe, a);
    const align::PointCloud c2 = forward_shape(pipe, a);
    for (std::size_t i = 0; i < c1.size(); ++i)
        CHECK((c1.positions[i] - c2.positions[i]).norm() == 0.0);
}

TEST_CASE("constant surrogate gives a zero shape jacobian") {
    FkPipeline pipe = make_test_pipeline(9);
    for (auto& w : pipe.fk.net.weights) w.setZero();
    std::mt19937_64 rng(10);
    const Actuation a = random_actuation(rng, 4);
    for (const auto& jac : shape_jacobian(pipe, a)) CHECK(jac.norm() == 0.0);
}

TEST_CASE("jacobian terms sum to the assembled jacobian") {
    FkPipeline pipe = make_test_pipeline(11);
    std::mt19937_64 rng(12);
    const Actuation a = random_actuation(rng, 4);
    const JacobianTerms terms = shape_jacobian_terms(pipe, a);
    const auto total = shape_jacobian(pipe, a);
    for (std::size_t s = 0; s < total.size(); ++s) {
        const Eigen::MatrixXd sum =
            terms.through_point[s] + terms.through_coefficients[s] + terms.through_kernels[s];
        CHECK((sum - total[s]).norm() < 1e-12 * std::max(1.0, total[s].norm()));
    }
}

TEST_CASE("shape jacobian matches finite differences over the actuation") {
    FkPipeline pipe = make_test_pipeline(13, 0.05);
    std::mt19937_64 rng(14);
    const Actuation a = random_actuation(rng, 4, 0.2, 0.8);
    const auto jac = shape_jacobian(pipe, a);
    const double h = 1e-6;
    for (int d = 0; d < 4; ++d) {
        Actuation ap = a, am = a;
        ap[d] += h;
        am[d] -= h;
        const align::PointCloud cp = forward_shape(pipe, ap);
        const align::PointCloud cm = forward_shape(pipe, am);
        for (std::size_t s = 0; s < cp.size(); s += 7) {
            const Vec3 fd = (cp.positions[s] - cm.positions[s]) / (2.0 * h);
            for (int r = 0; r < 3; ++r)
                CHECK(test_util::rel_error_floored(jac[s](r, d), fd[r], 1e-6) < 1e-4);
        }
    }
}

TEST_CASE("ik objective: zero at the generating actuation and pose absorption") {
    FkPipeline pipe = make_test_pipeline(15);
    std::mt19937_64 rng(16);
    const Actuation a = random_actuation(rng, 4);
    const align::PointCloud target = forward_shape(pipe, a);
    CHECK(ik_objective(pipe, a, target, align::RigidTransform{}) == 0.0);

    // translate the target and compensate exactly through the pose
    const Vec3 t(5.0, -2.0, 1.0);
    align::PointCloud moved = target;
    for (Vec3& p : moved.positions) p += t;
    align::RigidTransform pose;
    pose.translation = -t;
    // R·(x + t) + (−t)... compensation: x' = x + t, pose maps x' to x' − t = x
    CHECK(ik_objective(pipe, a, moved, pose) < 1e-18);
}

TEST_CASE("ik objective matches a brute-force closest-point loop") {
    FkPipeline pipe = make_test_pipeline(17);
    std::mt19937_64 rng(18);
    const Actuation a = random_actuation(rng, 4);
    align::PointCloud target;
    for (int i = 0; i < 200; ++i)
        target.positions.push_back(test_util::random_vec3(rng, 0.0, 150.0));
    align::RigidTransform pose;
    pose.rotation = Eigen::AngleAxisd(0.2, Vec3(0, 0, 1).normalized()).toRotationMatrix();
    pose.translation = Vec3(1.0, 2.0, -3.0);

    const align::PointCloud cloud = forward_shape(pipe, a);
    double expected = 0.0;
    for (const Vec3& p : cloud.positions) {
        double best = std::numeric_limits<double>::infinity();
        for (const Vec3& x : target.positions)
            best = std::min(best, (p - pose.apply(x)).squaredNorm());
        expected += best;
    }
    CHECK(std::abs(ik_objective(pipe, a, target, pose) - expected) <
          1e-12 * std::max(1.0, expected));
}

TEST_CASE("ik from the optimum terminates immediately") {
    FkPipeline pipe = make_test_pipeline(19);
    std::mt19937_64 rng(20);
    const Actuation a_star = random_actuation(rng, 4);
    const align::PointCloud target = forward_shape(pipe, a_star);
    IkConfig cfg;
    cfg.pose_free = false;
    const IkResult result = ik_solve(pipe, target, cfg, a_star);
    CHECK(result.iterations <= 1);
    CHECK(result.objective_trace.back() < 1e-16);
    CHECK((result.actuation - a_star).norm() < 1e-12);
}

TEST_CASE("ik recovers a hidden actuation from a random start") {
    FkPipeline pipe = make_test_pipeline(21, 0.03);
    std::mt19937_64 rng(22);
    const double bbox = bounding_box(forward_shape(pipe, Actuation::Constant(4, 0.5)).positions)
                            .diagonal();
    for (int trial = 0; trial < 3; ++trial) {
        const Actuation a_star = random_actuation(rng, 4, 0.15, 0.85);
        const align::PointCloud target = forward_shape(pipe, a_star);
        const Actuation a0 = random_actuation(rng, 4, 0.1, 0.9);
        IkConfig cfg;
        cfg.pose_free = false;
        cfg.i_max = 30;
        cfg.lambda = 1e-7;
        const IkResult result = ik_solve(pipe, target, cfg, a0);
        CHECK(result.iterations <= 30);
        const double per_point =
            std::sqrt(result.objective_trace.back() / static_cast<double>(target.size()));
        CHECK(per_point < 0.01 * bbox);
        for (std::size_t k = 1; k < result.objective_trace.size(); ++k)
            CHECK(result.objective_trace[k] <= result.objective_trace[k - 1] + 1e-9);
    }
}

TEST_CASE("ik with a re-posed target uses the icp loop to absorb the pose") {
    FkPipeline pipe = make_test_pipeline(23, 0.03);
    std::mt19937_64 rng(24);
    const Actuation a_star = random_actuation(rng, 4, 0.2, 0.8);
    const align::PointCloud target = forward_shape(pipe, a_star);
    const Actuation a0 = Actuation::Constant(4, 0.5);

    IkConfig cfg;
    cfg.pose_free = false;
    cfg.i_max = 40;
    cfg.lambda = 1e-8;
    const IkResult plain = ik_solve(pipe, target, cfg, a0);

    align::PointCloud moved = target;
    align::RigidTransform motion;
    motion.rotation =
        Eigen::AngleAxisd(10.0 * M_PI / 180.0, Vec3(0.2, 0.1, 1.0).normalized())
            .toRotationMatrix();
    motion.translation = Vec3(8.0, -5.0, 3.0);
    for (Vec3& p : moved.positions) p = motion.apply(p);

    IkConfig posed_cfg = cfg;
    posed_cfg.pose_free = true;
    const IkResult posed = ik_solve(pipe, moved, posed_cfg, a0);
    CHECK(posed.objective_trace.back() <=
          2.0 * std::max(plain.objective_trace.back(), 1e-9));
    // the recovered actuation matches the un-posed solve up to solver tolerance
    CHECK((posed.actuation - plain.actuation).norm() < 0.05);

    for (std::size_t k = 1; k < posed.objective_trace.size(); ++k)
        CHECK(posed.objective_trace[k] <= posed.objective_trace[k - 1] + 1e-9);
}

TEST_CASE("ik clamps actuations into the unit box") {
    FkPipeline pipe = make_test_pipeline(25);
    std::mt19937_64 rng(26);
    const align::PointCloud target = forward_shape(pipe, random_actuation(rng, 4));
    IkConfig cfg;
    cfg.pose_free = false;
    cfg.i_max = 5;
    const Actuation a0 = Actuation::Constant(4, 2.0);  // out of bounds on purpose
    const IkResult result = ik_solve(pipe, target, cfg, a0);
    CHECK((result.actuation.array() >= 0.0).all());
    CHECK((result.actuation.array() <= 1.0).all());
}

TEST_CASE("ik config validation") {
    IkConfig cfg;
    cfg.lambda = 0.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = IkConfig{};
    cfg.ls_shrink = 1.0;
    CHECK_THROWS_AS(cfg.validate(), config_error);
    cfg = IkConfig{};
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("timings are recorded for every phase") {
    FkPipeline pipe = make_test_pipeline(27);
    std::mt19937_64 rng(28);
    const align::PointCloud target = forward_shape(pipe, random_actuation(rng, 4));
    IkConfig cfg;
    cfg.i_max = 5;
    cfg.pose_free = true;
    const IkResult result = ik_solve(pipe, target, cfg, Actuation::Constant(4, 0.4));
    CHECK(result.timings.forward_ms > 0.0);
    CHECK(result.timings.gradient_ms > 0.0);
    CHECK(result.timings.icp_ms > 0.0);
}
