#include <doctest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "warpfield/errors.hpp"
#include "warpfield/training.hpp"

using namespace warpfield;
using namespace warpfield::train;

namespace {

// fk surrogate that always returns `grid` regardless of the actuation
kin::FkSurrogate constant_surrogate(const bspline::ControlGrid& grid, int dofs) {
    kin::FkSurrogate fk;
    fk.mean_grid = grid;
    fk.net = nn::MlpModel::create({dofs, 4, 3 * grid.m_u * grid.m_v},
                                  nn::OutputActivation::Linear, 1);
    for (auto& w : fk.net.weights) w.setZero();
    return fk;
}

bspline::ControlGrid bumpy_grid(int m, double scale) {
    bspline::ControlGrid grid = bspline::ControlGrid::zero(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j)
            grid.at(i, j) = Vec3(20.0 * i, 20.0 * j,
                                 scale * std::sin(0.9 * i) * std::cos(1.3 * j));
    return grid;
}

// conf/rbf nets degenerate to constants: zero weights, fixed bias
void make_constant_output(nn::MlpModel& net, const Eigen::VectorXd& bias) {
    for (auto& w : net.weights) w.setZero();
    for (auto& b : net.biases) b.setZero();
    net.biases.back() = bias;
}

S2rDataset identity_dataset(const kin::FkSurrogate& fk, int frames, int sample_count,
                            int dofs) {
    // captured clouds exactly equal the decoded sample points (with their
    // surface normals): nothing to correct
    const bspline::BSplineBasis basis =
        bspline::BSplineBasis::clamped_uniform(fk.mean_grid.m_u, fk.mean_grid.m_v);
    S2rDataset dataset;
    dataset.mode = Mode::Scan;
    dataset.dofs = dofs;
    std::mt19937_64 rng(17);
    for (int f = 0; f < frames; ++f) {
        S2rFrame frame;
        frame.actuation = 0.5 * (test_util::random_vector(rng, dofs).array() + 1.0);
        const bspline::ControlGrid grid = fk.predict(frame.actuation);
        frame.sim_grid = grid;
        for (const auto& uv : synth::uv_lattice(sample_count)) {
            const bspline::SurfaceFrame sf = bspline::surface_frame(grid, basis, uv);
            frame.captured.positions.push_back(sf.position);
            frame.captured.normals.push_back(sf.unit_normal());
        }
        dataset.frames.push_back(std::move(frame));
    }
    return dataset;
}

} // namespace

TEST_CASE("halton radical inverse: first base-2 values") {
    CHECK(halton_value(1, 2) == 0.5);
    CHECK(halton_value(2, 2) == 0.25);
    CHECK(halton_value(3, 2) == 0.75);
    CHECK(halton_value(1, 3) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("halton actuations stay in range and are deterministic") {
    const std::vector<std::pair<double, double>> ranges = {{0.0, 1.0}, {-2.0, 3.0}, {10.0, 11.0}};
    const auto a = halton_actuations(3, 200, ranges);
    const auto b = halton_actuations(3, 200, ranges);
    REQUIRE(a.size() == 200);
    for (std::size_t k = 0; k < a.size(); ++k) {
        for (int d = 0; d < 3; ++d) {
            CHECK(a[k][d] >= ranges[d].first);
            CHECK(a[k][d] <= ranges[d].second);
        }
        CHECK((a[k] - b[k]).norm() == 0.0);
    }
    CHECK_THROWS_AS(halton_actuations(26, 5, {}), config_error);
}

TEST_CASE("fk dataset: corner + halton composition") {
    synth::VirtualRobot robot = synth::VirtualRobot::membrane(2);
    const FkDataset dataset = build_fk_dataset(robot, 8, {});
    REQUIRE(dataset.actuations.size() == 8);

    int zero_corners = 0;
    int corners = 0;
    for (const auto& a : dataset.actuations) {
        bool is_corner = true;
        for (int d = 0; d < 2; ++d)
            if (a[d] != 0.0 && a[d] != 1.0) is_corner = false;
        if (is_corner) ++corners;
        if (a.norm() == 0.0) ++zero_corners;
    }
    CHECK(corners == 4);  // the extremes are present exactly once each
    CHECK(zero_corners == 1);
    CHECK(dataset.train_indices.size() + dataset.test_indices.size() == 8);
}

TEST_CASE("fk dataset grids reproduce the simulator within the fit tolerance") {
    synth::VirtualRobot robot = synth::VirtualRobot::membrane(2);
    const FkDataset dataset = build_fk_dataset(robot, 10, {});
    const bspline::BSplineBasis basis = bspline::BSplineBasis::clamped_uniform(30, 30);
    const auto uv = synth::uv_grid(64, 64);
    for (std::size_t f = 0; f < dataset.actuations.size(); ++f) {
        const auto samples = synth::simulate(robot, dataset.actuations[f], uv);
        double sq = 0.0;
        std::vector<Vec3> positions;
        for (std::size_t s = 0; s < uv.size(); ++s) {
            positions.push_back(samples[s].position);
            sq += (bspline::surface_eval(dataset.grids[f], basis, uv[s]) - samples[s].position)
                      .squaredNorm();
        }
        const double rms = std::sqrt(sq / uv.size());
        CHECK(rms < 1e-6 * bounding_box(positions).diagonal());
    }
}

TEST_CASE("fk dataset rejects too-small counts") {
    synth::VirtualRobot robot = synth::VirtualRobot::membrane(3);
    CHECK_THROWS_AS(build_fk_dataset(robot, 7, {}), config_error);
}

TEST_CASE("train_fk reproduces a linear actuation-to-grid map") {
    std::mt19937_64 rng(2);
    const int dofs = 3, m = 8;
    const bspline::ControlGrid base = bumpy_grid(m, 2.0);
    std::vector<Eigen::VectorXd> directions;
    for (int d = 0; d < dofs; ++d)
        directions.push_back(3.0 * test_util::random_vector(rng, 3 * m * m));

    FkDataset dataset;
    for (int k = 0; k < 220; ++k) {
        const Actuation a = 0.5 * (test_util::random_vector(rng, dofs).array() + 1.0);
        Eigen::VectorXd vec = base.to_vector();
        for (int d = 0; d < dofs; ++d) vec += a[d] * directions[d];
        dataset.actuations.push_back(a);
        dataset.grids.push_back(bspline::ControlGrid::from_vector(m, m, vec));
        (k < 160 ? dataset.train_indices : dataset.test_indices).push_back(k);
    }

    TrainingConfig cfg;
    cfg.max_epochs = 4000;
    cfg.batch_size = 8;
    cfg.lr_decay = 0.998;
    cfg.seed = 5;
    const FkTrainResult result = train_fk(dataset, cfg, {64, 64});

    std::vector<Vec3> all_points;
    for (const auto& g : dataset.grids)
        all_points.insert(all_points.end(), g.points.begin(), g.points.end());
    const double bbox = bounding_box(all_points).diagonal();
    CHECK(result.log.back().test_error < 1e-4 * bbox);
}

TEST_CASE("train_fk on a constant dataset predicts the constant") {
    const int m = 6, dofs = 4;
    // exactly representable coordinates: the dataset mean is exact, the
    // offsets are exactly zero and training is a fixed point
    bspline::ControlGrid grid = bspline::ControlGrid::zero(m, m);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < m; ++j) grid.at(i, j) = Vec3(20.0 * i, 20.0 * j, (i * j) % 5);
    FkDataset dataset;
    const Actuation a = Actuation::Constant(dofs, 0.5);
    for (int k = 0; k < 20; ++k) {
        dataset.actuations.push_back(a);
        dataset.grids.push_back(grid);
        dataset.train_indices.push_back(k);
    }
    TrainingConfig cfg;
    cfg.max_epochs = 10;
    cfg.seed = 3;
    const FkTrainResult result = train_fk(dataset, cfg, {16});
    const bspline::ControlGrid predicted = result.surrogate.predict(a);
    for (std::size_t k = 0; k < grid.points.size(); ++k)
        CHECK((predicted.points[k] - grid.points[k]).norm() < 1e-6);
}

TEST_CASE("train_fk is deterministic under a fixed seed") {
    synth::VirtualRobot robot = synth::VirtualRobot::membrane(2);
    const FkDataset dataset = build_fk_dataset(robot, 12, {});
    TrainingConfig cfg;
    cfg.max_epochs = 15;
    cfg.seed = 11;
    const FkTrainResult r1 = train_fk(dataset, cfg, {16, 16});
    const FkTrainResult r2 = train_fk(dataset, cfg, {16, 16});
    for (int l = 0; l < r1.surrogate.net.layer_count(); ++l)
        CHECK((r1.surrogate.net.weights[l] - r2.surrogate.net.weights[l]).norm() == 0.0);
}

TEST_CASE("total loss vanishes when prediction, confidence and betas are ideal") {
    const int m = 8, dofs = 3;
    const kin::FkSurrogate fk = constant_surrogate(bumpy_grid(m, 3.0), dofs);
    TrainingConfig cfg;
    cfg.sample_count = 60;
    const S2rDataset dataset = identity_dataset(fk, 2, 60, dofs);
    const rbf::WarpConfig warp = rbf::WarpConfig::regular(9);
    const S2rProblem problem(dataset, fk, warp, cfg);

    nn::MlpModel rbf_net = problem.make_rbf_net({8}, 1);
    make_constant_output(rbf_net, rbf::WarpCoefficients::identity(9).to_vector());
    nn::MlpModel conf_net = problem.make_conf_net({8}, 2);
    make_constant_output(conf_net, Eigen::VectorXd::Constant(1, 40.0));  // w ≈ 1

    const LossBreakdown loss =
        problem.loss_and_gradients(rbf_net, &conf_net, {0, 1}, nullptr, nullptr);
    CHECK(std::abs(loss.cd) < 1e-12);
    CHECK(std::abs(loss.cr) < 1e-12);
    CHECK(std::abs(loss.nc) < 1e-10);
    CHECK(std::abs(loss.gr) < 1e-12);
}

TEST_CASE("zero confidence turns the confidence regularizer into the sample count") {
    const int m = 8, dofs = 3;
    const kin::FkSurrogate fk = constant_surrogate(bumpy_grid(m, 3.0), dofs);
    TrainingConfig cfg;
    cfg.sample_count = 45;
    const S2rDataset dataset = identity_dataset(fk, 3, 45, dofs);
    const rbf::WarpConfig warp = rbf::WarpConfig::regular(4);
    const S2rProblem problem(dataset, fk, warp, cfg);

    nn::MlpModel rbf_net = problem.make_rbf_net({8}, 1);
    make_constant_output(rbf_net, rbf::WarpCoefficients::identity(4).to_vector());
    nn::MlpModel conf_net = problem.make_conf_net({8}, 2);
    make_constant_output(conf_net, Eigen::VectorXd::Constant(1, -40.0));  // w ≈ 0

    const LossBreakdown loss =
        problem.loss_and_gradients(rbf_net, &conf_net, {0, 1, 2}, nullptr, nullptr);
    CHECK(loss.cr == doctest::Approx(3.0 * 45.0).epsilon(1e-12));
}

TEST_CASE("loss decomposition matches the weighted sum") {
    const int m = 8, dofs = 3;
    const kin::FkSurrogate fk = constant_surrogate(bumpy_grid(m, 3.0), dofs);
    TrainingConfig cfg;
    cfg.sample_count = 50;
    S2rDataset dataset = identity_dataset(fk, 2, 50, dofs);
    // perturb the captured clouds so every term is active
    std::mt19937_64 rng(7);
    for (auto& frame : dataset.frames)
        for (auto& p : frame.captured.positions) p += 0.5 * test_util::random_vec3(rng);
    const rbf::WarpConfig warp = rbf::WarpConfig::regular(9);
    const S2rProblem problem(dataset, fk, warp, cfg);
    nn::MlpModel rbf_net = problem.make_rbf_net({8, 8}, 3);
    nn::MlpModel conf_net = problem.make_conf_net({8, 8}, 4);

    const LossBreakdown loss =
        problem.loss_and_gradients(rbf_net, &conf_net, {0, 1}, nullptr, nullptr);
    CHECK(loss.total(cfg) ==
          doctest::Approx(loss.cd + cfg.w_cr * loss.cr + cfg.w_nc * loss.nc + cfg.w_gr * loss.gr)
              .epsilon(1e-12));
    CHECK(std::isfinite(loss.total(cfg)));
}

TEST_CASE("loss gradients match finite differences over both networks") {
    const int m = 6, dofs = 3;
    const kin::FkSurrogate fk = constant_surrogate(bumpy_grid(m, 4.0), dofs);
    TrainingConfig cfg;
    cfg.sample_count = 40;
    S2rDataset dataset = identity_dataset(fk, 2, 40, dofs);
    std::mt19937_64 rng(9);
    for (auto& frame : dataset.frames)
        for (auto& p : frame.captured.positions) p += 0.8 * test_util::random_vec3(rng);
    const rbf::WarpConfig warp = rbf::WarpConfig::regular(4, 1e-4);
    const S2rProblem problem(dataset, fk, warp, cfg);

    nn::MlpModel rbf_net = problem.make_rbf_net({10}, 5);
    nn::MlpModel conf_net = problem.make_conf_net({10}, 6);
    // move off the identity-warp initialization so every term has signal
    rbf_net.weights.back() *= 40.0;
    conf_net.weights.back() *= 40.0;

    const std::vector<int> frames = {0, 1};
    nn::MlpGradients rbf_g = nn::MlpGradients::zero(rbf_net);
    nn::MlpGradients conf_g = nn::MlpGradients::zero(conf_net);
    std::vector<FrameAssignments> assignments;
    problem.loss_and_gradients(rbf_net, &conf_net, frames, &rbf_g, &conf_g, &assignments);

    auto frozen_total = [&](const nn::MlpModel& r, const nn::MlpModel& c) {
        return problem.loss_frozen(r, &c, frames, assignments).total(cfg);
    };

    const double h = 1e-5;
    std::uniform_int_distribution<int> which_net(0, 1);
    int checked = 0;
    while (checked < 20) {
        const bool use_rbf = which_net(rng) == 0;
        nn::MlpModel& net = use_rbf ? rbf_net : conf_net;
        const nn::MlpGradients& grads = use_rbf ? rbf_g : conf_g;
        const int l = std::uniform_int_distribution<int>(0, net.layer_count() - 1)(rng);
        const int r = std::uniform_int_distribution<int>(
            0, static_cast<int>(net.weights[l].rows()) - 1)(rng);
        const int c = std::uniform_int_distribution<int>(
            0, static_cast<int>(net.weights[l].cols()) - 1)(rng);

        const double saved = net.weights[l](r, c);
        net.weights[l](r, c) = saved + h;
        const double up = frozen_total(rbf_net, conf_net);
        net.weights[l](r, c) = saved - h;
        const double down = frozen_total(rbf_net, conf_net);
        net.weights[l](r, c) = saved;
        const double fd = (up - down) / (2.0 * h);
        if (std::abs(fd) < 1e-10) continue;  // inactive ReLU path; no information
        CHECK(test_util::rel_error(grads.weights[l](r, c), fd) < 1e-4);
        ++checked;
    }
}

TEST_CASE("geometric regularization vanishes exactly when the sums cancel") {
    const int m = 8, dofs = 3;
    const kin::FkSurrogate fk = constant_surrogate(bumpy_grid(m, 3.0), dofs);
    TrainingConfig cfg;
    cfg.sample_count = 30;
    const S2rDataset dataset = identity_dataset(fk, 1, 30, dofs);
    const rbf::WarpConfig warp = rbf::WarpConfig::regular(9);
    const S2rProblem problem(dataset, fk, warp, cfg);

    nn::MlpModel rbf_net = problem.make_rbf_net({8}, 1);
    rbf::WarpCoefficients gamma = rbf::WarpCoefficients::identity(9);
    gamma.alpha0 = Vec3(1.0, 2.0, 3.0);  // affine parts do not enter L_gr
    make_constant_output(rbf_net, gamma.to_vector());
    nn::MlpModel conf_net = problem.make_conf_net({8}, 2);

    const LossBreakdown loss =
        problem.loss_and_gradients(rbf_net, &conf_net, {0}, nullptr, nullptr);
    CHECK(loss.gr == 0.0);
}

TEST_CASE("frames with empty captured clouds are skipped, not fatal") {
    const int m = 8, dofs = 3;
    const kin::FkSurrogate fk = constant_surrogate(bumpy_grid(m, 3.0), dofs);
    TrainingConfig cfg;
    cfg.sample_count = 25;
    S2rDataset dataset = identity_dataset(fk, 2, 25, dofs);
    dataset.frames[1].captured = align::PointCloud{};
    const rbf::WarpConfig warp = rbf::WarpConfig::regular(4);
    const S2rProblem problem(dataset, fk, warp, cfg);
    nn::MlpModel rbf_net = problem.make_rbf_net({8}, 1);
    nn::MlpModel conf_net = problem.make_conf_net({8}, 2);
    const LossBreakdown both =
        problem.loss_and_gradients(rbf_net, &conf_net, {0, 1}, nullptr, nullptr);
    const LossBreakdown first =
        problem.loss_and_gradients(rbf_net, &conf_net, {0}, nullptr, nullptr);
    CHECK(both.cd == first.cd);  // frame 1 contributes nothing
}

// ---------------------------------------------------------------------------
// Markers mode
// ---------------------------------------------------------------------------

namespace {

struct MarkerWorld {
    synth::VirtualRobot robot = synth::VirtualRobot::membrane(4);
    synth::RealityGap gap;
    synth::CaptureSpec capture;
    kin::FkSurrogate fk;
    rbf::WarpConfig warp;

    MarkerWorld(int markers, double gap_mm, std::uint64_t seed) {
        capture.mode = synth::CaptureSpec::Mode::Markers;
        capture.marker_uv = synth::uv_lattice(markers);
        capture.seed = seed;
        warp.n_kernels = markers;
        warp.kernel_width = 3.0e-5;
        warp.kernel_uv = capture.marker_uv;
        gap = gap_mm > 0.0
                  ? synth::make_representable_gap(robot, warp, gap_mm, seed)
                  : synth::RealityGap::identity(robot, markers);
        gap.kernel_cfg = warp;
        gap.noise_sigma = 0.0;

        FkBuildOptions opts;
        opts.seed = seed;
        const FkDataset fk_data = build_fk_dataset(robot, 20, opts);
        TrainingConfig fk_cfg;
        fk_cfg.max_epochs = 60;
        fk_cfg.seed = seed;
        fk = train_fk(fk_data, fk_cfg, {24, 24}).surrogate;
    }
};

} // namespace

TEST_CASE("missing markers contribute exactly zero gradient") {
    MarkerWorld world(12, 6.0, 3);
    std::mt19937_64 rng(4);
    std::vector<Actuation> actuations;
    for (int f = 0; f < 4; ++f)
        actuations.push_back(0.5 * (test_util::random_vector(rng, 4).array() + 1.0));

    S2rDataset a = make_s2r_dataset(world.robot, world.gap, world.capture, actuations);
    // flag marker 5 of frame 0 missing
    a.frames[0].marker_present[5] = 0;
    S2rDataset b = a;
    // dataset b additionally carries a stray stored position for that marker;
    // the presence flag must make it invisible
    for (std::size_t k = 0; k < b.frames[0].captured.size(); ++k)
        if (b.frames[0].captured.marker_ids[k] == 5)
            b.frames[0].captured.positions[k] += Vec3(1000.0, -500.0, 123.0);

    TrainingConfig cfg = TrainingConfig::markers();
    const S2rProblem pa(a, world.fk, world.warp, cfg);
    const S2rProblem pb(b, world.fk, world.warp, cfg);
    nn::MlpModel net = pa.make_rbf_net({16, 16}, 9);

    nn::MlpGradients ga = nn::MlpGradients::zero(net);
    nn::MlpGradients gb = nn::MlpGradients::zero(net);
    const LossBreakdown la = pa.loss_and_gradients(net, nullptr, {0, 1, 2, 3}, &ga, nullptr);
    const LossBreakdown lb = pb.loss_and_gradients(net, nullptr, {0, 1, 2, 3}, &gb, nullptr);
    CHECK(la.cd == lb.cd);
    for (int l = 0; l < net.layer_count(); ++l) {
        CHECK((ga.weights[l] - gb.weights[l]).norm() == 0.0);
        CHECK((ga.biases[l] - gb.biases[l]).norm() == 0.0);
    }
}

TEST_CASE("marker training recovers a representable warp") {
    MarkerWorld world(20, 8.0, 7);
    std::mt19937_64 rng(8);
    std::vector<Actuation> actuations;
    for (int f = 0; f < 10; ++f)
        actuations.push_back(0.5 * (test_util::random_vector(rng, 4).array() + 1.0));
    const S2rDataset dataset =
        make_s2r_dataset(world.robot, world.gap, world.capture, actuations);

    TrainingConfig cfg = TrainingConfig::markers();
    cfg.max_epochs = 1500;
    cfg.batch_size = 1;
    cfg.lr_decay = 0.998;
    cfg.seed = 5;
    const MarkerTrainResult result =
        train_s2r_markers(dataset, world.fk, world.warp, cfg);

    // held-out frame: predicted markers should land on the captured ones
    const S2rProblem problem(dataset, world.fk, world.warp, cfg);
    double worst = 0.0;
    for (int f = 0; f < 10; ++f) {
        const align::PointCloud predicted = problem.predict_frame(result.rbf_net, f);
        const align::PointCloud& captured = problem.frame_captured(f);
        for (std::size_t k = 0; k < captured.size(); ++k) {
            const int id = captured.marker_ids[k];
            worst = std::max(worst,
                             (predicted.positions[id] - captured.positions[k]).norm());
        }
    }
    CHECK(worst < 1e-3 * world.robot.bbox_diagonal());
}

TEST_CASE("single marker with a pure translation gap is matched exactly") {
    MarkerWorld world(1, 0.0, 11);
    world.gap.gap_gamma.alpha0 = Vec3(0.4, -0.3, 0.5);  // small translation gap

    const std::vector<Actuation> actuations = {Actuation::Constant(4, 0.5)};
    const S2rDataset dataset =
        make_s2r_dataset(world.robot, world.gap, world.capture, actuations);

    TrainingConfig cfg = TrainingConfig::markers();
    cfg.max_epochs = 3000;
    cfg.batch_size = 1;
    cfg.lr_decay = 0.997;
    cfg.seed = 2;
    const MarkerTrainResult result =
        train_s2r_markers(dataset, world.fk, world.warp, cfg);

    const S2rProblem problem(dataset, world.fk, world.warp, cfg);
    const align::PointCloud predicted = problem.predict_frame(result.rbf_net, 0);
    const align::PointCloud base = problem.frame_base_cloud(0);
    const Vec3 correction = predicted.positions[0] - base.positions[0];
    const Vec3 target_gap = dataset.frames[0].captured.positions[0] - base.positions[0];
    CHECK((correction - target_gap).norm() < 1e-3);
}

TEST_CASE("markers config rejects nonzero confidence weights") {
    TrainingConfig cfg = TrainingConfig::markers();
    cfg.w_nc = 0.5;
    CHECK_THROWS_AS(cfg.validate(), config_error);
}

// ---------------------------------------------------------------------------
// Direct baseline
// ---------------------------------------------------------------------------

TEST_CASE("baseline loss composes hausdorff and chamfer") {
    std::mt19937_64 rng(12);
    align::PointCloud a, b;
    for (int i = 0; i < 40; ++i) {
        a.positions.push_back(test_util::random_vec3(rng, 0.0, 50.0));
        b.positions.push_back(test_util::random_vec3(rng, 0.0, 50.0));
    }
    const double expected = align::hausdorff(a, b) + 5.0 * align::chamfer(a, b);
    CHECK(direct_baseline_loss(a, b) == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("baseline converges to a constant captured cloud") {
    std::mt19937_64 rng(13);
    align::PointCloud constant_cloud;
    for (int i = 0; i < 200; ++i)
        constant_cloud.positions.push_back(test_util::random_vec3(rng, 0.0, 100.0));

    S2rDataset dataset;
    dataset.mode = Mode::Scan;
    dataset.dofs = 3;
    for (int f = 0; f < 6; ++f) {
        S2rFrame frame;
        frame.actuation = 0.5 * (test_util::random_vector(rng, 3).array() + 1.0);
        frame.sim_grid = bumpy_grid(6, 1.0);
        frame.captured = constant_cloud;
        dataset.frames.push_back(std::move(frame));
    }

    TrainingConfig cfg;
    cfg.max_epochs = 400;
    cfg.batch_size = 1;
    cfg.lr_decay = 0.99;
    cfg.seed = 21;
    const BaselineTrainResult result = train_direct_baseline(dataset, cfg, 200, {32, 32});
    const double final_chamfer =
        align::chamfer(result.baseline.predict(dataset.frames[0].actuation), constant_cloud);
    CHECK(final_chamfer < 1e-4);
}

TEST_CASE("baseline training is deterministic") {
    std::mt19937_64 rng(14);
    S2rDataset dataset;
    dataset.mode = Mode::Scan;
    dataset.dofs = 2;
    for (int f = 0; f < 4; ++f) {
        S2rFrame frame;
        frame.actuation = 0.5 * (test_util::random_vector(rng, 2).array() + 1.0);
        frame.sim_grid = bumpy_grid(6, 1.0);
        for (int i = 0; i < 50; ++i)
            frame.captured.positions.push_back(test_util::random_vec3(rng, 0.0, 80.0));
        dataset.frames.push_back(std::move(frame));
    }
    TrainingConfig cfg;
    cfg.max_epochs = 20;
    cfg.batch_size = 1;
    cfg.seed = 4;
    const BaselineTrainResult r1 = train_direct_baseline(dataset, cfg, 30, {16});
    const BaselineTrainResult r2 = train_direct_baseline(dataset, cfg, 30, {16});
    for (int l = 0; l < r1.baseline.net.layer_count(); ++l)
        CHECK((r1.baseline.net.weights[l] - r2.baseline.net.weights[l]).norm() == 0.0);
}

TEST_CASE("confidence field evaluates inside the unit interval") {
    const int m = 8;
    const bspline::ControlGrid grid = bumpy_grid(m, 2.0);
    const bspline::BSplineBasis basis = bspline::BSplineBasis::clamped_uniform(m, m);
    nn::MlpModel conf =
        nn::MlpModel::create({3 + 3 * m * m, 16, 1}, nn::OutputActivation::Sigmoid, 5);
    const auto field = confidence_field(conf, grid, basis, synth::uv_lattice(64));
    REQUIRE(field.size() == 64);
    for (const auto& [uv, w] : field) {
        CHECK(w > 0.0);
        CHECK(w < 1.0);
    }
}
