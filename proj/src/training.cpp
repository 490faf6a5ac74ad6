#include "warpfield/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "warpfield/errors.hpp"
#include "warpfield/util.hpp"

namespace warpfield::train {

void TrainingConfig::validate() const {
    if (w_cr < 0.0 || w_nc < 0.0 || w_gr < 0.0)
        throw config_error("TrainingConfig: loss weights must be >= 0");
    if (!(learning_rate > 0.0)) throw config_error("TrainingConfig: learning_rate must be > 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0))
        throw config_error("TrainingConfig: lr_decay must be in (0, 1]");
    if (max_epochs < 1) throw config_error("TrainingConfig: max_epochs must be >= 1");
    if (batch_size < 0) throw config_error("TrainingConfig: batch_size must be >= 0");
    if (sample_count < 1) throw config_error("TrainingConfig: sample_count must be >= 1");
    if (mode == Mode::Markers && (w_cr != 0.0 || w_nc != 0.0))
        throw config_error("TrainingConfig: markers mode requires w_cr = w_nc = 0");
}

TrainingConfig TrainingConfig::markers() {
    TrainingConfig cfg;
    cfg.mode = Mode::Markers;
    cfg.w_cr = 0.0;
    cfg.w_nc = 0.0;
    return cfg;
}

namespace {

constexpr int kPrimes[25] = {2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
                             43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};

} // namespace

double halton_value(std::uint64_t index, int base) {
    double result = 0.0;
    double f = 1.0 / base;
    while (index > 0) {
        result += f * static_cast<double>(index % base);
        index /= base;
        f /= base;
    }
    return result;
}

std::vector<Actuation> halton_actuations(int dims, int count,
                                         const std::vector<std::pair<double, double>>& ranges) {
    if (dims < 1 || dims > 25) throw config_error("halton_actuations: dims must be in [1, 25]");
    if (count < 1) throw config_error("halton_actuations: count must be >= 1");
    if (static_cast<int>(ranges.size()) != dims)
        throw config_error("halton_actuations: ranges size must match dims");
    std::vector<Actuation> out;
    out.reserve(count);
    for (int k = 1; k <= count; ++k) {
        Actuation a(dims);
        for (int d = 0; d < dims; ++d) {
            const auto& [lo, hi] = ranges[d];
            a[d] = lo + (hi - lo) * halton_value(static_cast<std::uint64_t>(k), kPrimes[d]);
        }
        out.push_back(std::move(a));
    }
    return out;
}

namespace {

// Doubles sample density in the upper half of each unit range: the warp
// sends [0,1/3] onto the lower half and [1/3,1] onto the upper half.
double bias_upper(double t) {
    return t < 1.0 / 3.0 ? 1.5 * t : 0.5 + 0.75 * (t - 1.0 / 3.0);
}

std::vector<bspline::UvSample> lattice_uv(int rows, int cols) {
    return synth::uv_grid(rows, cols);
}

std::vector<int> seeded_shuffle(int n, std::uint64_t seed) {
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed);
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

Eigen::VectorXd robust_scale(const Eigen::VectorXd& std_dev) {
    Eigen::VectorXd scale = std_dev;
    for (Eigen::Index i = 0; i < scale.size(); ++i)
        if (!(scale[i] > 1e-12)) scale[i] = 1.0;
    return scale;
}

void column_stats(const Eigen::MatrixXd& samples_as_cols, Eigen::VectorXd& mean,
                  Eigen::VectorXd& scale) {
    const double n = static_cast<double>(samples_as_cols.cols());
    mean = samples_as_cols.rowwise().mean();
    Eigen::VectorXd var = ((samples_as_cols.colwise() - mean).array().square().rowwise().sum() /
                           std::max(n - 1.0, 1.0))
                              .matrix();
    scale = robust_scale(var.array().sqrt().matrix());
}

} // namespace

FkDataset build_fk_dataset(const synth::VirtualRobot& robot, int count,
                           const FkBuildOptions& opts) {
    const int dims = robot.dofs;
    if (dims > 25) throw config_error("build_fk_dataset: dims must be <= 25");
    const std::int64_t corners = std::int64_t{1} << dims;
    if (count < corners)
        throw config_error("build_fk_dataset: count must be >= 2^dofs corner actuations");

    FkDataset dataset;
    dataset.actuations.reserve(count);
    for (std::int64_t c = 0; c < corners; ++c) {
        Actuation a(dims);
        for (int d = 0; d < dims; ++d) a[d] = (c >> d) & 1 ? 1.0 : 0.0;
        dataset.actuations.push_back(std::move(a));
    }
    std::vector<std::pair<double, double>> unit(dims, {0.0, 1.0});
    for (Actuation& a : halton_actuations(dims, count - static_cast<int>(corners), unit)) {
        if (opts.bias_upper_half)
            for (int d = 0; d < dims; ++d) a[d] = bias_upper(a[d]);
        dataset.actuations.push_back(std::move(a));
    }

    const bspline::BSplineBasis basis = bspline::BSplineBasis::clamped_uniform(opts.m_u, opts.m_v);
    const auto uv = lattice_uv(opts.fit_rows, opts.fit_cols);
    const bspline::LatticeFitter fitter(basis, uv, 0.0);

    dataset.grids.resize(dataset.actuations.size());
    std::vector<Vec3> positions(uv.size());
    for (std::size_t f = 0; f < dataset.actuations.size(); ++f) {
        const auto samples = synth::simulate(robot, dataset.actuations[f], uv);
        for (std::size_t s = 0; s < samples.size(); ++s) positions[s] = samples[s].position;
        bspline::FitResult fit = fitter.fit(positions);
        const double diag = bounding_box(positions).diagonal();
        if (fit.residual_rms > 1e-6 * std::max(diag, 1.0)) {
            std::string msg = "build_fk_dataset: fit residual too large for actuation [";
            for (int d = 0; d < dims; ++d)
                msg += (d ? "," : "") + std::to_string(dataset.actuations[f][d]);
            throw numeric_error(msg + "]");
        }
        dataset.grids[f] = std::move(fit.grid);
    }

    const std::vector<int> order =
        seeded_shuffle(static_cast<int>(dataset.actuations.size()), derive_seed(opts.seed, 17));
    const int n_train = static_cast<int>(std::lround(opts.train_fraction * order.size()));
    dataset.train_indices.assign(order.begin(), order.begin() + n_train);
    dataset.test_indices.assign(order.begin() + n_train, order.end());
    return dataset;
}

namespace {

double rms_point_distance(const Eigen::MatrixXd& delta) {
    // delta: (3·n_ctrl) × n_samples of stacked xyz differences
    return std::sqrt(3.0 * delta.array().square().mean());
}

} // namespace

FkTrainResult train_fk(const FkDataset& dataset, const TrainingConfig& cfg,
                       const std::vector<int>& hidden) {
    cfg.validate();
    if (dataset.train_indices.empty()) throw config_error("train_fk: empty train split");
    const int dims = dataset.dofs();
    const int grid_dims = static_cast<int>(dataset.grids[0].to_vector().size());

    Eigen::MatrixXd train_x(dims, dataset.train_indices.size());
    Eigen::MatrixXd train_grids(grid_dims, dataset.train_indices.size());
    for (std::size_t i = 0; i < dataset.train_indices.size(); ++i) {
        train_x.col(i) = dataset.actuations[dataset.train_indices[i]];
        train_grids.col(i) = dataset.grids[dataset.train_indices[i]].to_vector();
    }
    Eigen::MatrixXd test_x(dims, dataset.test_indices.size());
    Eigen::MatrixXd test_grids(grid_dims, dataset.test_indices.size());
    for (std::size_t i = 0; i < dataset.test_indices.size(); ++i) {
        test_x.col(i) = dataset.actuations[dataset.test_indices[i]];
        test_grids.col(i) = dataset.grids[dataset.test_indices[i]].to_vector();
    }

    const Eigen::VectorXd mean_grid_vec = train_grids.rowwise().mean();
    const Eigen::MatrixXd train_t = train_grids.colwise() - mean_grid_vec;

    std::vector<int> sizes{dims};
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(grid_dims);
    nn::MlpModel net = nn::MlpModel::create(sizes, nn::OutputActivation::Linear, cfg.seed);
    {
        Eigen::VectorXd mean, scale;
        column_stats(train_x, mean, scale);
        net.set_standardization(mean, scale);
    }
    nn::TrainState state = nn::TrainState::create(net, cfg.learning_rate);

    const int batch = cfg.batch_size > 0 ? cfg.batch_size : 64;  // 64 unless overridden
    const int n_train = static_cast<int>(dataset.train_indices.size());
    std::mt19937_64 epoch_rng(derive_seed(cfg.seed, 99));

    FkTrainResult result;
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        state.learning_rate = cfg.learning_rate * std::pow(cfg.lr_decay, epoch - 1);
        std::vector<int> order(n_train);
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), epoch_rng);
        for (int start = 0; start < n_train; start += batch) {
            const int len = std::min(batch, n_train - start);
            Eigen::MatrixXd x(dims, len), t(grid_dims, len);
            for (int i = 0; i < len; ++i) {
                x.col(i) = train_x.col(order[start + i]);
                t.col(i) = train_t.col(order[start + i]);
            }
            nn::BatchTape tape;
            const Eigen::MatrixXd pred = nn::forward_batch(net, x, &tape);
            const Eigen::MatrixXd dy =
                2.0 * (pred - t) / (static_cast<double>(len) * grid_dims);
            nn::MlpGradients grads = nn::MlpGradients::zero(net);
            nn::backward_batch(net, tape, dy, grads);
            nn::optimizer_step(net, state, grads);
        }

        FkEpochLog entry;
        entry.epoch = epoch;
        entry.train_error = rms_point_distance(nn::forward_batch(net, train_x) - train_t);
        if (test_x.cols() > 0)
            entry.test_error = rms_point_distance(
                (nn::forward_batch(net, test_x).colwise() + mean_grid_vec) - test_grids);
        if (!std::isfinite(entry.train_error))
            throw numeric_error("train_fk: loss diverged (NaN) at epoch " + std::to_string(epoch));
        result.log.push_back(entry);
    }

    result.surrogate.net = std::move(net);
    result.surrogate.mean_grid = bspline::ControlGrid::from_vector(
        dataset.grids[0].m_u, dataset.grids[0].m_v, mean_grid_vec);
    return result;
}

// ---------------------------------------------------------------------------
// S2r dataset assembly
// ---------------------------------------------------------------------------

S2rDataset make_s2r_dataset(const synth::VirtualRobot& robot, const synth::RealityGap& gap,
                            const synth::CaptureSpec& capture,
                            const std::vector<Actuation>& actuations, int m_u, int m_v,
                            int sim_rows, int sim_cols) {
    S2rDataset dataset;
    dataset.mode = capture.mode == synth::CaptureSpec::Mode::Scan ? Mode::Scan : Mode::Markers;
    dataset.dofs = robot.dofs;
    dataset.marker_uv = capture.marker_uv;

    const bspline::BSplineBasis basis = bspline::BSplineBasis::clamped_uniform(m_u, m_v);
    const auto uv = lattice_uv(sim_rows, sim_cols);
    const bspline::LatticeFitter fitter(basis, uv, 0.0);

    std::vector<Vec3> positions(uv.size());
    for (std::size_t f = 0; f < actuations.size(); ++f) {
        S2rFrame frame;
        frame.actuation = actuations[f];
        const auto sim = synth::simulate(robot, frame.actuation, uv);
        for (std::size_t s = 0; s < sim.size(); ++s) positions[s] = sim[s].position;
        frame.sim_grid = fitter.fit(positions).grid;

        if (dataset.mode == Mode::Scan) {
            const auto realized = synth::realize(robot, gap, frame.actuation, sim,
                                                 derive_seed(capture.seed, 1000 + f), true);
            frame.captured = synth::scan(realized, capture, f).cloud;
        } else {
            const synth::MocapResult mc = synth::mocap(robot, gap, frame.actuation, capture, f);
            frame.captured = mc.cloud;
            frame.marker_present.assign(capture.marker_uv.size(), 1);
            for (int id : mc.missing_ids) frame.marker_present[id] = 0;
        }
        dataset.frames.push_back(std::move(frame));
    }
    return dataset;
}

// ---------------------------------------------------------------------------
// S2rProblem
// ---------------------------------------------------------------------------

namespace {

struct FrameCache {
    Actuation actuation;
    Eigen::VectorXd grid_vec;
    Eigen::Matrix3Xd base;             // decoded sample points p_s
    std::vector<Vec3> tangent_u, tangent_v;
    rbf::KernelSet kernels;
    Eigen::MatrixXd gaussians;         // n_samples × n_kernels
    align::PointCloud captured;
    std::unique_ptr<align::SpatialIndex> captured_index;  // scan mode

    // markers mode
    std::vector<Vec3> marker_positions;  // slot per marker id; unset if missing
    std::vector<std::uint8_t> marker_present;
    int present_count = 0;

    bool usable = true;
};

} // namespace

struct S2rProblem::Impl {
    Mode mode = Mode::Scan;
    TrainingConfig cfg;
    rbf::WarpConfig warp;
    bspline::BSplineBasis basis;
    std::vector<bspline::UvSample> sample_uv;
    std::vector<FrameCache> frames;
    int grid_dims = 0;
    Eigen::VectorXd grid_mean, grid_scale;
    Vec3 point_mean = Vec3::Zero();
    Vec3 point_scale = Vec3::Ones();

    LossBreakdown frame_loss(const FrameCache& cache, const nn::MlpModel& rbf_net,
                             const nn::MlpModel* conf_net, const FrameAssignments* frozen,
                             FrameAssignments* out_assignments, nn::MlpGradients* rbf_grads,
                             nn::MlpGradients* conf_grads) const;
};

S2rProblem::~S2rProblem() = default;

S2rProblem::S2rProblem(const S2rDataset& dataset, const kin::FkSurrogate& fk,
                       const rbf::WarpConfig& warp_cfg, const TrainingConfig& cfg)
    : impl_(std::make_unique<Impl>()) {
    cfg.validate();
    warp_cfg.validate();
    if (dataset.frames.empty()) throw config_error("S2rProblem: empty dataset");
    if ((dataset.mode == Mode::Markers) != (cfg.mode == Mode::Markers))
        throw config_error("S2rProblem: config mode does not match dataset mode");

    impl_->mode = dataset.mode;
    impl_->cfg = cfg;
    impl_->warp = warp_cfg;
    impl_->basis =
        bspline::BSplineBasis::clamped_uniform(fk.mean_grid.m_u, fk.mean_grid.m_v);
    impl_->grid_dims = 3 * fk.mean_grid.m_u * fk.mean_grid.m_v;
    impl_->sample_uv = impl_->mode == Mode::Scan ? synth::uv_lattice(cfg.sample_count)
                                                 : dataset.marker_uv;
    if (impl_->sample_uv.empty()) throw config_error("S2rProblem: no sample UV addresses");

    // weight blocks are shared by every frame
    std::vector<bspline::WeightBlock> sample_blocks, sample_du, sample_dv, kernel_blocks;
    for (const auto& uv : impl_->sample_uv) {
        sample_blocks.push_back(bspline::eval_weights(impl_->basis, uv));
        sample_du.push_back(bspline::eval_weights_du(impl_->basis, uv));
        sample_dv.push_back(bspline::eval_weights_dv(impl_->basis, uv));
    }
    for (const auto& uv : warp_cfg.kernel_uv)
        kernel_blocks.push_back(bspline::eval_weights(impl_->basis, uv));

    const int n = static_cast<int>(impl_->sample_uv.size());
    const int n_kernels = warp_cfg.n_kernels;
    const bool need_tangents = impl_->mode == Mode::Scan && cfg.w_nc > 0.0;

    for (std::size_t f = 0; f < dataset.frames.size(); ++f) {
        const S2rFrame& frame = dataset.frames[f];
        FrameCache cache;
        cache.actuation = frame.actuation;
        const bspline::ControlGrid grid = fk.predict(frame.actuation);
        cache.grid_vec = grid.to_vector();

        cache.base.resize(3, n);
        for (int s = 0; s < n; ++s) cache.base.col(s) = sample_blocks[s].apply(grid);
        if (need_tangents) {
            cache.tangent_u.resize(n);
            cache.tangent_v.resize(n);
            for (int s = 0; s < n; ++s) {
                cache.tangent_u[s] = sample_du[s].apply(grid);
                cache.tangent_v[s] = sample_dv[s].apply(grid);
            }
        }
        cache.kernels.centers.resize(n_kernels);
        for (int i = 0; i < n_kernels; ++i)
            cache.kernels.centers[i] = kernel_blocks[i].apply(grid);
        cache.gaussians.resize(n, n_kernels);
        for (int s = 0; s < n; ++s)
            for (int i = 0; i < n_kernels; ++i)
                cache.gaussians(s, i) = std::exp(
                    -warp_cfg.kernel_width *
                    (Vec3(cache.base.col(s)) - cache.kernels.centers[i]).squaredNorm());

        if (impl_->mode == Mode::Scan) {
            cache.captured = frame.captured;
            if (cache.captured.positions.empty()) {
                std::fprintf(stderr,
                             "warning: frame %zu has an empty captured cloud; skipped\n", f);
                cache.usable = false;
            } else {
                if (cfg.w_nc > 0.0 && !cache.captured.has_normals())
                    throw config_error(
                        "S2rProblem: captured clouds need normals when w_nc > 0");
                cache.captured_index =
                    std::make_unique<align::SpatialIndex>(cache.captured.positions);
            }
        } else {
            const int n_markers = static_cast<int>(dataset.marker_uv.size());
            if (static_cast<int>(frame.marker_present.size()) != n_markers)
                throw config_error("S2rProblem: marker_present flags missing on a frame");
            cache.marker_present = frame.marker_present;
            cache.marker_positions.assign(n_markers, Vec3::Zero());
            if (!frame.captured.has_markers())
                throw config_error("S2rProblem: marker frames need marker ids");
            for (std::size_t m = 0; m < frame.captured.size(); ++m) {
                const int id = frame.captured.marker_ids[m];
                if (id < 0 || id >= n_markers)
                    throw config_error("S2rProblem: marker id out of range");
                // presence flags are authoritative; stray positions for
                // missing markers are never read
                if (cache.marker_present[id])
                    cache.marker_positions[id] = frame.captured.positions[m];
            }
            for (int id = 0; id < n_markers; ++id)
                if (cache.marker_present[id]) ++cache.present_count;
            if (cache.present_count == 0) {
                std::fprintf(stderr,
                             "warning: frame %zu has zero present markers; skipped\n", f);
                cache.usable = false;
            }
        }
        impl_->frames.push_back(std::move(cache));
    }

    if (std::none_of(impl_->frames.begin(), impl_->frames.end(),
                     [](const FrameCache& c) { return c.usable; }))
        throw config_error("S2rProblem: no usable frames");

    // standardization statistics over usable frames
    {
        std::vector<int> usable;
        for (std::size_t f = 0; f < impl_->frames.size(); ++f)
            if (impl_->frames[f].usable) usable.push_back(static_cast<int>(f));
        Eigen::MatrixXd grid_cols(impl_->grid_dims, usable.size());
        for (std::size_t i = 0; i < usable.size(); ++i)
            grid_cols.col(i) = impl_->frames[usable[i]].grid_vec;
        column_stats(grid_cols, impl_->grid_mean, impl_->grid_scale);

        Eigen::MatrixXd points(3, usable.size() * n);
        for (std::size_t i = 0; i < usable.size(); ++i)
            points.middleCols(i * n, n) = impl_->frames[usable[i]].base;
        Eigen::VectorXd pm, ps;
        column_stats(points, pm, ps);
        impl_->point_mean = pm;
        impl_->point_scale = ps;
    }
}

int S2rProblem::frame_count() const { return static_cast<int>(impl_->frames.size()); }
const std::vector<bspline::UvSample>& S2rProblem::sample_uv() const { return impl_->sample_uv; }
const rbf::WarpConfig& S2rProblem::warp_config() const { return impl_->warp; }
const bspline::BSplineBasis& S2rProblem::basis() const { return impl_->basis; }

const align::PointCloud& S2rProblem::frame_captured(int frame) const {
    return impl_->frames.at(frame).captured;
}

align::PointCloud S2rProblem::frame_base_cloud(int frame) const {
    const FrameCache& cache = impl_->frames.at(frame);
    align::PointCloud cloud;
    for (int s = 0; s < cache.base.cols(); ++s) cloud.positions.emplace_back(cache.base.col(s));
    return cloud;
}

align::PointCloud S2rProblem::predict_frame(const nn::MlpModel& rbf_net, int frame) const {
    const FrameCache& cache = impl_->frames.at(frame);
    const rbf::WarpCoefficients gamma =
        rbf::WarpCoefficients::from_vector(nn::forward(rbf_net, cache.grid_vec));
    align::PointCloud cloud;
    for (int s = 0; s < cache.base.cols(); ++s)
        cloud.positions.push_back(rbf::warp_point(gamma, cache.kernels, impl_->warp,
                                                  Vec3(cache.base.col(s))));
    return cloud;
}

namespace {

Eigen::Matrix3Xd beta_matrix(const rbf::WarpCoefficients& gamma) {
    Eigen::Matrix3Xd b(3, gamma.n_kernels());
    for (int i = 0; i < gamma.n_kernels(); ++i) b.col(i) = gamma.betas[i];
    return b;
}

} // namespace

LossBreakdown S2rProblem::Impl::frame_loss(const FrameCache& cache, const nn::MlpModel& rbf_net,
                                           const nn::MlpModel* conf_net,
                                           const FrameAssignments* frozen,
                                           FrameAssignments* out_assignments,
                                           nn::MlpGradients* rbf_grads,
                                           nn::MlpGradients* conf_grads) const {
    LossBreakdown loss;
    if (!cache.usable) return loss;
    const int n = static_cast<int>(cache.base.cols());
    const int n_kernels = warp.n_kernels;
    const double c = warp.kernel_width;

    nn::Tape rbf_tape;
    const Eigen::VectorXd gamma_vec = nn::forward(rbf_net, cache.grid_vec, &rbf_tape);
    const rbf::WarpCoefficients gamma = rbf::WarpCoefficients::from_vector(gamma_vec);
    const Eigen::Matrix3Xd betas = beta_matrix(gamma);

    // p* = α₀ + A·p + B·g(p), with the Gaussian table fixed per frame
    Eigen::Matrix3Xd pstar =
        ((gamma.affine * cache.base).colwise() + gamma.alpha0) + betas * cache.gaussians.transpose();

    // geometric regularization (always on; weight may be zero)
    const rbf::CompatibilityResidual compat = rbf::compatibility_residual(gamma, cache.kernels);
    loss.gr = compat.squared_norm();

    Eigen::Matrix3Xd d_pstar = Eigen::Matrix3Xd::Zero(3, n);
    Eigen::VectorXd d_gamma = Eigen::VectorXd::Zero(gamma_vec.size());

    if (mode == Mode::Markers) {
        const int n_markers = static_cast<int>(cache.marker_present.size());
        const double inv_n = 1.0 / static_cast<double>(n_markers);
        for (int s = 0; s < n_markers; ++s) {
            if (!cache.marker_present[s]) continue;  // missing: no term, no gradient
            const Vec3 diff = Vec3(pstar.col(s)) - cache.marker_positions[s];
            loss.cd += inv_n * diff.squaredNorm();
            if (rbf_grads) d_pstar.col(s) += 2.0 * inv_n * diff;
        }
    } else {
        const int m = static_cast<int>(cache.captured.size());
        const double inv_n = 1.0 / static_cast<double>(n);
        const double inv_m = 1.0 / static_cast<double>(m);

        // confidence per sample (pre-warp point + grid context)
        nn::ContextBatch ctx(*conf_net, 3);
        ctx.set_context(cache.grid_vec);
        const Eigen::MatrixXd w_row = ctx.forward(cache.base);

        std::vector<Vec3> pstar_points(n);
        for (int s = 0; s < n; ++s) pstar_points[s] = pstar.col(s);

        FrameAssignments fresh;
        const FrameAssignments* assign = frozen;
        if (!frozen) {
            fresh.predicted_to_captured.resize(n);
            fresh.captured_to_predicted.resize(m);
            for (int s = 0; s < n; ++s)
                fresh.predicted_to_captured[s] =
                    cache.captured_index->nearest(pstar_points[s]).first;
            const align::SpatialIndex pred_index(pstar_points);
            for (int j = 0; j < m; ++j)
                fresh.captured_to_predicted[j] =
                    pred_index.nearest(cache.captured.positions[j]).first;
            assign = &fresh;
        }
        if (out_assignments) *out_assignments = *assign;

        Eigen::VectorXd d_w = Eigen::VectorXd::Zero(n);
        for (int s = 0; s < n; ++s) {
            const Vec3 diff = pstar_points[s] - cache.captured.positions[(*assign).predicted_to_captured[s]];
            const double d2 = diff.squaredNorm();
            const double w = w_row(0, s);
            loss.cd += inv_n * w * d2;
            loss.cr += (1.0 - w) * (1.0 - w);
            if (rbf_grads) {
                d_pstar.col(s) += 2.0 * inv_n * w * diff;
                d_w[s] += inv_n * d2 - cfg.w_cr * 2.0 * (1.0 - w);
            }
        }
        for (int j = 0; j < m; ++j) {
            const int s = (*assign).captured_to_predicted[j];
            const Vec3 diff = pstar_points[s] - cache.captured.positions[j];
            loss.cd += inv_m * diff.squaredNorm();
            if (rbf_grads) d_pstar.col(s) += 2.0 * inv_m * diff;
        }

        if (cfg.w_nc > 0.0) {
            // warped normals at the matched samples only
            std::vector<int> matched;
            matched.reserve(m);
            for (int j = 0; j < m; ++j) matched.push_back((*assign).captured_to_predicted[j]);
            std::vector<int> unique = matched;
            std::sort(unique.begin(), unique.end());
            unique.erase(std::unique(unique.begin(), unique.end()), unique.end());

            std::vector<Mat3> jac(unique.size());
            std::vector<Vec3> tu_star(unique.size()), tv_star(unique.size()), n_tilde(unique.size());
            std::vector<int> slot(n, -1);
            for (std::size_t u = 0; u < unique.size(); ++u) {
                const int s = unique[u];
                slot[s] = static_cast<int>(u);
                Mat3 j_mat = gamma.affine;
                for (int i = 0; i < n_kernels; ++i) {
                    const Vec3 r = Vec3(cache.base.col(s)) - cache.kernels.centers[i];
                    j_mat.noalias() +=
                        gamma.betas[i] * (-2.0 * c * cache.gaussians(s, i) * r).transpose();
                }
                jac[u] = j_mat;
                tu_star[u] = j_mat * cache.tangent_u[s];
                tv_star[u] = j_mat * cache.tangent_v[s];
                n_tilde[u] = tu_star[u].cross(tv_star[u]);
            }

            std::vector<Mat3> d_jac(unique.size(), Mat3::Zero());
            for (int j = 0; j < m; ++j) {
                const int u = slot[matched[j]];
                const double len = n_tilde[u].norm();
                if (len <= 0.0) continue;
                const Vec3 n_hat = n_tilde[u] / len;
                loss.nc += 1.0 - cache.captured.normals[j].dot(n_hat);
                if (rbf_grads) {
                    const Vec3 x = cache.captured.normals[j];
                    const Vec3 g_tilde =
                        -cfg.w_nc * (x - n_hat * n_hat.dot(x)) / len;  // d(w_nc·ℓ)/dñ
                    const Vec3 d_tu = tv_star[u].cross(g_tilde);
                    const Vec3 d_tv = g_tilde.cross(tu_star[u]);
                    d_jac[u].noalias() += d_tu * cache.tangent_u[matched[j]].transpose();
                    d_jac[u].noalias() += d_tv * cache.tangent_v[matched[j]].transpose();
                }
            }
            if (rbf_grads) {
                for (std::size_t u = 0; u < unique.size(); ++u) {
                    const int s = unique[u];
                    d_gamma.segment<3>(3 * 1) += d_jac[u].col(0);
                    d_gamma.segment<3>(3 * 2) += d_jac[u].col(1);
                    d_gamma.segment<3>(3 * 3) += d_jac[u].col(2);
                    for (int i = 0; i < n_kernels; ++i) {
                        const Vec3 r = Vec3(cache.base.col(s)) - cache.kernels.centers[i];
                        const Vec3 d_i = -2.0 * c * cache.gaussians(s, i) * r;
                        d_gamma.segment<3>(12 + 3 * i) += d_jac[u] * d_i;
                    }
                }
            }
        }

        if (rbf_grads && conf_grads) ctx.backward(d_w.transpose(), *conf_grads);
    }

    if (rbf_grads) {
        // d_pstar → dγ (the warp is linear in γ)
        d_gamma.segment<3>(0) += d_pstar.rowwise().sum();
        const Mat3 d_affine = d_pstar * cache.base.transpose();
        for (int k = 0; k < 3; ++k) d_gamma.segment<3>(3 * (k + 1)) += d_affine.col(k);
        const Eigen::Matrix3Xd d_betas = d_pstar * cache.gaussians;
        for (int i = 0; i < n_kernels; ++i) d_gamma.segment<3>(12 + 3 * i) += d_betas.col(i);

        // geometric regularization gradient
        if (cfg.w_gr > 0.0) {
            for (int i = 0; i < n_kernels; ++i) {
                const Vec3& q = cache.kernels.centers[i];
                d_gamma.segment<3>(12 + 3 * i) +=
                    cfg.w_gr * 2.0 *
                    (compat.sum_beta + compat.sum_beta_qx * q.x() + compat.sum_beta_qy * q.y() +
                     compat.sum_beta_qz * q.z());
            }
        }
        nn::backward(rbf_net, rbf_tape, d_gamma, *rbf_grads);
    }
    return loss;
}

LossBreakdown S2rProblem::loss_and_gradients(const nn::MlpModel& rbf_net,
                                             const nn::MlpModel* conf_net,
                                             const std::vector<int>& frame_indices,
                                             nn::MlpGradients* rbf_grads,
                                             nn::MlpGradients* conf_grads,
                                             std::vector<FrameAssignments>* assignments) const {
    if (impl_->mode == Mode::Scan && conf_net == nullptr)
        throw config_error("loss_and_gradients: scan mode requires a confidence net");
    if (assignments) assignments->assign(frame_indices.size(), FrameAssignments{});

    LossBreakdown total;
    const int threads = impl_->cfg.threads;
    if (threads <= 1 || frame_indices.size() < 2) {
        for (std::size_t i = 0; i < frame_indices.size(); ++i) {
            const LossBreakdown part = impl_->frame_loss(
                impl_->frames.at(frame_indices[i]), rbf_net, conf_net, nullptr,
                assignments ? &(*assignments)[i] : nullptr, rbf_grads, conf_grads);
            total.cd += part.cd;
            total.cr += part.cr;
            total.nc += part.nc;
            total.gr += part.gr;
        }
        return total;
    }

    // per-frame slots, reduced in frame order: bitwise identical to the
    // sequential path for any thread count
    std::vector<LossBreakdown> parts(frame_indices.size());
    std::vector<nn::MlpGradients> rbf_slots, conf_slots;
    if (rbf_grads) {
        rbf_slots.assign(frame_indices.size(), nn::MlpGradients::zero(rbf_net));
        if (conf_net && conf_grads)
            conf_slots.assign(frame_indices.size(), nn::MlpGradients::zero(*conf_net));
    }
    parallel_for(frame_indices.size(), threads, [&](std::size_t i) {
        parts[i] = impl_->frame_loss(impl_->frames.at(frame_indices[i]), rbf_net, conf_net,
                                     nullptr, assignments ? &(*assignments)[i] : nullptr,
                                     rbf_grads ? &rbf_slots[i] : nullptr,
                                     (rbf_grads && conf_net && conf_grads) ? &conf_slots[i]
                                                                           : nullptr);
    });
    for (std::size_t i = 0; i < frame_indices.size(); ++i) {
        total.cd += parts[i].cd;
        total.cr += parts[i].cr;
        total.nc += parts[i].nc;
        total.gr += parts[i].gr;
        if (rbf_grads) rbf_grads->add_scaled(rbf_slots[i], 1.0);
        if (rbf_grads && conf_net && conf_grads) conf_grads->add_scaled(conf_slots[i], 1.0);
    }
    return total;
}

LossBreakdown S2rProblem::loss_frozen(const nn::MlpModel& rbf_net, const nn::MlpModel* conf_net,
                                      const std::vector<int>& frame_indices,
                                      const std::vector<FrameAssignments>& assignments) const {
    if (impl_->mode == Mode::Scan && conf_net == nullptr)
        throw config_error("loss_frozen: scan mode requires a confidence net");
    if (assignments.size() != frame_indices.size())
        throw config_error("loss_frozen: assignment count mismatch");
    LossBreakdown total;
    for (std::size_t i = 0; i < frame_indices.size(); ++i) {
        const LossBreakdown part =
            impl_->frame_loss(impl_->frames.at(frame_indices[i]), rbf_net, conf_net,
                              &assignments[i], nullptr, nullptr, nullptr);
        total.cd += part.cd;
        total.cr += part.cr;
        total.nc += part.nc;
        total.gr += part.gr;
    }
    return total;
}

nn::MlpModel S2rProblem::make_rbf_net(const std::vector<int>& hidden, std::uint64_t seed) const {
    std::vector<int> sizes{impl_->grid_dims};
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(3 * (impl_->warp.n_kernels + 4));
    nn::MlpModel net = nn::MlpModel::create(sizes, nn::OutputActivation::Linear, seed);
    net.set_standardization(impl_->grid_mean, impl_->grid_scale);
    // start at the identity warp: small output weights, identity bias
    net.weights.back() *= 0.01;
    net.biases.back() = rbf::WarpCoefficients::identity(impl_->warp.n_kernels).to_vector();
    return net;
}

nn::MlpModel S2rProblem::make_conf_net(const std::vector<int>& hidden, std::uint64_t seed) const {
    std::vector<int> sizes{3 + impl_->grid_dims};
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(1);
    nn::MlpModel net = nn::MlpModel::create(sizes, nn::OutputActivation::Sigmoid, seed);
    Eigen::VectorXd mean(3 + impl_->grid_dims), scale(3 + impl_->grid_dims);
    mean << impl_->point_mean, impl_->grid_mean;
    scale << impl_->point_scale, impl_->grid_scale;
    net.set_standardization(mean, scale);
    net.weights.back() *= 0.01;
    net.biases.back().setConstant(2.0);  // start confident (σ(2) ≈ 0.88)
    return net;
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

namespace {

std::pair<std::vector<int>, std::vector<int>> split_frames(int count, std::uint64_t seed) {
    std::vector<int> all(count);
    std::iota(all.begin(), all.end(), 0);
    if (count < 100) return {all, {}};
    const std::vector<int> order = seeded_shuffle(count, derive_seed(seed, 31));
    const int n_train = static_cast<int>(std::lround(0.8 * count));
    return {std::vector<int>(order.begin(), order.begin() + n_train),
            std::vector<int>(order.begin() + n_train, order.end())};
}

double mean_test_chamfer(const S2rProblem& problem, const nn::MlpModel& rbf_net,
                         const std::vector<int>& frames) {
    if (frames.empty()) return 0.0;
    double total = 0.0;
    int used = 0;
    for (int f : frames) {
        const align::PointCloud& captured = problem.frame_captured(f);
        if (captured.positions.empty()) continue;
        total += align::chamfer(problem.predict_frame(rbf_net, f), captured);
        ++used;
    }
    return used > 0 ? total / used : 0.0;
}

} // namespace

S2rTrainResult train_s2r_joint(const S2rDataset& dataset, const kin::FkSurrogate& fk,
                               const rbf::WarpConfig& warp_cfg, const TrainingConfig& cfg) {
    cfg.validate();
    if (cfg.mode != Mode::Scan) throw config_error("train_s2r_joint: mode must be scan");
    const S2rProblem problem(dataset, fk, warp_cfg, cfg);

    S2rTrainResult result;
    result.rbf_net = problem.make_rbf_net({24, 24}, derive_seed(cfg.seed, 1));
    result.conf_net = problem.make_conf_net({128, 128, 128}, derive_seed(cfg.seed, 2));
    nn::TrainState rbf_state = nn::TrainState::create(result.rbf_net, cfg.learning_rate);
    nn::TrainState conf_state = nn::TrainState::create(result.conf_net, cfg.learning_rate);

    auto [train_idx, test_idx] = split_frames(problem.frame_count(), cfg.seed);
    std::mt19937_64 epoch_rng(derive_seed(cfg.seed, 77));
    const int batch = cfg.batch_size > 0 ? cfg.batch_size
                                         : static_cast<int>(train_idx.size());

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        rbf_state.learning_rate = cfg.learning_rate * std::pow(cfg.lr_decay, epoch - 1);
        conf_state.learning_rate = rbf_state.learning_rate;
        std::shuffle(train_idx.begin(), train_idx.end(), epoch_rng);
        S2rEpochLog entry;
        entry.epoch = epoch;
        for (std::size_t start = 0; start < train_idx.size();
             start += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(train_idx.size(), start + batch);
            const std::vector<int> chunk(train_idx.begin() + start, train_idx.begin() + end);
            nn::MlpGradients rbf_g = nn::MlpGradients::zero(result.rbf_net);
            nn::MlpGradients conf_g = nn::MlpGradients::zero(result.conf_net);
            const LossBreakdown loss = problem.loss_and_gradients(
                result.rbf_net, &result.conf_net, chunk, &rbf_g, &conf_g);
            nn::optimizer_step(result.rbf_net, rbf_state, rbf_g);
            nn::optimizer_step(result.conf_net, conf_state, conf_g);
            entry.cd += loss.cd;
            entry.cr += loss.cr;
            entry.nc += loss.nc;
            entry.gr += loss.gr;
        }
        entry.total = entry.cd + cfg.w_cr * entry.cr + cfg.w_nc * entry.nc + cfg.w_gr * entry.gr;
        if (!std::isfinite(entry.total))
            throw numeric_error("train_s2r_joint: loss diverged (NaN) at epoch " +
                                std::to_string(epoch));
        entry.test_error = mean_test_chamfer(problem, result.rbf_net,
                                             test_idx.empty() ? train_idx : test_idx);
        result.log.push_back(entry);
    }
    return result;
}

MarkerTrainResult train_s2r_markers(const S2rDataset& dataset, const kin::FkSurrogate& fk,
                                    const rbf::WarpConfig& warp_cfg, const TrainingConfig& cfg) {
    cfg.validate();
    if (cfg.mode != Mode::Markers) throw config_error("train_s2r_markers: mode must be markers");
    const S2rProblem problem(dataset, fk, warp_cfg, cfg);

    MarkerTrainResult result;
    result.rbf_net = problem.make_rbf_net({24, 24}, derive_seed(cfg.seed, 1));
    nn::TrainState state = nn::TrainState::create(result.rbf_net, cfg.learning_rate);

    auto [train_idx, test_idx] = split_frames(problem.frame_count(), cfg.seed);
    std::mt19937_64 epoch_rng(derive_seed(cfg.seed, 77));
    const int batch = cfg.batch_size > 0 ? cfg.batch_size
                                         : static_cast<int>(train_idx.size());

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        state.learning_rate = cfg.learning_rate * std::pow(cfg.lr_decay, epoch - 1);
        std::shuffle(train_idx.begin(), train_idx.end(), epoch_rng);
        S2rEpochLog entry;
        entry.epoch = epoch;
        for (std::size_t start = 0; start < train_idx.size();
             start += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(train_idx.size(), start + batch);
            const std::vector<int> chunk(train_idx.begin() + start, train_idx.begin() + end);
            nn::MlpGradients grads = nn::MlpGradients::zero(result.rbf_net);
            const LossBreakdown loss =
                problem.loss_and_gradients(result.rbf_net, nullptr, chunk, &grads, nullptr);
            nn::optimizer_step(result.rbf_net, state, grads);
            entry.cd += loss.cd;
            entry.gr += loss.gr;
        }
        entry.total = entry.cd + cfg.w_gr * entry.gr;
        if (!std::isfinite(entry.total))
            throw numeric_error("train_s2r_markers: loss diverged (NaN) at epoch " +
                                std::to_string(epoch));
        result.log.push_back(entry);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Direct-learning baseline
// ---------------------------------------------------------------------------

align::PointCloud DirectBaseline::predict(const Actuation& a) const {
    const Eigen::VectorXd offsets = nn::forward(net, a);
    align::PointCloud cloud;
    cloud.positions.reserve(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i)
        cloud.positions.push_back(reference[i] + Vec3(offsets.segment<3>(3 * i)));
    return cloud;
}

double direct_baseline_loss(const align::PointCloud& predicted,
                            const align::PointCloud& captured) {
    return align::hausdorff(predicted, captured) + 5.0 * align::chamfer(predicted, captured);
}

namespace {

// gradient of hausdorff + 5·chamfer with respect to the predicted points
double baseline_frame_loss(const align::PointCloud& predicted, const align::PointCloud& captured,
                           const align::SpatialIndex& captured_index,
                           Eigen::Matrix3Xd* d_points) {
    const int n = static_cast<int>(predicted.size());
    const int m = static_cast<int>(captured.size());
    const align::SpatialIndex pred_index(predicted.positions);

    double chamfer_val = 0.0;
    double haus_fwd = 0.0, haus_bwd = 0.0;
    int haus_fwd_p = 0, haus_bwd_p = 0;
    Vec3 haus_fwd_x = Vec3::Zero(), haus_bwd_x = Vec3::Zero();

    for (int s = 0; s < n; ++s) {
        const auto [j, d2] = captured_index.nearest(predicted.positions[s]);
        chamfer_val += d2 / n;
        if (d_points) d_points->col(s) += 5.0 * (2.0 / n) *
                                          (predicted.positions[s] - captured.positions[j]);
        if (d2 > haus_fwd) {
            haus_fwd = d2;
            haus_fwd_p = s;
            haus_fwd_x = captured.positions[j];
        }
    }
    for (int j = 0; j < m; ++j) {
        const auto [s, d2] = pred_index.nearest(captured.positions[j]);
        chamfer_val += d2 / m;
        if (d_points) d_points->col(s) += 5.0 * (2.0 / m) *
                                          (predicted.positions[s] - captured.positions[j]);
        if (d2 > haus_bwd) {
            haus_bwd = d2;
            haus_bwd_p = s;
            haus_bwd_x = captured.positions[j];
        }
    }

    double haus = 0.0;
    if (haus_fwd >= haus_bwd) {
        haus = std::sqrt(haus_fwd);
        if (d_points && haus > 0.0)
            d_points->col(haus_fwd_p) += (predicted.positions[haus_fwd_p] - haus_fwd_x) / haus;
    } else {
        haus = std::sqrt(haus_bwd);
        if (d_points && haus > 0.0)
            d_points->col(haus_bwd_p) += (predicted.positions[haus_bwd_p] - haus_bwd_x) / haus;
    }
    return haus + 5.0 * chamfer_val;
}

} // namespace

BaselineTrainResult train_direct_baseline(const S2rDataset& dataset, const TrainingConfig& cfg,
                                          int output_points, const std::vector<int>& hidden) {
    cfg.validate();
    if (dataset.mode != Mode::Scan)
        throw config_error("train_direct_baseline: mode must be scan");
    if (dataset.frames.empty()) throw config_error("train_direct_baseline: empty dataset");
    for (const S2rFrame& frame : dataset.frames)
        if (frame.captured.positions.empty())
            throw config_error("train_direct_baseline: frame with empty captured cloud");

    auto [train_idx, test_idx] = split_frames(static_cast<int>(dataset.frames.size()), cfg.seed);

    BaselineTrainResult result;
    DirectBaseline& baseline = result.baseline;
    {
        const align::PointCloud& first = dataset.frames[train_idx[0]].captured;
        const int count = std::min<int>(output_points, static_cast<int>(first.size()));
        for (int idx : align::farthest_point_indices(first.positions, count))
            baseline.reference.push_back(first.positions[idx]);
        while (static_cast<int>(baseline.reference.size()) < output_points)
            baseline.reference.push_back(baseline.reference.back());
    }

    const int dims = dataset.dofs;
    std::vector<int> sizes{dims};
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(3 * output_points);
    baseline.net = nn::MlpModel::create(sizes, nn::OutputActivation::Linear, cfg.seed);
    baseline.net.weights.back() *= 0.01;
    {
        Eigen::MatrixXd x(dims, train_idx.size());
        for (std::size_t i = 0; i < train_idx.size(); ++i)
            x.col(i) = dataset.frames[train_idx[i]].actuation;
        Eigen::VectorXd mean, scale;
        column_stats(x, mean, scale);
        baseline.net.set_standardization(mean, scale);
    }
    nn::TrainState state = nn::TrainState::create(baseline.net, cfg.learning_rate);

    std::vector<std::unique_ptr<align::SpatialIndex>> captured_indices;
    for (const S2rFrame& frame : dataset.frames)
        captured_indices.push_back(std::make_unique<align::SpatialIndex>(frame.captured.positions));

    std::mt19937_64 epoch_rng(derive_seed(cfg.seed, 77));
    const int batch = cfg.batch_size > 0 ? cfg.batch_size : 1;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        state.learning_rate = cfg.learning_rate * std::pow(cfg.lr_decay, epoch - 1);
        std::shuffle(train_idx.begin(), train_idx.end(), epoch_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < train_idx.size();
             start += static_cast<std::size_t>(batch)) {
            const std::size_t end = std::min(train_idx.size(), start + batch);
            nn::MlpGradients grads = nn::MlpGradients::zero(baseline.net);
            for (std::size_t i = start; i < end; ++i) {
                const int f = train_idx[i];
                nn::Tape tape;
                const Eigen::VectorXd offsets =
                    nn::forward(baseline.net, dataset.frames[f].actuation, &tape);
                align::PointCloud predicted;
                predicted.positions.reserve(output_points);
                for (int p = 0; p < output_points; ++p)
                    predicted.positions.push_back(baseline.reference[p] +
                                                  Vec3(offsets.segment<3>(3 * p)));
                Eigen::Matrix3Xd d_points = Eigen::Matrix3Xd::Zero(3, output_points);
                epoch_loss += baseline_frame_loss(predicted, dataset.frames[f].captured,
                                                  *captured_indices[f], &d_points);
                Eigen::VectorXd dy(3 * output_points);
                for (int p = 0; p < output_points; ++p) dy.segment<3>(3 * p) = d_points.col(p);
                nn::backward(baseline.net, tape, dy, grads);
            }
            nn::optimizer_step(baseline.net, state, grads);
        }

        BaselineEpochLog entry;
        entry.epoch = epoch;
        entry.loss = epoch_loss / static_cast<double>(train_idx.size());
        if (!std::isfinite(entry.loss))
            throw numeric_error("train_direct_baseline: loss diverged (NaN) at epoch " +
                                std::to_string(epoch));
        const std::vector<int>& eval_idx = test_idx.empty() ? train_idx : test_idx;
        double test_total = 0.0;
        for (int f : eval_idx)
            test_total += align::chamfer(baseline.predict(dataset.frames[f].actuation),
                                         dataset.frames[f].captured);
        entry.test_error = test_total / static_cast<double>(eval_idx.size());
        result.log.push_back(entry);
    }
    return result;
}

std::vector<std::pair<bspline::UvSample, double>> confidence_field(
    const nn::MlpModel& conf_net, const bspline::ControlGrid& grid,
    const bspline::BSplineBasis& basis, const std::vector<bspline::UvSample>& uv) {
    nn::ContextBatch ctx(conf_net, 3);
    ctx.set_context(grid.to_vector());
    Eigen::MatrixXd points(3, uv.size());
    for (std::size_t i = 0; i < uv.size(); ++i)
        points.col(i) = bspline::surface_eval(grid, basis, uv[i]);
    const Eigen::MatrixXd w = ctx.forward(points);
    std::vector<std::pair<bspline::UvSample, double>> field;
    field.reserve(uv.size());
    for (std::size_t i = 0; i < uv.size(); ++i) field.emplace_back(uv[i], w(0, i));
    return field;
}

} // namespace warpfield::train
