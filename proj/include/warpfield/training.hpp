#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "warpfield/alignment.hpp"
#include "warpfield/bspline.hpp"
#include "warpfield/kinematics.hpp"
#include "warpfield/neural.hpp"
#include "warpfield/rbf_warp.hpp"
#include "warpfield/synthetic.hpp"

namespace warpfield::train {

using Actuation = Eigen::VectorXd;

enum class Mode { Scan, Markers };

struct TrainingConfig {
    double w_cr = 12.0;
    double w_nc = 0.5;
    double w_gr = 1.5e-4;
    double learning_rate = 0.001;
    double lr_decay = 1.0;  // per-epoch multiplier (1 = constant rate)
    int max_epochs = 150;
    int batch_size = 0;  // frames per optimizer step; 0 = full frame set
    std::uint64_t seed = 0;
    Mode mode = Mode::Scan;
    int sample_count = 1000;  // fixed UV lattice size per frame (scan mode)
    int threads = 1;

    void validate() const;

    /// Marker-mode preset: known correspondences need no confidence or
    /// normal terms.
    static TrainingConfig markers();
};

/// Radical-inverse Halton value, 1-based index.
double halton_value(std::uint64_t index, int base);

/// Deterministic low-discrepancy actuation samples, one prime base per
/// dimension (dims ≤ 25), each coordinate mapped into its range.
std::vector<Actuation> halton_actuations(int dims, int count,
                                         const std::vector<std::pair<double, double>>& ranges);

// ---------------------------------------------------------------------------
// Forward-kinematics dataset and supervised surrogate training
// ---------------------------------------------------------------------------

struct FkDataset {
    std::vector<Actuation> actuations;
    std::vector<bspline::ControlGrid> grids;
    std::vector<int> train_indices;
    std::vector<int> test_indices;

    int dofs() const { return actuations.empty() ? 0 : static_cast<int>(actuations[0].size()); }
};

struct FkBuildOptions {
    int m_u = 30;
    int m_v = 30;
    int fit_rows = 64;
    int fit_cols = 64;
    double ridge_scale = 1e-8;       // ridge = scale · trace(AᵀA)/n_ctrl
    bool bias_upper_half = true;     // double sample density toward inflation
    double train_fraction = 0.7;
    std::uint64_t seed = 0;
};

/// All 2^dofs corner actuations plus Halton fill, simulated and fitted to
/// control grids. Throws numeric_error if any fit residual exceeds
/// 1e-6 × the sample bounding-box diagonal.
FkDataset build_fk_dataset(const synth::VirtualRobot& robot, int count,
                           const FkBuildOptions& opts = {});

struct FkEpochLog {
    int epoch = 0;
    double train_error = 0.0;  // RMS control-point distance
    double test_error = 0.0;
};

struct FkTrainResult {
    kin::FkSurrogate surrogate;
    std::vector<FkEpochLog> log;
};

FkTrainResult train_fk(const FkDataset& dataset, const TrainingConfig& cfg,
                       const std::vector<int>& hidden = {128, 128});

// ---------------------------------------------------------------------------
// Sim-to-real frames and the joint differentiable-alignment training
// ---------------------------------------------------------------------------

struct S2rFrame {
    Actuation actuation;
    bspline::ControlGrid sim_grid;  // simulator fit, kept for evaluation
    align::PointCloud captured;     // scan: unordered w/ normals; markers: present markers

    /// Markers mode: per-marker presence flags (indexed by marker id).
    /// Missing markers have no position anywhere; flags replace fabrication.
    std::vector<std::uint8_t> marker_present;
};

struct S2rDataset {
    Mode mode = Mode::Scan;
    int dofs = 0;
    std::vector<S2rFrame> frames;
    std::vector<bspline::UvSample> marker_uv;  // markers mode only
};

/// Simulates, fits and captures one frame per actuation on the synthetic
/// testbed (shared by the CLI generator and the test suites).
S2rDataset make_s2r_dataset(const synth::VirtualRobot& robot, const synth::RealityGap& gap,
                            const synth::CaptureSpec& capture,
                            const std::vector<Actuation>& actuations,
                            int m_u = 30, int m_v = 30, int sim_rows = 64, int sim_cols = 64);

struct LossBreakdown {
    double cd = 0.0;
    double cr = 0.0;
    double nc = 0.0;
    double gr = 0.0;

    double total(const TrainingConfig& cfg) const {
        return cd + cfg.w_cr * cr + cfg.w_nc * nc + cfg.w_gr * gr;
    }
};

/// Closest-point assignments of one frame, recomputed per loss call and held
/// fixed while differentiating.
struct FrameAssignments {
    std::vector<int> predicted_to_captured;
    std::vector<int> captured_to_predicted;
};

/// Joint-training problem with everything that does not depend on the
/// trainable networks precomputed per frame (the surrogate stays frozen:
/// decoded points, tangents, kernel centers and Gaussian tables are fixed).
class S2rProblem {
public:
    S2rProblem(const S2rDataset& dataset, const kin::FkSurrogate& fk,
               const rbf::WarpConfig& warp_cfg, const TrainingConfig& cfg);
    ~S2rProblem();

    S2rProblem(const S2rProblem&) = delete;
    S2rProblem& operator=(const S2rProblem&) = delete;

    int frame_count() const;

    /// Total loss over the given frames plus gradients of the weighted total
    /// for both networks (conf_net/conf_grads null in marker mode).
    LossBreakdown loss_and_gradients(const nn::MlpModel& rbf_net, const nn::MlpModel* conf_net,
                                     const std::vector<int>& frame_indices,
                                     nn::MlpGradients* rbf_grads, nn::MlpGradients* conf_grads,
                                     std::vector<FrameAssignments>* assignments = nullptr) const;

    /// Loss under externally frozen assignments; the finite-difference hook.
    LossBreakdown loss_frozen(const nn::MlpModel& rbf_net, const nn::MlpModel* conf_net,
                              const std::vector<int>& frame_indices,
                              const std::vector<FrameAssignments>& assignments) const;

    /// Networks pre-shaped for this problem, with input standardization from
    /// the frame data. The coefficient net starts at the identity warp; the
    /// confidence net starts near full confidence.
    nn::MlpModel make_rbf_net(const std::vector<int>& hidden, std::uint64_t seed) const;
    nn::MlpModel make_conf_net(const std::vector<int>& hidden, std::uint64_t seed) const;

    const std::vector<bspline::UvSample>& sample_uv() const;
    const rbf::WarpConfig& warp_config() const;
    const bspline::BSplineBasis& basis() const;

    /// Predicted (warped) cloud of one frame under the given coefficients net.
    align::PointCloud predict_frame(const nn::MlpModel& rbf_net, int frame) const;
    /// Unwarped decoded cloud of one frame.
    align::PointCloud frame_base_cloud(int frame) const;
    const align::PointCloud& frame_captured(int frame) const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

struct S2rEpochLog {
    int epoch = 0;
    double cd = 0.0, cr = 0.0, nc = 0.0, gr = 0.0, total = 0.0;
    double test_error = 0.0;
};

struct S2rTrainResult {
    nn::MlpModel rbf_net;
    nn::MlpModel conf_net;
    std::vector<S2rEpochLog> log;
};

S2rTrainResult train_s2r_joint(const S2rDataset& dataset, const kin::FkSurrogate& fk,
                               const rbf::WarpConfig& warp_cfg, const TrainingConfig& cfg);

struct MarkerTrainResult {
    nn::MlpModel rbf_net;
    std::vector<S2rEpochLog> log;
};

MarkerTrainResult train_s2r_markers(const S2rDataset& dataset, const kin::FkSurrogate& fk,
                                    const rbf::WarpConfig& warp_cfg, const TrainingConfig& cfg);

// ---------------------------------------------------------------------------
// Direct-learning baseline (actuation → fixed-size point set)
// ---------------------------------------------------------------------------

struct DirectBaseline {
    nn::MlpModel net;                 // predicts offsets about the reference points
    std::vector<Vec3> reference;

    align::PointCloud predict(const Actuation& a) const;
};

struct BaselineEpochLog {
    int epoch = 0;
    double loss = 0.0;  // mean over frames of hausdorff + 5·chamfer
    double test_error = 0.0;
};

struct BaselineTrainResult {
    DirectBaseline baseline;
    std::vector<BaselineEpochLog> log;
};

/// Eq.-style composite loss: hausdorff + 5·chamfer against each captured
/// cloud; 200 output points by default.
BaselineTrainResult train_direct_baseline(const S2rDataset& dataset, const TrainingConfig& cfg,
                                          int output_points = 200,
                                          const std::vector<int>& hidden = {128, 128});

/// Loss of a fixed prediction (tests compose it from the distance ops).
double direct_baseline_loss(const align::PointCloud& predicted,
                            const align::PointCloud& captured);

// ---------------------------------------------------------------------------
// Confidence-field evaluation
// ---------------------------------------------------------------------------

std::vector<std::pair<bspline::UvSample, double>> confidence_field(
    const nn::MlpModel& conf_net, const bspline::ControlGrid& grid,
    const bspline::BSplineBasis& basis, const std::vector<bspline::UvSample>& uv);

} // namespace warpfield::train
