#pragma once

#include <optional>
#include <string>

#include "warpfield/bspline.hpp"
#include "warpfield/json_writer.hpp"
#include "warpfield/kinematics.hpp"
#include "warpfield/synthetic.hpp"
#include "warpfield/training.hpp"

namespace warpfield::io {

// ---------------------------------------------------------------------------
// JSON documents. Writers pin 17-significant-digit decimals; readers go
// through nlohmann::json with schema checks.
// ---------------------------------------------------------------------------

void write_grid_json(JsonWriter& w, const bspline::ControlGrid& grid,
                     const bspline::BSplineBasis& basis);

struct FkBundle {
    kin::FkSurrogate surrogate;
    int dofs = 0;
};

/// Writes <dir>/fk_bundle.json plus <dir>/fk_net.json.
void save_fk_bundle(const std::string& dir, const kin::FkSurrogate& surrogate, int dofs);
FkBundle load_fk_bundle(const std::string& bundle_path);

struct S2rBundle {
    rbf::WarpConfig warp;
    nn::MlpModel rbf_net;
    std::optional<nn::MlpModel> conf_net;
    std::vector<bspline::UvSample> sample_uv;
};

/// Writes <dir>/s2r_bundle.json plus rbf_net.json / conf_net.json.
void save_s2r_bundle(const std::string& dir, const rbf::WarpConfig& warp,
                     const nn::MlpModel& rbf_net, const nn::MlpModel* conf_net,
                     const std::vector<bspline::UvSample>& sample_uv);
S2rBundle load_s2r_bundle(const std::string& bundle_path);

kin::FkPipeline make_pipeline(const FkBundle& fk, const S2rBundle& s2r);

/// Dataset manifest + one PLY per frame under <dir>/frames/.
void save_dataset(const std::string& dir, const train::S2rDataset& dataset);
train::S2rDataset load_dataset(const std::string& manifest_path);

void save_fk_dataset(const std::string& path, const train::FkDataset& dataset, int m_u, int m_v);
train::FkDataset load_fk_dataset(const std::string& path);

/// Writes <dir>/baseline_bundle.json plus baseline_net.json.
void save_baseline_bundle(const std::string& dir, const train::DirectBaseline& baseline);
train::DirectBaseline load_baseline_bundle(const std::string& bundle_path);

struct TruthDoc {
    synth::VirtualRobot robot;
    synth::RealityGap gap;
    synth::CaptureSpec capture;
};

void save_truth(const std::string& path, const TruthDoc& truth);
TruthDoc load_truth(const std::string& path);

std::string ik_result_to_json(const kin::IkResult& result);

// CSV logs
void write_s2r_log_csv(const std::string& path, const std::vector<train::S2rEpochLog>& log);
void write_fk_log_csv(const std::string& path, const std::vector<train::FkEpochLog>& log);
void write_baseline_log_csv(const std::string& path,
                            const std::vector<train::BaselineEpochLog>& log);

/// Histogram CSV: bin_low,bin_high,count
void write_histogram_csv(const std::string& path, const std::vector<double>& values, int bins,
                         double lo, double hi);

/// Schema check for any artifact file this project writes (JSON by schema
/// tag, .ply, .csv). Throws data_error with a reason when invalid; returns
/// the detected kind otherwise.
std::string validate_artifact(const std::string& path);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

} // namespace warpfield::io
