#include "warpfield/serialize.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "warpfield/errors.hpp"
#include "warpfield/io_ply.hpp"

namespace warpfield::io {

namespace fs = std::filesystem;
using nlohmann::json;

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw data_error("cannot open for writing: " + path);
    out << text;
    if (!out) throw data_error("write failed: " + path);
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw data_error("cannot open: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

namespace {

json parse_file(const std::string& path) {
    json doc = json::parse(read_text_file(path), nullptr, false);
    if (doc.is_discarded()) throw data_error("malformed JSON: " + path);
    return doc;
}

void require_schema(const json& doc, const std::string& schema, const std::string& path) {
    if (!doc.is_object() || doc.value("schema", "") != schema)
        throw data_error(path + ": expected schema \"" + schema + "\"");
}

void write_uv_array(JsonWriter& w, const std::vector<bspline::UvSample>& uv) {
    w.begin_array();
    for (const auto& s : uv) {
        w.begin_array();
        w.value(s.u);
        w.value(s.v);
        w.end_array();
    }
    w.end_array();
}

std::vector<bspline::UvSample> read_uv_array(const json& arr, const std::string& what) {
    if (!arr.is_array()) throw data_error(what + ": expected an array of [u,v] pairs");
    std::vector<bspline::UvSample> uv;
    uv.reserve(arr.size());
    for (const auto& e : arr) {
        if (!e.is_array() || e.size() != 2) throw data_error(what + ": bad [u,v] entry");
        uv.push_back({e[0].get<double>(), e[1].get<double>()});
    }
    return uv;
}

void write_number_array(JsonWriter& w, const Eigen::VectorXd& v) {
    w.begin_array();
    for (Eigen::Index i = 0; i < v.size(); ++i) w.value(v[i]);
    w.end_array();
}

Eigen::VectorXd read_number_array(const json& arr, const std::string& what) {
    if (!arr.is_array()) throw data_error(what + ": expected a number array");
    Eigen::VectorXd v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
    return v;
}

} // namespace

void write_grid_json(JsonWriter& w, const bspline::ControlGrid& grid,
                     const bspline::BSplineBasis& basis) {
    w.begin_object();
    w.key("m_u");
    w.value(grid.m_u);
    w.key("m_v");
    w.value(grid.m_v);
    w.key("order_u");
    w.value(basis.order_u);
    w.key("order_v");
    w.value(basis.order_v);
    w.key("knots_u");
    w.begin_array();
    for (double k : basis.knots_u) w.value(k);
    w.end_array();
    w.key("knots_v");
    w.begin_array();
    for (double k : basis.knots_v) w.value(k);
    w.end_array();
    w.key("points");
    w.begin_array();
    for (int i = 0; i < grid.m_u; ++i) {
        w.begin_array();
        for (int j = 0; j < grid.m_v; ++j) {
            w.begin_array();
            for (int c = 0; c < 3; ++c) w.value(grid.at(i, j)[c]);
            w.end_array();
        }
        w.end_array();
    }
    w.end_array();
    w.end_object();
}

namespace {

struct GridDoc {
    bspline::ControlGrid grid;
    bspline::BSplineBasis basis;
};

GridDoc grid_from_json(const json& doc, const std::string& what) {
    if (!doc.is_object()) throw data_error(what + ": expected a grid object");
    GridDoc out;
    out.grid.m_u = doc.value("m_u", 0);
    out.grid.m_v = doc.value("m_v", 0);
    out.basis.order_u = doc.value("order_u", 4);
    out.basis.order_v = doc.value("order_v", 4);
    if (out.grid.m_u < 1 || out.grid.m_v < 1) throw data_error(what + ": bad grid dimensions");
    for (const auto& k : doc.at("knots_u")) out.basis.knots_u.push_back(k.get<double>());
    for (const auto& k : doc.at("knots_v")) out.basis.knots_v.push_back(k.get<double>());
    const auto& pts = doc.at("points");
    if (!pts.is_array() || static_cast<int>(pts.size()) != out.grid.m_u)
        throw data_error(what + ": points row count does not match m_u");
    for (int i = 0; i < out.grid.m_u; ++i) {
        const auto& row = pts[i];
        if (!row.is_array() || static_cast<int>(row.size()) != out.grid.m_v)
            throw data_error(what + ": points column count does not match m_v");
        for (int j = 0; j < out.grid.m_v; ++j) {
            const auto& p = row[j];
            if (!p.is_array() || p.size() != 3) throw data_error(what + ": bad point triple");
            out.grid.points.emplace_back(p[0].get<double>(), p[1].get<double>(),
                                         p[2].get<double>());
        }
    }
    return out;
}

} // namespace

void save_fk_bundle(const std::string& dir, const kin::FkSurrogate& surrogate, int dofs) {
    fs::create_directories(dir);
    nn::save_model(surrogate.net, (fs::path(dir) / "fk_net.json").string());
    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-fk/1");
    w.key("dofs");
    w.value(dofs);
    w.key("net");
    w.value("fk_net.json");
    w.key("mean_grid");
    write_grid_json(w, surrogate.mean_grid,
                    bspline::BSplineBasis::clamped_uniform(surrogate.mean_grid.m_u,
                                                           surrogate.mean_grid.m_v));
    w.end_object();
    write_text_file((fs::path(dir) / "fk_bundle.json").string(), w.str() + "\n");
}

FkBundle load_fk_bundle(const std::string& bundle_path) {
    const json doc = parse_file(bundle_path);
    require_schema(doc, "warpfield-fk/1", bundle_path);
    FkBundle bundle;
    bundle.dofs = doc.value("dofs", 0);
    if (bundle.dofs < 1) throw data_error(bundle_path + ": bad dofs");
    const fs::path dir = fs::path(bundle_path).parent_path();
    bundle.surrogate.net = nn::load_model((dir / doc.at("net").get<std::string>()).string());
    bundle.surrogate.mean_grid = grid_from_json(doc.at("mean_grid"), bundle_path).grid;
    if (bundle.surrogate.net.input_size() != bundle.dofs)
        throw data_error(bundle_path + ": net input size does not match dofs");
    return bundle;
}

void save_s2r_bundle(const std::string& dir, const rbf::WarpConfig& warp,
                     const nn::MlpModel& rbf_net, const nn::MlpModel* conf_net,
                     const std::vector<bspline::UvSample>& sample_uv) {
    fs::create_directories(dir);
    nn::save_model(rbf_net, (fs::path(dir) / "rbf_net.json").string());
    if (conf_net) nn::save_model(*conf_net, (fs::path(dir) / "conf_net.json").string());
    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-s2r/1");
    w.key("warp");
    w.begin_object();
    w.key("n_kernels");
    w.value(warp.n_kernels);
    w.key("kernel_width");
    w.value(warp.kernel_width);
    w.key("kernel_uv");
    write_uv_array(w, warp.kernel_uv);
    w.end_object();
    w.key("rbf_net");
    w.value("rbf_net.json");
    if (conf_net) {
        w.key("conf_net");
        w.value("conf_net.json");
    }
    w.key("sample_uv");
    write_uv_array(w, sample_uv);
    w.end_object();
    write_text_file((fs::path(dir) / "s2r_bundle.json").string(), w.str() + "\n");
}

S2rBundle load_s2r_bundle(const std::string& bundle_path) {
    const json doc = parse_file(bundle_path);
    require_schema(doc, "warpfield-s2r/1", bundle_path);
    S2rBundle bundle;
    const auto& warp = doc.at("warp");
    bundle.warp.n_kernels = warp.value("n_kernels", 0);
    bundle.warp.kernel_width = warp.value("kernel_width", 0.0);
    bundle.warp.kernel_uv = read_uv_array(warp.at("kernel_uv"), bundle_path + ": kernel_uv");
    bundle.warp.validate();
    const fs::path dir = fs::path(bundle_path).parent_path();
    bundle.rbf_net = nn::load_model((dir / doc.at("rbf_net").get<std::string>()).string());
    if (doc.contains("conf_net"))
        bundle.conf_net = nn::load_model((dir / doc.at("conf_net").get<std::string>()).string());
    bundle.sample_uv = read_uv_array(doc.at("sample_uv"), bundle_path + ": sample_uv");
    return bundle;
}

kin::FkPipeline make_pipeline(const FkBundle& fk, const S2rBundle& s2r) {
    kin::FkPipeline pipe;
    pipe.fk = fk.surrogate;
    pipe.rbf_net = s2r.rbf_net;
    pipe.warp_cfg = s2r.warp;
    pipe.basis = bspline::BSplineBasis::clamped_uniform(fk.surrogate.mean_grid.m_u,
                                                        fk.surrogate.mean_grid.m_v);
    pipe.sample_uv = s2r.sample_uv;
    pipe.validate();
    return pipe;
}

namespace {

void write_actuation(JsonWriter& w, const train::Actuation& a) {
    w.begin_array();
    for (Eigen::Index i = 0; i < a.size(); ++i) w.value(a[i]);
    w.end_array();
}

} // namespace

void save_dataset(const std::string& dir, const train::S2rDataset& dataset) {
    fs::create_directories(fs::path(dir) / "frames");
    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-dataset/1");
    w.key("mode");
    w.value(dataset.mode == train::Mode::Scan ? "scan" : "markers");
    w.key("dofs");
    w.value(dataset.dofs);
    if (dataset.mode == train::Mode::Markers) {
        w.key("marker_uv");
        write_uv_array(w, dataset.marker_uv);
    }
    w.key("frames");
    w.begin_array();
    const bspline::BSplineBasis basis = bspline::BSplineBasis::clamped_uniform(
        dataset.frames.empty() ? 4 : dataset.frames[0].sim_grid.m_u,
        dataset.frames.empty() ? 4 : dataset.frames[0].sim_grid.m_v);
    for (std::size_t f = 0; f < dataset.frames.size(); ++f) {
        char name[64];
        std::snprintf(name, sizeof(name), "frames/frame_%04zu.ply", f);
        write_ply(dataset.frames[f].captured, (fs::path(dir) / name).string());
        w.begin_object();
        w.key("actuation");
        write_actuation(w, dataset.frames[f].actuation);
        w.key("sim_grid");
        write_grid_json(w, dataset.frames[f].sim_grid, basis);
        w.key("captured");
        w.value(std::string(name));
        w.end_object();
    }
    w.end_array();
    w.end_object();
    write_text_file((fs::path(dir) / "manifest.json").string(), w.str() + "\n");
}

train::S2rDataset load_dataset(const std::string& manifest_path) {
    const json doc = parse_file(manifest_path);
    require_schema(doc, "warpfield-dataset/1", manifest_path);
    train::S2rDataset dataset;
    const std::string mode = doc.value("mode", "");
    if (mode == "scan")
        dataset.mode = train::Mode::Scan;
    else if (mode == "markers")
        dataset.mode = train::Mode::Markers;
    else
        throw data_error(manifest_path + ": mode must be scan or markers");
    dataset.dofs = doc.value("dofs", 0);
    if (dataset.dofs < 1) throw data_error(manifest_path + ": bad dofs");
    if (dataset.mode == train::Mode::Markers)
        dataset.marker_uv = read_uv_array(doc.at("marker_uv"), manifest_path + ": marker_uv");

    const fs::path dir = fs::path(manifest_path).parent_path();
    if (!doc.contains("frames") || !doc.at("frames").is_array())
        throw data_error(manifest_path + ": missing frames array");
    for (const auto& fdoc : doc.at("frames")) {
        train::S2rFrame frame;
        frame.actuation = read_number_array(fdoc.at("actuation"), manifest_path + ": actuation");
        if (frame.actuation.size() != dataset.dofs)
            throw data_error(manifest_path + ": actuation length does not match dofs");
        frame.sim_grid = grid_from_json(fdoc.at("sim_grid"), manifest_path).grid;
        frame.captured = read_ply((dir / fdoc.at("captured").get<std::string>()).string());
        if (dataset.mode == train::Mode::Markers) {
            frame.marker_present.assign(dataset.marker_uv.size(), 0);
            for (int id : frame.captured.marker_ids)
                if (id >= 0 && id < static_cast<int>(frame.marker_present.size()))
                    frame.marker_present[id] = 1;
        }
        dataset.frames.push_back(std::move(frame));
    }
    return dataset;
}

void save_fk_dataset(const std::string& path, const train::FkDataset& dataset, int m_u, int m_v) {
    const bspline::BSplineBasis basis = bspline::BSplineBasis::clamped_uniform(m_u, m_v);
    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-dataset/1");
    w.key("mode");
    w.value("scan");
    w.key("dofs");
    w.value(dataset.dofs());
    w.key("train_indices");
    w.begin_array();
    for (int i : dataset.train_indices) w.value(i);
    w.end_array();
    w.key("test_indices");
    w.begin_array();
    for (int i : dataset.test_indices) w.value(i);
    w.end_array();
    w.key("frames");
    w.begin_array();
    for (std::size_t f = 0; f < dataset.actuations.size(); ++f) {
        w.begin_object();
        w.key("actuation");
        write_actuation(w, dataset.actuations[f]);
        w.key("sim_grid");
        write_grid_json(w, dataset.grids[f], basis);
        w.end_object();
    }
    w.end_array();
    w.end_object();
    write_text_file(path, w.str() + "\n");
}

train::FkDataset load_fk_dataset(const std::string& path) {
    const json doc = parse_file(path);
    require_schema(doc, "warpfield-dataset/1", path);
    train::FkDataset dataset;
    for (const auto& fdoc : doc.at("frames")) {
        dataset.actuations.push_back(read_number_array(fdoc.at("actuation"), path));
        dataset.grids.push_back(grid_from_json(fdoc.at("sim_grid"), path).grid);
    }
    if (doc.contains("train_indices")) {
        for (const auto& i : doc.at("train_indices")) dataset.train_indices.push_back(i.get<int>());
        for (const auto& i : doc.at("test_indices")) dataset.test_indices.push_back(i.get<int>());
    } else {
        for (std::size_t i = 0; i < dataset.actuations.size(); ++i)
            dataset.train_indices.push_back(static_cast<int>(i));
    }
    return dataset;
}

void save_baseline_bundle(const std::string& dir, const train::DirectBaseline& baseline) {
    fs::create_directories(dir);
    nn::save_model(baseline.net, (fs::path(dir) / "baseline_net.json").string());
    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-baseline/1");
    w.key("net");
    w.value("baseline_net.json");
    w.key("reference");
    w.begin_array();
    for (const Vec3& p : baseline.reference) {
        w.begin_array();
        for (int c = 0; c < 3; ++c) w.value(p[c]);
        w.end_array();
    }
    w.end_array();
    w.end_object();
    write_text_file((fs::path(dir) / "baseline_bundle.json").string(), w.str() + "\n");
}

train::DirectBaseline load_baseline_bundle(const std::string& bundle_path) {
    const json doc = parse_file(bundle_path);
    require_schema(doc, "warpfield-baseline/1", bundle_path);
    train::DirectBaseline baseline;
    const fs::path dir = fs::path(bundle_path).parent_path();
    baseline.net = nn::load_model((dir / doc.at("net").get<std::string>()).string());
    for (const auto& p : doc.at("reference")) {
        if (!p.is_array() || p.size() != 3) throw data_error(bundle_path + ": bad reference point");
        baseline.reference.emplace_back(p[0].get<double>(), p[1].get<double>(), p[2].get<double>());
    }
    if (3 * static_cast<int>(baseline.reference.size()) != baseline.net.output_size())
        throw data_error(bundle_path + ": reference size does not match net output");
    return baseline;
}

void save_truth(const std::string& path, const TruthDoc& truth) {
    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-truth/1");
    w.key("robot");
    w.begin_object();
    w.key("dofs");
    w.value(truth.robot.dofs);
    w.key("bump_radius");
    w.value(truth.robot.bump_radius);
    w.key("max_height");
    w.value(truth.robot.max_height);
    w.key("base_size");
    w.value(truth.robot.base_size);
    w.key("chamber_uv");
    write_uv_array(w, truth.robot.chamber_centers);
    w.end_object();
    w.key("gap");
    w.begin_object();
    w.key("n_kernels");
    w.value(truth.gap.kernel_cfg.n_kernels);
    w.key("kernel_width");
    w.value(truth.gap.kernel_cfg.kernel_width);
    w.key("kernel_uv");
    write_uv_array(w, truth.gap.kernel_cfg.kernel_uv);
    w.key("gamma");
    write_number_array(w, truth.gap.gap_gamma.to_vector());
    w.key("actuation_coupling");
    w.value(truth.gap.actuation_coupling);
    w.key("noise_sigma");
    w.value(truth.gap.noise_sigma);
    w.key("track_surface");
    w.value(truth.gap.track_surface);
    w.end_object();
    w.key("capture");
    w.begin_object();
    w.key("mode");
    w.value(truth.capture.mode == synth::CaptureSpec::Mode::Scan ? "scan" : "markers");
    w.key("sample_count");
    w.value(truth.capture.sample_count);
    w.key("occlusion_patches");
    w.begin_array();
    for (const auto& p : truth.capture.occlusion_patches) {
        w.begin_array();
        w.value(p.center.u);
        w.value(p.center.v);
        w.value(p.radius);
        w.value(p.probability);
        w.end_array();
    }
    w.end_array();
    w.key("marker_uv");
    write_uv_array(w, truth.capture.marker_uv);
    w.key("dropout_probability");
    w.value(truth.capture.dropout_probability);
    w.key("seed");
    w.value(static_cast<std::size_t>(truth.capture.seed));
    w.end_object();
    w.end_object();
    write_text_file(path, w.str() + "\n");
}

TruthDoc load_truth(const std::string& path) {
    const json doc = parse_file(path);
    require_schema(doc, "warpfield-truth/1", path);
    TruthDoc truth;
    const auto& robot = doc.at("robot");
    truth.robot.dofs = robot.value("dofs", 0);
    truth.robot.bump_radius = robot.value("bump_radius", 0.25);
    truth.robot.max_height = robot.value("max_height", 40.0);
    truth.robot.base_size = robot.value("base_size", 320.0);
    truth.robot.chamber_centers = read_uv_array(robot.at("chamber_uv"), path + ": chamber_uv");
    truth.robot.validate();

    const auto& gap = doc.at("gap");
    truth.gap.kernel_cfg.n_kernels = gap.value("n_kernels", 0);
    truth.gap.kernel_cfg.kernel_width = gap.value("kernel_width", 0.0);
    truth.gap.kernel_cfg.kernel_uv = read_uv_array(gap.at("kernel_uv"), path + ": kernel_uv");
    truth.gap.kernel_cfg.validate();
    truth.gap.gap_gamma =
        rbf::WarpCoefficients::from_vector(read_number_array(gap.at("gamma"), path + ": gamma"));
    truth.gap.actuation_coupling = gap.value("actuation_coupling", 0.0);
    truth.gap.noise_sigma = gap.value("noise_sigma", 0.0);
    truth.gap.track_surface = gap.value("track_surface", true);
    const synth::Actuation rest = synth::Actuation::Zero(truth.robot.dofs);
    for (const auto& uv : truth.gap.kernel_cfg.kernel_uv)
        truth.gap.rest_kernels.centers.push_back(truth.robot.position(uv, rest));

    const auto& cap = doc.at("capture");
    truth.capture.mode = cap.value("mode", "scan") == "markers"
                             ? synth::CaptureSpec::Mode::Markers
                             : synth::CaptureSpec::Mode::Scan;
    truth.capture.sample_count = cap.value("sample_count", 1000);
    for (const auto& p : cap.at("occlusion_patches")) {
        if (!p.is_array() || p.size() != 4) throw data_error(path + ": bad occlusion patch");
        truth.capture.occlusion_patches.push_back(
            {{p[0].get<double>(), p[1].get<double>()}, p[2].get<double>(), p[3].get<double>()});
    }
    truth.capture.marker_uv = read_uv_array(cap.at("marker_uv"), path + ": marker_uv");
    truth.capture.dropout_probability = cap.value("dropout_probability", 0.0);
    truth.capture.seed = cap.value("seed", std::uint64_t{0});
    return truth;
}

std::string ik_result_to_json(const kin::IkResult& result) {
    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-ik/1");
    w.key("actuation");
    write_number_array(w, result.actuation);
    w.key("iterations");
    w.value(result.iterations);
    w.key("stalled");
    w.value(result.stalled);
    w.key("objective_trace");
    w.begin_array();
    for (double d : result.objective_trace) w.value(d);
    w.end_array();
    w.key("pose");
    w.begin_object();
    w.key("rotation");
    w.begin_array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) w.value(result.pose.rotation(r, c));
    w.end_array();
    w.key("translation");
    w.begin_array();
    for (int c = 0; c < 3; ++c) w.value(result.pose.translation[c]);
    w.end_array();
    w.end_object();
    const double iters = std::max(1, result.iterations);
    w.key("timings_ms");
    w.begin_object();
    w.key("forward_total");
    w.value(result.timings.forward_ms);
    w.key("gradient_total");
    w.value(result.timings.gradient_ms);
    w.key("icp_total");
    w.value(result.timings.icp_ms);
    w.key("forward_per_iteration");
    w.value(result.timings.forward_ms / iters);
    w.key("gradient_per_iteration");
    w.value(result.timings.gradient_ms / iters);
    w.key("icp_per_iteration");
    w.value(result.timings.icp_ms / iters);
    w.end_object();
    w.end_object();
    return w.str();
}

namespace {

std::string csv_number(double v) { return format_double(v); }

} // namespace

void write_s2r_log_csv(const std::string& path, const std::vector<train::S2rEpochLog>& log) {
    std::ostringstream out;
    out << "epoch,L_cd,L_cr,L_nc,L_gr,total,test_error\n";
    for (const auto& e : log)
        out << e.epoch << ',' << csv_number(e.cd) << ',' << csv_number(e.cr) << ','
            << csv_number(e.nc) << ',' << csv_number(e.gr) << ',' << csv_number(e.total) << ','
            << csv_number(e.test_error) << '\n';
    write_text_file(path, out.str());
}

void write_fk_log_csv(const std::string& path, const std::vector<train::FkEpochLog>& log) {
    std::ostringstream out;
    out << "epoch,train_error,test_error\n";
    for (const auto& e : log)
        out << e.epoch << ',' << csv_number(e.train_error) << ',' << csv_number(e.test_error)
            << '\n';
    write_text_file(path, out.str());
}

void write_baseline_log_csv(const std::string& path,
                            const std::vector<train::BaselineEpochLog>& log) {
    std::ostringstream out;
    out << "epoch,loss,test_error\n";
    for (const auto& e : log)
        out << e.epoch << ',' << csv_number(e.loss) << ',' << csv_number(e.test_error) << '\n';
    write_text_file(path, out.str());
}

void write_histogram_csv(const std::string& path, const std::vector<double>& values, int bins,
                         double lo, double hi) {
    if (bins < 1 || !(hi > lo)) throw config_error("write_histogram_csv: bad binning");
    std::vector<int> counts(bins, 0);
    for (double v : values) {
        int b = static_cast<int>((v - lo) / (hi - lo) * bins);
        b = std::clamp(b, 0, bins - 1);
        ++counts[b];
    }
    std::ostringstream out;
    out << "bin_low,bin_high,count\n";
    for (int b = 0; b < bins; ++b)
        out << csv_number(lo + (hi - lo) * b / bins) << ','
            << csv_number(lo + (hi - lo) * (b + 1) / bins) << ',' << counts[b] << '\n';
    write_text_file(path, out.str());
}

std::string validate_artifact(const std::string& path) {
    const fs::path p(path);
    if (!fs::exists(p)) throw data_error("validate: no such file: " + path);
    const std::string ext = p.extension().string();
    if (ext == ".ply") {
        read_ply(path);
        return "ply point cloud";
    }
    if (ext == ".csv") {
        const std::string text = read_text_file(path);
        if (text.empty() || text.find('\n') == std::string::npos)
            throw data_error("validate: csv has no rows: " + path);
        return "csv table";
    }
    if (ext != ".json") throw data_error("validate: unknown artifact type: " + path);

    const json doc = parse_file(path);
    const std::string schema = doc.is_object() ? doc.value("schema", "") : "";
    if (schema == "warpfield-mlp/1") {
        nn::model_from_json(read_text_file(path)).validate();
        return schema;
    }
    if (schema == "warpfield-fk/1") {
        load_fk_bundle(path);
        return schema;
    }
    if (schema == "warpfield-s2r/1") {
        load_s2r_bundle(path);
        return schema;
    }
    if (schema == "warpfield-baseline/1") {
        load_baseline_bundle(path);
        return schema;
    }
    if (schema == "warpfield-dataset/1") {
        if (doc.contains("frames") && !doc.at("frames").empty() &&
            doc.at("frames")[0].contains("captured"))
            load_dataset(path);
        else
            load_fk_dataset(path);
        return schema;
    }
    if (schema == "warpfield-truth/1") {
        load_truth(path);
        return schema;
    }
    if (schema == "warpfield-ik/1") {
        if (!doc.contains("actuation") || !doc.contains("objective_trace") ||
            !doc.contains("pose"))
            throw data_error("validate: incomplete ik result: " + path);
        return schema;
    }
    if (doc.is_object() && doc.contains("command")) return "resolved config";
    throw data_error("validate: unrecognized schema in " + path);
}

} // namespace warpfield::io
