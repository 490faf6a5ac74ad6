// warpfield — synthetic-testbed pipeline driver: dataset generation,
// surrogate and sim-to-real training, forward/inverse kinematics and
// evaluation. Exit codes: 0 success, 2 config error, 3 data error,
// 4 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "warpfield/errors.hpp"
#include "warpfield/evaluate.hpp"
#include "warpfield/io_ply.hpp"
#include "warpfield/json_writer.hpp"
#include "warpfield/serialize.hpp"
#include "warpfield/synthetic.hpp"
#include "warpfield/training.hpp"
#include "warpfield/util.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace warpfield;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool force = false;
    int threads = 1;
};

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    json doc = json::parse(io::read_text_file(path), nullptr, false);
    if (doc.is_discarded() || !doc.is_object())
        throw config_error("--config: not a JSON object: " + path);
    return doc;
}

// flags > config file > defaults
template <typename T>
void merge(const json& cfg, const CLI::Option* opt, const char* key, T& value) {
    if (opt != nullptr && opt->count() > 0) return;
    if (cfg.contains(key)) value = cfg.at(key).get<T>();
}

void prepare_out_dir(const std::string& out, bool force) {
    if (out.empty()) throw config_error("--out is required for this command");
    if (fs::exists(out) && !fs::is_empty(out) && !force)
        throw config_error("output directory exists and is not empty (use --force): " + out);
    fs::create_directories(out);
}

// entries carry pre-rendered JSON value fragments
void write_resolved_config(const std::string& out, const std::string& command,
                           const std::vector<std::pair<std::string, std::string>>& entries) {
    std::string text = "{\"command\":\"" + command + "\"";
    for (const auto& [k, v] : entries) text += ",\"" + k + "\":" + v;
    text += "}\n";
    io::write_text_file((fs::path(out) / "resolved_config.json").string(), text);
}

std::string num(double v) { return format_double(v); }

std::vector<synth::Actuation> random_actuations(int dofs, int count, std::uint64_t seed,
                                                double lo = 0.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<synth::Actuation> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        synth::Actuation a(dofs);
        for (int d = 0; d < dofs; ++d) a[d] = dist(rng);
        out.push_back(std::move(a));
    }
    return out;
}

// ---------------------------------------------------------------------------

int run_gen(const GlobalArgs& global, const json& cfg, const CLI::App& app,
            std::string mode, int dofs, int frames, int fk_count, int sample_count, int kernels,
            int markers, double gap_percent, double gap_coupling, double noise_sigma,
            double dropout, std::string gap_kind, std::vector<double> patch_values) {
    merge(cfg, app.get_option_no_throw("--mode"), "mode", mode);
    merge(cfg, app.get_option_no_throw("--dofs"), "dofs", dofs);
    merge(cfg, app.get_option_no_throw("--frames"), "frames", frames);
    merge(cfg, app.get_option_no_throw("--fk-count"), "fk_count", fk_count);
    merge(cfg, app.get_option_no_throw("--sample-count"), "sample_count", sample_count);
    merge(cfg, app.get_option_no_throw("--kernels"), "kernels", kernels);
    merge(cfg, app.get_option_no_throw("--markers"), "markers", markers);
    merge(cfg, app.get_option_no_throw("--gap-percent"), "gap_percent", gap_percent);
    merge(cfg, app.get_option_no_throw("--gap-coupling"), "gap_coupling", gap_coupling);
    merge(cfg, app.get_option_no_throw("--gap-kind"), "gap_kind", gap_kind);
    merge(cfg, app.get_option_no_throw("--noise-sigma"), "noise_sigma", noise_sigma);
    merge(cfg, app.get_option_no_throw("--dropout"), "dropout", dropout);
    merge(cfg, app.get_option_no_throw("--patch"), "occlusion_patches", patch_values);
    if (mode != "scan" && mode != "markers")
        throw config_error("gen: mode must be scan or markers");
    if (patch_values.size() % 4 != 0)
        throw config_error("gen: --patch takes groups of four values u v radius probability");

    prepare_out_dir(global.out_dir, global.force);

    const synth::VirtualRobot robot = synth::VirtualRobot::membrane(dofs);
    synth::RealityGap gap;
    const double target = gap_percent / 100.0 * robot.bbox_diagonal();
    if (gap_kind == "identity")
        gap = synth::RealityGap::identity(robot, kernels);
    else if (gap_kind == "representable")
        gap = synth::make_representable_gap(robot, rbf::WarpConfig::regular(kernels), target,
                                            derive_seed(global.seed, 5));
    else if (gap_kind == "highfreq")
        gap = synth::make_highfreq_gap(robot, 15, 3.0e-4, target, derive_seed(global.seed, 5));
    else
        throw config_error("gen: gap-kind must be identity, representable or highfreq");
    gap.actuation_coupling = gap_coupling;
    gap.noise_sigma = noise_sigma;

    synth::CaptureSpec capture;
    capture.sample_count = sample_count;
    capture.seed = derive_seed(global.seed, 7);
    for (std::size_t i = 0; i + 3 < patch_values.size(); i += 4)
        capture.occlusion_patches.push_back(
            {{patch_values[i], patch_values[i + 1]}, patch_values[i + 2], patch_values[i + 3]});
    if (mode == "markers") {
        capture.mode = synth::CaptureSpec::Mode::Markers;
        capture.marker_uv = synth::uv_lattice(markers);
        capture.dropout_probability = dropout;
    }

    // forward-kinematics pairs
    train::FkBuildOptions fk_opts;
    fk_opts.seed = derive_seed(global.seed, 11);
    const train::FkDataset fk_dataset = train::build_fk_dataset(robot, fk_count, fk_opts);
    io::save_fk_dataset((fs::path(global.out_dir) / "fk_dataset.json").string(), fk_dataset,
                        fk_opts.m_u, fk_opts.m_v);

    // captured frames
    const auto actuations = random_actuations(dofs, frames, derive_seed(global.seed, 13));
    const train::S2rDataset dataset =
        train::make_s2r_dataset(robot, gap, capture, actuations);
    io::save_dataset(global.out_dir, dataset);

    io::save_truth((fs::path(global.out_dir) / "truth.json").string(), {robot, gap, capture});

    write_resolved_config(
        global.out_dir, "gen",
        {{"mode", "\"" + mode + "\""},
         {"dofs", std::to_string(dofs)},
         {"frames", std::to_string(frames)},
         {"fk_count", std::to_string(fk_count)},
         {"sample_count", std::to_string(sample_count)},
         {"kernels", std::to_string(kernels)},
         {"markers", std::to_string(markers)},
         {"gap_kind", "\"" + gap_kind + "\""},
         {"gap_percent", num(gap_percent)},
         {"gap_coupling", num(gap_coupling)},
         {"noise_sigma", num(noise_sigma)},
         {"dropout", num(dropout)},
         {"seed", std::to_string(global.seed)}});
    std::printf("gen: wrote %d frames + %zu fk pairs to %s\n", frames,
                fk_dataset.actuations.size(), global.out_dir.c_str());
    return 0;
}

// ---------------------------------------------------------------------------

train::TrainingConfig training_config_from(const GlobalArgs& global, int epochs, int batch,
                                           double lr, int sample_count, train::Mode mode) {
    train::TrainingConfig tc;
    tc.max_epochs = epochs;
    tc.batch_size = batch;
    tc.learning_rate = lr;
    tc.sample_count = sample_count;
    tc.seed = global.seed;
    tc.threads = global.threads;
    tc.mode = mode;
    if (mode == train::Mode::Markers) {
        tc.w_cr = 0.0;
        tc.w_nc = 0.0;
    }
    return tc;
}

std::string dataset_manifest_path(const std::string& data) {
    const fs::path p(data);
    if (fs::is_directory(p)) return (p / "manifest.json").string();
    return data;
}

int run_train_fk(const GlobalArgs& global, const json& cfg, const CLI::App& app,
                 std::string data, int epochs, int batch, double lr) {
    merge(cfg, app.get_option_no_throw("--epochs"), "epochs", epochs);
    merge(cfg, app.get_option_no_throw("--batch"), "batch", batch);
    merge(cfg, app.get_option_no_throw("--lr"), "learning_rate", lr);
    merge(cfg, app.get_option_no_throw("--data"), "data", data);
    if (data.empty()) throw config_error("train-fk: --data is required");
    prepare_out_dir(global.out_dir, global.force);

    const fs::path p(data);
    const std::string fk_path =
        fs::is_directory(p) ? (p / "fk_dataset.json").string() : data;
    const train::FkDataset dataset = io::load_fk_dataset(fk_path);

    const train::TrainingConfig tc =
        training_config_from(global, epochs, batch, lr, 1000, train::Mode::Scan);
    const train::FkTrainResult result = train::train_fk(dataset, tc);
    io::save_fk_bundle(global.out_dir, result.surrogate, dataset.dofs());
    io::write_fk_log_csv((fs::path(global.out_dir) / "fk_log.csv").string(), result.log);
    write_resolved_config(global.out_dir, "train-fk",
                          {{"data", "\"" + data + "\""},
                           {"epochs", std::to_string(epochs)},
                           {"batch", std::to_string(batch)},
                           {"learning_rate", num(lr)},
                           {"seed", std::to_string(global.seed)}});
    std::printf("train-fk: final train %.6g / test %.6g (RMS mm)\n",
                result.log.back().train_error, result.log.back().test_error);
    return 0;
}

int run_train_s2r(const GlobalArgs& global, const json& cfg, const CLI::App& app,
                  std::string data, std::string fk_path, int epochs, int batch, int kernels,
                  int sample_count, double lr, double kernel_width, double w_cr, double w_nc,
                  double w_gr) {
    merge(cfg, app.get_option_no_throw("--epochs"), "epochs", epochs);
    merge(cfg, app.get_option_no_throw("--batch"), "batch", batch);
    merge(cfg, app.get_option_no_throw("--lr"), "learning_rate", lr);
    merge(cfg, app.get_option_no_throw("--kernels"), "kernels", kernels);
    merge(cfg, app.get_option_no_throw("--kernel-width"), "kernel_width", kernel_width);
    merge(cfg, app.get_option_no_throw("--sample-count"), "sample_count", sample_count);
    merge(cfg, app.get_option_no_throw("--w-cr"), "w_cr", w_cr);
    merge(cfg, app.get_option_no_throw("--w-nc"), "w_nc", w_nc);
    merge(cfg, app.get_option_no_throw("--w-gr"), "w_gr", w_gr);
    merge(cfg, app.get_option_no_throw("--data"), "data", data);
    merge(cfg, app.get_option_no_throw("--fk"), "fk", fk_path);
    if (data.empty() || fk_path.empty())
        throw config_error("train-s2r: --data and --fk are required");
    prepare_out_dir(global.out_dir, global.force);

    const train::S2rDataset dataset = io::load_dataset(dataset_manifest_path(data));
    const io::FkBundle fk = io::load_fk_bundle(fk_path);

    train::TrainingConfig tc = training_config_from(
        global, epochs, batch, lr, sample_count,
        dataset.mode == train::Mode::Markers ? train::Mode::Markers : train::Mode::Scan);
    tc.w_gr = w_gr;
    if (tc.mode == train::Mode::Scan) {
        tc.w_cr = w_cr;
        tc.w_nc = w_nc;
    }

    rbf::WarpConfig warp;
    if (tc.mode == train::Mode::Markers) {
        // kernels placed at the marker addresses
        warp.n_kernels = static_cast<int>(dataset.marker_uv.size());
        warp.kernel_width = kernel_width;
        warp.kernel_uv = dataset.marker_uv;
    } else {
        warp = rbf::WarpConfig::regular(kernels, kernel_width);
    }

    std::vector<train::S2rEpochLog> log;
    if (tc.mode == train::Mode::Scan) {
        const train::S2rTrainResult result =
            train::train_s2r_joint(dataset, fk.surrogate, warp, tc);
        io::save_s2r_bundle(global.out_dir, warp, result.rbf_net, &result.conf_net,
                            synth::uv_lattice(sample_count));
        log = result.log;
    } else {
        const train::MarkerTrainResult result =
            train::train_s2r_markers(dataset, fk.surrogate, warp, tc);
        io::save_s2r_bundle(global.out_dir, warp, result.rbf_net, nullptr,
                            synth::uv_lattice(sample_count));
        log = result.log;
    }
    io::write_s2r_log_csv((fs::path(global.out_dir) / "s2r_log.csv").string(), log);
    write_resolved_config(global.out_dir, "train-s2r",
                          {{"data", "\"" + data + "\""},
                           {"fk", "\"" + fk_path + "\""},
                           {"epochs", std::to_string(epochs)},
                           {"batch", std::to_string(batch)},
                           {"kernels", std::to_string(warp.n_kernels)},
                           {"kernel_width", num(kernel_width)},
                           {"sample_count", std::to_string(sample_count)},
                           {"w_cr", num(tc.w_cr)},
                           {"w_nc", num(tc.w_nc)},
                           {"w_gr", num(tc.w_gr)},
                           {"learning_rate", num(lr)},
                           {"seed", std::to_string(global.seed)}});
    std::printf("train-s2r: final total loss %.6g, test error %.6g\n", log.back().total,
                log.back().test_error);
    return 0;
}

int run_train_baseline(const GlobalArgs& global, const json& cfg, const CLI::App& app,
                       std::string data, int epochs, int batch, double lr, int points) {
    merge(cfg, app.get_option_no_throw("--epochs"), "epochs", epochs);
    merge(cfg, app.get_option_no_throw("--batch"), "batch", batch);
    merge(cfg, app.get_option_no_throw("--lr"), "learning_rate", lr);
    merge(cfg, app.get_option_no_throw("--points"), "points", points);
    merge(cfg, app.get_option_no_throw("--data"), "data", data);
    if (data.empty()) throw config_error("train-baseline: --data is required");
    prepare_out_dir(global.out_dir, global.force);

    const train::S2rDataset dataset = io::load_dataset(dataset_manifest_path(data));
    const train::TrainingConfig tc =
        training_config_from(global, epochs, batch, lr, 1000, train::Mode::Scan);
    const train::BaselineTrainResult result = train::train_direct_baseline(dataset, tc, points);
    io::save_baseline_bundle(global.out_dir, result.baseline);
    io::write_baseline_log_csv((fs::path(global.out_dir) / "baseline_log.csv").string(),
                               result.log);
    write_resolved_config(global.out_dir, "train-baseline",
                          {{"data", "\"" + data + "\""},
                           {"epochs", std::to_string(epochs)},
                           {"batch", std::to_string(batch)},
                           {"points", std::to_string(points)},
                           {"learning_rate", num(lr)},
                           {"seed", std::to_string(global.seed)}});
    std::printf("train-baseline: final loss %.6g, test chamfer %.6g\n", result.log.back().loss,
                result.log.back().test_error);
    return 0;
}

// ---------------------------------------------------------------------------

synth::Actuation parse_actuation(const std::vector<double>& values, int dofs) {
    if (static_cast<int>(values.size()) != dofs)
        throw config_error("actuation length does not match pipeline dofs");
    synth::Actuation a(dofs);
    for (int d = 0; d < dofs; ++d) a[d] = values[d];
    return a;
}

int run_fk(const GlobalArgs& global, const json& cfg, const CLI::App& app, std::string fk_path,
           std::string s2r_path, std::vector<double> actuation_values, bool write_csv) {
    merge(cfg, app.get_option_no_throw("--fk"), "fk", fk_path);
    merge(cfg, app.get_option_no_throw("--s2r"), "s2r", s2r_path);
    merge(cfg, app.get_option_no_throw("--actuation"), "actuation", actuation_values);
    if (fk_path.empty() || s2r_path.empty())
        throw config_error("fk: --fk and --s2r are required");
    prepare_out_dir(global.out_dir, global.force);

    const io::FkBundle fk = io::load_fk_bundle(fk_path);
    const io::S2rBundle s2r = io::load_s2r_bundle(s2r_path);
    const kin::FkPipeline pipe = io::make_pipeline(fk, s2r);

    synth::Actuation a = parse_actuation(actuation_values, fk.dofs);
    const synth::Actuation clamped = kin::clamp01(a);
    if ((clamped - a).norm() > 0.0) {
        std::fprintf(stderr, "warning: actuation outside [0,1]; clamped\n");
        a = clamped;
    }

    const align::PointCloud corrected = kin::forward_shape_with_normals(pipe, a);
    const align::PointCloud uncorrected = kin::forward_shape_uncorrected(pipe, a);
    io::write_ply(corrected, (fs::path(global.out_dir) / "predicted.ply").string());

    if (write_csv) {
        std::string csv = "u,v,x,y,z,correction_mm\n";
        for (std::size_t s = 0; s < pipe.sample_uv.size(); ++s) {
            const double corr = (corrected.positions[s] - uncorrected.positions[s]).norm();
            csv += num(pipe.sample_uv[s].u) + "," + num(pipe.sample_uv[s].v) + "," +
                   num(corrected.positions[s].x()) + "," + num(corrected.positions[s].y()) +
                   "," + num(corrected.positions[s].z()) + "," + num(corr) + "\n";
        }
        io::write_text_file((fs::path(global.out_dir) / "predicted.csv").string(), csv);
    }

    std::string act_json = "[";
    for (int d = 0; d < fk.dofs; ++d) act_json += (d ? "," : "") + num(a[d]);
    act_json += "]";
    write_resolved_config(global.out_dir, "fk",
                          {{"fk", "\"" + fk_path + "\""},
                           {"s2r", "\"" + s2r_path + "\""},
                           {"actuation", act_json},
                           {"csv", write_csv ? "true" : "false"}});
    std::printf("fk: wrote %zu predicted points\n", corrected.size());
    return 0;
}

int run_ik(const GlobalArgs& global, const json& cfg, const CLI::App& app, std::string fk_path,
           std::string s2r_path, std::string target_path, kin::IkConfig ik_cfg,
           std::vector<double> a0_values) {
    merge(cfg, app.get_option_no_throw("--fk"), "fk", fk_path);
    merge(cfg, app.get_option_no_throw("--s2r"), "s2r", s2r_path);
    merge(cfg, app.get_option_no_throw("--target"), "target", target_path);
    merge(cfg, app.get_option_no_throw("--lambda"), "lambda", ik_cfg.lambda);
    merge(cfg, app.get_option_no_throw("--imax"), "i_max", ik_cfg.i_max);
    if (fk_path.empty() || s2r_path.empty() || target_path.empty())
        throw config_error("ik: --fk, --s2r and --target are required");
    prepare_out_dir(global.out_dir, global.force);

    const io::FkBundle fk = io::load_fk_bundle(fk_path);
    const io::S2rBundle s2r = io::load_s2r_bundle(s2r_path);
    const kin::FkPipeline pipe = io::make_pipeline(fk, s2r);
    const align::PointCloud target = io::read_ply(target_path);

    synth::Actuation a0;
    if (a0_values.empty())
        a0 = synth::Actuation::Constant(fk.dofs, 0.5);
    else
        a0 = parse_actuation(a0_values, fk.dofs);

    const kin::IkResult result = kin::ik_solve(pipe, target, ik_cfg, a0);
    io::write_text_file((fs::path(global.out_dir) / "ik_result.json").string(),
                        io::ik_result_to_json(result) + "\n");
    io::write_ply(kin::forward_shape_with_normals(pipe, result.actuation),
                  (fs::path(global.out_dir) / "achieved.ply").string());

    write_resolved_config(global.out_dir, "ik",
                          {{"fk", "\"" + fk_path + "\""},
                           {"s2r", "\"" + s2r_path + "\""},
                           {"target", "\"" + target_path + "\""},
                           {"lambda", num(ik_cfg.lambda)},
                           {"i_max", std::to_string(ik_cfg.i_max)},
                           {"pose_free", ik_cfg.pose_free ? "true" : "false"}});
    std::printf("ik: %d iterations, final objective %.6g%s\n", result.iterations,
                result.objective_trace.back(), result.stalled ? " (stalled)" : "");
    return 0;
}

int run_eval(const GlobalArgs& global, const json& cfg, const CLI::App& app, std::string fk_path,
             std::string s2r_path, std::string data, std::string baseline_path, int eval_count,
             double cap_normal, int bins) {
    merge(cfg, app.get_option_no_throw("--fk"), "fk", fk_path);
    merge(cfg, app.get_option_no_throw("--s2r"), "s2r", s2r_path);
    merge(cfg, app.get_option_no_throw("--data"), "data", data);
    merge(cfg, app.get_option_no_throw("--baseline"), "baseline", baseline_path);
    merge(cfg, app.get_option_no_throw("--eval-count"), "eval_count", eval_count);
    merge(cfg, app.get_option_no_throw("--cap-normal"), "cap_normal", cap_normal);
    merge(cfg, app.get_option_no_throw("--bins"), "bins", bins);
    if (fk_path.empty() || s2r_path.empty() || data.empty())
        throw config_error("eval: --fk, --s2r and --data are required");
    prepare_out_dir(global.out_dir, global.force);

    const io::FkBundle fk = io::load_fk_bundle(fk_path);
    const io::S2rBundle s2r = io::load_s2r_bundle(s2r_path);
    const kin::FkPipeline pipe = io::make_pipeline(fk, s2r);

    eval::CorrectionStats stats;
    std::vector<double> normal_errs;
    double baseline_mean = -1.0;
    const fs::path truth_path = fs::path(data) / "truth.json";
    std::vector<synth::Actuation> actuations;

    if (fs::exists(truth_path)) {
        const io::TruthDoc truth = io::load_truth(truth_path.string());
        actuations = random_actuations(truth.robot.dofs, eval_count,
                                       derive_seed(global.seed, 23));
        stats = eval::evaluate_correction(pipe, truth.robot, truth.gap, actuations);
        for (const auto& a : actuations) {
            const align::PointCloud reference =
                eval::reference_surface(truth.robot, truth.gap, a);
            for (double e : eval::normal_errors(kin::forward_shape_with_normals(pipe, a),
                                                reference, cap_normal))
                normal_errs.push_back(e);
        }
        if (!baseline_path.empty()) {
            const train::DirectBaseline baseline = io::load_baseline_bundle(baseline_path);
            double total = 0.0;
            std::size_t n = 0;
            for (const auto& a : actuations) {
                const align::PointCloud reference =
                    eval::reference_surface(truth.robot, truth.gap, a);
                const align::SpatialIndex index(reference.positions);
                for (double e : eval::point_errors(baseline.predict(a), index)) {
                    total += e;
                    ++n;
                }
            }
            baseline_mean = n ? total / static_cast<double>(n) : 0.0;
        }
    } else {
        std::fprintf(stderr,
                     "notice: no truth sidecar at %s; using captured clouds as reference\n",
                     truth_path.string().c_str());
        const train::S2rDataset dataset = io::load_dataset(dataset_manifest_path(data));
        std::vector<align::PointCloud> references;
        for (const auto& frame : dataset.frames) {
            actuations.push_back(frame.actuation);
            references.push_back(frame.captured);
        }
        stats = eval::evaluate_against_clouds(pipe, actuations, references);
    }

    const double hist_hi = std::max(
        1e-9, std::max(stats.max_uncorrected, stats.max_corrected));
    io::write_histogram_csv((fs::path(global.out_dir) / "error_histogram_corrected.csv").string(),
                            stats.errors_corrected, bins, 0.0, hist_hi);
    io::write_histogram_csv(
        (fs::path(global.out_dir) / "error_histogram_uncorrected.csv").string(),
        stats.errors_uncorrected, bins, 0.0, hist_hi);
    if (!normal_errs.empty())
        io::write_histogram_csv((fs::path(global.out_dir) / "normal_error_histogram.csv").string(),
                                normal_errs, bins, 0.0,
                                cap_normal > 0.0 ? cap_normal : 2.0);

    JsonWriter w;
    w.begin_object();
    w.key("schema");
    w.value("warpfield-metrics/1");
    w.key("mean_error_uncorrected");
    w.value(stats.mean_uncorrected);
    w.key("mean_error_corrected");
    w.value(stats.mean_corrected);
    w.key("max_error_uncorrected");
    w.value(stats.max_uncorrected);
    w.key("max_error_corrected");
    w.value(stats.max_corrected);
    w.key("reduction_percent");
    w.value(stats.reduction_percent);
    if (baseline_mean >= 0.0) {
        w.key("baseline_mean_error");
        w.value(baseline_mean);
    }
    w.end_object();
    io::write_text_file((fs::path(global.out_dir) / "metrics.json").string(), w.str() + "\n");

    write_resolved_config(global.out_dir, "eval",
                          {{"fk", "\"" + fk_path + "\""},
                           {"s2r", "\"" + s2r_path + "\""},
                           {"data", "\"" + data + "\""},
                           {"eval_count", std::to_string(eval_count)},
                           {"cap_normal", num(cap_normal)},
                           {"bins", std::to_string(bins)},
                           {"seed", std::to_string(global.seed)}});
    std::printf("eval: mean error %.6g -> %.6g mm (%.1f%% reduction)\n",
                stats.mean_uncorrected, stats.mean_corrected, stats.reduction_percent);
    return 0;
}

int run_validate(const std::vector<std::string>& paths) {
    if (paths.empty()) throw config_error("validate: no files given");
    for (const std::string& path : paths) {
        const std::string kind = io::validate_artifact(path);
        std::printf("%s: OK (%s)\n", path.c_str(), kind.c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"deformable-surface sim-to-real pipeline"};
    app.require_subcommand(1);

    GlobalArgs global;
    app.add_option("--config", global.config_path, "JSON parameter document");
    app.add_option("--seed", global.seed, "base RNG seed");
    app.add_option("--out", global.out_dir, "output directory");
    app.add_flag("--force", global.force, "allow writing into a non-empty output directory");
    app.add_option("--threads", global.threads, "worker threads for per-frame parallel work");

    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
    std::string gen_mode = "scan", gen_gap_kind = "representable";
    int gen_dofs = 9, gen_frames = 40, gen_fk_count = 600, gen_samples = 1000, gen_kernels = 100,
        gen_markers = 34;
    double gen_gap_percent = 5.0, gen_coupling = 0.0, gen_noise = 0.2, gen_dropout = 0.022;
    std::vector<double> gen_patches;
    gen->add_option("--mode", gen_mode, "scan | markers");
    gen->add_option("--dofs", gen_dofs, "actuation DoFs");
    gen->add_option("--frames", gen_frames, "captured frames");
    gen->add_option("--fk-count", gen_fk_count, "simulated shapes for the surrogate");
    gen->add_option("--sample-count", gen_samples, "captured points per frame");
    gen->add_option("--kernels", gen_kernels, "gap kernel count");
    gen->add_option("--markers", gen_markers, "marker count (markers mode)");
    gen->add_option("--gap-percent", gen_gap_percent, "mean gap, % of bbox diagonal");
    gen->add_option("--gap-coupling", gen_coupling, "gap scaling with mean actuation");
    gen->add_option("--gap-kind", gen_gap_kind, "identity | representable | highfreq");
    gen->add_option("--noise-sigma", gen_noise, "capture noise (mm)");
    gen->add_option("--dropout", gen_dropout, "marker dropout probability");
    gen->add_option("--patch", gen_patches, "occlusion patch: u v radius probability")
        ->expected(-1);

    auto* tfk = app.add_subcommand("train-fk", "train the forward-kinematics surrogate");
    std::string tfk_data;
    int tfk_epochs = 150, tfk_batch = 64;
    double tfk_lr = 0.001;
    tfk->add_option("--data", tfk_data, "dataset directory or fk_dataset.json");
    tfk->add_option("--epochs", tfk_epochs, "training epochs");
    tfk->add_option("--batch", tfk_batch, "mini-batch size");
    tfk->add_option("--lr", tfk_lr, "learning rate");

    auto* ts2r = app.add_subcommand("train-s2r", "joint sim-to-real training");
    std::string ts2r_data, ts2r_fk;
    int ts2r_epochs = 150, ts2r_batch = 0, ts2r_kernels = 100, ts2r_samples = 1000;
    double ts2r_lr = 0.001, ts2r_kw = 3.0e-5, ts2r_wcr = 12.0, ts2r_wnc = 0.5, ts2r_wgr = 1.5e-4;
    ts2r->add_option("--data", ts2r_data, "dataset directory or manifest.json");
    ts2r->add_option("--fk", ts2r_fk, "fk bundle path");
    ts2r->add_option("--epochs", ts2r_epochs, "training epochs");
    ts2r->add_option("--batch", ts2r_batch, "frames per step (0 = full set)");
    ts2r->add_option("--lr", ts2r_lr, "learning rate");
    ts2r->add_option("--kernels", ts2r_kernels, "warp kernel count (scan mode)");
    ts2r->add_option("--kernel-width", ts2r_kw, "Gaussian kernel width c");
    ts2r->add_option("--sample-count", ts2r_samples, "UV samples per frame");
    ts2r->add_option("--w-cr", ts2r_wcr, "confidence regularization weight");
    ts2r->add_option("--w-nc", ts2r_wnc, "normal compatibility weight");
    ts2r->add_option("--w-gr", ts2r_wgr, "geometric regularization weight");

    auto* tbl = app.add_subcommand("train-baseline", "train the direct-learning baseline");
    std::string tbl_data;
    int tbl_epochs = 150, tbl_batch = 1, tbl_points = 200;
    double tbl_lr = 0.001;
    tbl->add_option("--data", tbl_data, "dataset directory or manifest.json");
    tbl->add_option("--epochs", tbl_epochs, "training epochs");
    tbl->add_option("--batch", tbl_batch, "frames per step");
    tbl->add_option("--lr", tbl_lr, "learning rate");
    tbl->add_option("--points", tbl_points, "predicted point count");

    auto* fkc = app.add_subcommand("fk", "predict the corrected shape for an actuation");
    std::string fkc_fk, fkc_s2r;
    std::vector<double> fkc_act;
    bool fkc_csv = false;
    fkc->add_option("--fk", fkc_fk, "fk bundle path");
    fkc->add_option("--s2r", fkc_s2r, "s2r bundle path");
    fkc->add_option("--actuation", fkc_act, "actuation values")->expected(-1);
    fkc->add_flag("--csv", fkc_csv, "also write per-point correction CSV");

    auto* ikc = app.add_subcommand("ik", "solve inverse kinematics for a target cloud");
    std::string ikc_fk, ikc_s2r, ikc_target;
    kin::IkConfig ik_cfg;
    std::vector<double> ikc_a0;
    ikc->add_option("--fk", ikc_fk, "fk bundle path");
    ikc->add_option("--s2r", ikc_s2r, "s2r bundle path");
    ikc->add_option("--target", ikc_target, "target PLY path");
    ikc->add_option("--lambda", ik_cfg.lambda, "relative-decrease termination threshold");
    ikc->add_option("--imax", ik_cfg.i_max, "max iterations");
    ikc->add_flag("--pose-free,!--pose-fixed", ik_cfg.pose_free,
                  "allow rigid re-posing of the target");
    ikc->add_option("--a0", ikc_a0, "initial actuation")->expected(-1);

    auto* evc = app.add_subcommand("eval", "evaluate correction quality on a dataset");
    std::string evc_fk, evc_s2r, evc_data, evc_baseline;
    int evc_count = 10, evc_bins = 30;
    double evc_cap = 0.0;
    evc->add_option("--fk", evc_fk, "fk bundle path");
    evc->add_option("--s2r", evc_s2r, "s2r bundle path");
    evc->add_option("--data", evc_data, "dataset directory (with optional truth.json)");
    evc->add_option("--baseline", evc_baseline, "baseline bundle to compare");
    evc->add_option("--eval-count", evc_count, "unseen actuations to evaluate");
    evc->add_option("--cap-normal", evc_cap, "cap for normal-error histogram (0 = off)");
    evc->add_option("--bins", evc_bins, "histogram bins");

    auto* val = app.add_subcommand("validate", "check artifact files against their schemas");
    std::vector<std::string> val_paths;
    val->add_option("files", val_paths, "artifact files");

    try {
        app.parse(argc, argv);
        const json cfg = load_config(global.config_path);

        if (gen->parsed())
            return run_gen(global, cfg, *gen, gen_mode, gen_dofs, gen_frames, gen_fk_count,
                           gen_samples, gen_kernels, gen_markers, gen_gap_percent, gen_coupling,
                           gen_noise, gen_dropout, gen_gap_kind, gen_patches);
        if (tfk->parsed()) return run_train_fk(global, cfg, *tfk, tfk_data, tfk_epochs, tfk_batch, tfk_lr);
        if (ts2r->parsed())
            return run_train_s2r(global, cfg, *ts2r, ts2r_data, ts2r_fk, ts2r_epochs, ts2r_batch,
                                 ts2r_kernels, ts2r_samples, ts2r_lr, ts2r_kw, ts2r_wcr,
                                 ts2r_wnc, ts2r_wgr);
        if (tbl->parsed()) return run_train_baseline(global, cfg, *tbl, tbl_data, tbl_epochs, tbl_batch, tbl_lr, tbl_points);
        if (fkc->parsed()) return run_fk(global, cfg, *fkc, fkc_fk, fkc_s2r, fkc_act, fkc_csv);
        if (ikc->parsed()) return run_ik(global, cfg, *ikc, ikc_fk, ikc_s2r, ikc_target, ik_cfg,
                                         ikc_a0);
        if (evc->parsed())
            return run_eval(global, cfg, *evc, evc_fk, evc_s2r, evc_data, evc_baseline,
                            evc_count, evc_cap, evc_bins);
        if (val->parsed()) return run_validate(val_paths);
        return 2;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 2;
    } catch (const config_error& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const data_error& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const numeric_error& e) {
        std::fprintf(stderr, "numeric failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
}
