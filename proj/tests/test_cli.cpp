#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const std::string cli = WARPFIELD_CLI_PATH;

struct Workspace {
    fs::path root;
    Workspace() {
        root = fs::temp_directory_path() / "warpfield_cli_test";
        fs::remove_all(root);
        fs::create_directories(root);
    }
    ~Workspace() { fs::remove_all(root); }
    std::string path(const std::string& rel) const { return (root / rel).string(); }
};

int run(const std::string& args) {
    const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

int count_lines(const std::string& text) {
    int lines = 0;
    for (char c : text)
        if (c == '\n') ++lines;
    return lines;
}

// one small dataset + models shared by the downstream command tests
struct TrainedFixture {
    Workspace ws;
    std::string data, fk_bundle, s2r_bundle;

    TrainedFixture() {
        data = ws.path("data");
        REQUIRE(run("--seed 3 --out " + data +
                    " gen --dofs 3 --frames 5 --fk-count 16 --sample-count 200 --kernels 25 "
                    "--noise-sigma 0.05") == 0);
        REQUIRE(run("--seed 3 --out " + ws.path("fk") + " train-fk --data " + data +
                    " --epochs 25") == 0);
        REQUIRE(run("--seed 3 --out " + ws.path("s2r") + " train-s2r --data " + data + " --fk " +
                    ws.path("fk/fk_bundle.json") +
                    " --epochs 10 --batch 1 --kernels 25 --sample-count 200") == 0);
        fk_bundle = ws.path("fk/fk_bundle.json");
        s2r_bundle = ws.path("s2r/s2r_bundle.json");
    }
};

} // namespace

TEST_CASE("gen is byte-identical under a fixed seed") {
    Workspace ws;
    REQUIRE(run("--seed 11 --out " + ws.path("a") +
                " gen --dofs 2 --frames 3 --fk-count 8 --sample-count 100 --kernels 16") == 0);
    REQUIRE(run("--seed 11 --out " + ws.path("b") +
                " gen --dofs 2 --frames 3 --fk-count 8 --sample-count 100 --kernels 16") == 0);
    CHECK(slurp(ws.path("a/manifest.json")) == slurp(ws.path("b/manifest.json")));
    CHECK(slurp(ws.path("a/frames/frame_0000.ply")) == slurp(ws.path("b/frames/frame_0000.ply")));
    CHECK(slurp(ws.path("a/truth.json")) == slurp(ws.path("b/truth.json")));
    CHECK(slurp(ws.path("a/fk_dataset.json")) == slurp(ws.path("b/fk_dataset.json")));

    // expected file census
    CHECK(fs::exists(ws.path("a/resolved_config.json")));
    int ply_count = 0;
    for (const auto& entry : fs::directory_iterator(ws.path("a/frames"))) {
        (void)entry;
        ++ply_count;
    }
    CHECK(ply_count == 3);
}

TEST_CASE("gen refuses to overwrite without --force") {
    Workspace ws;
    REQUIRE(run("--seed 1 --out " + ws.path("d") +
                " gen --dofs 2 --frames 2 --fk-count 6 --sample-count 80 --kernels 9") == 0);
    CHECK(run("--seed 1 --out " + ws.path("d") +
              " gen --dofs 2 --frames 2 --fk-count 6 --sample-count 80 --kernels 9") == 2);
    CHECK(run("--seed 1 --force --out " + ws.path("d") +
              " gen --dofs 2 --frames 2 --fk-count 6 --sample-count 80 --kernels 9") == 0);
}

TEST_CASE("markers-mode gen lists at most the marker count per frame") {
    Workspace ws;
    REQUIRE(run("--seed 5 --out " + ws.path("m") +
                " gen --mode markers --dofs 2 --frames 4 --fk-count 6 --markers 34 "
                "--dropout 0.1 --kernels 9") == 0);
    const auto doc = nlohmann::json::parse(slurp(ws.path("m/manifest.json")));
    CHECK(doc.at("mode") == "markers");
    CHECK(doc.at("marker_uv").size() == 34);
    for (const auto& frame : doc.at("frames")) {
        const std::string ply = slurp((fs::path(ws.path("m")) /
                                       frame.at("captured").get<std::string>())
                                          .string());
        // header declares the marker property and at most 34 vertices
        CHECK(ply.find("property int marker_id") != std::string::npos);
        const auto pos = ply.find("element vertex ");
        const int vertices = std::stoi(ply.substr(pos + 15));
        CHECK(vertices <= 34);
    }
}

TEST_CASE("full pipeline commands produce their artifacts") {
    TrainedFixture fx;

    SUBCASE("train-fk --epochs 1 writes exactly one csv row") {
        REQUIRE(run("--seed 4 --out " + fx.ws.path("fk1") + " train-fk --data " + fx.data +
                    " --epochs 1") == 0);
        const std::string csv = slurp(fx.ws.path("fk1/fk_log.csv"));
        CHECK(count_lines(csv) == 2);  // header + one epoch
    }

    SUBCASE("training reruns are deterministic") {
        REQUIRE(run("--seed 3 --out " + fx.ws.path("s2r_again") + " train-s2r --data " + fx.data +
                    " --fk " + fx.fk_bundle +
                    " --epochs 10 --batch 1 --kernels 25 --sample-count 200") == 0);
        CHECK(slurp(fx.ws.path("s2r_again/s2r_log.csv")) == slurp(fx.ws.path("s2r/s2r_log.csv")));
        CHECK(slurp(fx.ws.path("s2r_again/rbf_net.json")) == slurp(fx.ws.path("s2r/rbf_net.json")));
    }

    SUBCASE("fk emits the predicted cloud and the correction csv") {
        REQUIRE(run("--out " + fx.ws.path("pred") + " fk --fk " + fx.fk_bundle + " --s2r " +
                    fx.s2r_bundle + " --actuation 0.2 0.7 0.5 --csv") == 0);
        const std::string csv = slurp(fx.ws.path("pred/predicted.csv"));
        CHECK(csv.rfind("u,v,x,y,z,correction_mm", 0) == 0);
        CHECK(count_lines(csv) == 201);  // header + one row per sample point
        CHECK(fs::exists(fx.ws.path("pred/predicted.ply")));

        // out-of-range actuation is clamped, not fatal
        CHECK(run("--out " + fx.ws.path("pred2") + " fk --fk " + fx.fk_bundle + " --s2r " +
                  fx.s2r_bundle + " --actuation 1.5 -0.2 0.5") == 0);
    }

    SUBCASE("ik respects --imax and reports timings") {
        REQUIRE(run("--out " + fx.ws.path("target") + " fk --fk " + fx.fk_bundle + " --s2r " +
                    fx.s2r_bundle + " --actuation 0.4 0.6 0.3") == 0);
        REQUIRE(run("--out " + fx.ws.path("ik1") + " ik --fk " + fx.fk_bundle + " --s2r " +
                    fx.s2r_bundle + " --target " + fx.ws.path("target/predicted.ply") +
                    " --imax 1") == 0);
        const auto doc = nlohmann::json::parse(slurp(fx.ws.path("ik1/ik_result.json")));
        CHECK(doc.at("iterations").get<int>() == 1);
        CHECK(doc.at("timings_ms").at("forward_total").get<double>() > 0.0);
        CHECK(doc.at("timings_ms").at("gradient_total").get<double>() > 0.0);
        CHECK(doc.at("timings_ms").at("icp_total").get<double>() > 0.0);
        CHECK(fs::exists(fx.ws.path("ik1/achieved.ply")));

        // longer solve: trace decreasing, actuation recovered loosely
        REQUIRE(run("--out " + fx.ws.path("ik2") + " ik --fk " + fx.fk_bundle + " --s2r " +
                    fx.s2r_bundle + " --target " + fx.ws.path("target/predicted.ply") +
                    " --imax 25 --lambda 1e-6") == 0);
        const auto doc2 = nlohmann::json::parse(slurp(fx.ws.path("ik2/ik_result.json")));
        const auto trace = doc2.at("objective_trace").get<std::vector<double>>();
        for (std::size_t k = 1; k < trace.size(); ++k) CHECK(trace[k] <= trace[k - 1] + 1e-9);
        const auto a = doc2.at("actuation").get<std::vector<double>>();
        CHECK(std::abs(a[0] - 0.4) < 0.2);
        CHECK(std::abs(a[1] - 0.6) < 0.2);
        CHECK(std::abs(a[2] - 0.3) < 0.2);
    }

    SUBCASE("eval writes metrics and histograms") {
        REQUIRE(run("--seed 9 --out " + fx.ws.path("eval") + " eval --fk " + fx.fk_bundle +
                    " --s2r " + fx.s2r_bundle + " --data " + fx.data +
                    " --eval-count 3 --cap-normal 0.06") == 0);
        const auto doc = nlohmann::json::parse(slurp(fx.ws.path("eval/metrics.json")));
        CHECK(doc.contains("mean_error_uncorrected"));
        CHECK(doc.contains("reduction_percent"));
        CHECK(fs::exists(fx.ws.path("eval/error_histogram_corrected.csv")));
        const std::string hist = slurp(fx.ws.path("eval/normal_error_histogram.csv"));
        CHECK(hist.rfind("bin_low,bin_high,count", 0) == 0);
        // capped bins: the last bin's upper edge equals the cap
        CHECK(hist.find("0.058") != std::string::npos);
    }

    SUBCASE("validate accepts every artifact the pipeline wrote") {
        CHECK(run("validate " + fx.data + "/manifest.json " + fx.data + "/truth.json " +
                  fx.data + "/fk_dataset.json " + fx.fk_bundle + " " + fx.s2r_bundle + " " +
                  fx.ws.path("fk/fk_net.json") + " " + fx.data + "/frames/frame_0000.ply") == 0);
    }

    SUBCASE("exit codes: missing data 3, bad flags 2") {
        CHECK(run("--out " + fx.ws.path("x1") + " train-fk --data " + fx.ws.path("nonexistent")) ==
              3);
        CHECK(run("--out " + fx.ws.path("x2") + " gen --mode bogus") == 2);
        CHECK(run("validate " + fx.ws.path("nothing.json")) == 3);
        CHECK(run("definitely-not-a-command") == 2);
    }
}
