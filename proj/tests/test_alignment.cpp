#include <doctest.h>

#include <Eigen/Geometry>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "test_util.hpp"
#include "warpfield/alignment.hpp"
#include "warpfield/errors.hpp"
#include "warpfield/io_ply.hpp"

using namespace warpfield;
using namespace warpfield::align;

namespace {

PointCloud random_cloud(std::mt19937_64& rng, int n, double scale = 100.0) {
    PointCloud cloud;
    cloud.positions.reserve(n);
    for (int i = 0; i < n; ++i) cloud.positions.push_back(test_util::random_vec3(rng, 0.0, scale));
    return cloud;
}

std::pair<int, double> brute_nearest(const std::vector<Vec3>& points, const Vec3& q) {
    int best = 0;
    double best_d2 = (points[0] - q).squaredNorm();
    for (std::size_t i = 1; i < points.size(); ++i) {
        const double d2 = (points[i] - q).squaredNorm();
        if (d2 < best_d2) {
            best_d2 = d2;
            best = static_cast<int>(i);
        }
    }
    return {best, best_d2};
}

double brute_chamfer(const PointCloud& a, const PointCloud& b) {
    double fwd = 0.0, bwd = 0.0;
    for (const Vec3& p : a.positions) fwd += brute_nearest(b.positions, p).second;
    for (const Vec3& p : b.positions) bwd += brute_nearest(a.positions, p).second;
    return fwd / a.size() + bwd / b.size();
}

double brute_hausdorff(const PointCloud& a, const PointCloud& b) {
    double fwd = 0.0, bwd = 0.0;
    for (const Vec3& p : a.positions)
        fwd = std::max(fwd, brute_nearest(b.positions, p).second);
    for (const Vec3& p : b.positions)
        bwd = std::max(bwd, brute_nearest(a.positions, p).second);
    return std::sqrt(std::max(fwd, bwd));
}

Mat3 rotation_about(const Vec3& axis_raw, double angle) {
    const Vec3 axis = axis_raw.normalized();
    return Eigen::AngleAxisd(angle, axis).toRotationMatrix();
}

} // namespace

TEST_CASE("nearest: exact hits and two-point discrimination") {
    std::mt19937_64 rng(1);
    PointCloud cloud = random_cloud(rng, 50);
    const SpatialIndex index(cloud.positions);
    for (int i = 0; i < 50; i += 7) {
        const auto [idx, d2] = index.nearest(cloud.positions[i]);
        CHECK(d2 == 0.0);
        CHECK((cloud.positions[idx] - cloud.positions[i]).norm() == 0.0);
    }

    PointCloud two;
    two.positions = {Vec3(0, 0, 0), Vec3(10, 0, 0)};
    const SpatialIndex small(two.positions);
    CHECK(small.nearest(Vec3(2, 0, 0)).first == 0);
    CHECK(small.nearest(Vec3(8, 0, 0)).first == 1);
}

TEST_CASE("nearest matches brute force on 2000 points / 500 queries") {
    std::mt19937_64 rng(2);
    const PointCloud cloud = random_cloud(rng, 2000);
    const SpatialIndex index(cloud.positions);
    for (int q = 0; q < 500; ++q) {
        const Vec3 query = test_util::random_vec3(rng, -10.0, 110.0);
        const auto [bi, bd2] = brute_nearest(cloud.positions, query);
        const auto [ki, kd2] = index.nearest(query);
        CHECK(ki == bi);
        CHECK(kd2 == bd2);
    }
}

TEST_CASE("nearest breaks exact ties by the lowest point index") {
    PointCloud cloud;
    cloud.positions = {Vec3(5, 5, 5), Vec3(1, 0, 0), Vec3(-1, 0, 0), Vec3(1, 0, 0)};
    const SpatialIndex index(cloud.positions);
    // query equidistant from indices 1, 2 and 3
    CHECK(index.nearest(Vec3(0, 0, 0)).first == 1);
}

TEST_CASE("knn matches a brute-force sort") {
    std::mt19937_64 rng(3);
    const PointCloud cloud = random_cloud(rng, 300);
    const SpatialIndex index(cloud.positions);
    for (int q = 0; q < 50; ++q) {
        const Vec3 query = test_util::random_vec3(rng, 0.0, 100.0);
        const auto got = index.knn(query, 12);
        std::vector<std::pair<double, int>> want;
        for (std::size_t i = 0; i < cloud.size(); ++i)
            want.emplace_back((cloud.positions[i] - query).squaredNorm(), static_cast<int>(i));
        std::sort(want.begin(), want.end());
        want.resize(12);
        REQUIRE(got.size() == 12);
        for (int k = 0; k < 12; ++k) {
            CHECK(got[k].second == want[k].second);
            CHECK(got[k].first == want[k].first);
        }
    }
}

TEST_CASE("empty clouds are rejected") {
    CHECK_THROWS_AS(SpatialIndex(std::vector<Vec3>{}), config_error);
    PointCloud empty, one;
    one.positions = {Vec3(0, 0, 0)};
    CHECK_THROWS_AS(chamfer(empty, one), config_error);
    CHECK_THROWS_AS(hausdorff(one, empty), config_error);
}

TEST_CASE("chamfer: identity, hand value and brute force") {
    std::mt19937_64 rng(4);
    const PointCloud cloud = random_cloud(rng, 120);
    CHECK(chamfer(cloud, cloud) == 0.0);

    PointCloud a, b;
    a.positions = {Vec3(0, 0, 0)};
    b.positions = {Vec3(1, 0, 0)};
    CHECK(chamfer(a, b) == doctest::Approx(2.0).epsilon(1e-15));

    const PointCloud x = random_cloud(rng, 500);
    const PointCloud y = random_cloud(rng, 500);
    CHECK(std::abs(chamfer(x, y) - brute_chamfer(x, y)) < 1e-12 * std::max(1.0, brute_chamfer(x, y)));
    CHECK(chamfer(x, y) == chamfer(y, x));
}

TEST_CASE("weighted chamfer: degenerate weights and the Eq-style oracle") {
    std::mt19937_64 rng(5);
    PointCloud predicted = random_cloud(rng, 80);
    PointCloud captured = predicted;  // coincident support

    // all weights zero: only the captured→predicted term remains (zero here)
    std::vector<double> zeros(predicted.size(), 0.0);
    CHECK(weighted_chamfer(zeros, predicted, captured) == 0.0);

    std::vector<double> ones(predicted.size(), 1.0);
    CHECK(weighted_chamfer(ones, predicted, captured) == 0.0);

    // random instance against a direct double loop
    const PointCloud cap = random_cloud(rng, 70);
    std::vector<double> weights(predicted.size());
    std::uniform_real_distribution<double> wd(0.0, 1.0);
    for (auto& w : weights) w = wd(rng);
    double expected = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        expected += weights[i] * brute_nearest(cap.positions, predicted.positions[i]).second;
    expected /= static_cast<double>(predicted.size());
    double second = 0.0;
    for (std::size_t j = 0; j < cap.size(); ++j)
        second += brute_nearest(predicted.positions, cap.positions[j]).second;
    expected += second / static_cast<double>(cap.size());
    CHECK(std::abs(weighted_chamfer(weights, predicted, cap) - expected) <
          1e-12 * std::max(1.0, expected));

    // all-ones weights reduce to the symmetric form
    CHECK(std::abs(weighted_chamfer(ones, predicted, cap) - chamfer(predicted, cap)) <
          1e-12 * std::max(1.0, chamfer(predicted, cap)));
}

TEST_CASE("hausdorff: identity, hand value, brute force, triangle inequality") {
    std::mt19937_64 rng(6);
    const PointCloud cloud = random_cloud(rng, 90);
    CHECK(hausdorff(cloud, cloud) == 0.0);

    PointCloud a, b;
    a.positions = {Vec3(0, 0, 0)};
    b.positions = {Vec3(3, 4, 0)};
    CHECK(hausdorff(a, b) == doctest::Approx(5.0).epsilon(1e-15));

    const PointCloud x = random_cloud(rng, 300);
    const PointCloud y = random_cloud(rng, 280);
    const PointCloud z = random_cloud(rng, 260);
    CHECK(std::abs(hausdorff(x, y) - brute_hausdorff(x, y)) < 1e-12);
    CHECK(hausdorff(x, y) == hausdorff(y, x));
    CHECK(hausdorff(x, z) <= hausdorff(x, y) + hausdorff(y, z) + 1e-12);
}

TEST_CASE("normal estimation on a plane") {
    std::mt19937_64 rng(7);
    PointCloud cloud;
    std::uniform_real_distribution<double> dist(0.0, 50.0);
    for (int i = 0; i < 200; ++i) cloud.positions.emplace_back(dist(rng), dist(rng), 2.0);
    const PointCloud with_normals = estimate_normals(cloud, 8, Vec3(0, 0, 1));
    for (const Vec3& n : with_normals.normals) {
        CHECK((n - Vec3(0, 0, 1)).norm() < 1e-6);
    }
}

TEST_CASE("normal estimation on a sphere with per-point hints") {
    std::mt19937_64 rng(8);
    PointCloud cloud;
    std::vector<Vec3> hints;
    const double radius = 100.0;
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < 50000; ++i) {
        Vec3 dir(gauss(rng), gauss(rng), gauss(rng));
        dir.normalize();
        cloud.positions.push_back(radius * dir);
        hints.push_back(dir);
    }
    const PointCloud with_normals = estimate_normals(cloud, 12, hints);
    for (std::size_t i = 0; i < with_normals.size(); ++i) {
        const double cos_angle = with_normals.normals[i].dot(hints[i]);
        CHECK(cos_angle >= std::cos(2.0 * M_PI / 180.0));
    }
}

TEST_CASE("normal estimation rejects out-of-range k") {
    std::mt19937_64 rng(9);
    const PointCloud cloud = random_cloud(rng, 20);
    CHECK_THROWS_AS(estimate_normals(cloud, 20, Vec3(0, 0, 1)), config_error);
    CHECK_THROWS_AS(estimate_normals(cloud, 2, Vec3(0, 0, 1)), config_error);
}

TEST_CASE("normal compatibility: aligned, antipodal and the brute-force oracle") {
    std::mt19937_64 rng(10);
    PointCloud cloud = random_cloud(rng, 60);
    cloud = estimate_normals(cloud, 6, Vec3(0, 0, 1));
    CHECK(std::abs(normal_compatibility(cloud, cloud)) < 1e-12);

    PointCloud flipped = cloud;
    for (Vec3& n : flipped.normals) n = -n;
    CHECK(normal_compatibility(cloud, flipped) ==
          doctest::Approx(2.0 * flipped.size()).epsilon(1e-12));

    PointCloud other = random_cloud(rng, 50);
    other = estimate_normals(other, 6, Vec3(0, 0, 1));
    double expected = 0.0;
    for (std::size_t j = 0; j < other.size(); ++j) {
        const int i = brute_nearest(cloud.positions, other.positions[j]).first;
        expected += 1.0 - other.normals[j].dot(cloud.normals[i]);
    }
    CHECK(std::abs(normal_compatibility(cloud, other) - expected) < 1e-12);

    PointCloud no_normals = random_cloud(rng, 10);
    CHECK_THROWS_AS(normal_compatibility(no_normals, cloud), config_error);
}

TEST_CASE("rigid_align_pairs recovers a known transform") {
    std::mt19937_64 rng(11);
    const PointCloud source = random_cloud(rng, 40);
    RigidTransform truth;
    truth.rotation = rotation_about(Vec3(0.3, 1.0, -0.2), 0.4);
    truth.translation = Vec3(4.0, -7.0, 2.0);
    std::vector<Vec3> mapped;
    for (const Vec3& p : source.positions) mapped.push_back(truth.apply(p));
    const RigidTransform got = rigid_align_pairs(source.positions, mapped);
    CHECK((got.rotation - truth.rotation).norm() < 1e-10);
    CHECK((got.translation - truth.translation).norm() < 1e-9);
}

TEST_CASE("icp: identity when target equals source") {
    std::mt19937_64 rng(12);
    const PointCloud cloud = random_cloud(rng, 200);
    const IcpResult result = icp_rigid(cloud, cloud, 10, 1e-12);
    CHECK((result.transform.rotation - Mat3::Identity()).norm() < 1e-9);
    CHECK(result.transform.translation.norm() < 1e-9);
}

TEST_CASE("icp recovers a moderate rigid motion on a structured cloud") {
    std::mt19937_64 rng(13);
    // structured surface-like cloud: a bumpy height field
    PointCloud target;
    std::uniform_real_distribution<double> dist(0.0, 100.0);
    for (int i = 0; i < 1200; ++i) {
        const double x = dist(rng), y = dist(rng);
        target.positions.emplace_back(x, y, 10.0 * std::sin(x * 0.08) * std::cos(y * 0.05));
    }
    RigidTransform truth;
    truth.rotation = rotation_about(Vec3(0.1, 0.2, 1.0), 15.0 * M_PI / 180.0);
    truth.translation = Vec3(3.0, -2.0, 5.0);
    PointCloud source;
    // source = truth⁻¹(target): icp should recover `truth`
    const RigidTransform inv = truth.inverse();
    for (const Vec3& p : target.positions) source.positions.push_back(inv.apply(p));

    const IcpResult result = icp_rigid(source, target, 50, 1e-12);
    CHECK((result.transform.rotation - truth.rotation).norm() < 1e-5);
    const double bbox = bounding_box(target.positions).diagonal();
    CHECK((result.transform.translation - truth.translation).norm() < 1e-3 * bbox);

    for (std::size_t k = 1; k < result.errors.size(); ++k)
        CHECK(result.errors[k] <= result.errors[k - 1] + 1e-12);
    const Mat3 rtr = result.transform.rotation.transpose() * result.transform.rotation;
    CHECK((rtr - Mat3::Identity()).norm() < 1e-9);
    CHECK(std::abs(result.transform.rotation.determinant() - 1.0) < 1e-9);
}

TEST_CASE("icp rejects degenerate sources") {
    PointCloud line, target;
    for (int i = 0; i < 10; ++i) line.positions.emplace_back(i, 0.0, 0.0);
    std::mt19937_64 rng(14);
    target = random_cloud(rng, 30);
    CHECK_THROWS_AS(icp_rigid(line, target, 5, 1e-9), config_error);

    PointCloud pair;
    pair.positions = {Vec3(0, 0, 0), Vec3(1, 1, 1)};
    CHECK_THROWS_AS(icp_rigid(pair, target, 5, 1e-9), config_error);
}

TEST_CASE("farthest point sampling is deterministic and spreads points") {
    std::mt19937_64 rng(15);
    const PointCloud cloud = random_cloud(rng, 400);
    const auto a = farthest_point_indices(cloud.positions, 50);
    const auto b = farthest_point_indices(cloud.positions, 50);
    CHECK(a == b);
    CHECK(a.size() == 50);
    // no duplicates
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(std::unique(sorted.begin(), sorted.end()) == sorted.end());
}

TEST_CASE("point cloud invariants are checked") {
    PointCloud cloud;
    cloud.positions = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
    cloud.normals = {Vec3(0, 0, 2.0), Vec3(0, 0, 1)};
    CHECK_THROWS_AS(cloud.validate(), config_error);
    cloud.normals = {Vec3(0, 0, 1), Vec3(0, 0, 1)};
    cloud.marker_ids = {3, 3};
    CHECK_THROWS_AS(cloud.validate(), config_error);
    cloud.marker_ids = {3, -1};
    CHECK_NOTHROW(cloud.validate());
}

TEST_CASE("ply round trip preserves geometry to print precision") {
    std::mt19937_64 rng(16);
    PointCloud cloud = random_cloud(rng, 150, 300.0);
    cloud = estimate_normals(cloud, 6, Vec3(0, 0, 1));
    cloud.marker_ids.resize(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) cloud.marker_ids[i] = static_cast<int>(i);

    const PointCloud loaded = io::ply_from_string(io::ply_to_string(cloud));
    REQUIRE(loaded.size() == cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        CHECK((loaded.positions[i] - cloud.positions[i]).norm() <
              1e-6 * std::max(1.0, cloud.positions[i].norm()));
        CHECK(std::abs(loaded.normals[i].norm() - 1.0) < 1e-9);
        CHECK((loaded.normals[i] - cloud.normals[i]).norm() < 1e-5);
        CHECK(loaded.marker_ids[i] == cloud.marker_ids[i]);
    }
}

TEST_CASE("ply rejects malformed documents") {
    CHECK_THROWS_AS(io::ply_from_string("not a ply"), data_error);
    CHECK_THROWS_AS(io::ply_from_string("ply\nformat ascii 1.0\nelement vertex 5\n"
                                        "property float x\nproperty float y\nproperty float z\n"
                                        "end_header\n0 0 0\n"),
                    data_error);  // truncated vertex data
}

TEST_CASE("ply positions-only round trip omits optional properties") {
    std::mt19937_64 rng(17);
    const PointCloud cloud = random_cloud(rng, 40);
    const PointCloud loaded = io::ply_from_string(io::ply_to_string(cloud));
    CHECK_FALSE(loaded.has_normals());
    CHECK_FALSE(loaded.has_markers());
    CHECK(loaded.size() == cloud.size());
}
