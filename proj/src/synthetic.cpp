#include "warpfield/synthetic.hpp"

#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "warpfield/errors.hpp"
#include "warpfield/util.hpp"

namespace warpfield::synth {

VirtualRobot VirtualRobot::membrane(int dofs) {
    if (dofs < 1) throw config_error("VirtualRobot: dofs must be >= 1");
    VirtualRobot robot;
    robot.dofs = dofs;
    const int rows = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(dofs))));
    const int cols = (dofs + rows - 1) / rows;
    for (int d = 0; d < dofs; ++d) {
        const int r = d / cols;
        const int c = d % cols;
        robot.chamber_centers.push_back({(r + 0.5) / rows, (c + 0.5) / cols});
    }
    robot.validate();
    return robot;
}

void VirtualRobot::validate() const {
    if (static_cast<int>(chamber_centers.size()) != dofs)
        throw config_error("VirtualRobot: chamber count does not match dofs");
    for (const auto& c : chamber_centers)
        if (c.u < 0.0 || c.u > 1.0 || c.v < 0.0 || c.v > 1.0)
            throw config_error("VirtualRobot: chamber centers must lie in the unit UV square");
    if (!(max_height > 0.0)) throw config_error("VirtualRobot: max_height must be > 0");
    if (!(bump_radius > 0.0)) throw config_error("VirtualRobot: bump_radius must be > 0");
}

namespace {

// (1 - s²)³ on s² < 1: compactly supported, C² at the boundary.
inline double bump(double s2) {
    if (s2 >= 1.0) return 0.0;
    const double t = 1.0 - s2;
    return t * t * t;
}

inline double bump_ds2(double s2) {
    if (s2 >= 1.0) return 0.0;
    const double t = 1.0 - s2;
    return -3.0 * t * t;
}

} // namespace

double VirtualRobot::height(double u, double v, const Actuation& a) const {
    if (a.size() != dofs) throw config_error("VirtualRobot: actuation length != dofs");
    double z = 0.0;
    const double r2 = bump_radius * bump_radius;
    for (int d = 0; d < dofs; ++d) {
        const double du = u - chamber_centers[d].u;
        const double dv = v - chamber_centers[d].v;
        z += a[d] * max_height * bump((du * du + dv * dv) / r2);
    }
    return z;
}

Vec3 VirtualRobot::position(const bspline::UvSample& s, const Actuation& a) const {
    return {s.u * base_size, s.v * base_size, height(s.u, s.v, a)};
}

Vec3 VirtualRobot::normal(const bspline::UvSample& s, const Actuation& a) const {
    if (a.size() != dofs) throw config_error("VirtualRobot: actuation length != dofs");
    const double r2 = bump_radius * bump_radius;
    double zu = 0.0, zv = 0.0;  // dz/du, dz/dv
    for (int d = 0; d < dofs; ++d) {
        const double du = s.u - chamber_centers[d].u;
        const double dv = s.v - chamber_centers[d].v;
        const double g = a[d] * max_height * bump_ds2((du * du + dv * dv) / r2) * 2.0 / r2;
        zu += g * du;
        zv += g * dv;
    }
    // tangents (B, 0, zu) and (0, B, zv) with B = base_size
    const Vec3 n(-base_size * zu, -base_size * zv, base_size * base_size);
    return n.normalized();
}

std::vector<SurfaceSample> simulate(const VirtualRobot& robot, const Actuation& a,
                                    const std::vector<bspline::UvSample>& uv_lattice) {
    robot.validate();
    std::vector<SurfaceSample> out;
    out.reserve(uv_lattice.size());
    for (const auto& uv : uv_lattice)
        out.push_back({uv, robot.position(uv, a), robot.normal(uv, a)});
    return out;
}

RealityGap RealityGap::identity(const VirtualRobot& robot, int n_kernels) {
    RealityGap gap;
    gap.kernel_cfg = rbf::WarpConfig::regular(n_kernels);
    gap.gap_gamma = rbf::WarpCoefficients::identity(n_kernels);
    gap.rest_kernels.centers.reserve(n_kernels);
    const Actuation rest = Actuation::Zero(robot.dofs);
    for (const auto& uv : gap.kernel_cfg.kernel_uv)
        gap.rest_kernels.centers.push_back(robot.position(uv, rest));
    return gap;
}

namespace {

rbf::KernelSet kernels_for(const RealityGap& gap, const VirtualRobot& robot, const Actuation& a) {
    if (!gap.track_surface) return gap.rest_kernels;
    rbf::KernelSet set;
    set.centers.reserve(gap.kernel_cfg.kernel_uv.size());
    for (const auto& uv : gap.kernel_cfg.kernel_uv) set.centers.push_back(robot.position(uv, a));
    return set;
}

// Removes the components of each beta coordinate along span{1, qx, qy, qz}
// so the compatibility sums vanish exactly on the given kernels.
void project_compatible(std::vector<Vec3>& betas, const rbf::KernelSet& kernels) {
    const int n = static_cast<int>(betas.size());
    Eigen::MatrixXd constraints(n, 4);
    for (int i = 0; i < n; ++i) {
        constraints(i, 0) = 1.0;
        constraints(i, 1) = kernels.centers[i].x();
        constraints(i, 2) = kernels.centers[i].y();
        constraints(i, 3) = kernels.centers[i].z();
    }
    const Eigen::HouseholderQR<Eigen::MatrixXd> qr(constraints);
    const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(n, 4);
    Eigen::MatrixXd b(n, 3);
    for (int i = 0; i < n; ++i) b.row(i) = betas[i].transpose();
    b -= q * (q.transpose() * b);
    for (int i = 0; i < n; ++i) betas[i] = b.row(i).transpose();
}

RealityGap random_gap(const VirtualRobot& robot, const rbf::WarpConfig& kernel_cfg,
                      double target_mean_displacement, std::uint64_t seed) {
    RealityGap gap;
    gap.kernel_cfg = kernel_cfg;
    const Actuation rest = Actuation::Zero(robot.dofs);
    gap.rest_kernels.centers.reserve(kernel_cfg.kernel_uv.size());
    for (const auto& uv : kernel_cfg.kernel_uv)
        gap.rest_kernels.centers.push_back(robot.position(uv, rest));

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    rbf::WarpCoefficients gamma = rbf::WarpCoefficients::identity(kernel_cfg.n_kernels);
    gamma.alpha0 = Vec3(unit(rng), unit(rng), unit(rng));
    Mat3 affine_noise;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) affine_noise(r, c) = unit(rng);
    gamma.affine += 2e-3 * affine_noise;
    for (auto& beta : gamma.betas) beta = 4.0 * Vec3(unit(rng), unit(rng), unit(rng));
    project_compatible(gamma.betas, gap.rest_kernels);
    gap.gap_gamma = gamma;
    calibrate_gap_scale(gap, robot, target_mean_displacement);
    return gap;
}

} // namespace

RealityGap make_representable_gap(const VirtualRobot& robot, const rbf::WarpConfig& kernel_cfg,
                                  double target_mean_displacement, std::uint64_t seed) {
    return random_gap(robot, kernel_cfg, target_mean_displacement, seed);
}

RealityGap make_highfreq_gap(const VirtualRobot& robot, int kernels_per_side,
                             double kernel_width, double target_mean_displacement,
                             std::uint64_t seed) {
    const rbf::WarpConfig cfg =
        rbf::WarpConfig::regular(kernels_per_side * kernels_per_side, kernel_width);
    return random_gap(robot, cfg, target_mean_displacement, seed);
}

double mean_gap_displacement(const RealityGap& gap, const VirtualRobot& robot) {
    const Actuation rest = Actuation::Zero(robot.dofs);
    const auto lattice = uv_grid(32, 32);
    double total = 0.0;
    for (const auto& uv : lattice) {
        const Vec3 p = robot.position(uv, rest);
        total += (rbf::warp_point(gap.gap_gamma, gap.rest_kernels, gap.kernel_cfg, p) - p).norm();
    }
    return total / static_cast<double>(lattice.size());
}

void calibrate_gap_scale(RealityGap& gap, const VirtualRobot& robot,
                         double target_mean_displacement) {
    if (!(target_mean_displacement >= 0.0))
        throw config_error("calibrate_gap_scale: target must be >= 0");
    const rbf::WarpCoefficients base = gap.gap_gamma;
    const auto scaled = [&](double s) {
        rbf::WarpCoefficients g = base;
        g.alpha0 *= s;
        g.affine = Mat3::Identity() + s * (base.affine - Mat3::Identity());
        for (auto& beta : g.betas) beta *= s;
        return g;
    };
    const auto mean_at = [&](double s) {
        gap.gap_gamma = scaled(s);
        return mean_gap_displacement(gap, robot);
    };
    double hi = 1.0;
    int guard = 0;
    while (mean_at(hi) < target_mean_displacement && guard++ < 60) hi *= 2.0;
    double lo = 0.0;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        const double m = mean_at(mid);
        if (m < target_mean_displacement)
            lo = mid;
        else
            hi = mid;
        if (hi - lo <= 1e-9 * hi) break;
    }
    const double s = 0.5 * (lo + hi);
    gap.gap_gamma = scaled(s);
}

std::vector<SurfaceSample> realize(const VirtualRobot& robot, const RealityGap& gap,
                                   const Actuation& a, const std::vector<SurfaceSample>& sim,
                                   std::uint64_t seed, bool with_noise) {
    const rbf::KernelSet kernels = kernels_for(gap, robot, a);
    const double scale = 1.0 + gap.actuation_coupling * (a.size() > 0 ? a.mean() : 0.0);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<SurfaceSample> out;
    out.reserve(sim.size());
    for (const SurfaceSample& s : sim) {
        SurfaceSample r = s;
        const Vec3 warped = rbf::warp_point(gap.gap_gamma, kernels, gap.kernel_cfg, s.position);
        r.position = s.position + scale * (warped - s.position);

        // normals via the Jacobian of p ↦ p + scale·(Φ(p) − p)
        const Mat3 jac = (1.0 - scale) * Mat3::Identity() +
                         scale * rbf::jacobian_wrt_point(gap.gap_gamma, kernels, gap.kernel_cfg,
                                                         s.position);
        // build tangents from the normal's null space on the analytic surface
        const Vec3 t1 = s.normal.unitOrthogonal();
        const Vec3 t2 = s.normal.cross(t1);
        Vec3 n = (jac * t1).cross(jac * t2);
        const double len = n.norm();
        r.normal = len > 0.0 ? Vec3(n / len) : s.normal;
        if (r.normal.dot(s.normal) < 0.0) r.normal = -r.normal;

        if (with_noise && gap.noise_sigma > 0.0)
            r.position += gap.noise_sigma * Vec3(noise(rng), noise(rng), noise(rng));
        out.push_back(r);
    }
    return out;
}

ScanResult scan(const std::vector<SurfaceSample>& realized, const CaptureSpec& spec,
                std::uint64_t frame_seed) {
    if (spec.mode != CaptureSpec::Mode::Scan) throw config_error("scan: capture mode is not scan");
    if (realized.empty()) throw config_error("scan: no input samples");
    std::mt19937_64 rng(derive_seed(spec.seed, frame_seed));
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    std::vector<int> kept;
    kept.reserve(realized.size());
    for (std::size_t i = 0; i < realized.size(); ++i) {
        bool deleted = false;
        for (const OcclusionPatch& patch : spec.occlusion_patches) {
            const double du = realized[i].uv.u - patch.center.u;
            const double dv = realized[i].uv.v - patch.center.v;
            if (du * du + dv * dv <= patch.radius * patch.radius && coin(rng) < patch.probability) {
                deleted = true;
                break;
            }
        }
        if (!deleted) kept.push_back(static_cast<int>(i));
    }
    ScanResult result;
    result.deleted_fraction =
        1.0 - static_cast<double>(kept.size()) / static_cast<double>(realized.size());
    if (kept.empty()) return result;

    std::vector<Vec3> kept_positions;
    kept_positions.reserve(kept.size());
    for (int idx : kept) kept_positions.push_back(realized[idx].position);
    std::vector<int> chosen;
    if (static_cast<int>(kept.size()) > spec.sample_count) {
        for (int local : align::farthest_point_indices(kept_positions, spec.sample_count))
            chosen.push_back(kept[local]);
    } else {
        chosen = kept;
    }
    std::shuffle(chosen.begin(), chosen.end(), rng);

    for (int idx : chosen) {
        result.cloud.positions.push_back(realized[idx].position);
        result.cloud.normals.push_back(realized[idx].normal);
    }
    return result;
}

MocapResult mocap(const VirtualRobot& robot, const RealityGap& gap, const Actuation& a,
                  const CaptureSpec& spec, std::uint64_t frame_seed) {
    if (spec.mode != CaptureSpec::Mode::Markers)
        throw config_error("mocap: capture mode is not markers");
    if (spec.marker_uv.empty()) throw config_error("mocap: no marker UV addresses");
    std::mt19937_64 rng(derive_seed(spec.seed, frame_seed));
    std::uniform_real_distribution<double> coin(0.0, 1.0);

    const std::vector<SurfaceSample> sim = simulate(robot, a, spec.marker_uv);
    const std::vector<SurfaceSample> realized =
        realize(robot, gap, a, sim, derive_seed(spec.seed, frame_seed ^ 0x5ca1ab1eULL), true);

    MocapResult result;
    for (std::size_t m = 0; m < realized.size(); ++m) {
        if (coin(rng) < spec.dropout_probability) {
            result.missing_ids.push_back(static_cast<int>(m));
            continue;
        }
        result.cloud.positions.push_back(realized[m].position);
        result.cloud.marker_ids.push_back(static_cast<int>(m));
    }
    return result;
}

std::vector<bspline::UvSample> uv_grid(int rows, int cols) {
    if (rows < 1 || cols < 1) throw config_error("uv_grid: rows/cols must be >= 1");
    std::vector<bspline::UvSample> lattice;
    lattice.reserve(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            lattice.push_back({(r + 0.5) / rows, (c + 0.5) / cols});
    return lattice;
}

std::vector<bspline::UvSample> uv_lattice(int count) {
    if (count < 1) throw config_error("uv_lattice: count must be >= 1");
    const int rows = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(count)))));
    const int cols = (count + rows - 1) / rows;
    std::vector<bspline::UvSample> lattice = uv_grid(rows, cols);
    lattice.resize(count);
    return lattice;
}

} // namespace warpfield::synth
