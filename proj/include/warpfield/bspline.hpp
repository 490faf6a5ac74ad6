#pragma once

#include <Eigen/Core>
#include <Eigen/Dense>
#include <span>
#include <utility>
#include <vector>

#include "warpfield/geometry.hpp"

namespace warpfield::bspline {

enum class Axis { U, V };

/// Tensor-product B-spline basis with clamped knot vectors.
/// order = degree + 1; cubic surfaces use order 4.
struct BSplineBasis {
    int order_u = 4;
    int order_v = 4;
    std::vector<double> knots_u;
    std::vector<double> knots_v;

    /// Clamped uniform knots on [0,1] for a grid of m_u × m_v control points.
    static BSplineBasis clamped_uniform(int m_u, int m_v, int order_u = 4, int order_v = 4);

    int order(Axis a) const { return a == Axis::U ? order_u : order_v; }
    const std::vector<double>& knots(Axis a) const { return a == Axis::U ? knots_u : knots_v; }
    /// Number of basis functions along an axis.
    int count(Axis a) const { return static_cast<int>(knots(a).size()) - order(a); }
};

/// Lattice of 3D control points, row-major in (i, j) = (u index, v index).
struct ControlGrid {
    int m_u = 0;
    int m_v = 0;
    std::vector<Vec3> points;

    static ControlGrid zero(int m_u, int m_v);

    Vec3& at(int i, int j) { return points[static_cast<std::size_t>(i) * m_v + j]; }
    const Vec3& at(int i, int j) const { return points[static_cast<std::size_t>(i) * m_v + j]; }

    /// Flattened as [i][j][xyz], matching the serialized layout.
    Eigen::VectorXd to_vector() const;
    static ControlGrid from_vector(int m_u, int m_v, const Eigen::VectorXd& v);
};

struct UvSample {
    double u = 0.0;
    double v = 0.0;
};

/// Single basis function N_{index,order}(t) by Cox–de Boor recursion.
/// Throws config_error for an out-of-range index or parameter.
double basis_value(const BSplineBasis& basis, Axis axis, int index, double t);

/// The `order` consecutive basis values that can be nonzero at t.
struct BasisRow {
    int first = 0;
    Eigen::VectorXd values;
};

BasisRow nonzero_row(const BSplineBasis& basis, Axis axis, double t);
BasisRow nonzero_row_derivative(const BSplineBasis& basis, Axis axis, double t);

/// Dense block of surface weights N_{i,k}(u)·N_{j,l}(v) over the
/// order_u × order_v control points active at one parameter point. This is
/// the derivative of the surface point with respect to each control point,
/// up to the 3×3 identity factor.
struct WeightBlock {
    int i0 = 0;
    int j0 = 0;
    Eigen::MatrixXd w;  // order_u × order_v

    double sum() const { return w.sum(); }
    Vec3 apply(const ControlGrid& grid) const;
    /// Adjoint of apply: scatters an output-space gradient onto the grid.
    void scatter(const Vec3& gradient, ControlGrid& into) const;
    /// Same scatter onto a flattened [i][j][xyz] gradient vector.
    void scatter(const Vec3& gradient, Eigen::VectorXd& into, int m_v) const;
};

WeightBlock eval_weights(const BSplineBasis& basis, const UvSample& s);
/// Weights of the u- and v-partial derivatives (surface tangents).
WeightBlock eval_weights_du(const BSplineBasis& basis, const UvSample& s);
WeightBlock eval_weights_dv(const BSplineBasis& basis, const UvSample& s);

Vec3 surface_eval(const ControlGrid& grid, const BSplineBasis& basis, const UvSample& s);

/// Position plus both parametric tangents at one parameter point.
struct SurfaceFrame {
    Vec3 position;
    Vec3 tangent_u;
    Vec3 tangent_v;

    Vec3 unit_normal() const;
};

SurfaceFrame surface_frame(const ControlGrid& grid, const BSplineBasis& basis, const UvSample& s);

struct FitResult {
    ControlGrid grid;
    double residual_rms = 0.0;
    double residual_max = 0.0;
};

/// Least-squares fit of a control grid to (uv, position) samples, minimizing
/// Σ‖B(u,v,S) − p‖² + ridge·‖S‖². ridge = 0 requires a full-rank system and
/// throws numeric_error suggesting ridge > 0 otherwise.
FitResult surface_fit(std::span<const std::pair<UvSample, Vec3>> samples, int m_u, int m_v,
                      double ridge, int order_u = 4, int order_v = 4);

/// Warm-start variant: the ridge term pulls toward `initial` instead of zero,
/// minimizing Σ‖B(u,v,S) − p‖² + ridge·‖S − initial‖².
FitResult surface_fit_warm(std::span<const std::pair<UvSample, Vec3>> samples,
                           const ControlGrid& initial, double ridge, int order_u = 4,
                           int order_v = 4);

/// Reusable fitter for many point sets sampled on one fixed UV lattice;
/// factorizes the normal matrix once.
class LatticeFitter {
public:
    LatticeFitter(BSplineBasis basis, std::vector<UvSample> uv, double ridge);

    /// positions[k] corresponds to uv()[k].
    FitResult fit(std::span<const Vec3> positions) const;

    const BSplineBasis& basis() const { return basis_; }
    const std::vector<UvSample>& uv() const { return uv_; }

private:
    BSplineBasis basis_;
    std::vector<UvSample> uv_;
    std::vector<WeightBlock> blocks_;
    Eigen::LDLT<Eigen::MatrixXd> factorization_;
};

} // namespace warpfield::bspline
