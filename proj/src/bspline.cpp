#include "warpfield/bspline.hpp"

#include <algorithm>
#include <cmath>

#include "warpfield/errors.hpp"

namespace warpfield::bspline {

namespace {

std::vector<double> clamped_uniform_knots(int m, int order) {
    if (order < 1) throw config_error("bspline: order must be >= 1");
    if (m < order) throw config_error("bspline: control count must be >= order");
    std::vector<double> knots(static_cast<std::size_t>(m) + order);
    const int interior = m - order;
    for (int i = 0; i < order; ++i) knots[i] = 0.0;
    for (int i = 0; i < interior; ++i)
        knots[order + i] = static_cast<double>(i + 1) / (interior + 1);
    for (int i = 0; i < order; ++i) knots[m + i] = 1.0;
    return knots;
}

void check_t(const std::vector<double>& knots, double t) {
    if (!(t >= knots.front() && t <= knots.back()))
        throw config_error("bspline: parameter outside knot range");
}

// Index of the knot span containing t: knots[s] <= t < knots[s+1], with the
// final span treated as right-closed.
int find_span(const std::vector<double>& knots, int order, double t) {
    const int n_basis = static_cast<int>(knots.size()) - order;
    const int last = n_basis - 1;  // last valid span start
    if (t >= knots[n_basis]) return last;
    const auto it = std::upper_bound(knots.begin() + (order - 1), knots.begin() + n_basis + 1, t);
    return static_cast<int>(it - knots.begin()) - 1;
}

// Cox–de Boor recursion; 0/0 terms are dropped.
double basis_recursive(const std::vector<double>& knots, int i, int k, double t) {
    if (k == 1) {
        if (knots[i] <= t && t < knots[i + 1]) return 1.0;
        // close the final nonempty span so the basis partitions unity at t = 1
        if (t == knots.back() && knots[i] < knots[i + 1] && knots[i + 1] == knots.back())
            return 1.0;
        return 0.0;
    }
    double result = 0.0;
    const double d_left = knots[i + k - 1] - knots[i];
    if (d_left > 0.0) result += (t - knots[i]) / d_left * basis_recursive(knots, i, k - 1, t);
    const double d_right = knots[i + k] - knots[i + 1];
    if (d_right > 0.0)
        result += (knots[i + k] - t) / d_right * basis_recursive(knots, i + 1, k - 1, t);
    return result;
}

// Triangular evaluation of the `ord` nonzero basis functions of a given order
// at span s (ord may be smaller than the basis order, sharing the same knots).
void triangular_row(const std::vector<double>& knots, int span, int ord, double t, double* row) {
    std::vector<double> left(ord), right(ord);
    row[0] = 1.0;
    for (int j = 1; j < ord; ++j) {
        left[j] = t - knots[span + 1 - j];
        right[j] = knots[span + j] - t;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            const double denom = right[r + 1] + left[j - r];
            const double temp = denom != 0.0 ? row[r] / denom : 0.0;
            row[r] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        row[j] = saved;
    }
}

} // namespace

BSplineBasis BSplineBasis::clamped_uniform(int m_u, int m_v, int order_u, int order_v) {
    BSplineBasis basis;
    basis.order_u = order_u;
    basis.order_v = order_v;
    basis.knots_u = clamped_uniform_knots(m_u, order_u);
    basis.knots_v = clamped_uniform_knots(m_v, order_v);
    return basis;
}

ControlGrid ControlGrid::zero(int m_u, int m_v) {
    ControlGrid grid;
    grid.m_u = m_u;
    grid.m_v = m_v;
    grid.points.assign(static_cast<std::size_t>(m_u) * m_v, Vec3::Zero());
    return grid;
}

Eigen::VectorXd ControlGrid::to_vector() const {
    Eigen::VectorXd v(3 * static_cast<Eigen::Index>(points.size()));
    for (std::size_t k = 0; k < points.size(); ++k) v.segment<3>(3 * k) = points[k];
    return v;
}

ControlGrid ControlGrid::from_vector(int m_u, int m_v, const Eigen::VectorXd& v) {
    if (v.size() != 3 * static_cast<Eigen::Index>(m_u) * m_v)
        throw config_error("ControlGrid: vector length does not match grid size");
    ControlGrid grid = zero(m_u, m_v);
    for (std::size_t k = 0; k < grid.points.size(); ++k) grid.points[k] = v.segment<3>(3 * k);
    return grid;
}

double basis_value(const BSplineBasis& basis, Axis axis, int index, double t) {
    const auto& knots = basis.knots(axis);
    if (index < 0 || index >= basis.count(axis))
        throw config_error("basis_value: index out of range");
    check_t(knots, t);
    return basis_recursive(knots, index, basis.order(axis), t);
}

BasisRow nonzero_row(const BSplineBasis& basis, Axis axis, double t) {
    const auto& knots = basis.knots(axis);
    const int ord = basis.order(axis);
    check_t(knots, t);
    const int span = find_span(knots, ord, t);
    BasisRow row;
    row.first = span - ord + 1;
    row.values.resize(ord);
    triangular_row(knots, span, ord, t, row.values.data());
    return row;
}

BasisRow nonzero_row_derivative(const BSplineBasis& basis, Axis axis, double t) {
    const auto& knots = basis.knots(axis);
    const int ord = basis.order(axis);
    check_t(knots, t);
    const int span = find_span(knots, ord, t);

    BasisRow row;
    row.first = span - ord + 1;
    row.values = Eigen::VectorXd::Zero(ord);
    if (ord == 1) return row;  // piecewise-constant basis has zero derivative a.e.

    // N'_{i,k} = (k-1)·( N_{i,k-1}/(τ_{i+k-1}-τ_i) − N_{i+1,k-1}/(τ_{i+k}-τ_{i+1}) )
    std::vector<double> lower(ord - 1);
    triangular_row(knots, span, ord - 1, t, lower.data());
    const int lower_first = span - ord + 2;
    const auto lower_at = [&](int i) {
        const int r = i - lower_first;
        return (r >= 0 && r < ord - 1) ? lower[r] : 0.0;
    };
    for (int r = 0; r < ord; ++r) {
        const int i = row.first + r;
        const double d1 = knots[i + ord - 1] - knots[i];
        const double d2 = knots[i + ord] - knots[i + 1];
        double value = 0.0;
        if (d1 > 0.0) value += lower_at(i) / d1;
        if (d2 > 0.0) value -= lower_at(i + 1) / d2;
        row.values[r] = (ord - 1) * value;
    }
    return row;
}

Vec3 WeightBlock::apply(const ControlGrid& grid) const {
    Vec3 p = Vec3::Zero();
    for (int a = 0; a < w.rows(); ++a)
        for (int b = 0; b < w.cols(); ++b) p += w(a, b) * grid.at(i0 + a, j0 + b);
    return p;
}

void WeightBlock::scatter(const Vec3& gradient, ControlGrid& into) const {
    for (int a = 0; a < w.rows(); ++a)
        for (int b = 0; b < w.cols(); ++b) into.at(i0 + a, j0 + b) += w(a, b) * gradient;
}

void WeightBlock::scatter(const Vec3& gradient, Eigen::VectorXd& into, int m_v) const {
    for (int a = 0; a < w.rows(); ++a)
        for (int b = 0; b < w.cols(); ++b) {
            const Eigen::Index base = 3 * (static_cast<Eigen::Index>(i0 + a) * m_v + (j0 + b));
            into.segment<3>(base) += w(a, b) * gradient;
        }
}

namespace {

WeightBlock outer_block(const BasisRow& row_u, const BasisRow& row_v) {
    WeightBlock block;
    block.i0 = row_u.first;
    block.j0 = row_v.first;
    block.w = row_u.values * row_v.values.transpose();
    return block;
}

} // namespace

WeightBlock eval_weights(const BSplineBasis& basis, const UvSample& s) {
    return outer_block(nonzero_row(basis, Axis::U, s.u), nonzero_row(basis, Axis::V, s.v));
}

WeightBlock eval_weights_du(const BSplineBasis& basis, const UvSample& s) {
    return outer_block(nonzero_row_derivative(basis, Axis::U, s.u),
                       nonzero_row(basis, Axis::V, s.v));
}

WeightBlock eval_weights_dv(const BSplineBasis& basis, const UvSample& s) {
    return outer_block(nonzero_row(basis, Axis::U, s.u),
                       nonzero_row_derivative(basis, Axis::V, s.v));
}

namespace {

void check_grid(const ControlGrid& grid, const BSplineBasis& basis) {
    if (grid.m_u != basis.count(Axis::U) || grid.m_v != basis.count(Axis::V))
        throw config_error("bspline: grid dimensions inconsistent with basis knot counts");
    if (grid.points.size() != static_cast<std::size_t>(grid.m_u) * grid.m_v)
        throw config_error("bspline: grid point storage inconsistent with dimensions");
}

} // namespace

Vec3 surface_eval(const ControlGrid& grid, const BSplineBasis& basis, const UvSample& s) {
    check_grid(grid, basis);
    return eval_weights(basis, s).apply(grid);
}

Vec3 SurfaceFrame::unit_normal() const {
    const Vec3 n = tangent_u.cross(tangent_v);
    const double len = n.norm();
    return len > 0.0 ? Vec3(n / len) : Vec3(0, 0, 1);
}

SurfaceFrame surface_frame(const ControlGrid& grid, const BSplineBasis& basis, const UvSample& s) {
    check_grid(grid, basis);
    SurfaceFrame frame;
    frame.position = eval_weights(basis, s).apply(grid);
    frame.tangent_u = eval_weights_du(basis, s).apply(grid);
    frame.tangent_v = eval_weights_dv(basis, s).apply(grid);
    return frame;
}

namespace {

struct NormalSystem {
    Eigen::MatrixXd m;                 // n × n normal matrix (with ridge)
    Eigen::MatrixXd rhs;               // n × 3
    std::vector<WeightBlock> blocks;   // per sample
};

NormalSystem assemble(std::span<const std::pair<UvSample, Vec3>> samples,
                      const BSplineBasis& basis, int m_u, int m_v, double ridge) {
    const int n = m_u * m_v;
    NormalSystem sys;
    sys.m = Eigen::MatrixXd::Zero(n, n);
    sys.rhs = Eigen::MatrixXd::Zero(n, 3);
    sys.blocks.reserve(samples.size());
    for (const auto& [uv, p] : samples) {
        WeightBlock block = eval_weights(basis, uv);
        const int ou = static_cast<int>(block.w.rows());
        const int ov = static_cast<int>(block.w.cols());
        for (int a = 0; a < ou; ++a)
            for (int b = 0; b < ov; ++b) {
                const int row = (block.i0 + a) * m_v + (block.j0 + b);
                const double wa = block.w(a, b);
                if (wa == 0.0) continue;
                sys.rhs.row(row) += wa * p.transpose();
                for (int a2 = 0; a2 < ou; ++a2)
                    for (int b2 = 0; b2 < ov; ++b2) {
                        const int col = (block.i0 + a2) * m_v + (block.j0 + b2);
                        sys.m(row, col) += wa * block.w(a2, b2);
                    }
            }
        sys.blocks.push_back(std::move(block));
    }
    if (ridge > 0.0) sys.m.diagonal().array() += ridge;
    return sys;
}

void check_solvable(const Eigen::LDLT<Eigen::MatrixXd>& ldlt) {
    const auto d = ldlt.vectorD();
    const double d_max = d.maxCoeff();
    const double d_min = d.minCoeff();
    if (ldlt.info() != Eigen::Success || d_max <= 0.0 || d_min <= 1e-12 * d_max)
        throw numeric_error(
            "surface_fit: normal system is rank deficient; refit with ridge > 0");
}

FitResult finish_fit(const NormalSystem& sys, const Eigen::MatrixXd& solution,
                     std::span<const std::pair<UvSample, Vec3>> samples, int m_u, int m_v) {
    FitResult result;
    result.grid = ControlGrid::zero(m_u, m_v);
    for (int i = 0; i < m_u; ++i)
        for (int j = 0; j < m_v; ++j)
            result.grid.at(i, j) = solution.row(i * m_v + j).transpose();

    double sq_sum = 0.0;
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const double err = (sys.blocks[k].apply(result.grid) - samples[k].second).norm();
        sq_sum += err * err;
        result.residual_max = std::max(result.residual_max, err);
    }
    if (!samples.empty()) result.residual_rms = std::sqrt(sq_sum / samples.size());
    return result;
}

} // namespace

FitResult surface_fit(std::span<const std::pair<UvSample, Vec3>> samples, int m_u, int m_v,
                      double ridge, int order_u, int order_v) {
    if (ridge < 0.0) throw config_error("surface_fit: ridge must be >= 0");
    if (samples.empty()) throw config_error("surface_fit: no samples");
    const BSplineBasis basis = BSplineBasis::clamped_uniform(m_u, m_v, order_u, order_v);
    NormalSystem sys = assemble(samples, basis, m_u, m_v, ridge);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sys.m);
    if (ridge == 0.0) check_solvable(ldlt);
    return finish_fit(sys, ldlt.solve(sys.rhs), samples, m_u, m_v);
}

FitResult surface_fit_warm(std::span<const std::pair<UvSample, Vec3>> samples,
                           const ControlGrid& initial, double ridge, int order_u, int order_v) {
    if (ridge < 0.0) throw config_error("surface_fit_warm: ridge must be >= 0");
    if (samples.empty()) throw config_error("surface_fit_warm: no samples");
    const int m_u = initial.m_u, m_v = initial.m_v;
    const BSplineBasis basis = BSplineBasis::clamped_uniform(m_u, m_v, order_u, order_v);
    NormalSystem sys = assemble(samples, basis, m_u, m_v, ridge);
    if (ridge > 0.0) {
        for (int i = 0; i < m_u; ++i)
            for (int j = 0; j < m_v; ++j)
                sys.rhs.row(i * m_v + j) += ridge * initial.at(i, j).transpose();
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(sys.m);
    if (ridge == 0.0) check_solvable(ldlt);
    return finish_fit(sys, ldlt.solve(sys.rhs), samples, m_u, m_v);
}

LatticeFitter::LatticeFitter(BSplineBasis basis, std::vector<UvSample> uv, double ridge)
    : basis_(std::move(basis)), uv_(std::move(uv)) {
    if (ridge < 0.0) throw config_error("LatticeFitter: ridge must be >= 0");
    if (uv_.empty()) throw config_error("LatticeFitter: empty UV lattice");
    const int m_u = basis_.count(Axis::U);
    const int m_v = basis_.count(Axis::V);
    const int n = m_u * m_v;
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n, n);
    blocks_.reserve(uv_.size());
    for (const UvSample& s : uv_) {
        WeightBlock block = eval_weights(basis_, s);
        const int ou = static_cast<int>(block.w.rows());
        const int ov = static_cast<int>(block.w.cols());
        for (int a = 0; a < ou; ++a)
            for (int b = 0; b < ov; ++b) {
                const int row = (block.i0 + a) * m_v + (block.j0 + b);
                for (int a2 = 0; a2 < ou; ++a2)
                    for (int b2 = 0; b2 < ov; ++b2)
                        m(row, (block.i0 + a2) * m_v + (block.j0 + b2)) +=
                            block.w(a, b) * block.w(a2, b2);
            }
        blocks_.push_back(std::move(block));
    }
    if (ridge > 0.0) m.diagonal().array() += ridge;
    factorization_.compute(m);
    if (ridge == 0.0) check_solvable(factorization_);
}

FitResult LatticeFitter::fit(std::span<const Vec3> positions) const {
    if (positions.size() != uv_.size())
        throw config_error("LatticeFitter: position count does not match UV lattice");
    const int m_u = basis_.count(Axis::U);
    const int m_v = basis_.count(Axis::V);
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m_u * m_v, 3);
    for (std::size_t k = 0; k < positions.size(); ++k) {
        const WeightBlock& block = blocks_[k];
        for (int a = 0; a < block.w.rows(); ++a)
            for (int b = 0; b < block.w.cols(); ++b)
                rhs.row((block.i0 + a) * m_v + (block.j0 + b)) +=
                    block.w(a, b) * positions[k].transpose();
    }
    const Eigen::MatrixXd solution = factorization_.solve(rhs);

    FitResult result;
    result.grid = ControlGrid::zero(m_u, m_v);
    for (int i = 0; i < m_u; ++i)
        for (int j = 0; j < m_v; ++j)
            result.grid.at(i, j) = solution.row(i * m_v + j).transpose();
    double sq_sum = 0.0;
    for (std::size_t k = 0; k < positions.size(); ++k) {
        const double err = (blocks_[k].apply(result.grid) - positions[k]).norm();
        sq_sum += err * err;
        result.residual_max = std::max(result.residual_max, err);
    }
    result.residual_rms = std::sqrt(sq_sum / positions.size());
    return result;
}

} // namespace warpfield::bspline
