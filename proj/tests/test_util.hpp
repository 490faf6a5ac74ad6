#pragma once

#include <Eigen/Core>
#include <functional>
#include <random>

namespace test_util {

/// Central finite difference of a scalar function.
inline double fd_derivative(const std::function<double(double)>& f, double x, double h) {
    return (f(x + h) - f(x - h)) / (2.0 * h);
}

inline double rel_error(double got, double want) {
    const double denom = std::max({std::abs(got), std::abs(want), 1e-12});
    return std::abs(got - want) / denom;
}

/// Relative error with an absolute floor: tiny true values compare absolutely.
inline double rel_error_floored(double got, double want, double floor_scale) {
    if (std::abs(want) < floor_scale) return std::abs(got - want) / floor_scale;
    return std::abs(got - want) / std::abs(want);
}

inline Eigen::VectorXd random_vector(std::mt19937_64& rng, int n, double lo = -1.0,
                                     double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

inline Eigen::Vector3d random_vec3(std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> dist(lo, hi);
    return {dist(rng), dist(rng), dist(rng)};
}

} // namespace test_util
