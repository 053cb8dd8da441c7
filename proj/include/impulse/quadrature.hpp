#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "impulse/types.hpp"

namespace impulse::quadrature {

/// Composite Simpson rule on [a, b] with an even number of panels of width <= max_step.
template <typename F>
real simpson(F&& f, real a, real b, real max_step) {
    if (!(b > a)) return 0.0;
    auto n = static_cast<std::size_t>(std::ceil((b - a) / max_step));
    n = std::max<std::size_t>(2, n + (n % 2));
    const real step = (b - a) / static_cast<real>(n);
    real odd = 0.0, even = 0.0;
    for (std::size_t i = 1; i < n; ++i) {
        const real v = f(a + step * static_cast<real>(i));
        (i % 2 ? odd : even) += v;
    }
    return step / 3.0 * (f(a) + 4.0 * odd + 2.0 * even + f(b));
}

/// Horizon beyond which e^{-alpha t} is below 1e-17 relative to 1.
inline real discount_horizon(real alpha) { return 40.0 / alpha; }

/// Integral of e^{-alpha t} c over [0, theta] for a constant rate c (theta may be +inf).
inline real discounted_constant(real c, real alpha, real theta) {
    if (c == 0.0) return 0.0;
    if (std::isinf(theta)) return c / alpha;
    return c * (-std::expm1(-alpha * theta)) / alpha;
}

} // namespace impulse::quadrature
