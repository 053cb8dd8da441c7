#pragma once

#include <cmath>

#include "impulse/types.hpp"

namespace impulse::roots {

struct Root {
    real x;
    real residual;
};

/**
 * Bisection on a bracket [lo, hi] with a sign change. Stops once
 * |f(mid)| <= tolerance or the bracket cannot be halved further, and
 * returns the probe with the smallest residual seen.
 */
template <typename F>
Root bisect(F&& f, real lo, real hi, real tolerance) {
    real flo = f(lo), fhi = f(hi);
    if (flo == 0.0) return {lo, 0.0};
    if (fhi == 0.0) return {hi, 0.0};
    if ((flo > 0.0) == (fhi > 0.0)) throw NumericalError("bisect: interval does not bracket a root");
    Root best{std::abs(flo) < std::abs(fhi) ? lo : hi, std::min(std::abs(flo), std::abs(fhi))};
    for (int it = 0; it < 2000; ++it) {
        const real mid = lo + 0.5 * (hi - lo);
        if (mid <= lo || mid >= hi) break;
        const real fm = f(mid);
        if (std::abs(fm) < best.residual) best = {mid, std::abs(fm)};
        if (std::abs(fm) <= tolerance) break;
        if ((fm > 0.0) == (flo > 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return best;
}

} // namespace impulse::roots
