#pragma once

#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace impulse {

using real = double;
using numvec = std::vector<real>;

inline constexpr real kInf = std::numeric_limits<real>::infinity();

/// Raised for malformed problems, grids or configuration values.
class ModelError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a numerical routine cannot produce a meaningful answer
/// (singular systems, non-finite costs, empty feasible sets).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Waiting time until the next impulse, a point of the compactified half-line
 * [0, +inf]. The infinite point is a distinguished value ("never intervene")
 * rather than a large float: it kills the process exactly.
 */
class WaitTime {
public:
    constexpr WaitTime() = default;

    static constexpr WaitTime finite(real t) { return WaitTime(t, false); }
    static constexpr WaitTime never() { return WaitTime(0.0, true); }

    constexpr bool is_infinite() const { return infinite_; }
    /// Finite value; +inf for the sentinel.
    constexpr real value() const { return infinite_ ? kInf : t_; }

    /// Survival weight e^{-alpha theta}; exactly 0 for the sentinel and exactly 1 at 0.
    real discount(real alpha) const {
        if (infinite_) return 0.0;
        if (t_ == 0.0) return 1.0;
        return std::exp(-alpha * t_);
    }

    friend constexpr bool operator==(const WaitTime& a, const WaitTime& b) {
        return a.infinite_ == b.infinite_ && (a.infinite_ || a.t_ == b.t_);
    }

    std::string to_string() const;

private:
    constexpr WaitTime(real t, bool inf) : t_(t), infinite_(inf) {}
    real t_ = 0.0;
    bool infinite_ = false;
};

/// A point of X extended with the cemetery state.
class ExtState {
public:
    static constexpr ExtState at(real x) { return ExtState(x, false); }
    static constexpr ExtState cemetery() { return ExtState(0.0, true); }

    constexpr bool is_cemetery() const { return cemetery_; }
    constexpr real value() const { return x_; }

private:
    constexpr ExtState(real x, bool c) : x_(x), cemetery_(c) {}
    real x_;
    bool cemetery_;
};

/// Multiplier vector for the J constraints.
using Multipliers = numvec;

/// Formats with 17 significant digits (round-trippable doubles).
inline std::string format_real(real v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string WaitTime::to_string() const {
    return infinite_ ? std::string("INF") : format_real(t_);
}

} // namespace impulse
