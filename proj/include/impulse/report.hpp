#pragma once

#include <cmath>
#include <sstream>
#include <string>

#include <json.hpp>

#include "impulse/types.hpp"

namespace impulse::report {

using json = nlohmann::json;

namespace detail {

inline void indent(std::ostringstream& os, int level) { os << std::string(static_cast<std::size_t>(level) * 2, ' '); }

inline void write(std::ostringstream& os, const json& j, int level) {
    switch (j.type()) {
    case json::value_t::object: {
        if (j.empty()) {
            os << "{}";
            return;
        }
        os << "{\n";
        bool first = true;
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (!first) os << ",\n";
            first = false;
            indent(os, level + 1);
            os << json(it.key()).dump() << ": ";
            write(os, it.value(), level + 1);
        }
        os << '\n';
        indent(os, level);
        os << '}';
        return;
    }
    case json::value_t::array: {
        if (j.empty()) {
            os << "[]";
            return;
        }
        os << '[';
        bool first = true;
        for (const auto& v : j) {
            if (!first) os << ", ";
            first = false;
            write(os, v, level + 1);
        }
        os << ']';
        return;
    }
    case json::value_t::number_float: {
        const real v = j.get<real>();
        if (std::isfinite(v)) os << format_real(v);
        else os << json(v < 0 ? "-INF" : (std::isnan(v) ? "NAN" : "INF")).dump();
        return;
    }
    default:
        os << j.dump();
    }
}

} // namespace detail

/// Pretty JSON with every float written to 17 significant digits; non-finite
/// floats become the strings "INF", "-INF" or "NAN".
inline std::string dump(const json& j) {
    std::ostringstream os;
    detail::write(os, j, 0);
    os << '\n';
    return os.str();
}

/// Finite numbers stay numbers, infinities become "INF".
inline json number(real v) { return std::isinf(v) && v > 0 ? json("INF") : json(v); }

} // namespace impulse::report
