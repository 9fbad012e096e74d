#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace micro {

using Vec = std::vector<double>;

constexpr double kPi = 3.14159265358979323846;

/// Wrap an angle to (-pi, pi].
inline double wrap_angle(double theta) {
    double w = std::fmod(theta + kPi, 2.0 * kPi);
    if (w < 0.0) w += 2.0 * kPi;
    return w - kPi;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::runtime_error(msg);
}

inline void require_arg(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

inline void require_finite(double x, const std::string& what) {
    if (!std::isfinite(x)) throw std::runtime_error(what + " is not finite");
}

inline void require_finite(const Vec& v, const std::string& what) {
    for (double x : v) require_finite(x, what);
}

}  // namespace micro
