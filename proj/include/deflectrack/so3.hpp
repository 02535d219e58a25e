#pragma once

#include <array>
#include <cmath>

#include "deflectrack/vec.hpp"

namespace deflectrack {

/// Rotation-group helpers for the axis-angle (exponential map) parametrization.

inline Mat3d skew(const Vec3d& w) {
    Mat3d s;
    s.m = {0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0};
    return s;
}

/// Rodrigues formula; stable for small angles via the series expansion.
inline Mat3d exp_so3(const Vec3d& w) {
    const double theta2 = squared_norm(w);
    const Mat3d k = skew(w);
    const Mat3d k2 = k * k;
    double a, b;  // R = I + a*K + b*K^2
    if (theta2 < 1e-16) {
        a = 1.0 - theta2 / 6.0;
        b = 0.5 - theta2 / 24.0;
    } else {
        const double theta = std::sqrt(theta2);
        a = std::sin(theta) / theta;
        b = (1.0 - std::cos(theta)) / theta2;
    }
    Mat3d r = Mat3d::identity();
    for (int i = 0; i < 9; ++i) r.m[i] += a * k.m[i] + b * k2.m[i];
    return r;
}

/// Inverse of exp_so3 for rotations with angle < pi.
inline Vec3d log_so3(const Mat3d& r) {
    const double tr = r(0, 0) + r(1, 1) + r(2, 2);
    const double c = std::min(1.0, std::max(-1.0, (tr - 1.0) * 0.5));
    const double theta = std::acos(c);
    Vec3d axis{r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1)};
    if (theta < 1e-9) return axis * 0.5;  // first-order
    const double s = std::sin(theta);
    if (s > 1e-9) return axis * (theta / (2.0 * s));
    // theta near pi: extract axis from the symmetric part
    Vec3d d{std::sqrt(std::max(0.0, (r(0, 0) + 1.0) * 0.5)),
            std::sqrt(std::max(0.0, (r(1, 1) + 1.0) * 0.5)),
            std::sqrt(std::max(0.0, (r(2, 2) + 1.0) * 0.5))};
    if (axis.x < 0) d.x = -d.x;
    if (axis.y < 0) d.y = -d.y;
    if (axis.z < 0) d.z = -d.z;
    return normalized(d) * theta;
}

/// Partial derivatives of the rotation matrix entries with respect to the
/// axis-angle components (Gallego & Yezzi closed form, with the small-angle
/// limit dR/dw_i = [e_i]_x).
inline std::array<Mat3d, 3> rotation_partials(const Vec3d& w) {
    const double theta2 = squared_norm(w);
    const Mat3d r = exp_so3(w);
    std::array<Mat3d, 3> out;
    for (int i = 0; i < 3; ++i) {
        Vec3d e{0, 0, 0};
        (i == 0 ? e.x : i == 1 ? e.y : e.z) = 1.0;
        if (theta2 < 1e-14) {
            out[i] = skew(e);
            // dR ~= [e]_x at w = 0; include the first-order R factor anyway
            out[i] = out[i] * r;
            continue;
        }
        const double wi = (i == 0 ? w.x : i == 1 ? w.y : w.z);
        Vec3d v{(1.0 - r(0, 0)) * e.x - r(0, 1) * e.y - r(0, 2) * e.z,
                -r(1, 0) * e.x + (1.0 - r(1, 1)) * e.y - r(1, 2) * e.z,
                -r(2, 0) * e.x - r(2, 1) * e.y + (1.0 - r(2, 2)) * e.z};
        // v = (I - R) e_i
        const Vec3d wxv = cross(w, v);
        Mat3d num = skew(w);
        for (auto& x : num.m) x *= wi;
        const Mat3d sk = skew(wxv);
        for (int k = 0; k < 9; ++k) num.m[k] += sk.m[k];
        for (auto& x : num.m) x /= theta2;
        out[i] = num * r;
    }
    return out;
}

inline Mat3d rot_x(double a) {
    return exp_so3({a, 0, 0});
}
inline Mat3d rot_y(double a) {
    return exp_so3({0, a, 0});
}
inline Mat3d rot_z(double a) {
    return exp_so3({0, 0, a});
}

}  // namespace deflectrack
