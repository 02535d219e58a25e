#pragma once

#include <array>
#include <cmath>
#include <type_traits>

namespace deflectrack {

/// Small fixed-size vector/matrix types templated on the scalar so the same
/// geometry code runs on plain doubles and on tape variables.

template <class T>
struct Vec2 {
    T x{}, y{};
    Vec2() = default;
    Vec2(T xx, T yy) : x(xx), y(yy) {}
    template <class U>
    explicit Vec2(const Vec2<U>& o) : x(o.x), y(o.y) {}
};

template <class T>
struct Vec3 {
    T x{}, y{}, z{};
    Vec3() = default;
    Vec3(T xx, T yy, T zz) : x(xx), y(yy), z(zz) {}
    template <class U>
    explicit Vec3(const Vec3<U>& o) : x(o.x), y(o.y), z(o.z) {}
};

using Vec2d = Vec2<double>;
using Vec3d = Vec3<double>;

// --- mixed-scalar arithmetic (double op Var promotes to Var) ---

template <class A, class B>
auto operator+(const Vec3<A>& a, const Vec3<B>& b) -> Vec3<decltype(a.x + b.x)> {
    return {a.x + b.x, a.y + b.y, a.z + b.z};
}
template <class A, class B>
auto operator-(const Vec3<A>& a, const Vec3<B>& b) -> Vec3<decltype(a.x - b.x)> {
    return {a.x - b.x, a.y - b.y, a.z - b.z};
}
template <class A>
Vec3<A> operator-(const Vec3<A>& a) {
    return {-a.x, -a.y, -a.z};
}
template <class A, class S>
auto operator*(const Vec3<A>& a, const S& s) -> Vec3<decltype(a.x * s)> {
    return {a.x * s, a.y * s, a.z * s};
}
template <class A, class S>
auto operator*(const S& s, const Vec3<A>& a) -> Vec3<decltype(s * a.x)> {
    return {s * a.x, s * a.y, s * a.z};
}
template <class A, class S>
auto operator/(const Vec3<A>& a, const S& s) -> Vec3<decltype(a.x / s)> {
    return {a.x / s, a.y / s, a.z / s};
}

template <class A, class B>
auto dot(const Vec3<A>& a, const Vec3<B>& b) -> decltype(a.x * b.x) {
    return a.x * b.x + a.y * b.y + a.z * b.z;
}
template <class A, class B>
auto cross(const Vec3<A>& a, const Vec3<B>& b) -> Vec3<decltype(a.x * b.x)> {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
template <class A>
A squared_norm(const Vec3<A>& a) {
    return dot(a, a);
}
template <class A>
A norm(const Vec3<A>& a) {
    using std::sqrt;
    return sqrt(dot(a, a));
}
template <class A>
Vec3<A> normalized(const Vec3<A>& a) {
    return a / norm(a);
}

template <class A, class B>
auto operator+(const Vec2<A>& a, const Vec2<B>& b) -> Vec2<decltype(a.x + b.x)> {
    return {a.x + b.x, a.y + b.y};
}
template <class A, class B>
auto operator-(const Vec2<A>& a, const Vec2<B>& b) -> Vec2<decltype(a.x - b.x)> {
    return {a.x - b.x, a.y - b.y};
}
template <class A, class S>
auto operator*(const Vec2<A>& a, const S& s) -> Vec2<decltype(a.x * s)> {
    return {a.x * s, a.y * s};
}
template <class A, class B>
auto dot(const Vec2<A>& a, const Vec2<B>& b) -> decltype(a.x * b.x) {
    return a.x * b.x + a.y * b.y;
}
template <class A>
A norm(const Vec2<A>& a) {
    using std::sqrt;
    return sqrt(a.x * a.x + a.y * a.y);
}

/// Row-major 3x3 matrix.
template <class T>
struct Mat3 {
    std::array<T, 9> m{};

    static Mat3 identity() {
        Mat3 r;
        r.m = {T(1), T(0), T(0), T(0), T(1), T(0), T(0), T(0), T(1)};
        return r;
    }
    T& operator()(int r, int c) { return m[3 * r + c]; }
    const T& operator()(int r, int c) const { return m[3 * r + c]; }

    template <class U>
    auto mul(const Vec3<U>& v) const -> Vec3<decltype(m[0] * v.x)> {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z,
                m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }
    /// Applies the transpose (for rotations: the inverse).
    template <class U>
    auto tmul(const Vec3<U>& v) const -> Vec3<decltype(m[0] * v.x)> {
        return {m[0] * v.x + m[3] * v.y + m[6] * v.z,
                m[1] * v.x + m[4] * v.y + m[7] * v.z,
                m[2] * v.x + m[5] * v.y + m[8] * v.z};
    }
    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                T s{};
                for (int k = 0; k < 3; ++k) s = s + (*this)(i, k) * o(k, j);
                r(i, j) = s;
            }
        return r;
    }
    Mat3 transposed() const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
        return r;
    }
};

using Mat3d = Mat3<double>;

inline constexpr double kPi = 3.14159265358979323846;

inline double deg_to_rad(double d) { return d * kPi / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / kPi; }

}  // namespace deflectrack
