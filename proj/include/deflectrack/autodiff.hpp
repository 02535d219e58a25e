#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace deflectrack {

/// Minimal reverse-mode scalar tape. Each recorded node stores the partial
/// derivatives with respect to at most two parents, evaluated at record time,
/// so the backward sweep is a single reverse pass over the node array.
///
/// Intended usage: one tape per worker thread, reset per record/backward
/// cycle. Constants carry index -1 and never touch the tape.
class Tape {
public:
    struct Node {
        double w0, w1;
        std::int32_t p0, p1;
    };

    void reset() { nodes_.clear(); }
    std::size_t size() const { return nodes_.size(); }
    void reserve(std::size_t n) { nodes_.reserve(n); }

    std::int32_t record(double w0, std::int32_t p0, double w1, std::int32_t p1) {
        nodes_.push_back({w0, w1, p0, p1});
        return static_cast<std::int32_t>(nodes_.size()) - 1;
    }

    /// Runs the reverse sweep from the given seeds; adjoints of every node are
    /// then available through adjoint().
    void backward(const std::vector<std::pair<std::int32_t, double>>& seeds) {
        adj_.assign(nodes_.size(), 0.0);
        for (const auto& [idx, val] : seeds)
            if (idx >= 0) adj_[idx] += val;
        for (std::int32_t i = static_cast<std::int32_t>(nodes_.size()) - 1; i >= 0; --i) {
            const double a = adj_[i];
            if (a == 0.0) continue;
            const Node& n = nodes_[i];
            if (n.p0 >= 0) adj_[n.p0] += n.w0 * a;
            if (n.p1 >= 0) adj_[n.p1] += n.w1 * a;
        }
    }

    double adjoint(std::int32_t idx) const { return idx >= 0 ? adj_[idx] : 0.0; }

private:
    std::vector<Node> nodes_;
    std::vector<double> adj_;
};

inline Tape*& active_tape() {
    thread_local Tape* t = nullptr;
    return t;
}

/// RAII activation of a tape on the current thread (resets it on entry).
struct TapeScope {
    Tape* prev;
    explicit TapeScope(Tape& t) : prev(active_tape()) {
        t.reset();
        active_tape() = &t;
    }
    ~TapeScope() { active_tape() = prev; }
};

/// Tape-backed scalar. Implicitly constructible from double (as a constant),
/// so templated numeric code works unchanged for double and Var.
struct Var {
    double v{};
    std::int32_t i{-1};

    Var() = default;
    Var(double d) : v(d), i(-1) {}  // NOLINT: implicit constant lift
    Var(double d, std::int32_t idx) : v(d), i(idx) {}
};

inline Var make_input(double v) {
    return {v, active_tape()->record(0.0, -1, 0.0, -1)};
}

inline double value(double x) { return x; }
inline double value(const Var& x) { return x.v; }

namespace detail {
inline Var unary(double val, double w, const Var& a) {
    if (a.i < 0) return {val, -1};
    return {val, active_tape()->record(w, a.i, 0.0, -1)};
}
inline Var binary(double val, double wa, const Var& a, double wb, const Var& b) {
    if (a.i < 0 && b.i < 0) return {val, -1};
    return {val, active_tape()->record(wa, a.i, wb, b.i)};
}
}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::binary(a.v + b.v, 1.0, a, 1.0, b); }
inline Var operator-(const Var& a, const Var& b) { return detail::binary(a.v - b.v, 1.0, a, -1.0, b); }
inline Var operator*(const Var& a, const Var& b) { return detail::binary(a.v * b.v, b.v, a, a.v, b); }
inline Var operator/(const Var& a, const Var& b) {
    const double inv = 1.0 / b.v;
    return detail::binary(a.v * inv, inv, a, -a.v * inv * inv, b);
}
inline Var operator-(const Var& a) { return detail::unary(-a.v, -1.0, a); }
inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }

inline Var sqrt(const Var& a) {
    const double s = std::sqrt(a.v);
    return detail::unary(s, 0.5 / s, a);
}
inline Var log(const Var& a) { return detail::unary(std::log(a.v), 1.0 / a.v, a); }
inline Var exp(const Var& a) {
    const double e = std::exp(a.v);
    return detail::unary(e, e, a);
}
inline Var sin(const Var& a) { return detail::unary(std::sin(a.v), std::cos(a.v), a); }
inline Var cos(const Var& a) { return detail::unary(std::cos(a.v), -std::sin(a.v), a); }
inline Var atan2(const Var& y, const Var& x) {
    const double d = x.v * x.v + y.v * y.v;
    return detail::binary(std::atan2(y.v, x.v), x.v / d, y, -y.v / d, x);
}
inline Var fabs(const Var& a) {
    const double s = a.v > 0 ? 1.0 : (a.v < 0 ? -1.0 : 0.0);
    return detail::unary(std::fabs(a.v), s, a);
}
inline Var abs(const Var& a) { return fabs(a); }

inline Var max(const Var& a, const Var& b) { return a.v >= b.v ? a : b; }
inline Var min(const Var& a, const Var& b) { return a.v <= b.v ? a : b; }
inline double max(double a, double b) { return a >= b ? a : b; }
inline double min(double a, double b) { return a <= b ? a : b; }

template <class T>
T clamp01(const T& x) {
    return min(max(x, T(0.0)), T(1.0));
}

/// Hermite step between edges; differentiable everywhere except the (measure
/// zero) edge points, where the one-sided slope is used.
template <class T>
T smoothstep(double e0, double e1, const T& x) {
    T t = clamp01((x - e0) / (e1 - e0));
    return t * t * (3.0 - 2.0 * t);
}

}  // namespace deflectrack
