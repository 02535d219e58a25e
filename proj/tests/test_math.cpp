#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "deflectrack/autodiff.hpp"
#include "deflectrack/so3.hpp"
#include "deflectrack/vec.hpp"

using namespace deflectrack;

TEST(Vec, BasicOps) {
    Vec3d a{1, 2, 3}, b{4, 5, 6};
    EXPECT_DOUBLE_EQ(dot(a, b), 32.0);
    const Vec3d c = cross(a, b);
    EXPECT_DOUBLE_EQ(c.x, -3.0);
    EXPECT_DOUBLE_EQ(c.y, 6.0);
    EXPECT_DOUBLE_EQ(c.z, -3.0);
    EXPECT_NEAR(norm(normalized(a)), 1.0, 1e-15);
}

TEST(So3, ExpIdentityAndQuarterTurn) {
    const Mat3d r0 = exp_so3({0, 0, 0});
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(r0(i, j), i == j ? 1.0 : 0.0);
    const Mat3d rz = exp_so3({0, 0, kPi / 2});
    const Vec3d v = rz.mul(Vec3d{1, 0, 0});
    EXPECT_NEAR(v.x, 0.0, 1e-15);
    EXPECT_NEAR(v.y, 1.0, 1e-15);
    EXPECT_NEAR(v.z, 0.0, 1e-15);
}

TEST(So3, LogRoundTrip) {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int k = 0; k < 50; ++k) {
        Vec3d w{u(rng), u(rng), u(rng)};
        w = w * (u(rng) * 1.4);
        const Vec3d back = log_so3(exp_so3(w));
        EXPECT_NEAR(back.x, w.x, 1e-9);
        EXPECT_NEAR(back.y, w.y, 1e-9);
        EXPECT_NEAR(back.z, w.z, 1e-9);
    }
}

TEST(So3, RotationPartialsMatchFiniteDifferences) {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-0.8, 0.8);
    const double h = 1e-6;
    for (int k = 0; k < 20; ++k) {
        const Vec3d w{u(rng), u(rng), u(rng)};
        const auto parts = rotation_partials(w);
        for (int i = 0; i < 3; ++i) {
            Vec3d wp = w, wm = w;
            (i == 0 ? wp.x : i == 1 ? wp.y : wp.z) += h;
            (i == 0 ? wm.x : i == 1 ? wm.y : wm.z) -= h;
            const Mat3d rp = exp_so3(wp), rm = exp_so3(wm);
            for (int e = 0; e < 9; ++e) {
                const double fd = (rp.m[e] - rm.m[e]) / (2 * h);
                EXPECT_NEAR(parts[i].m[e], fd, 1e-7) << "w component " << i << " entry " << e;
            }
        }
    }
}

TEST(So3, RotationPartialsNearZero) {
    const auto parts = rotation_partials({0, 0, 0});
    // dR/dw_i at identity is the skew generator [e_i]x
    EXPECT_NEAR(parts[2](1, 0), 1.0, 1e-12);
    EXPECT_NEAR(parts[2](0, 1), -1.0, 1e-12);
    EXPECT_NEAR(parts[0](2, 1), 1.0, 1e-12);
}

// -- reverse-mode tape ------------------------------------------------------

TEST(Autodiff, ScalarChain) {
    Tape tape;
    TapeScope scope(tape);
    Var x = make_input(0.7);
    Var y = make_input(-1.3);
    Var z = x * y + sin(x) / (y * y + 2.0);
    tape.backward({{z.i, 1.0}});
    // analytic: dz/dx = y + cos(x)/(y^2+2); dz/dy = x - sin(x)*2y/(y^2+2)^2
    const double denom = 1.3 * 1.3 + 2.0;
    EXPECT_NEAR(tape.adjoint(x.i), -1.3 + std::cos(0.7) / denom, 1e-14);
    EXPECT_NEAR(tape.adjoint(y.i), 0.7 - std::sin(0.7) * 2 * (-1.3) / (denom * denom), 1e-14);
}

TEST(Autodiff, MatchesFiniteDifferencesOnComposite) {
    auto f = [](const auto& v) {
        using T = std::decay_t<decltype(v[0])>;
        using std::sqrt;
        using std::atan2;
        using std::log;
        T a = v[0] * v[1] - v[2];
        T b = sqrt(v[0] * v[0] + v[1] * v[1] + 1e-3);
        T c = atan2(v[2], b);
        return a * c + log(b + 2.0) * v[1];
    };
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-2, 2);
    for (int k = 0; k < 30; ++k) {
        std::array<double, 3> x{u(rng), u(rng), u(rng)};
        Tape tape;
        TapeScope scope(tape);
        std::array<Var, 3> xv{make_input(x[0]), make_input(x[1]), make_input(x[2])};
        Var y = f(xv);
        tape.backward({{y.i, 1.0}});
        for (int i = 0; i < 3; ++i) {
            const double h = 1e-6;
            auto xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            const double fd = (f(xp) - f(xm)) / (2 * h);
            EXPECT_NEAR(tape.adjoint(xv[i].i), fd, 1e-6 * std::max(1.0, std::fabs(fd)));
        }
    }
}

TEST(Autodiff, ConstantsStayOffTape) {
    Tape tape;
    TapeScope scope(tape);
    Var c = Var(2.0) * Var(3.0);
    EXPECT_EQ(c.i, -1);
    EXPECT_DOUBLE_EQ(c.v, 6.0);
    EXPECT_EQ(tape.size(), 0u);
}

TEST(Autodiff, BranchesAndClamps) {
    Tape tape;
    TapeScope scope(tape);
    Var x = make_input(0.4);
    Var y = clamp01(x * 3.0);  // 1.2 clamps to 1 -> zero gradient
    tape.backward({{y.i, 1.0}});
    EXPECT_DOUBLE_EQ(value(y), 1.0);
    EXPECT_DOUBLE_EQ(tape.adjoint(x.i), 0.0);

    Tape tape2;
    TapeScope scope2(tape2);
    Var x2 = make_input(0.2);
    Var y2 = clamp01(x2 * 3.0);  // interior: gradient 3
    tape2.backward({{y2.i, 1.0}});
    EXPECT_DOUBLE_EQ(tape2.adjoint(x2.i), 3.0);
}
