#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "deflectrack/noise.hpp"
#include "deflectrack/render.hpp"
#include "deflectrack/solver.hpp"

namespace deflectrack {

/// Ring of point-like illumination sources in the screen plane, rendered as
/// small bright discs. Represents the multi-glint rigs used by
/// interpolation-based trackers.
struct GlintRig {
    std::vector<Vec3d> source_positions;  // 12 points, mm, on the screen plane
    double source_radius = 1.0;           // mm (rendered disc radius)
    double specular_boost = 0.95;         // sources are brighter than panel content

    void validate(const ScreenModel& screen) const {
        if (source_positions.size() != 12)
            throw std::invalid_argument("glint rig needs exactly 12 sources");
        for (const auto& p : source_positions) {
            const Vec3d rel = p - screen.center;
            if (std::fabs(dot(rel, screen.basis_u)) / squared_norm(screen.basis_u) > 1.0 ||
                std::fabs(dot(rel, screen.basis_v)) / squared_norm(screen.basis_v) > 1.0)
                throw std::invalid_argument("glint ring does not fit the screen extents");
        }
    }
};

inline GlintRig make_ring_rig(const ScreenModel& screen, double ring_radius_mm = 20.0,
                              double source_radius_mm = 1.0, int count = 12) {
    GlintRig rig;
    rig.source_radius = source_radius_mm;
    const Vec3d uh = normalized(screen.basis_u);
    const Vec3d vh = normalized(screen.basis_v);
    for (int k = 0; k < count; ++k) {
        const double a = 2.0 * kPi * k / count;
        rig.source_positions.push_back(screen.center + uh * (ring_radius_mm * std::cos(a)) +
                                       vh * (ring_radius_mm * std::sin(a)));
    }
    rig.validate(screen);
    return rig;
}

/// Rasterizes the rig into a screen image: black panel, one bright disc per
/// source (smooth 0.15 mm rim so sub-pixel centroids stay stable).
inline Pattern bake_glint_pattern(const ScreenModel& screen, const GlintRig& rig,
                                  int width = 1266, int height = 578) {
    Image img(width, height, 1, 0.f);
    const double bu = norm(screen.basis_u), bv = norm(screen.basis_v);
    const Vec3d uh = screen.basis_u / bu, vh = screen.basis_v / bv;
    std::vector<Vec2d> src_mm;
    for (const auto& p : rig.source_positions) {
        const Vec3d rel = p - screen.center;
        src_mm.push_back({dot(rel, uh), dot(rel, vh)});
    }
    const double rim = 0.15;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const double u = -1.0 + 2.0 * (x + 0.5) / width;
            const double v = -1.0 + 2.0 * (y + 0.5) / height;
            const Vec2d mm{u * bu, v * bv};
            float val = 0.f;
            for (const auto& s : src_mm) {
                const double d = std::hypot(mm.x - s.x, mm.y - s.y);
                const double t =
                    1.0 - smoothstep(rig.source_radius - rim, rig.source_radius + rim, d);
                val = std::max(val, static_cast<float>(t));
            }
            img.at(x, y) = val;
        }
    return Pattern::from_image(std::move(img));
}

/// Renders the eye under the glint rig (diffuse background included, so the
/// pupil stays visible).
inline Image render_glints(const SceneConfig& scene, const EyeInstance& inst, const EyePose& pose,
                           const GlintRig& rig, int res_w = 0, int res_h = 0) {
    rig.validate(scene.screen);
    SceneConfig boosted = scene;
    boosted.shading.specular_weight = rig.specular_boost;
    const Pattern pattern = bake_glint_pattern(scene.screen, rig);
    return render(boosted, inst, pose, pattern, res_w, res_h, 1).image;
}

struct GlintFeatures {
    std::vector<Vec2d> glint_centroids;  // sub-pixel, image coordinates
    std::vector<std::uint8_t> valid;
    Vec2d pupil_center{0, 0};
    std::vector<Vec2d> normalized_vectors;  // (pupil - glint) / mean inter-glint distance

    Vec2d mean_feature() const {
        Vec2d m{0, 0};
        int n = 0;
        for (size_t i = 0; i < normalized_vectors.size(); ++i)
            if (valid[i]) {
                m = m + normalized_vectors[i];
                ++n;
            }
        return n ? Vec2d{m.x / n, m.y / n} : m;
    }
};

/// Detects glint centroids (bright connected components) and the pupil center
/// (darkness-weighted centroid inside the constellation window), then forms
/// the normalized pupil-glint vectors.
inline GlintFeatures extract_features(const Image& img) {
    const int w = img.width, h = img.height;
    const double bright = 0.8;
    std::vector<std::int32_t> label(static_cast<size_t>(w) * h, -1);
    struct Component {
        double sw = 0, sx = 0, sy = 0;
        int count = 0;
    };
    std::vector<Component> comps;
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const size_t i = static_cast<size_t>(y) * w + x;
            if (label[i] >= 0 || img.intensity(x, y) <= bright) continue;
            const int id = static_cast<int>(comps.size());
            comps.push_back({});
            stack.push_back({x, y});
            label[i] = id;
            while (!stack.empty()) {
                auto [cx, cy] = stack.back();
                stack.pop_back();
                const double inten = img.intensity(cx, cy);
                const double wgt = inten - bright;
                comps[id].sw += wgt;
                comps[id].sx += wgt * cx;
                comps[id].sy += wgt * cy;
                comps[id].count += 1;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx, ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                        const size_t ni = static_cast<size_t>(ny) * w + nx;
                        if (label[ni] >= 0 || img.intensity(nx, ny) <= bright) continue;
                        label[ni] = id;
                        stack.push_back({nx, ny});
                    }
            }
        }
    GlintFeatures out;
    // keep the 12 strongest components
    std::vector<int> order(comps.size());
    for (size_t i = 0; i < comps.size(); ++i) order[i] = static_cast<int>(i);
    std::sort(order.begin(), order.end(),
              [&](int a, int b) { return comps[a].sw > comps[b].sw; });
    if (order.size() > 12) order.resize(12);
    std::sort(order.begin(), order.end());  // deterministic reporting order
    for (int id : order) {
        const auto& c = comps[id];
        if (c.sw <= 0) continue;
        out.glint_centroids.push_back({c.sx / c.sw, c.sy / c.sw});
        out.valid.push_back(1);
    }
    if (out.glint_centroids.size() < 6)
        throw std::runtime_error("feature extraction failed: fewer than 6 glints");
    // pupil: darkness-weighted centroid near the glint constellation
    Vec2d center{0, 0};
    for (const auto& g : out.glint_centroids) center = center + g;
    center = center * (1.0 / out.glint_centroids.size());
    double max_r = 0;
    for (const auto& g : out.glint_centroids) max_r = std::max(max_r, norm(g - center));
    const double win = 1.6 * max_r + 6.0;
    const double dark = 0.1;
    double sw = 0, sx = 0, sy = 0;
    for (int y = std::max(0, static_cast<int>(center.y - win));
         y <= std::min(h - 1, static_cast<int>(center.y + win)); ++y)
        for (int x = std::max(0, static_cast<int>(center.x - win));
             x <= std::min(w - 1, static_cast<int>(center.x + win)); ++x) {
            const double inten = img.intensity(x, y);
            if (inten >= dark) continue;
            if (std::hypot(x - center.x, y - center.y) > win) continue;
            const double wgt = dark - inten;
            sw += wgt;
            sx += wgt * x;
            sy += wgt * y;
        }
    if (sw <= 0) throw std::runtime_error("feature extraction failed: no pupil found");
    out.pupil_center = {sx / sw, sy / sw};
    double mean_dist = 0;
    int pairs = 0;
    for (size_t i = 0; i < out.glint_centroids.size(); ++i)
        for (size_t j = i + 1; j < out.glint_centroids.size(); ++j) {
            mean_dist += norm(out.glint_centroids[i] - out.glint_centroids[j]);
            ++pairs;
        }
    mean_dist /= std::max(1, pairs);
    for (const auto& g : out.glint_centroids) {
        const Vec2d d = out.pupil_center - g;
        out.normalized_vectors.push_back({d.x / mean_dist, d.y / mean_dist});
    }
    return out;
}

/// Degree-2 bivariate polynomial from the mean normalized vector to
/// (elevation, azimuth), fit by least squares on a calibration grid.
struct GlintCalibration {
    std::array<double, 6> coef_elev{};  // 1, x, y, x^2, xy, y^2
    std::array<double, 6> coef_azim{};
    double rms_residual_deg = 0;
    std::string grid_description;
};

inline std::array<double, 6> poly_terms(const Vec2d& f) {
    return {1.0, f.x, f.y, f.x * f.x, f.x * f.y, f.y * f.y};
}

inline GlintCalibration calibrate(const SceneConfig& scene, const EyeShape& shape,
                                  const GlintRig& rig,
                                  const std::vector<std::pair<double, double>>& grid,
                                  double noise = 0.0, std::uint64_t seed = 0, int res_w = 0,
                                  int res_h = 0) {
    if (grid.size() < 6)
        throw std::runtime_error("calibration failed: rank-deficient design (need >= 6 poses)");
    EyeInstance inst(shape);
    Eigen::MatrixXd design(static_cast<int>(grid.size()), 6);
    Eigen::VectorXd ye(static_cast<int>(grid.size())), ya(static_cast<int>(grid.size()));
    for (size_t i = 0; i < grid.size(); ++i) {
        const auto& [elev, azim] = grid[i];
        Image img = render_glints(scene, inst, pose_from_gaze_angles(elev, azim), rig, res_w,
                                  res_h);
        auto rng = rng_stream(seed, i);
        add_poisson_noise(img, noise, rng);
        const auto terms = poly_terms(extract_features(img).mean_feature());
        for (int k = 0; k < 6; ++k) design(static_cast<int>(i), k) = terms[k];
        ye(static_cast<int>(i)) = elev;
        ya(static_cast<int>(i)) = azim;
    }
    const Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < 6)
        throw std::runtime_error("calibration failed: rank-deficient design matrix");
    const Eigen::VectorXd ce = qr.solve(ye);
    const Eigen::VectorXd ca = qr.solve(ya);
    GlintCalibration out;
    for (int k = 0; k < 6; ++k) {
        out.coef_elev[k] = ce(k);
        out.coef_azim[k] = ca(k);
    }
    const Eigen::VectorXd re = design * ce - ye;
    const Eigen::VectorXd ra = design * ca - ya;
    out.rms_residual_deg =
        std::sqrt((re.squaredNorm() + ra.squaredNorm()) / (2.0 * grid.size()));
    out.grid_description = std::to_string(grid.size()) + " poses";
    return out;
}

/// Polynomial evaluation on the mean normalized vector -> (elevation, azimuth)
/// in degrees.
inline std::pair<double, double> estimate_gaze(const GlintFeatures& features,
                                               const GlintCalibration& calib) {
    const auto terms = poly_terms(features.mean_feature());
    double e = 0, a = 0;
    for (int k = 0; k < 6; ++k) {
        e += calib.coef_elev[k] * terms[k];
        a += calib.coef_azim[k] * terms[k];
    }
    return {e, a};
}

}  // namespace deflectrack
