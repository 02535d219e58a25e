#pragma once

#include <cmath>
#include <cstdint>
#include <iostream>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "deflectrack/autodiff.hpp"
#include "deflectrack/eye_model.hpp"
#include "deflectrack/image.hpp"
#include "deflectrack/patterns.hpp"
#include "deflectrack/render.hpp"

namespace deflectrack {

struct RegularizerConfig {
    double lambda_grad = 0.05;
    double lambda_mc = 0.1;
    double lambda_lap = 0.1;
    double t_mc = 4.0;  // curvature threshold, 1/mm

    void validate() const {
        if (lambda_grad < 0 || lambda_mc < 0 || lambda_lap < 0)
            throw std::invalid_argument("regularizer weights must be nonnegative");
    }
};

struct LossReport {
    double total = 0.0;
    std::map<std::string, double> components;
    int active_count = 0;  // correspondences / pixels contributing
    int missed_count = 0;

    double component(const std::string& k) const {
        auto it = components.find(k);
        return it == components.end() ? 0.0 : it->second;
    }
};

/// Distance transform of the correspondence objective: identity up to 1,
/// log(d)+1 beyond (continuous, once-differentiable at d=1).
inline double dist_clamped(double d) { return d <= 1.0 ? d : std::log(d) + 1.0; }
inline double dist_clamped_derivative(double d) { return d <= 1.0 ? 1.0 : 1.0 / d; }

/// Mean of dist_clamped(squared uv distance) over pairs where the render hit
/// the eye and its reflection met the screen plane; missed pairs are excluded
/// from the mean (optionally charged a constant penalty) and reported.
/// When d_uv is given it receives d(loss)/d(rendered uv) per pair.
inline LossReport correspondence_loss(const CorrespondenceSet& measured,
                                      const CorrespondenceRender& rendered,
                                      std::vector<Vec2d>* d_uv = nullptr,
                                      double miss_penalty = 0.0) {
    if (measured.size() != rendered.pixels.size())
        throw std::invalid_argument("correspondence_loss: set sizes differ");
    if (d_uv) d_uv->assign(measured.size(), {0, 0});
    int n_valid = 0, n_miss = 0;
    for (size_t i = 0; i < measured.size(); ++i) {
        if (!measured.valid[i]) continue;
        if (rendered.valid(i))
            ++n_valid;
        else
            ++n_miss;
    }
    if (n_valid == 0) throw std::runtime_error("correspondence_loss: no valid correspondences");
    double sum = 0.0;
    for (size_t i = 0; i < measured.size(); ++i) {
        if (!measured.valid[i] || !rendered.valid(i)) continue;
        const Vec2d diff = rendered.uv[i] - measured.screen_uv[i];
        const double d2 = diff.x * diff.x + diff.y * diff.y;
        sum += dist_clamped(d2);
        if (d_uv) {
            const double w = dist_clamped_derivative(d2) * 2.0 / n_valid;
            (*d_uv)[i] = {w * diff.x, w * diff.y};
        }
    }
    LossReport rep;
    rep.active_count = n_valid;
    rep.missed_count = n_miss;
    double data = sum / n_valid;
    if (miss_penalty > 0.0 && n_miss > 0)
        data += miss_penalty * static_cast<double>(n_miss) / (n_valid + n_miss);
    rep.components["data"] = data;
    rep.total = data;
    return rep;
}

/// Mean absolute per-pixel RGB intensity difference over the masked pixels.
/// Subgradient 0 where the images agree exactly.
inline LossReport photometric_loss(const Image& gt, const Image& rendered,
                                   const std::vector<std::uint8_t>& mask,
                                   Image* d_rendered = nullptr) {
    if (gt.width != rendered.width || gt.height != rendered.height ||
        gt.channels != rendered.channels)
        throw std::invalid_argument("photometric_loss: image dimensions differ");
    if (mask.size() != gt.pixel_count())
        throw std::invalid_argument("photometric_loss: mask size mismatch");
    size_t n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    if (n == 0) throw std::runtime_error("photometric_loss: empty mask");
    if (d_rendered) *d_rendered = Image(gt.width, gt.height, gt.channels, 0.f);
    const double scale = 1.0 / (static_cast<double>(n) * gt.channels);
    double sum = 0.0;
    for (int y = 0; y < gt.height; ++y)
        for (int x = 0; x < gt.width; ++x) {
            if (!mask[static_cast<size_t>(y) * gt.width + x]) continue;
            for (int c = 0; c < gt.channels; ++c) {
                const double diff = static_cast<double>(rendered.at(x, y, c)) - gt.at(x, y, c);
                sum += std::fabs(diff);
                if (d_rendered)
                    d_rendered->at(x, y, c) =
                        static_cast<float>((diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) * scale);
            }
        }
    LossReport rep;
    rep.active_count = static_cast<int>(n);
    rep.components["data"] = sum * scale;
    rep.total = rep.components["data"];
    return rep;
}

/// Span variant used by the solver (colors at a fixed pixel set).
inline LossReport photometric_loss_samples(std::span<const std::array<double, 3>> gt,
                                           std::span<const std::array<double, 3>> rendered,
                                           std::vector<std::array<double, 3>>* d_rendered) {
    if (gt.size() != rendered.size())
        throw std::invalid_argument("photometric_loss_samples: size mismatch");
    if (gt.empty()) throw std::runtime_error("photometric_loss_samples: empty sample set");
    if (d_rendered) d_rendered->assign(gt.size(), {0, 0, 0});
    const double scale = 1.0 / (static_cast<double>(gt.size()) * 3.0);
    double sum = 0.0;
    for (size_t i = 0; i < gt.size(); ++i)
        for (int c = 0; c < 3; ++c) {
            const double diff = rendered[i][c] - gt[i][c];
            sum += std::fabs(diff);
            if (d_rendered)
                (*d_rendered)[i][c] = (diff > 0 ? 1.0 : diff < 0 ? -1.0 : 0.0) * scale;
        }
    LossReport rep;
    rep.active_count = static_cast<int>(gt.size());
    rep.components["data"] = sum * scale;
    rep.total = rep.components["data"];
    return rep;
}

// ---------------------------------------------------------------------------
// Shape regularizers (Eq. 4 family). grad/menger read the meridian profile
// (height, radius) and are therefore invariant to rigid pose.
// ---------------------------------------------------------------------------

/// Penalizes any radius increase toward the apex: sum max(0, r[i+1] - r[i])
/// over loops ordered by increasing height.
inline double grad_regularizer(std::span<const double> radii, std::span<const double> heights,
                               std::vector<double>* d_radii = nullptr) {
    if (radii.size() != heights.size())
        throw std::invalid_argument("grad_regularizer: size mismatch");
    for (size_t i = 1; i < heights.size(); ++i)
        if (heights[i] <= heights[i - 1])
            throw std::invalid_argument("grad_regularizer: heights must be strictly increasing");
    if (d_radii) d_radii->assign(radii.size(), 0.0);
    double sum = 0.0;
    for (size_t i = 0; i + 1 < radii.size(); ++i) {
        const double rise = radii[i + 1] - radii[i];
        if (rise > 0) {
            sum += rise;
            if (d_radii) {
                (*d_radii)[i + 1] += 1.0;
                (*d_radii)[i] -= 1.0;
            }
        }
    }
    return sum;
}

/// Menger curvature (reciprocal circumradius) of three profile points.
template <class T>
T menger_curvature(const Vec2<T>& p0, const Vec2<T>& p1, const Vec2<T>& p2) {
    using std::fabs;
    const Vec2<T> a = p1 - p0, b = p2 - p1, c = p2 - p0;
    const T cr = a.x * b.y - a.y * b.x;  // 2 * signed triangle area
    const T la = norm(a), lb = norm(b), lc = norm(c);
    return 2.0 * fabs(cr) / (la * lb * lc);
}

/// Thresholded curvature of the meridian profile (points (c_j, r_j)):
/// sum max(0, MC - t_mc) over consecutive triples. Collinear or duplicate
/// points contribute 0 (duplicates additionally produce a warning).
inline double menger_regularizer(std::span<const double> radii, std::span<const double> heights,
                                 double t_mc, std::vector<double>* d_radii = nullptr,
                                 std::vector<std::string>* warnings = nullptr) {
    const size_t n = radii.size();
    if (n != heights.size()) throw std::invalid_argument("menger_regularizer: size mismatch");
    if (n < 3) throw std::invalid_argument("menger_regularizer: needs at least 3 profile points");
    if (d_radii) d_radii->assign(n, 0.0);
    Tape tape;
    TapeScope scope(tape);
    std::vector<Var> r(n);
    for (size_t i = 0; i < n; ++i) r[i] = make_input(radii[i]);
    Var total = 0.0;
    for (size_t i = 0; i + 2 < n; ++i) {
        const Vec2<Var> p0{Var(heights[i]), r[i]};
        const Vec2<Var> p1{Var(heights[i + 1]), r[i + 1]};
        const Vec2<Var> p2{Var(heights[i + 2]), r[i + 2]};
        const double s01 = std::hypot(heights[i + 1] - heights[i], radii[i + 1] - radii[i]);
        const double s12 = std::hypot(heights[i + 2] - heights[i + 1], radii[i + 2] - radii[i + 1]);
        if (s01 < 1e-12 || s12 < 1e-12) {
            if (warnings)
                warnings->push_back("duplicate consecutive profile points at index " +
                                    std::to_string(i));
            else
                std::cerr << "warning: duplicate consecutive profile points at index " << i << "\n";
            continue;
        }
        const Var mc = menger_curvature(p0, p1, p2);
        if (value(mc) > t_mc) total += mc - t_mc;
    }
    if (d_radii && total.i >= 0) {
        tape.backward({{total.i, 1.0}});
        for (size_t i = 0; i < n; ++i) (*d_radii)[i] = tape.adjoint(r[i].i);
    }
    return value(total);
}

/// Uniform graph Laplacian energy ||L V||^2 with (L V)_i = v_i - mean of the
/// 1-ring neighbors; evaluated on the local-frame (pre-pose) mesh.
/// d_vertices (optional) receives the gradient with respect to each vertex.
inline double laplacian_regularizer(const EyeMesh& mesh, std::vector<Vec3d>* d_vertices = nullptr,
                                    std::vector<std::string>* warnings = nullptr) {
    const size_t nv = mesh.vertices.size();
    std::vector<std::vector<int>> nbr(nv);
    auto link = [&](int a, int b) {
        auto& v = nbr[a];
        for (int x : v)
            if (x == b) return;
        v.push_back(b);
    };
    for (const auto& f : mesh.faces) {
        link(f[0], f[1]);
        link(f[1], f[0]);
        link(f[1], f[2]);
        link(f[2], f[1]);
        link(f[2], f[0]);
        link(f[0], f[2]);
    }
    std::vector<Vec3d> w(nv, {0, 0, 0});
    double sum = 0.0;
    for (size_t i = 0; i < nv; ++i) {
        if (nbr[i].empty()) {
            if (warnings)
                warnings->push_back("isolated vertex " + std::to_string(i) + " excluded");
            else
                std::cerr << "warning: isolated vertex " << i << " excluded\n";
            continue;
        }
        Vec3d mean{0, 0, 0};
        for (int j : nbr[i]) mean = mean + mesh.vertices[j];
        mean = mean / static_cast<double>(nbr[i].size());
        w[i] = mesh.vertices[i] - mean;
        sum += squared_norm(w[i]);
    }
    if (d_vertices) {
        d_vertices->assign(nv, {0, 0, 0});
        for (size_t i = 0; i < nv; ++i) {
            (*d_vertices)[i] = (*d_vertices)[i] + w[i] * 2.0;
            const double inv_deg = nbr[i].empty() ? 0.0 : 1.0 / nbr[i].size();
            for (int j : nbr[i])
                (*d_vertices)[j] = (*d_vertices)[j] - w[i] * (2.0 * inv_deg);
        }
    }
    return sum;
}

/// Combined shape regularizer. The gradient/curvature terms act on the
/// frontal sub-profile (loops at height >= frontal_min_height, default the
/// sclera equator) since those are the loops the optimizer moves; the
/// Laplacian acts on the whole local-frame mesh. d_radii (optional) receives
/// the combined gradient with respect to all loop radii.
inline LossReport total_shape_regularizer(const EyeShape& shape, const EyeMesh& mesh,
                                          const RegularizerConfig& cfg,
                                          std::vector<double>* d_radii = nullptr,
                                          double frontal_min_height = 0.0) {
    cfg.validate();
    const int n = shape.loop_count();
    int first = 0;
    while (first < n && shape.loop_heights[first] < frontal_min_height) ++first;
    if (d_radii) d_radii->assign(n, 0.0);
    LossReport rep;
    double g = 0, m = 0, l = 0;
    if (n - first >= 2) {
        std::vector<double> dg;
        g = grad_regularizer(std::span(shape.loop_radii).subspan(first),
                             std::span(shape.loop_heights).subspan(first),
                             d_radii ? &dg : nullptr);
        if (d_radii)
            for (int j = first; j < n; ++j) (*d_radii)[j] += cfg.lambda_grad * dg[j - first];
    }
    if (n - first >= 3) {
        std::vector<double> dm;
        m = menger_regularizer(std::span(shape.loop_radii).subspan(first),
                               std::span(shape.loop_heights).subspan(first), cfg.t_mc,
                               d_radii ? &dm : nullptr);
        if (d_radii)
            for (int j = first; j < n; ++j) (*d_radii)[j] += cfg.lambda_mc * dm[j - first];
    }
    {
        std::vector<Vec3d> dv;
        l = laplacian_regularizer(mesh, d_radii ? &dv : nullptr);
        if (d_radii) {
            const int h = shape.vertices_per_loop;
            for (int j = 0; j < mesh.loops; ++j)
                for (int i = 0; i < h; ++i) {
                    const double a = 2.0 * kPi * i / h;
                    const Vec3d& gv = dv[static_cast<size_t>(j) * h + i];
                    (*d_radii)[j] += cfg.lambda_lap * (gv.x * std::cos(a) + gv.y * std::sin(a));
                }
        }
    }
    rep.components["grad"] = cfg.lambda_grad * g;
    rep.components["mc"] = cfg.lambda_mc * m;
    rep.components["lap"] = cfg.lambda_lap * l;
    rep.total = rep.components["grad"] + rep.components["mc"] + rep.components["lap"];
    return rep;
}

}  // namespace deflectrack
