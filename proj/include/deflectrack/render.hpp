#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "deflectrack/autodiff.hpp"
#include "deflectrack/bvh.hpp"
#include "deflectrack/eye_model.hpp"
#include "deflectrack/patterns.hpp"
#include "deflectrack/scene.hpp"
#include "deflectrack/thread_pool.hpp"
#include "deflectrack/vec.hpp"

namespace deflectrack {

/// Mesh + acceleration structure in the eye's local frame. Rays are traced in
/// local coordinates (the pose transforms the ray, not the mesh), so pose
/// updates are free and radii updates only need a box refit.
class EyeInstance {
public:
    explicit EyeInstance(const EyeShape& shape) : shape_(shape), mesh_(build_mesh(shape)) {
        bvh_.build(mesh_.vertices, mesh_.faces);
        ring_cos_.resize(shape.vertices_per_loop);
        ring_sin_.resize(shape.vertices_per_loop);
        for (int i = 0; i < shape.vertices_per_loop; ++i) {
            const double a = 2.0 * kPi * i / shape.vertices_per_loop;
            ring_cos_[i] = std::cos(a);
            ring_sin_[i] = std::sin(a);
        }
    }
    EyeInstance(const EyeInstance&) = delete;
    EyeInstance& operator=(const EyeInstance&) = delete;

    const EyeShape& shape() const { return shape_; }
    const EyeMesh& mesh() const { return mesh_; }
    const TriangleBvh& bvh() const { return bvh_; }
    double ring_cos(int i) const { return ring_cos_[i]; }
    double ring_sin(int i) const { return ring_sin_[i]; }

    /// Moves the edge-loop vertices to new radii (heights and connectivity
    /// fixed), recomputes normals and refits the acceleration structure.
    void update_radii(std::span<const double> radii) {
        if (static_cast<int>(radii.size()) != shape_.loop_count())
            throw std::invalid_argument("update_radii: wrong radii count");
        for (int j = 0; j < shape_.loop_count(); ++j) shape_.loop_radii[j] = radii[j];
        const int h = shape_.vertices_per_loop;
        for (int j = 0; j < mesh_.loops; ++j)
            for (int i = 0; i < h; ++i) {
                const double r = shape_.loop_radii[j];
                mesh_.vertices[static_cast<size_t>(j) * h + i] = {r * ring_cos_[i],
                                                                  r * ring_sin_[i],
                                                                  shape_.loop_heights[j]};
            }
        // area-weighted vertex normals
        std::fill(mesh_.weighted_normals.begin(), mesh_.weighted_normals.end(), Vec3d{0, 0, 0});
        for (const auto& f : mesh_.faces) {
            const Vec3d e1 = mesh_.vertices[f[1]] - mesh_.vertices[f[0]];
            const Vec3d e2 = mesh_.vertices[f[2]] - mesh_.vertices[f[0]];
            const Vec3d fn = cross(e1, e2);
            for (int k = 0; k < 3; ++k)
                mesh_.weighted_normals[f[k]] = mesh_.weighted_normals[f[k]] + fn;
        }
        for (size_t k = 0; k < mesh_.vertices.size(); ++k)
            mesh_.vertex_normals[k] = mesh_.weighted_normals[k] / norm(mesh_.weighted_normals[k]);
        bvh_.refit();
    }

private:
    EyeShape shape_;
    EyeMesh mesh_;
    TriangleBvh bvh_;
    std::vector<double> ring_cos_, ring_sin_;
};

// ---------------------------------------------------------------------------
// Shading kernels, templated over the scalar so the identical computation
// serves the double-typed forward pass and the tape-typed backward pass.
// ---------------------------------------------------------------------------

template <class T>
struct ReflectionSample {
    Vec3<T> point;        // world-space surface point
    Vec3<T> local_point;  // same point in the eye's local frame
    Vec3<T> normal;       // unit world-space smooth normal
    Vec3<T> reflected;    // mirror direction (unit)
    Vec2<T> uv;           // normalized screen coordinate
    bool geom_ok = false;
    bool screen_ok = false;  // reflected ray meets the screen plane in front
};

/// Single-bounce specular transport for one pixel against one triangle:
/// local-frame ray-triangle intersection, barycentric normal interpolation,
/// mirror reflection, screen-plane intersection.
template <class T>
ReflectionSample<T> trace_reflection(const Mat3<T>& rot, const Vec3<T>& trans,
                                     const Vec3d& ray_o, const Vec3d& ray_d,
                                     const Vec3<T>& v0, const Vec3<T>& v1, const Vec3<T>& v2,
                                     const Vec3<T>& m0, const Vec3<T>& m1, const Vec3<T>& m2,
                                     const ScreenModel& screen) {
    ReflectionSample<T> out;
    const Vec3<T> ol = rot.tmul(ray_o - trans);
    const Vec3<T> dl = rot.tmul(Vec3<T>(Vec3d(ray_d)));
    const Vec3<T> e1 = v1 - v0;
    const Vec3<T> e2 = v2 - v0;
    const Vec3<T> h = cross(dl, e2);
    const T det = dot(e1, h);
    if (std::fabs(value(det)) < 1e-14) return out;
    const T inv = 1.0 / det;
    const Vec3<T> sv = ol - v0;
    const T beta = dot(sv, h) * inv;
    const Vec3<T> qv = cross(sv, e1);
    const T gamma = dot(dl, qv) * inv;
    const T s = dot(e2, qv) * inv;
    out.geom_ok = value(s) > 1e-9 && value(beta) > -1e-9 && value(gamma) > -1e-9 &&
                  value(beta) + value(gamma) < 1.0 + 1e-9;
    if (!out.geom_ok) return out;
    out.local_point = ol + dl * s;
    out.point = ray_o + ray_d * s;
    const T alpha = 1.0 - beta - gamma;
    const Vec3<T> nl = m0 * alpha + m1 * beta + m2 * gamma;
    const Vec3<T> nw = rot.mul(nl);
    out.normal = nw / norm(nw);
    const T dn = dot(Vec3<T>(Vec3d(ray_d)), out.normal);
    out.reflected = ray_d - out.normal * (2.0 * dn);
    const Vec3d sn = screen.unit_normal();
    const T denom = dot(out.reflected, sn);
    if (std::fabs(value(denom)) < 1e-12) return out;
    const T tau = dot(screen.center - out.point, sn) / denom;
    out.screen_ok = value(tau) > 0.0;
    const Vec3<T> y = out.point + out.reflected * tau;
    const Vec3<T> rel = y - screen.center;
    out.uv = {dot(rel, screen.basis_u) / squared_norm(screen.basis_u),
              dot(rel, screen.basis_v) / squared_norm(screen.basis_v)};
    return out;
}

/// Procedural eye albedo in the local frame (white sclera, darker iris disc,
/// near-black pupil, smooth transitions).
template <class T>
T eye_albedo(const Vec3<T>& local_point, const ShadingConfig& sh) {
    using std::sqrt;
    const T rho = sqrt(local_point.x * local_point.x + local_point.y * local_point.y + 1e-12);
    T a = T(sh.pupil_albedo);
    const T to_iris = smoothstep(sh.pupil_radius - sh.edge_width, sh.pupil_radius + sh.edge_width, rho);
    a = a + (sh.iris_albedo - sh.pupil_albedo) * to_iris;
    const T to_sclera = smoothstep(sh.iris_radius - sh.edge_width, sh.iris_radius + sh.edge_width, rho);
    a = a + (sh.sclera_albedo - sh.iris_albedo) * to_sclera;
    return a;
}

/// Pixel color: Lambertian diffuse plus (when the reflection lands on the
/// panel) the specular pattern sample, clamped to [0,1]. `onscreen` is a
/// forward-pass decision and is held fixed under differentiation.
template <class T>
std::array<T, 3> shade_color(const ReflectionSample<T>& rs, bool onscreen, const Pattern& pattern,
                             const ShadingConfig& sh) {
    const Vec3d light = normalized(sh.light_dir);
    const T ndl = max(dot(rs.normal, light), T(0.0));
    const T diffuse = eye_albedo(rs.local_point, sh) * (sh.ambient + sh.diffuse_weight * ndl);
    std::array<T, 3> c{diffuse, diffuse, diffuse};
    if (onscreen) {
        const auto p = sample_pattern<T>(pattern, rs.uv);
        for (int i = 0; i < 3; ++i) c[i] = c[i] + sh.specular_weight * p[i];
    }
    for (auto& x : c) x = clamp01(x);
    return c;
}

inline bool uv_on_panel(const Vec2d& uv) {
    return std::fabs(uv.x) <= 1.0 && std::fabs(uv.y) <= 1.0;
}

// ---------------------------------------------------------------------------
// Forward rendering
// ---------------------------------------------------------------------------

struct RenderOutput {
    int width = 0, height = 0;
    Image image;                        // RGB
    std::vector<std::uint8_t> hit_mask;
    std::vector<std::uint8_t> screen_mask;  // hit && reflection meets the plane
    std::vector<Vec2d> screen_uv;
    std::vector<Vec3d> surface_point;
    std::vector<Vec3d> surface_normal;
    std::vector<int> face_id;

    size_t index(int x, int y) const { return static_cast<size_t>(y) * width + x; }
};

/// Full-frame render. `res_w` x `res_h` must not exceed the camera
/// resolution; smaller resolutions sample the same field of view.
inline RenderOutput render(const SceneConfig& scene, const EyeInstance& inst, const EyePose& pose,
                           const Pattern& pattern, int res_w = 0, int res_h = 0, int jobs = 0) {
    const CameraModel& cam = scene.camera;
    if (res_w <= 0) res_w = cam.width;
    if (res_h <= 0) res_h = cam.height;
    if (res_w > cam.width || res_h > cam.height)
        throw std::invalid_argument("render resolution exceeds camera resolution");
    const double sx = static_cast<double>(cam.width) / res_w;
    const double sy = static_cast<double>(cam.height) / res_h;
    RenderOutput out;
    out.width = res_w;
    out.height = res_h;
    out.image = Image(res_w, res_h, 3);
    const size_t n = static_cast<size_t>(res_w) * res_h;
    out.hit_mask.assign(n, 0);
    out.screen_mask.assign(n, 0);
    out.screen_uv.assign(n, {0, 0});
    out.surface_point.assign(n, {0, 0, 0});
    out.surface_normal.assign(n, {0, 0, 0});
    out.face_id.assign(n, -1);

    const Mat3d rot = exp_so3(pose.rotation);
    const auto& mesh = inst.mesh();
    parallel_for(0, res_h, [&](std::int64_t y) {
        for (int x = 0; x < res_w; ++x) {
            const size_t i = out.index(x, static_cast<int>(y));
            const Ray ray = pixel_ray(cam, {(x + 0.5) * sx, (y + 0.5) * sy});
            const Vec3d ol = rot.tmul(ray.origin - pose.translation);
            const Vec3d dl = rot.tmul(ray.dir);
            const auto hit = inst.bvh().intersect(ol, dl);
            if (!hit.hit()) {
                for (int c = 0; c < 3; ++c)
                    out.image.at(x, static_cast<int>(y), c) =
                        static_cast<float>(scene.shading.background);
                continue;
            }
            const auto& f = mesh.faces[hit.face];
            const auto rs = trace_reflection<double>(
                rot, pose.translation, ray.origin, ray.dir, mesh.vertices[f[0]],
                mesh.vertices[f[1]], mesh.vertices[f[2]], mesh.vertex_normals[f[0]],
                mesh.vertex_normals[f[1]], mesh.vertex_normals[f[2]], scene.screen);
            out.hit_mask[i] = 1;
            out.face_id[i] = hit.face;
            out.surface_point[i] = rs.point;
            out.surface_normal[i] = rs.normal;
            out.screen_mask[i] = rs.screen_ok ? 1 : 0;
            if (rs.screen_ok) out.screen_uv[i] = rs.uv;
            const bool onscreen = rs.screen_ok && uv_on_panel(rs.uv);
            const auto c = shade_color<double>(rs, onscreen, pattern, scene.shading);
            for (int ch = 0; ch < 3; ++ch)
                out.image.at(x, static_cast<int>(y), ch) = static_cast<float>(c[ch]);
        }
    }, jobs);
    return out;
}

inline RenderOutput render(const SceneConfig& scene, const EyeShape& shape, const EyePose& pose,
                           const Pattern& pattern, int res_w = 0, int res_h = 0, int jobs = 0) {
    EyeInstance inst(shape);
    return render(scene, inst, pose, pattern, res_w, res_h, jobs);
}

/// Re-shades an existing geometry pass under a different pattern; used to
/// emit phase-shift capture stacks without retracing rays.
inline Image capture_with_pattern(const SceneConfig& scene, const RenderOutput& geo,
                                  const EyePose& pose, const Pattern& pattern) {
    Image img(geo.width, geo.height, 3);
    const Mat3d rot = exp_so3(pose.rotation);
    for (int y = 0; y < geo.height; ++y)
        for (int x = 0; x < geo.width; ++x) {
            const size_t i = geo.index(x, y);
            if (!geo.hit_mask[i]) {
                for (int c = 0; c < 3; ++c)
                    img.at(x, y, c) = static_cast<float>(scene.shading.background);
                continue;
            }
            ReflectionSample<double> rs;
            rs.point = geo.surface_point[i];
            rs.local_point = rot.tmul(geo.surface_point[i] - pose.translation);
            rs.normal = geo.surface_normal[i];
            rs.uv = geo.screen_uv[i];
            rs.screen_ok = geo.screen_mask[i];
            const bool onscreen = rs.screen_ok && uv_on_panel(rs.uv);
            const auto c = shade_color<double>(rs, onscreen, pattern, scene.shading);
            for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = static_cast<float>(c[ch]);
        }
    return img;
}

// ---------------------------------------------------------------------------
// Differentiable correspondence / photometric pass
// ---------------------------------------------------------------------------

/// Gradient of a scalar loss with respect to the optimizable parameters.
struct ParamGradient {
    Vec3d d_rotation{0, 0, 0};
    Vec3d d_translation{0, 0, 0};
    std::vector<double> d_loop_radii;
};

/// Forward record of a correspondence render; retains what the backward pass
/// needs (per-pixel visibility is held fixed under differentiation).
struct CorrespondenceRender {
    std::vector<Vec2d> pixels;
    std::vector<Vec2d> uv;
    std::vector<int> face;
    std::vector<std::uint8_t> flags;  // bit0 eye hit, bit1 screen plane ok
    EyePose pose;
    bool valid(size_t i) const { return (flags[i] & 3) == 3; }
};

/// Traces the given camera pixels; returns corr_opt(p) plus hit flags. The
/// uv of off-panel reflections is reported (differentiably) as-is.
inline CorrespondenceRender render_correspondences(const SceneConfig& scene,
                                                   const EyeInstance& inst, const EyePose& pose,
                                                   std::span<const Vec2d> pixels) {
    CorrespondenceRender out;
    const size_t n = pixels.size();
    out.pixels.assign(pixels.begin(), pixels.end());
    out.uv.assign(n, {0, 0});
    out.face.assign(n, -1);
    out.flags.assign(n, 0);
    out.pose = pose;
    const Mat3d rot = exp_so3(pose.rotation);
    const auto& mesh = inst.mesh();
    for (size_t i = 0; i < n; ++i) {
        const Ray ray = pixel_ray(scene.camera, pixels[i]);
        const Vec3d ol = rot.tmul(ray.origin - pose.translation);
        const Vec3d dl = rot.tmul(ray.dir);
        const auto hit = inst.bvh().intersect(ol, dl);
        if (!hit.hit()) continue;
        const auto& f = mesh.faces[hit.face];
        const auto rs = trace_reflection<double>(
            rot, pose.translation, ray.origin, ray.dir, mesh.vertices[f[0]], mesh.vertices[f[1]],
            mesh.vertices[f[2]], mesh.vertex_normals[f[0]], mesh.vertex_normals[f[1]],
            mesh.vertex_normals[f[2]], scene.screen);
        if (!rs.geom_ok) continue;
        out.face[i] = hit.face;
        out.flags[i] |= 1;
        if (rs.screen_ok) {
            out.flags[i] |= 2;
            out.uv[i] = rs.uv;
        }
    }
    return out;
}

/// Forward colors at recorded pixels (photometric data term).
inline std::vector<std::array<double, 3>> shade_correspondences(
    const SceneConfig& scene, const EyeInstance& inst, const CorrespondenceRender& fwd,
    const Pattern& pattern) {
    const Mat3d rot = exp_so3(fwd.pose.rotation);
    const auto& mesh = inst.mesh();
    std::vector<std::array<double, 3>> colors(fwd.pixels.size());
    for (size_t i = 0; i < fwd.pixels.size(); ++i) {
        if (!(fwd.flags[i] & 1)) {
            colors[i] = {scene.shading.background, scene.shading.background,
                         scene.shading.background};
            continue;
        }
        const Ray ray = pixel_ray(scene.camera, fwd.pixels[i]);
        const auto& f = mesh.faces[fwd.face[i]];
        const auto rs = trace_reflection<double>(
            rot, fwd.pose.translation, ray.origin, ray.dir, mesh.vertices[f[0]],
            mesh.vertices[f[1]], mesh.vertices[f[2]], mesh.vertex_normals[f[0]],
            mesh.vertex_normals[f[1]], mesh.vertex_normals[f[2]], scene.screen);
        const bool onscreen = rs.screen_ok && uv_on_panel(rs.uv);
        colors[i] = shade_color<double>(rs, onscreen, pattern, scene.shading);
    }
    return colors;
}

namespace detail {

struct PixelAdjointSink {
    Mat3d g_rot{};  // zero-initialized
    Vec3d g_trans{0, 0, 0};
    std::vector<Vec3d> g_verts, g_normals;
};

template <class Seed>
void pixel_backward(const SceneConfig& scene, const EyeInstance& inst,
                    const CorrespondenceRender& fwd, size_t i, const Mat3d& rot,
                    const Pattern* pattern, PixelAdjointSink& sink, Seed&& seed_outputs) {
    thread_local Tape tape;
    TapeScope scope(tape);
    tape.reserve(512);
    Mat3<Var> rv;
    for (int k = 0; k < 9; ++k) rv.m[k] = make_input(rot.m[k]);
    Vec3<Var> tv{make_input(fwd.pose.translation.x), make_input(fwd.pose.translation.y),
                 make_input(fwd.pose.translation.z)};
    const auto& mesh = inst.mesh();
    const auto& f = mesh.faces[fwd.face[i]];
    std::array<Vec3<Var>, 3> vv, mv;
    for (int k = 0; k < 3; ++k) {
        const Vec3d& p = mesh.vertices[f[k]];
        const Vec3d& m = mesh.vertex_normals[f[k]];
        vv[k] = {make_input(p.x), make_input(p.y), make_input(p.z)};
        mv[k] = {make_input(m.x), make_input(m.y), make_input(m.z)};
    }
    const Ray ray = pixel_ray(scene.camera, fwd.pixels[i]);
    const auto rs = trace_reflection<Var>(rv, tv, ray.origin, ray.dir, vv[0], vv[1], vv[2], mv[0],
                                          mv[1], mv[2], scene.screen);
    std::vector<std::pair<std::int32_t, double>> seeds;
    seed_outputs(rs, pattern, seeds);
    if (seeds.empty()) return;
    tape.backward(seeds);
    for (int k = 0; k < 9; ++k) sink.g_rot.m[k] += tape.adjoint(rv.m[k].i);
    sink.g_trans.x += tape.adjoint(tv.x.i);
    sink.g_trans.y += tape.adjoint(tv.y.i);
    sink.g_trans.z += tape.adjoint(tv.z.i);
    for (int k = 0; k < 3; ++k) {
        Vec3d& gv = sink.g_verts[f[k]];
        gv.x += tape.adjoint(vv[k].x.i);
        gv.y += tape.adjoint(vv[k].y.i);
        gv.z += tape.adjoint(vv[k].z.i);
        Vec3d& gn = sink.g_normals[f[k]];
        gn.x += tape.adjoint(mv[k].x.i);
        gn.y += tape.adjoint(mv[k].y.i);
        gn.z += tape.adjoint(mv[k].z.i);
    }
}

/// Pushes vertex-position and vertex-normal adjoints down to the pose and
/// loop-radii parameters (the mesh-level half of the chain rule).
inline ParamGradient finalize_gradient(const EyeInstance& inst, const EyePose& pose,
                                       PixelAdjointSink& sink) {
    const auto& mesh = inst.mesh();
    const size_t nv = mesh.vertices.size();
    // unit-normal chain: m_hat = u/|u|
    std::vector<Vec3d> g_weighted(nv, {0, 0, 0});
    for (size_t k = 0; k < nv; ++k) {
        const Vec3d& gn = sink.g_normals[k];
        if (gn.x == 0 && gn.y == 0 && gn.z == 0) continue;
        const Vec3d& mh = mesh.vertex_normals[k];
        const double len = norm(mesh.weighted_normals[k]);
        g_weighted[k] = (gn - mh * dot(mh, gn)) / len;
    }
    // face sweep: u_k = sum of adjacent unnormalized face normals
    for (const auto& f : mesh.faces) {
        const Vec3d g = g_weighted[f[0]] + g_weighted[f[1]] + g_weighted[f[2]];
        if (g.x == 0 && g.y == 0 && g.z == 0) continue;
        const Vec3d e1 = mesh.vertices[f[1]] - mesh.vertices[f[0]];
        const Vec3d e2 = mesh.vertices[f[2]] - mesh.vertices[f[0]];
        const Vec3d d1 = cross(e2, g);   // dL/d e1
        const Vec3d d2 = cross(g, e1);   // dL/d e2
        sink.g_verts[f[1]] = sink.g_verts[f[1]] + d1;
        sink.g_verts[f[2]] = sink.g_verts[f[2]] + d2;
        sink.g_verts[f[0]] = sink.g_verts[f[0]] - d1 - d2;
    }
    ParamGradient out;
    out.d_loop_radii.assign(inst.shape().loop_count(), 0.0);
    const int h = inst.shape().vertices_per_loop;
    for (int j = 0; j < mesh.loops; ++j)
        for (int i = 0; i < h; ++i) {
            const Vec3d& gv = sink.g_verts[static_cast<size_t>(j) * h + i];
            out.d_loop_radii[j] += gv.x * inst.ring_cos(i) + gv.y * inst.ring_sin(i);
        }
    out.d_translation = sink.g_trans;
    const auto parts = rotation_partials(pose.rotation);
    for (int i = 0; i < 3; ++i) {
        double s = 0;
        for (int k = 0; k < 9; ++k) s += sink.g_rot.m[k] * parts[i].m[k];
        (i == 0 ? out.d_rotation.x : i == 1 ? out.d_rotation.y : out.d_rotation.z) = s;
    }
    return out;
}

}  // namespace detail

/// Chain-rule gradient of a scalar loss through the correspondence render:
/// `upstream[i]` is d(loss)/d(uv_i). Requires the forward records from
/// render_correspondences with identical scene/instance/pose.
inline ParamGradient backward(const SceneConfig& scene, const EyeInstance& inst,
                              const CorrespondenceRender& fwd, std::span<const Vec2d> upstream) {
    if (upstream.size() != fwd.pixels.size())
        throw std::invalid_argument("backward: upstream size mismatch with forward records");
    const Mat3d rot = exp_so3(fwd.pose.rotation);
    detail::PixelAdjointSink sink;
    sink.g_verts.assign(inst.mesh().vertices.size(), {0, 0, 0});
    sink.g_normals.assign(inst.mesh().vertices.size(), {0, 0, 0});
    for (size_t i = 0; i < fwd.pixels.size(); ++i) {
        if (!fwd.valid(i)) continue;
        const Vec2d& g = upstream[i];
        if (g.x == 0 && g.y == 0) continue;
        detail::pixel_backward(scene, inst, fwd, i, rot, nullptr, sink,
                               [&](const ReflectionSample<Var>& rs, const Pattern*,
                                   std::vector<std::pair<std::int32_t, double>>& seeds) {
                                   seeds.push_back({rs.uv.x.i, g.x});
                                   seeds.push_back({rs.uv.y.i, g.y});
                               });
    }
    return detail::finalize_gradient(inst, fwd.pose, sink);
}

/// Photometric variant: `upstream[i][c]` is d(loss)/d(I_c) at pixel i. The
/// color chain includes the differentiable pattern sample and the diffuse
/// term; misses contribute the constant background and carry no gradient.
inline ParamGradient backward_photometric(const SceneConfig& scene, const EyeInstance& inst,
                                          const CorrespondenceRender& fwd, const Pattern& pattern,
                                          std::span<const std::array<double, 3>> upstream) {
    if (upstream.size() != fwd.pixels.size())
        throw std::invalid_argument("backward_photometric: upstream size mismatch");
    const Mat3d rot = exp_so3(fwd.pose.rotation);
    detail::PixelAdjointSink sink;
    sink.g_verts.assign(inst.mesh().vertices.size(), {0, 0, 0});
    sink.g_normals.assign(inst.mesh().vertices.size(), {0, 0, 0});
    for (size_t i = 0; i < fwd.pixels.size(); ++i) {
        if (!(fwd.flags[i] & 1)) continue;
        const auto& g = upstream[i];
        if (g[0] == 0 && g[1] == 0 && g[2] == 0) continue;
        detail::pixel_backward(
            scene, inst, fwd, i, rot, &pattern, sink,
            [&](const ReflectionSample<Var>& rs, const Pattern* pat,
                std::vector<std::pair<std::int32_t, double>>& seeds) {
                const bool onscreen =
                    rs.screen_ok && uv_on_panel({value(rs.uv.x), value(rs.uv.y)});
                const auto c = shade_color<Var>(rs, onscreen, *pat, scene.shading);
                for (int ch = 0; ch < 3; ++ch)
                    if (g[ch] != 0) seeds.push_back({c[ch].i, g[ch]});
            });
    }
    return detail::finalize_gradient(inst, fwd.pose, sink);
}

/// Full-frame photometric render plus the records needed for its backward
/// pass (spec operation; the solver uses the pixel-set variants directly).
struct PhotometricRender {
    Image image;
    CorrespondenceRender records;
};

inline PhotometricRender render_photometric(const SceneConfig& scene, const EyeInstance& inst,
                                            const EyePose& pose, const Pattern& pattern,
                                            int res_w = 0, int res_h = 0) {
    const RenderOutput geo = render(scene, inst, pose, pattern, res_w, res_h);
    PhotometricRender out;
    out.image = geo.image;
    out.records.pose = pose;
    const double sx = static_cast<double>(scene.camera.width) / geo.width;
    const double sy = static_cast<double>(scene.camera.height) / geo.height;
    out.records.pixels.reserve(geo.hit_mask.size());
    for (int y = 0; y < geo.height; ++y)
        for (int x = 0; x < geo.width; ++x) {
            const size_t i = geo.index(x, y);
            out.records.pixels.push_back({(x + 0.5) * sx, (y + 0.5) * sy});
            out.records.face.push_back(geo.face_id[i]);
            out.records.uv.push_back(geo.screen_uv[i]);
            std::uint8_t fl = 0;
            if (geo.hit_mask[i]) fl |= 1;
            if (geo.screen_mask[i]) fl |= 2;
            out.records.flags.push_back(fl);
        }
    return out;
}

}  // namespace deflectrack
