#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "deflectrack/so3.hpp"
#include "deflectrack/vec.hpp"

namespace deflectrack {

/// Pinhole camera. `rotation`/`position` give the world<-camera transform;
/// the camera looks along its local +z axis, image y points down.
struct CameraModel {
    int width = 512, height = 512;
    Vec2d focal{1600.0, 1600.0};      // px
    Vec2d principal{256.0, 256.0};    // px
    Vec3d rotation{0, 0, 0};          // axis-angle, world<-camera
    Vec3d position{0, 0, 0};          // mm

    Mat3d rot_matrix() const { return exp_so3(rotation); }

    void validate() const {
        if (focal.x <= 0 || focal.y <= 0) throw std::invalid_argument("focal must be positive");
        if (principal.x < 0 || principal.x > width || principal.y < 0 || principal.y > height)
            throw std::invalid_argument("principal point outside image bounds");
    }
};

struct Ray {
    Vec3d origin;
    Vec3d dir;  // unit
};

/// Ray through a (sub-pixel) image coordinate, in world space.
inline Ray pixel_ray(const CameraModel& cam, const Vec2d& px) {
    const Vec3d dir_cam{(px.x - cam.principal.x) / cam.focal.x,
                        (px.y - cam.principal.y) / cam.focal.y, 1.0};
    return {cam.position, normalized(cam.rot_matrix().mul(dir_cam))};
}

/// Planar screen: center plus two orthogonal basis vectors whose lengths are
/// the half-extents, so a plane point has normalized coordinates (u,v) in
/// [-1,1]^2 exactly when it lies on the physical panel. `resolution` is the
/// native panel resolution (width x height); the panel height dimension is
/// mounted along basis_u (landscape).
struct ScreenModel {
    Vec3d center{0, 0, 30};
    Vec3d basis_u{69.875, 0, 0};   // mm, half-extent along u
    Vec3d basis_v{0, 32.275, 0};   // mm, half-extent along v
    int res_width = 1170, res_height = 2532;

    Vec3d unit_normal() const { return normalized(cross(basis_u, basis_v)); }

    void validate() const {
        if (std::fabs(dot(basis_u, basis_v)) > 1e-9)
            throw std::invalid_argument("screen basis vectors must be orthogonal");
    }
};

struct ScreenHit {
    Vec2d uv{0, 0};
    bool hit = false;
};

/// Ray-plane intersection in normalized screen coordinates. (u,v) is reported
/// even off-panel (|u| or |v| > 1) so downstream losses stay differentiable;
/// `hit` is true only when the intersection lies in front of the ray origin.
inline ScreenHit intersect_screen(const ScreenModel& screen, const Ray& ray) {
    const Vec3d n = screen.unit_normal();
    const double denom = dot(ray.dir, n);
    if (std::fabs(denom) < 1e-12) return {};  // parallel: no hit
    const double tau = dot(screen.center - ray.origin, n) / denom;
    const Vec3d p = ray.origin + ray.dir * tau;
    const Vec3d rel = p - screen.center;
    ScreenHit out;
    out.uv = {dot(rel, screen.basis_u) / squared_norm(screen.basis_u),
              dot(rel, screen.basis_v) / squared_norm(screen.basis_v)};
    out.hit = tau > 0.0;
    return out;
}

/// Procedural eye appearance used by the renderer's diffuse term. All values
/// are synthetic and pinned here / in the scene file.
struct ShadingConfig {
    double sclera_albedo = 0.30;
    double iris_albedo = 0.25;
    double pupil_albedo = 0.01;
    double iris_radius = 5.5;     // mm, in the eye's local frame
    double pupil_radius = 2.0;    // mm
    double edge_width = 0.3;      // mm, smooth albedo transition band
    Vec3d light_dir{-0.35, 0.45, 0.82};  // world, normalized on use
    double ambient = 0.5;
    double diffuse_weight = 0.5;
    double specular_weight = 0.68;
    double background = 0.02;
};

struct SceneConfig {
    CameraModel camera;
    ScreenModel screen;
    double working_distance = 80.0;  // mm, informational
    ShadingConfig shading;

    void validate() const {
        camera.validate();
        screen.validate();
        // screen plane must not contain the camera center
        const Vec3d n = screen.unit_normal();
        if (std::fabs(dot(camera.position - screen.center, n)) < 1e-9)
            throw std::invalid_argument("screen plane passes through the camera center");
    }
};

inline Mat3d look_at_rotation(const Vec3d& position, const Vec3d& target) {
    const Vec3d zc = normalized(target - position);
    Vec3d xc = cross(zc, Vec3d{0, 1, 0});
    if (norm(xc) < 1e-9) xc = {1, 0, 0};
    xc = normalized(xc);
    const Vec3d yc = cross(zc, xc);
    Mat3d r;
    r.m = {xc.x, yc.x, zc.x, xc.y, yc.y, zc.y, xc.z, yc.z, zc.z};
    return r;
}

/// Shipped synthetic setup: the eye sits at the origin gazing along +z, the
/// screen faces the eye head-on 30 mm away (headset-like; camera rays are not
/// occluded by the screen), and the camera watches from 80 mm at ~22 degrees
/// off axis. Tuned once so that well over 30% of eye-hit pixels see a screen
/// reflection at the identity pose.
inline SceneConfig default_scene() {
    SceneConfig sc;
    const double az = deg_to_rad(22.0);
    sc.camera.width = 512;
    sc.camera.height = 512;
    sc.camera.focal = {1600.0, 1600.0};
    sc.camera.principal = {256.0, 256.0};
    sc.camera.position = Vec3d{std::sin(az), 0.0, std::cos(az)} * 80.0;
    sc.camera.rotation = log_so3(look_at_rotation(sc.camera.position, {0, 0, 0}));
    sc.screen.center = {0, 0, 30};
    sc.screen.basis_u = {69.875, 0, 0};
    sc.screen.basis_v = {0, 32.275, 0};
    sc.screen.res_width = 1170;
    sc.screen.res_height = 2532;
    sc.working_distance = 80.0;
    sc.validate();
    return sc;
}

// ---------------------------------------------------------------------------
// Scene calibration file (key-value document).
// ---------------------------------------------------------------------------

namespace detail {
inline nlohmann::json vec_json(const Vec3d& v) { return {v.x, v.y, v.z}; }
inline Vec3d vec_from(const nlohmann::json& j) { return {j.at(0), j.at(1), j.at(2)}; }
}  // namespace detail

inline nlohmann::json scene_to_json(const SceneConfig& sc) {
    return nlohmann::json{
        {"camera",
         {{"width", sc.camera.width},
          {"height", sc.camera.height},
          {"focal", {sc.camera.focal.x, sc.camera.focal.y}},
          {"principal", {sc.camera.principal.x, sc.camera.principal.y}},
          {"rotation", detail::vec_json(sc.camera.rotation)},
          {"position", detail::vec_json(sc.camera.position)}}},
        {"screen",
         {{"center", detail::vec_json(sc.screen.center)},
          {"basis_u", detail::vec_json(sc.screen.basis_u)},
          {"basis_v", detail::vec_json(sc.screen.basis_v)},
          {"resolution", {sc.screen.res_width, sc.screen.res_height}}}},
        {"working_distance", sc.working_distance},
        {"shading",
         {{"sclera_albedo", sc.shading.sclera_albedo},
          {"iris_albedo", sc.shading.iris_albedo},
          {"pupil_albedo", sc.shading.pupil_albedo},
          {"iris_radius", sc.shading.iris_radius},
          {"pupil_radius", sc.shading.pupil_radius},
          {"edge_width", sc.shading.edge_width},
          {"light_dir", detail::vec_json(sc.shading.light_dir)},
          {"ambient", sc.shading.ambient},
          {"diffuse_weight", sc.shading.diffuse_weight},
          {"specular_weight", sc.shading.specular_weight},
          {"background", sc.shading.background}}}};
}

inline SceneConfig scene_from_json(const nlohmann::json& j) {
    SceneConfig sc;
    const auto& c = j.at("camera");
    sc.camera.width = c.at("width");
    sc.camera.height = c.at("height");
    sc.camera.focal = {c.at("focal").at(0), c.at("focal").at(1)};
    sc.camera.principal = {c.at("principal").at(0), c.at("principal").at(1)};
    sc.camera.rotation = detail::vec_from(c.at("rotation"));
    sc.camera.position = detail::vec_from(c.at("position"));
    const auto& s = j.at("screen");
    sc.screen.center = detail::vec_from(s.at("center"));
    sc.screen.basis_u = detail::vec_from(s.at("basis_u"));
    sc.screen.basis_v = detail::vec_from(s.at("basis_v"));
    sc.screen.res_width = s.at("resolution").at(0);
    sc.screen.res_height = s.at("resolution").at(1);
    sc.working_distance = j.value("working_distance", 80.0);
    if (j.contains("shading")) {
        const auto& h = j.at("shading");
        sc.shading.sclera_albedo = h.value("sclera_albedo", sc.shading.sclera_albedo);
        sc.shading.iris_albedo = h.value("iris_albedo", sc.shading.iris_albedo);
        sc.shading.pupil_albedo = h.value("pupil_albedo", sc.shading.pupil_albedo);
        sc.shading.iris_radius = h.value("iris_radius", sc.shading.iris_radius);
        sc.shading.pupil_radius = h.value("pupil_radius", sc.shading.pupil_radius);
        sc.shading.edge_width = h.value("edge_width", sc.shading.edge_width);
        if (h.contains("light_dir")) sc.shading.light_dir = detail::vec_from(h.at("light_dir"));
        sc.shading.ambient = h.value("ambient", sc.shading.ambient);
        sc.shading.diffuse_weight = h.value("diffuse_weight", sc.shading.diffuse_weight);
        sc.shading.specular_weight = h.value("specular_weight", sc.shading.specular_weight);
        sc.shading.background = h.value("background", sc.shading.background);
    }
    sc.validate();
    return sc;
}

inline void save_scene(const std::string& path, const SceneConfig& sc) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << scene_to_json(sc).dump(2) << "\n";
}

inline SceneConfig load_scene(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return scene_from_json(j);
}

}  // namespace deflectrack
