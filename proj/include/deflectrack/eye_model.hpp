#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "deflectrack/so3.hpp"
#include "deflectrack/vec.hpp"

namespace deflectrack {

/// Rotationally symmetric eye surface described by stacked circular edge
/// loops: loop j has radius loop_radii[j] at axial height loop_heights[j],
/// sampled with vertices_per_loop points. The base profile is the union of a
/// sclera sphere (centered at the origin) and a cornea sphere (centered at
/// (0,0,sphere_center_offset)), +z toward the cornea apex.
struct EyeShape {
    std::vector<double> loop_radii;    // mm
    std::vector<double> loop_heights;  // mm, strictly increasing
    int vertices_per_loop = 0;
    double sclera_radius = 12.0;        // mm
    double cornea_radius = 8.0;         // mm
    double sphere_center_offset = 6.0;  // mm

    int loop_count() const { return static_cast<int>(loop_radii.size()); }

    void validate() const {
        const int n = loop_count();
        if (n < 3 || vertices_per_loop < 3)
            throw std::invalid_argument("eye shape needs at least 3 loops and 3 vertices per loop");
        if (loop_heights.size() != loop_radii.size())
            throw std::invalid_argument("loop_radii / loop_heights size mismatch");
        for (int j = 0; j < n; ++j) {
            if (loop_radii[j] < 0.0)
                throw std::invalid_argument("negative loop radius");
            if (loop_radii[j] > sclera_radius + 1e-9)
                throw std::invalid_argument("loop radius exceeds sclera radius");
            if (j > 0 && loop_heights[j] <= loop_heights[j - 1])
                throw std::invalid_argument("loop heights must be strictly increasing");
        }
    }
};

/// Rigid placement of the eye: axis-angle rotation (|rotation| < pi) and
/// translation, both in world space.
struct EyePose {
    Vec3d rotation{0, 0, 0};     // radians, axis-angle
    Vec3d translation{0, 0, 0};  // mm
};

struct EyeMesh {
    std::vector<Vec3d> vertices;
    std::vector<std::array<int, 3>> faces;
    std::vector<Vec3d> vertex_normals;    // unit, outward
    std::vector<Vec3d> weighted_normals;  // unnormalized area-weighted sums

    // layout metadata: vertex j*ring_size+i belongs to loop j; a trailing apex
    // vertex (index loops*ring_size) is present iff has_apex
    int loops = 0;
    int ring_size = 0;
    bool has_apex = false;
};

/// Vertex i of loop j: (r_j cos(2 pi i / H), r_j sin(2 pi i / H), c_j).
inline Vec3d loop_vertex(const EyeShape& shape, int j, int i) {
    if (j < 0 || j >= shape.loop_count() || i < 0 || i >= shape.vertices_per_loop)
        throw std::invalid_argument("loop_vertex index out of range");
    const double a = 2.0 * kPi * i / shape.vertices_per_loop;
    return {shape.loop_radii[j] * std::cos(a), shape.loop_radii[j] * std::sin(a),
            shape.loop_heights[j]};
}

/// Profile radius of the two-sphere union at height z (frontal band only).
inline double two_sphere_profile_radius(double z, double sclera_r, double cornea_r,
                                        double offset) {
    const double limbus_z =
        (sclera_r * sclera_r - cornea_r * cornea_r + offset * offset) / (2.0 * offset);
    if (z <= limbus_z) {
        const double s = sclera_r * sclera_r - z * z;
        return s > 0 ? std::sqrt(s) : 0.0;
    }
    const double dz = z - offset;
    const double s = cornea_r * cornea_r - dz * dz;
    return s > 0 ? std::sqrt(s) : 0.0;
}

/// Two-sphere eye sampled into edge loops with heights uniform over
/// [band_min_z, apex), the limbus height (the sphere-intersection circle)
/// snapped onto the nearest loop so the surface crease lies exactly on an
/// edge loop. Only the frontal band is meshed.
inline EyeShape make_two_sphere_shape(double sclera_r, double cornea_r, double offset,
                                      double band_min_z = -2.4, int loops = 100, int ring = 100) {
    EyeShape s;
    s.sclera_radius = sclera_r;
    s.cornea_radius = cornea_r;
    s.sphere_center_offset = offset;
    s.vertices_per_loop = ring;
    const double apex = s.sphere_center_offset + s.cornea_radius;
    const double limbus_z = (s.sclera_radius * s.sclera_radius - s.cornea_radius * s.cornea_radius +
                             s.sphere_center_offset * s.sphere_center_offset) /
                            (2.0 * s.sphere_center_offset);
    const double step = (apex - band_min_z) / loops;
    s.loop_heights.resize(loops);
    for (int j = 0; j < loops; ++j) s.loop_heights[j] = band_min_z + step * j;
    // snap the closest sampled height onto the limbus circle
    int best = 0;
    for (int j = 1; j < loops; ++j)
        if (std::fabs(s.loop_heights[j] - limbus_z) < std::fabs(s.loop_heights[best] - limbus_z))
            best = j;
    s.loop_heights[best] = limbus_z;
    s.loop_radii.resize(loops);
    for (int j = 0; j < loops; ++j)
        s.loop_radii[j] = two_sphere_profile_radius(s.loop_heights[j], s.sclera_radius,
                                                    s.cornea_radius, s.sphere_center_offset);
    s.validate();
    return s;
}

/// The anatomical base model: 12 mm sclera, 8 mm cornea, 6 mm center offset,
/// N=100 edge loops of H=100 vertices each.
inline EyeShape base_shape(double band_min_z = -2.4, int loops = 100, int ring = 100) {
    return make_two_sphere_shape(12.0, 8.0, 6.0, band_min_z, loops, ring);
}

/// Builds the triangle mesh: 2H triangles per loop strip plus an apex fan.
/// Vertex normals are area-weighted face-normal averages, oriented outward.
inline EyeMesh build_mesh(const EyeShape& shape) {
    shape.validate();
    const int n = shape.loop_count();
    const int h = shape.vertices_per_loop;
    for (int j = 0; j + 1 < n; ++j)
        if (shape.loop_radii[j] <= 0.0)
            throw std::invalid_argument("degenerate geometry: zero radius at interior loop " +
                                        std::to_string(j));
    EyeMesh m;
    const bool last_zero = shape.loop_radii[n - 1] <= 0.0;
    m.loops = last_zero ? n - 1 : n;
    m.ring_size = h;
    m.has_apex = true;
    m.vertices.reserve(static_cast<size_t>(m.loops) * h + 1);
    for (int j = 0; j < m.loops; ++j)
        for (int i = 0; i < h; ++i) m.vertices.push_back(loop_vertex(shape, j, i));
    // apex: either the collapsed final loop, or a synthetic vertex at the
    // cornea-sphere apex just above the last ring
    double apex_z;
    if (last_zero) {
        apex_z = shape.loop_heights[n - 1];
    } else {
        apex_z = shape.sphere_center_offset + shape.cornea_radius;
        if (apex_z <= shape.loop_heights[n - 1])
            apex_z = shape.loop_heights[n - 1] +
                     (shape.loop_heights[n - 1] - shape.loop_heights[n - 2]);
    }
    const int apex_index = static_cast<int>(m.vertices.size());
    m.vertices.push_back({0.0, 0.0, apex_z});

    auto vid = [h](int j, int i) { return j * h + (i % h); };
    for (int j = 0; j + 1 < m.loops; ++j)
        for (int i = 0; i < h; ++i) {
            const int a = vid(j, i), b = vid(j, i + 1);
            const int c = vid(j + 1, i + 1), d = vid(j + 1, i);
            m.faces.push_back({a, b, c});
            m.faces.push_back({a, c, d});
        }
    for (int i = 0; i < h; ++i)
        m.faces.push_back({vid(m.loops - 1, i), vid(m.loops - 1, i + 1), apex_index});

    m.weighted_normals.assign(m.vertices.size(), {0, 0, 0});
    for (const auto& f : m.faces) {
        const Vec3d e1 = m.vertices[f[1]] - m.vertices[f[0]];
        const Vec3d e2 = m.vertices[f[2]] - m.vertices[f[0]];
        const Vec3d fn = cross(e1, e2);  // |fn| = 2 * area
        for (int k = 0; k < 3; ++k) {
            m.weighted_normals[f[k]] = m.weighted_normals[f[k]] + fn;
        }
    }
    m.vertex_normals.resize(m.vertices.size());
    for (size_t k = 0; k < m.vertices.size(); ++k) {
        const double len = norm(m.weighted_normals[k]);
        if (len < 1e-15)
            throw std::invalid_argument("degenerate geometry: zero vertex normal");
        m.vertex_normals[k] = m.weighted_normals[k] / len;
    }
    return m;
}

inline EyeMesh apply_pose(const EyeMesh& mesh, const EyePose& pose) {
    const Mat3d r = exp_so3(pose.rotation);
    EyeMesh out = mesh;
    for (size_t k = 0; k < mesh.vertices.size(); ++k) {
        out.vertices[k] = r.mul(mesh.vertices[k]) + pose.translation;
        out.vertex_normals[k] = r.mul(mesh.vertex_normals[k]);
        out.weighted_normals[k] = r.mul(mesh.weighted_normals[k]);
    }
    return out;
}

/// The eye's optical/symmetry axis after rotation; unit length.
inline Vec3d gaze_direction(const EyePose& pose) {
    return exp_so3(pose.rotation).mul(Vec3d{0, 0, 1});
}

// ---------------------------------------------------------------------------
// Shape file I/O (key-value document with arrays) and mesh export.
// ---------------------------------------------------------------------------

inline nlohmann::json shape_to_json(const EyeShape& s) {
    return nlohmann::json{{"loop_radii", s.loop_radii},
                          {"loop_heights", s.loop_heights},
                          {"vertices_per_loop", s.vertices_per_loop},
                          {"sclera_radius", s.sclera_radius},
                          {"cornea_radius", s.cornea_radius},
                          {"sphere_center_offset", s.sphere_center_offset}};
}

inline EyeShape shape_from_json(const nlohmann::json& j) {
    EyeShape s;
    s.loop_radii = j.at("loop_radii").get<std::vector<double>>();
    s.loop_heights = j.at("loop_heights").get<std::vector<double>>();
    s.vertices_per_loop = j.at("vertices_per_loop").get<int>();
    s.sclera_radius = j.value("sclera_radius", 12.0);
    s.cornea_radius = j.value("cornea_radius", 8.0);
    s.sphere_center_offset = j.value("sphere_center_offset", 6.0);
    s.validate();
    return s;
}

inline void save_shape(const std::string& path, const EyeShape& s) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << shape_to_json(s).dump(2) << "\n";
}

inline EyeShape load_shape(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    in >> j;
    return shape_from_json(j);
}

/// Wavefront-style text export for inspection.
inline void export_obj(const std::string& path, const EyeMesh& m) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    for (const auto& v : m.vertices) out << "v " << v.x << " " << v.y << " " << v.z << "\n";
    for (const auto& n : m.vertex_normals)
        out << "vn " << n.x << " " << n.y << " " << n.z << "\n";
    for (const auto& f : m.faces)
        out << "f " << f[0] + 1 << "//" << f[0] + 1 << " " << f[1] + 1 << "//" << f[1] + 1 << " "
            << f[2] + 1 << "//" << f[2] + 1 << "\n";
}

}  // namespace deflectrack
