#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "deflectrack/vec.hpp"

namespace deflectrack {

struct Aabb {
    Vec3d lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity()};
    Vec3d hi{-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity()};

    void grow(const Vec3d& p) {
        lo = {std::min(lo.x, p.x), std::min(lo.y, p.y), std::min(lo.z, p.z)};
        hi = {std::max(hi.x, p.x), std::max(hi.y, p.y), std::max(hi.z, p.z)};
    }
    void grow(const Aabb& b) {
        grow(b.lo);
        grow(b.hi);
    }
};

/// Median-split bounding volume hierarchy over mesh triangles. Topology is
/// built once; refit() updates the boxes in place after vertices move (used
/// during shape optimization, where connectivity is fixed).
class TriangleBvh {
public:
    struct HitRecord {
        int face = -1;
        double s = std::numeric_limits<double>::infinity();
        double beta = 0, gamma = 0;
        bool hit() const { return face >= 0; }
    };

    void build(const std::vector<Vec3d>& verts, const std::vector<std::array<int, 3>>& faces) {
        verts_ = &verts;
        faces_ = &faces;
        const int n = static_cast<int>(faces.size());
        tri_order_.resize(n);
        std::iota(tri_order_.begin(), tri_order_.end(), 0);
        nodes_.clear();
        nodes_.reserve(2 * n);
        std::vector<Vec3d> centroids(n);
        for (int i = 0; i < n; ++i) {
            const auto& f = faces[i];
            centroids[i] = (verts[f[0]] + verts[f[1]] + verts[f[2]]) / 3.0;
        }
        build_node(0, n, centroids);
        refit();
    }

    /// Recomputes all boxes bottom-up from current vertex positions.
    void refit() {
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            Node& nd = nodes_[i];
            Aabb box;
            if (nd.count > 0) {
                for (int k = 0; k < nd.count; ++k) {
                    const auto& f = (*faces_)[tri_order_[nd.first + k]];
                    box.grow((*verts_)[f[0]]);
                    box.grow((*verts_)[f[1]]);
                    box.grow((*verts_)[f[2]]);
                }
            } else {
                box.grow(nodes_[nd.left].box);
                box.grow(nodes_[nd.right].box);
            }
            nd.box = box;
        }
    }

    /// Nearest intersection along the ray (origin o, unit direction d).
    HitRecord intersect(const Vec3d& o, const Vec3d& d) const {
        HitRecord best;
        if (nodes_.empty()) return best;
        const Vec3d inv{1.0 / d.x, 1.0 / d.y, 1.0 / d.z};
        int stack[64];
        int top = 0;
        stack[top++] = 0;
        while (top > 0) {
            const Node& nd = nodes_[stack[--top]];
            if (!hit_box(nd.box, o, inv, best.s)) continue;
            if (nd.count > 0) {
                for (int k = 0; k < nd.count; ++k)
                    intersect_tri(tri_order_[nd.first + k], o, d, best);
            } else {
                stack[top++] = nd.left;
                stack[top++] = nd.right;
            }
        }
        return best;
    }

private:
    struct Node {
        Aabb box;
        int left = -1, right = -1;
        int first = 0, count = 0;  // leaves reference tri_order_[first..first+count)
    };

    static constexpr int kLeafSize = 4;

    int build_node(int begin, int end, std::vector<Vec3d>& centroids) {
        const int idx = static_cast<int>(nodes_.size());
        nodes_.push_back({});
        if (end - begin <= kLeafSize) {
            nodes_[idx].first = begin;
            nodes_[idx].count = end - begin;
            return idx;
        }
        Aabb cb;
        for (int i = begin; i < end; ++i) cb.grow(centroids[tri_order_[i]]);
        const Vec3d ext = cb.hi - cb.lo;
        int axis = 0;
        if (ext.y > ext.x) axis = 1;
        if (ext.z > (axis == 0 ? ext.x : ext.y)) axis = 2;
        const int mid = (begin + end) / 2;
        std::nth_element(tri_order_.begin() + begin, tri_order_.begin() + mid,
                         tri_order_.begin() + end, [&](int a, int b) {
                             const Vec3d& ca = centroids[a];
                             const Vec3d& cb2 = centroids[b];
                             const double va = axis == 0 ? ca.x : axis == 1 ? ca.y : ca.z;
                             const double vb = axis == 0 ? cb2.x : axis == 1 ? cb2.y : cb2.z;
                             return va < vb;
                         });
        const int l = build_node(begin, mid, centroids);
        const int r = build_node(mid, end, centroids);
        nodes_[idx].left = l;
        nodes_[idx].right = r;
        return idx;
    }

    static bool hit_box(const Aabb& b, const Vec3d& o, const Vec3d& inv, double tmax) {
        double t0 = (b.lo.x - o.x) * inv.x, t1 = (b.hi.x - o.x) * inv.x;
        if (t0 > t1) std::swap(t0, t1);
        double u0 = (b.lo.y - o.y) * inv.y, u1 = (b.hi.y - o.y) * inv.y;
        if (u0 > u1) std::swap(u0, u1);
        double v0 = (b.lo.z - o.z) * inv.z, v1 = (b.hi.z - o.z) * inv.z;
        if (v0 > v1) std::swap(v0, v1);
        const double lo = std::max(std::max(t0, u0), std::max(v0, 0.0));
        const double hi = std::min(std::min(t1, u1), std::min(v1, tmax));
        return lo <= hi;
    }

    void intersect_tri(int face, const Vec3d& o, const Vec3d& d, HitRecord& best) const {
        const auto& f = (*faces_)[face];
        const Vec3d& v0 = (*verts_)[f[0]];
        const Vec3d e1 = (*verts_)[f[1]] - v0;
        const Vec3d e2 = (*verts_)[f[2]] - v0;
        const Vec3d h = cross(d, e2);
        const double det = dot(e1, h);
        if (std::fabs(det) < 1e-14) return;
        const double inv = 1.0 / det;
        const Vec3d sv = o - v0;
        const double beta = dot(sv, h) * inv;
        if (beta < -1e-12 || beta > 1.0 + 1e-12) return;
        const Vec3d qv = cross(sv, e1);
        const double gamma = dot(d, qv) * inv;
        if (gamma < -1e-12 || beta + gamma > 1.0 + 1e-12) return;
        const double s = dot(e2, qv) * inv;
        if (s <= 1e-9 || s >= best.s) return;
        best = {face, s, beta, gamma};
    }

    const std::vector<Vec3d>* verts_ = nullptr;
    const std::vector<std::array<int, 3>>* faces_ = nullptr;
    std::vector<int> tri_order_;
    std::vector<Node> nodes_;
};

}  // namespace deflectrack
