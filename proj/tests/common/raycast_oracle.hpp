#pragma once
// Brute-force per-pixel reference renderer. Every pixel casts its own ray
// and clips it against each surface's four edges (Cyrus-Beck), independent
// of the production renderer's per-column slab intersections and shared hit
// lists. Agreement is exact on ids and categories; depth is compared as the
// identical formula applied to the independently computed hit parameter.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "evr/render.hpp"
#include "evr/world.hpp"

namespace evr::testing {

struct OracleSurface {
    Quad quad;
    double height;
    std::int32_t instance_id;
    std::int16_t category;
};

inline std::vector<OracleSurface> oracle_surfaces(const Scene& scene) {
    std::vector<OracleSurface> s;
    for (const auto& o : scene.objects)
        s.push_back({quad_of(o.footprint), o.height, o.id, std::int16_t(o.category)});
    for (std::size_t k = 0; k < scene.walls.size(); ++k)
        s.push_back({scene.walls[k].obox().corners(), scene.walls[k].height,
                     -std::int32_t(k) - 1, std::int16_t(kWallCategory)});
    return s;
}

// Entry/exit parameters of ray o + t*d through a convex quad, by clipping
// the line against each edge's half plane.
inline std::optional<std::pair<double, double>> clip_ray_quad(Vec2 o, Vec2 d, const Quad& q) {
    double t_in = -std::numeric_limits<double>::infinity();
    double t_out = std::numeric_limits<double>::infinity();
    const Vec2 center{(q[0].x + q[1].x + q[2].x + q[3].x) / 4.0,
                      (q[0].y + q[1].y + q[2].y + q[3].y) / 4.0};
    for (int e = 0; e < 4; ++e) {
        const Vec2 a = q[std::size_t(e)], b = q[std::size_t((e + 1) % 4)];
        Vec2 n{b.y - a.y, a.x - b.x}; // one of the two perpendiculars
        if (n.dot(center - a) > 0) n = {-n.x, -n.y}; // make it outward
        const double denom = d.dot(n);
        const double num = (a - o).dot(n); // signed distance to the edge plane
        if (denom == 0.0) {
            if (num < 0) return std::nullopt; // parallel and fully outside
            continue;
        }
        const double t = num / denom;
        if (denom < 0) t_in = std::max(t_in, t);
        else t_out = std::min(t_out, t);
        if (t_in > t_out) return std::nullopt;
    }
    return std::make_pair(t_in, t_out);
}

inline Frame oracle_render(const Scene& scene, const Pose& pose, const Camera& camera,
                           int canvas_w, int canvas_h) {
    const std::vector<OracleSurface> surfaces = oracle_surfaces(scene);
    Frame frame(canvas_w, canvas_h);
    const double f = camera.focal();
    const Vec2 origin = pose.pos();
    const Vec2 fwd = pose.forward(), right = pose.right();

    for (int i = 0; i < canvas_h; ++i) {
        for (int j = 0; j < canvas_w; ++j) {
            const double ku = (j + 0.5 - canvas_w * 0.5) / f;
            const double kv = (canvas_h * 0.5 - (i + 0.5)) / f;
            const Vec2 dir{fwd.x + right.x * ku, fwd.y + right.y * ku};
            const double dn = dir.norm();
            const double s_near = camera.near_clip / dn;
            const double s_far = camera.far_clip / dn;

            double best_s = std::numeric_limits<double>::infinity();
            const OracleSurface* best = nullptr;
            for (const auto& surf : surfaces) {
                auto span = clip_ray_quad(origin, dir, surf.quad);
                if (!span) continue;
                double s = span->first;
                if (s < s_near) {
                    if (span->second < s_near) continue;
                    s = s_near;
                }
                if (s > s_far) continue;
                const double z = camera.eye_height + s * kv;
                if (z < 0.0 || z > surf.height) continue; // surface too short for this row
                if (s < best_s ||
                    (s == best_s && best && surf.instance_id < best->instance_id)) {
                    best_s = s;
                    best = &surf;
                }
            }
            const std::size_t px = frame.idx(i, j);
            if (best) {
                frame.instance_id[px] = best->instance_id;
                frame.category[px] = best->category;
                frame.depth[px] =
                    float(best_s * std::sqrt(dir.x * dir.x + dir.y * dir.y + kv * kv));
            } else {
                frame.depth[px] = float(camera.far_clip);
            }
        }
    }
    return frame;
}

// Pixels where the two frames disagree. Ids and categories must match
// exactly; depth must match as f32 after both sides round from double.
inline int count_mismatches(const Frame& a, const Frame& b, std::string* first_diff = nullptr) {
    int bad = 0;
    for (std::size_t p = 0; p < a.instance_id.size(); ++p) {
        const bool ok = a.instance_id[p] == b.instance_id[p] && a.category[p] == b.category[p] &&
                        a.depth[p] == b.depth[p];
        if (!ok) {
            ++bad;
            if (first_diff && first_diff->empty())
                *first_diff = "pixel " + std::to_string(p) + ": id " +
                              std::to_string(a.instance_id[p]) + "/" +
                              std::to_string(b.instance_id[p]) + " cat " +
                              std::to_string(a.category[p]) + "/" + std::to_string(b.category[p]) +
                              " depth " + std::to_string(a.depth[p]) + "/" +
                              std::to_string(b.depth[p]);
        }
    }
    return bad;
}

} // namespace evr::testing
