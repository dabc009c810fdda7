#include "evr/geometry.hpp"

namespace evr {

namespace {

struct Span {
    double lo, hi;
};

Span project(const Quad& q, Vec2 axis) {
    double lo = q[0].dot(axis), hi = lo;
    for (int i = 1; i < 4; ++i) {
        double p = q[i].dot(axis);
        lo = std::min(lo, p);
        hi = std::max(hi, p);
    }
    return {lo, hi};
}

void collect_axes(const Quad& q, std::array<Vec2, 8>& axes, int& n) {
    for (int i = 0; i < 4; ++i) {
        Vec2 e = q[(i + 1) % 4] - q[i];
        double len = e.norm();
        if (len < 1e-12) continue;
        axes[n++] = {-e.y / len, e.x / len};
    }
}

} // namespace

bool interiors_intersect(const Quad& a, const Quad& b) {
    std::array<Vec2, 8> axes;
    int n = 0;
    collect_axes(a, axes, n);
    collect_axes(b, axes, n);
    for (int i = 0; i < n; ++i) {
        Span sa = project(a, axes[i]);
        Span sb = project(b, axes[i]);
        if (sa.hi <= sb.lo || sb.hi <= sa.lo) return false; // separated or touching
    }
    return true;
}

double segment_distance(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1) {
    // Closest approach of two segments; clamped quadratic minimization.
    Vec2 d1 = a1 - a0, d2 = b1 - b0, r = a0 - b0;
    double A = d1.dot(d1), E = d2.dot(d2), F = d2.dot(r);
    double s = 0, t = 0;
    if (A <= 1e-18 && E <= 1e-18) {
        return r.norm();
    }
    if (A <= 1e-18) {
        t = std::clamp(F / E, 0.0, 1.0);
    } else {
        double C = d1.dot(r);
        if (E <= 1e-18) {
            s = std::clamp(-C / A, 0.0, 1.0);
        } else {
            double B = d1.dot(d2);
            double denom = A * E - B * B;
            if (denom > 1e-18) s = std::clamp((B * F - C * E) / denom, 0.0, 1.0);
            t = (B * s + F) / E;
            if (t < 0) {
                t = 0;
                s = std::clamp(-C / A, 0.0, 1.0);
            } else if (t > 1) {
                t = 1;
                s = std::clamp((B - C) / A, 0.0, 1.0);
            }
        }
    }
    Vec2 p = a0 + d1 * s, q = b0 + d2 * t;
    return (p - q).norm();
}

double quad_distance(const Quad& a, const Quad& b) {
    // Touching counts as distance 0, so use non-strict SAT here.
    std::array<Vec2, 8> axes;
    int n = 0;
    collect_axes(a, axes, n);
    collect_axes(b, axes, n);
    bool separated = false;
    for (int i = 0; i < n; ++i) {
        Span sa = project(a, axes[i]);
        Span sb = project(b, axes[i]);
        if (sa.hi < sb.lo || sb.hi < sa.lo) {
            separated = true;
            break;
        }
    }
    if (!separated) return 0.0;
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j)
            best = std::min(best, segment_distance(a[i], a[(i + 1) % 4], b[j], b[(j + 1) % 4]));
    return best;
}

namespace {

// One slab: intersect the running [t0,t1] with the axis constraint.
bool slab(double o, double d, double lo, double hi, double& t0, double& t1) {
    if (std::abs(d) < 1e-15) return o >= lo && o <= hi;
    double ta = (lo - o) / d, tb = (hi - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    return t0 <= t1;
}

} // namespace

std::optional<RaySpan> ray_rect(Vec2 o, Vec2 d, const Rect& r) {
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    if (!slab(o.x, d.x, r.lo.x, r.hi.x, t0, t1)) return std::nullopt;
    if (!slab(o.y, d.y, r.lo.y, r.hi.y, t0, t1)) return std::nullopt;
    return RaySpan{t0, t1};
}

std::optional<RaySpan> ray_obox(Vec2 o, Vec2 d, const OrientedBox& b) {
    Vec2 rel = o - b.c;
    Vec2 v = b.v();
    Vec2 ol{rel.dot(b.u), rel.dot(v)};
    Vec2 dl{d.dot(b.u), d.dot(v)};
    double t0 = -std::numeric_limits<double>::infinity();
    double t1 = std::numeric_limits<double>::infinity();
    if (!slab(ol.x, dl.x, -b.hu, b.hu, t0, t1)) return std::nullopt;
    if (!slab(ol.y, dl.y, -b.hv, b.hv, t0, t1)) return std::nullopt;
    return RaySpan{t0, t1};
}

} // namespace evr
