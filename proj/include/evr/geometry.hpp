#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

namespace evr {

struct Vec2 {
    double x = 0, y = 0;
    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    double dot(Vec2 o) const { return x * o.x + y * o.y; }
    double norm() const { return std::sqrt(x * x + y * y); }
    bool operator==(const Vec2&) const = default;
};

// Angles live on a 2-degree lattice; keep trig exact at the cardinals so
// axis-aligned motion stays bit-exact.
inline double normalize_deg(double d) {
    d = std::fmod(d, 360.0);
    if (d < 0) d += 360.0;
    return d;
}

inline double deg_cos(double d) {
    d = normalize_deg(d);
    if (d == 0.0) return 1.0;
    if (d == 90.0) return 0.0;
    if (d == 180.0) return -1.0;
    if (d == 270.0) return 0.0;
    return std::cos(d * (3.14159265358979323846 / 180.0));
}

inline double deg_sin(double d) {
    d = normalize_deg(d);
    if (d == 0.0) return 0.0;
    if (d == 90.0) return 1.0;
    if (d == 180.0) return 0.0;
    if (d == 270.0) return -1.0;
    return std::sin(d * (3.14159265358979323846 / 180.0));
}

// Axis-aligned rectangle in world meters, lo <= hi.
struct Rect {
    Vec2 lo, hi;
    double width() const { return hi.x - lo.x; }
    double height() const { return hi.y - lo.y; }
    double area() const { return width() * height(); }
    Vec2 center() const { return {(lo.x + hi.x) * 0.5, (lo.y + hi.y) * 0.5}; }
    bool contains(Vec2 p) const {
        return p.x >= lo.x && p.x <= hi.x && p.y >= lo.y && p.y <= hi.y;
    }
    Rect expanded(double r) const { return {{lo.x - r, lo.y - r}, {hi.x + r, hi.y + r}}; }
    bool operator==(const Rect&) const = default;
};

inline double rect_overlap_area(const Rect& a, const Rect& b) {
    double w = std::min(a.hi.x, b.hi.x) - std::max(a.lo.x, b.lo.x);
    double h = std::min(a.hi.y, b.hi.y) - std::max(a.lo.y, b.lo.y);
    if (w <= 0 || h <= 0) return 0;
    return w * h;
}

inline double rect_distance(const Rect& a, const Rect& b) {
    double dx = std::max({a.lo.x - b.hi.x, b.lo.x - a.hi.x, 0.0});
    double dy = std::max({a.lo.y - b.hi.y, b.lo.y - a.hi.y, 0.0});
    return std::sqrt(dx * dx + dy * dy);
}

// Rotated rectangle: center c, unit axis u along the long side, half-extents.
struct OrientedBox {
    Vec2 c;
    Vec2 u;      // unit
    double hu = 0, hv = 0;
    Vec2 v() const { return {-u.y, u.x}; }
    std::array<Vec2, 4> corners() const {
        Vec2 eu = u * hu, ev = v() * hv;
        return {c + eu + ev, c - eu + ev, c - eu - ev, c + eu - ev};
    }
};

inline OrientedBox obox_from_rect(const Rect& r) {
    return {r.center(), {1, 0}, r.width() * 0.5, r.height() * 0.5};
}

using Quad = std::array<Vec2, 4>;

inline Quad quad_of(const Rect& r) {
    return {Vec2{r.lo.x, r.lo.y}, {r.hi.x, r.lo.y}, {r.hi.x, r.hi.y}, {r.lo.x, r.hi.y}};
}
inline Quad quad_of(const OrientedBox& b) { return b.corners(); }

// True iff the interiors overlap with positive area (boundary contact does
// not count). SAT over both quads' edge normals with strict inequalities.
bool interiors_intersect(const Quad& a, const Quad& b);

// Min distance between two convex quads; 0 if they intersect or touch.
double quad_distance(const Quad& a, const Quad& b);

double segment_distance(Vec2 a0, Vec2 a1, Vec2 b0, Vec2 b1);

// Ray/box intersection, slab method. Direction need not be unit length;
// t values are in units of |d|. Returns the [enter, exit] parameter range.
struct RaySpan {
    double t0, t1;
};
std::optional<RaySpan> ray_rect(Vec2 o, Vec2 d, const Rect& r);
std::optional<RaySpan> ray_obox(Vec2 o, Vec2 d, const OrientedBox& b);

// Pixel-space box [x0,y0,x1,y1]. Mask-derived boxes use inclusive pixel
// indices; box arithmetic treats the coordinates as continuous.
struct BoxF {
    double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
    double w() const { return x1 - x0; }
    double h() const { return y1 - y0; }
    double area() const { return w() > 0 && h() > 0 ? w() * h() : 0.0; }
    double cx() const { return (x0 + x1) * 0.5; }
    double cy() const { return (y0 + y1) * 0.5; }
    bool operator==(const BoxF&) const = default;
};

} // namespace evr
