#pragma once
#include "evr/geometry.hpp"

namespace evr {

// Agent pose: position in world meters plus heading in degrees.
// Heading 0 looks along +x, 90 along +y.
struct Pose {
    double x = 0, y = 0;
    double heading_deg = 0;
    Vec2 pos() const { return {x, y}; }
    Vec2 forward() const { return {deg_cos(heading_deg), deg_sin(heading_deg)}; }
    Vec2 right() const { return {deg_sin(heading_deg), -deg_cos(heading_deg)}; }
    bool operator==(const Pose&) const = default;
};

// Pinhole camera. The core canvas is height x width; amodal ground truth is
// rasterized on a border-extended canvas that adds border_pad pixels on every
// side while keeping the same focal length and optical center.
struct Camera {
    int width = 80;
    int height = 64;
    int border_pad = 8;
    double hfov_deg = 60.0;
    double eye_height = 1.0;
    double near_clip = 0.05;
    double far_clip = 20.0;

    double focal() const {
        return (width * 0.5) / std::tan(hfov_deg * 0.5 * 3.14159265358979323846 / 180.0);
    }
    int padded_width() const { return width + 2 * border_pad; }
    int padded_height() const { return height + 2 * border_pad; }
};

} // namespace evr
